#include "teamlens/linalg.hpp"

#include <cmath>

namespace teamlens {

Matrix Matrix::transposed() const {
    Matrix t(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i)
        for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
    return t;
}

Matrix Matrix::operator*(const Matrix& rhs) const {
    Matrix out(rows_, rhs.cols_);
    for (std::size_t i = 0; i < rows_; ++i)
        for (std::size_t k = 0; k < cols_; ++k) {
            double v = (*this)(i, k);
            if (v == 0.0) continue;
            for (std::size_t j = 0; j < rhs.cols_; ++j) out(i, j) += v * rhs(k, j);
        }
    return out;
}

std::vector<double> Matrix::operator*(const std::vector<double>& v) const {
    std::vector<double> out(rows_, 0.0);
    for (std::size_t i = 0; i < rows_; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < cols_; ++j) s += (*this)(i, j) * v[j];
        out[i] = s;
    }
    return out;
}

Cholesky Cholesky::factor(const Matrix& spd, double rel_tol) {
    const std::size_t n = spd.rows();
    Cholesky c;
    c.l = Matrix(n, n);
    double max_diag = 0.0;
    for (std::size_t i = 0; i < n; ++i) max_diag = std::max(max_diag, std::abs(spd(i, i)));
    const double tol = rel_tol * std::max(max_diag, 1.0);

    for (std::size_t j = 0; j < n; ++j) {
        double d = spd(j, j);
        for (std::size_t k = 0; k < j; ++k) d -= c.l(j, k) * c.l(j, k);
        if (d <= tol) {
            c.ok = false;
            c.fail_col = static_cast<int>(j);
            return c;
        }
        c.l(j, j) = std::sqrt(d);
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = spd(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= c.l(i, k) * c.l(j, k);
            c.l(i, j) = s / c.l(j, j);
        }
    }
    c.ok = true;
    return c;
}

std::vector<double> Cholesky::solve(const std::vector<double>& b) const {
    const std::size_t n = l.rows();
    std::vector<double> y(n), x(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = b[i];
        for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * y[k];
        y[i] = s / l(i, i);
    }
    for (std::size_t ii = n; ii-- > 0;) {
        double s = y[ii];
        for (std::size_t k = ii + 1; k < n; ++k) s -= l(k, ii) * x[k];
        x[ii] = s / l(ii, ii);
    }
    return x;
}

Matrix Cholesky::inverse() const {
    const std::size_t n = l.rows();
    Matrix inv(n, n);
    std::vector<double> e(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        e[j] = 1.0;
        std::vector<double> col = solve(e);
        for (std::size_t i = 0; i < n; ++i) inv(i, j) = col[i];
        e[j] = 0.0;
    }
    // symmetrize against round-off
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            double v = 0.5 * (inv(i, j) + inv(j, i));
            inv(i, j) = v;
            inv(j, i) = v;
        }
    return inv;
}

bool ols_solve(const std::vector<std::vector<double>>& cols_x, const std::vector<double>& y,
               std::vector<double>& beta_out) {
    const std::size_t k = cols_x.size();
    if (k == 0) return false;
    const std::size_t n = cols_x[0].size();
    Matrix xtx(k, k);
    std::vector<double> xty(k, 0.0);
    for (std::size_t a = 0; a < k; ++a) {
        for (std::size_t b = a; b < k; ++b) {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) s += cols_x[a][i] * cols_x[b][i];
            xtx(a, b) = s;
            xtx(b, a) = s;
        }
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += cols_x[a][i] * y[i];
        xty[a] = s;
    }
    Cholesky ch = Cholesky::factor(xtx);
    if (!ch.ok) return false;
    beta_out = ch.solve(xty);
    return true;
}

}  // namespace teamlens
