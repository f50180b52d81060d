#pragma once

#include <cstddef>
#include <vector>

namespace teamlens {

// Small dense row-major matrix. Sized for model dimensions (k <= ~10), not BLAS work.
class Matrix {
  public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), a_(rows * cols, fill) {}

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    double& operator()(std::size_t i, std::size_t j) { return a_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return a_[i * cols_ + j]; }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    const std::vector<double>& data() const { return a_; }

    Matrix transposed() const;
    Matrix operator*(const Matrix& rhs) const;
    std::vector<double> operator*(const std::vector<double>& v) const;

  private:
    std::size_t rows_ = 0, cols_ = 0;
    std::vector<double> a_;
};

// Cholesky factorization of a symmetric positive definite matrix.
// ok == false means a pivot fell below tolerance (singular / collinear);
// fail_col reports the offending column.
struct Cholesky {
    bool ok = false;
    int fail_col = -1;
    Matrix l;  // lower triangular

    static Cholesky factor(const Matrix& spd, double rel_tol = 1e-12);
    std::vector<double> solve(const std::vector<double>& b) const;
    Matrix inverse() const;
};

// Solves the normal equations (X'X) b = X'y for OLS; returns false if singular.
bool ols_solve(const std::vector<std::vector<double>>& cols_x, const std::vector<double>& y,
               std::vector<double>& beta_out);

}  // namespace teamlens
