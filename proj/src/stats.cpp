#include "teamlens/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace teamlens {

double mean_of(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sd_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    double m = mean_of(v);
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

double quantile(std::vector<double> v, double q) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    if (q <= 0.0) return v.front();
    if (q >= 1.0) return v.back();
    double h = q * static_cast<double>(v.size() - 1);
    std::size_t lo = static_cast<std::size_t>(h);
    double frac = h - static_cast<double>(lo);
    if (lo + 1 >= v.size()) return v.back();
    return v[lo] + frac * (v[lo + 1] - v[lo]);
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

double normal_two_sided_p(double z) { return std::erfc(std::abs(z) / std::sqrt(2.0)); }

CorrResult pearson(const std::vector<double>& x, const std::vector<double>& y) {
    CorrResult out;
    out.n = std::min(x.size(), y.size());
    if (out.n < 3) return out;
    double mx = mean_of(x), my = mean_of(y);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < out.n; ++i) {
        double dx = x[i] - mx, dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx <= 0.0 || syy <= 0.0) return out;  // constant column: undefined
    out.defined = true;
    out.r = sxy / std::sqrt(sxx * syy);
    out.r = std::clamp(out.r, -1.0, 1.0);
    if (out.n > 3 && std::abs(out.r) < 1.0) {
        double z = std::atanh(out.r) * std::sqrt(static_cast<double>(out.n - 3));
        out.p = normal_two_sided_p(z);
    } else {
        out.p = std::abs(out.r) >= 1.0 ? 0.0 : 1.0;
    }
    return out;
}

namespace {

// Average ranks, ties shared.
std::vector<double> ranks_of(const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size(), 0.0);
    std::size_t i = 0;
    while (i < idx.size()) {
        std::size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
        double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
        i = j + 1;
    }
    return r;
}

}  // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    CorrResult c = pearson(ranks_of(x), ranks_of(y));
    return c.defined ? c.r : 0.0;
}

KsResult ks_two_sample(std::vector<double> a, std::vector<double> b) {
    KsResult out;
    out.n1 = a.size();
    out.n2 = b.size();
    if (a.empty() || b.empty()) return out;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const double na = static_cast<double>(a.size());
    const double nb = static_cast<double>(b.size());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < a.size() && j < b.size()) {
        double x = std::min(a[i], b[j]);
        while (i < a.size() && a[i] <= x) ++i;
        while (j < b.size() && b[j] <= x) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
    }
    out.d = d;
    double ne = na * nb / (na + nb);
    double lambda = (std::sqrt(ne) + 0.12 + 0.11 / std::sqrt(ne)) * d;
    if (lambda < 0.04) {  // Q(lambda) -> 1; the alternating series is useless here
        out.p = 1.0;
        return out;
    }
    // Kolmogorov survival function Q(lambda) = 2 sum_k (-1)^{k-1} exp(-2 k^2 lambda^2)
    double p = 0.0;
    double sign = 1.0;
    for (int k = 1; k <= 200; ++k) {
        double term = std::exp(-2.0 * k * k * lambda * lambda);
        p += sign * term;
        sign = -sign;
        if (term < 1e-16) break;
    }
    out.p = std::clamp(2.0 * p, 0.0, 1.0);
    return out;
}

KneeResult knee_point(const std::vector<double>& x, const std::vector<double>& y) {
    KneeResult out;
    const std::size_t n = std::min(x.size(), y.size());
    if (n < 3) {
        out.flat = true;
        return out;
    }
    double x0 = x[0], y0 = y[0];
    double dx = x[n - 1] - x0, dy = y[n - 1] - y0;
    double norm = std::sqrt(dx * dx + dy * dy);
    double best = 0.0;
    std::size_t best_i = 0;
    for (std::size_t i = 1; i + 1 < n; ++i) {
        double dist = std::abs((x[i] - x0) * dy - (y[i] - y0) * dx);
        if (dist > best) {
            best = dist;
            best_i = i;
        }
    }
    if (norm <= 0.0 || best <= 1e-12 * std::max(1.0, norm)) {
        out.flat = true;
        out.index = 0;
        return out;
    }
    out.index = best_i;
    return out;
}

}  // namespace teamlens
