#pragma once

#include <cstddef>
#include <vector>

namespace teamlens {

double mean_of(const std::vector<double>& v);
// Sample standard deviation (n-1 denominator); 0 for fewer than 2 values.
double sd_of(const std::vector<double>& v);

// Linear-interpolation quantile (type 7), q in [0, 1]. Input need not be sorted.
double quantile(std::vector<double> v, double q);

double normal_cdf(double z);
// Two-sided p-value for a standard-normal statistic.
double normal_two_sided_p(double z);

struct CorrResult {
    double r = 0.0;
    double p = 1.0;        // two-sided, Fisher z approximation
    std::size_t n = 0;
    bool defined = false;  // false when either input is constant
};

CorrResult pearson(const std::vector<double>& x, const std::vector<double>& y);
double spearman(const std::vector<double>& x, const std::vector<double>& y);

struct KsResult {
    double d = 0.0;
    double p = 1.0;  // asymptotic Kolmogorov distribution
    std::size_t n1 = 0, n2 = 0;
};

// Two-sample Kolmogorov-Smirnov: exact sup |F1 - F2| plus asymptotic p-value.
KsResult ks_two_sample(std::vector<double> a, std::vector<double> b);

struct KneeResult {
    std::size_t index = 0;
    bool flat = false;  // chord degenerate: curve has no interior deviation
};

// Knee of a curve via maximum perpendicular distance to the chord joining
// its first and last points.
KneeResult knee_point(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace teamlens
