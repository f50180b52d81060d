#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "teamlens/linalg.hpp"

namespace teamlens {

// Regressors for one logistic model. The intercept is implicit (always fitted
// first); x holds the k named feature columns row-major.
struct DesignMatrix {
    std::vector<std::string> feature_names;
    std::size_t n = 0;
    std::size_t k = 0;
    std::vector<double> x;           // n * k
    std::vector<int> y;              // 0/1
    std::vector<int> cluster;        // dense ids in [0, n_clusters)
    std::size_t n_clusters = 0;

    std::span<const double> row(std::size_t i) const { return {x.data() + i * k, k}; }
    void add_row(std::span<const double> features, int label, int cluster_id);
    // Assigns every row its own cluster.
    void cluster_per_row();
    static std::vector<int> densify_clusters(const std::vector<std::string>& tokens,
                                             std::size_t& n_clusters_out);
};

struct FitConfig {
    int max_iter = 100;
    double tol = 1e-8;  // gradient max-norm
};

struct FittedModel {
    std::vector<std::string> feature_names;
    std::vector<double> beta;  // size k+1, beta[0] = intercept
    Matrix cov_cluster;        // (k+1)^2 CR1 sandwich
    double loglik = 0.0;
    double null_loglik = 0.0;
    double pseudo_r2 = 0.0;
    std::size_t n_obs = 0;
    std::size_t n_clusters = 0;
    bool converged = false;
    int iterations = 0;

    double linear_index(std::span<const double> features) const;
    std::size_t n_params() const { return beta.size(); }
    double se(std::size_t j) const;
    double z_value(std::size_t j) const;
    double p_value(std::size_t j) const;
    std::string stars(std::size_t j) const;

    std::string to_json_string() const;
    static FittedModel from_json_string(const std::string& text);
    void save(const std::string& path) const;
    static FittedModel load(const std::string& path);
};

// Maximum-likelihood logistic fit: Newton iterations with step halving,
// stopping when the gradient max-norm falls below tol.
FittedModel fit_logistic(const DesignMatrix& design, const FitConfig& config = {});

// sigma(beta0 + beta' x); features exclude the intercept.
double predict_proba(const FittedModel& model, std::span<const double> features);

// CR1 cluster-robust sandwich with small-sample factor G/(G-1) * (n-1)/(n-p).
Matrix cluster_robust_covariance(const FittedModel& model, const DesignMatrix& design);

double mcfadden_pseudo_r2(const FittedModel& model, const DesignMatrix& design);

// Share of holdout rows with (p >= 0.5) matching the label.
double accuracy(const FittedModel& model, const DesignMatrix& holdout);

// Term metadata for marginal effects. A main term has interacts_with = -1.
// An interaction column modifies main column `interacts_with` and carries the
// sample mean of its exogenous partner factor for the chain rule.
struct ModelTermInfo {
    int interacts_with = -1;
    double partner_mean = 0.0;
};

struct MemTerm {
    std::string name;
    double mem = 0.0;
    double se = 0.0;
    double z = 0.0;
    double p = 1.0;
    std::string stars;
};

// Marginal effects at the mean: derivative of the predicted probability with
// every model column held at its estimation-sample mean. Main terms include
// chain-rule contributions of the interactions built on them; interaction
// columns are differentiated as their own regressors. SEs by the delta method
// on the model's cluster-robust covariance.
std::vector<MemTerm> marginal_effects_at_mean(const FittedModel& model,
                                              const DesignMatrix& design,
                                              const std::vector<ModelTermInfo>& terms);

std::string significance_stars(double p);
double sigmoid(double z);
// Stable Bernoulli log-likelihood term log sigma(eta) resp. log(1 - sigma(eta)).
double log_sigmoid(double eta);

}  // namespace teamlens
