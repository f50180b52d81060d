#include "teamlens/glm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "teamlens/errors.hpp"
#include "teamlens/stats.hpp"

namespace teamlens {

using nlohmann::json;

void DesignMatrix::add_row(std::span<const double> features, int label, int cluster_id) {
    if (k == 0 && n == 0) k = features.size();
    if (features.size() != k) throw DataError("design row dimension mismatch");
    x.insert(x.end(), features.begin(), features.end());
    y.push_back(label);
    cluster.push_back(cluster_id);
    n_clusters = std::max(n_clusters, static_cast<std::size_t>(cluster_id) + 1);
    ++n;
}

void DesignMatrix::cluster_per_row() {
    cluster.resize(n);
    for (std::size_t i = 0; i < n; ++i) cluster[i] = static_cast<int>(i);
    n_clusters = n;
}

std::vector<int> DesignMatrix::densify_clusters(const std::vector<std::string>& tokens,
                                                std::size_t& n_clusters_out) {
    std::unordered_map<std::string, int> ids;
    std::vector<int> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) {
        auto [it, inserted] = ids.emplace(t, static_cast<int>(ids.size()));
        out.push_back(it->second);
    }
    n_clusters_out = ids.size();
    return out;
}

double sigmoid(double z) {
    if (z >= 0.0) {
        double e = std::exp(-std::min(z, 700.0));
        return 1.0 / (1.0 + e);
    }
    double e = std::exp(std::max(z, -700.0));
    return e / (1.0 + e);
}

double log_sigmoid(double eta) {
    // log sigma(eta) = -log(1 + exp(-eta))
    if (eta >= 0.0) return -std::log1p(std::exp(-std::min(eta, 700.0)));
    return eta - std::log1p(std::exp(std::max(eta, -700.0)));
}

namespace {

double eta_of(const DesignMatrix& d, std::size_t i, const std::vector<double>& beta) {
    double eta = beta[0];
    std::span<const double> row = d.row(i);
    for (std::size_t j = 0; j < d.k; ++j) eta += beta[j + 1] * row[j];
    return eta;
}

double loglik_at(const DesignMatrix& d, const std::vector<double>& beta) {
    double ll = 0.0;
    for (std::size_t i = 0; i < d.n; ++i) {
        double eta = eta_of(d, i, beta);
        ll += d.y[i] ? log_sigmoid(eta) : log_sigmoid(-eta);
    }
    return ll;
}

}  // namespace

FittedModel fit_logistic(const DesignMatrix& design, const FitConfig& config) {
    const std::size_t n = design.n;
    const std::size_t p = design.k + 1;
    if (n <= p)
        throw DataError("fit_logistic: need more observations than parameters (n=" +
                        std::to_string(n) + ", p=" + std::to_string(p) + ")");
    std::size_t ones = 0;
    for (int v : design.y) ones += v != 0;
    if (ones == 0 || ones == n) throw DataError("fit_logistic: labels contain a single class");
    for (double v : design.x)
        if (!std::isfinite(v)) throw DataError("fit_logistic: non-finite design entry");

    auto term_name = [&](std::size_t col) {
        return col == 0 ? std::string("intercept")
                        : (col - 1 < design.feature_names.size() ? design.feature_names[col - 1]
                                                                 : "x" + std::to_string(col));
    };

    std::vector<double> beta(p, 0.0);
    std::vector<double> prob(n, 0.5);
    double ll = loglik_at(design, beta);
    bool converged = false;
    int iter = 0;

    for (iter = 1; iter <= config.max_iter; ++iter) {
        // gradient and expected information at current beta
        std::vector<double> grad(p, 0.0);
        Matrix info(p, p);
        for (std::size_t i = 0; i < n; ++i) {
            double eta = eta_of(design, i, beta);
            double pi = sigmoid(eta);
            prob[i] = pi;
            double resid = static_cast<double>(design.y[i]) - pi;
            double w = pi * (1.0 - pi);
            std::span<const double> row = design.row(i);
            grad[0] += resid;
            info(0, 0) += w;
            for (std::size_t a = 0; a < design.k; ++a) {
                grad[a + 1] += resid * row[a];
                info(0, a + 1) += w * row[a];
                for (std::size_t b = a; b < design.k; ++b)
                    info(a + 1, b + 1) += w * row[a] * row[b];
            }
        }
        for (std::size_t a = 0; a < p; ++a)
            for (std::size_t b = 0; b < a; ++b) info(a, b) = info(b, a);

        // perfect separation: every row predicted at its label. The gradient
        // also vanishes there, so this must precede the convergence test.
        bool saturated = true;
        for (std::size_t i = 0; i < n; ++i) {
            double miss = design.y[i] ? 1.0 - prob[i] : prob[i];
            if (miss > 1e-6) {
                saturated = false;
                break;
            }
        }
        if (saturated) {
            std::size_t worst = 0;
            double mag = 0.0;
            for (std::size_t j = 1; j < p; ++j)
                if (std::abs(beta[j]) > mag) {
                    mag = std::abs(beta[j]);
                    worst = j;
                }
            throw NumericError("fit_logistic: perfect separation along " + term_name(worst) +
                               " (no finite maximum-likelihood estimate)");
        }

        double gmax = 0.0;
        for (double g : grad) gmax = std::max(gmax, std::abs(g));
        if (gmax <= config.tol) {
            converged = true;
            break;
        }

        Cholesky ch = Cholesky::factor(info);
        if (!ch.ok)
            throw NumericError("fit_logistic: singular information matrix (collinear column " +
                               term_name(static_cast<std::size_t>(ch.fail_col)) + ")");
        std::vector<double> step = ch.solve(grad);

        // step halving on log-likelihood decrease
        double lambda = 1.0;
        std::vector<double> cand(p);
        double ll_new = -std::numeric_limits<double>::infinity();
        for (int h = 0; h < 40; ++h) {
            for (std::size_t j = 0; j < p; ++j) cand[j] = beta[j] + lambda * step[j];
            ll_new = loglik_at(design, cand);
            if (ll_new >= ll - 1e-12) break;
            lambda *= 0.5;
        }
        if (ll_new < ll - 1e-9) break;  // no ascent direction left
        beta = cand;
        ll = ll_new;
    }

    FittedModel model;
    model.feature_names = design.feature_names;
    model.beta = beta;
    model.loglik = ll;
    model.n_obs = n;
    model.converged = converged;
    model.iterations = std::min(iter, config.max_iter);
    double ybar = static_cast<double>(ones) / static_cast<double>(n);
    model.null_loglik = static_cast<double>(ones) * std::log(ybar) +
                        static_cast<double>(n - ones) * std::log1p(-ybar);
    model.pseudo_r2 = 1.0 - model.loglik / model.null_loglik;
    model.n_clusters = design.n_clusters;
    if (design.n_clusters >= 2) {
        model.cov_cluster = cluster_robust_covariance(model, design);
    } else {
        model.cov_cluster = Matrix(p, p);
    }
    return model;
}

double FittedModel::linear_index(std::span<const double> features) const {
    if (features.size() + 1 != beta.size())
        throw DataError("predict: row dimension " + std::to_string(features.size()) +
                        " does not match model with " + std::to_string(beta.size() - 1) +
                        " features");
    double eta = beta[0];
    for (std::size_t j = 0; j < features.size(); ++j) eta += beta[j + 1] * features[j];
    return eta;
}

double predict_proba(const FittedModel& model, std::span<const double> features) {
    double eta = model.linear_index(features);
    // keep strictly inside (0,1) so residuals stay in (-1,1)
    double p = sigmoid(std::clamp(eta, -35.0, 35.0));
    return std::clamp(p, 1e-15, 1.0 - 1e-15);
}

Matrix cluster_robust_covariance(const FittedModel& model, const DesignMatrix& design) {
    const std::size_t p = model.beta.size();
    const std::size_t g_count = design.n_clusters;
    if (g_count < 2) throw DataError("cluster_robust_covariance: need at least 2 clusters");
    if (design.n <= p) throw DataError("cluster_robust_covariance: n <= parameters");

    Matrix info(p, p);
    std::vector<std::vector<double>> score_sum(g_count, std::vector<double>(p, 0.0));
    for (std::size_t i = 0; i < design.n; ++i) {
        std::span<const double> row = design.row(i);
        double eta = model.beta[0];
        for (std::size_t j = 0; j < design.k; ++j) eta += model.beta[j + 1] * row[j];
        double pi = sigmoid(eta);
        double resid = static_cast<double>(design.y[i]) - pi;
        double w = pi * (1.0 - pi);
        auto& s = score_sum[static_cast<std::size_t>(design.cluster[i])];
        s[0] += resid;
        info(0, 0) += w;
        for (std::size_t a = 0; a < design.k; ++a) {
            s[a + 1] += resid * row[a];
            info(0, a + 1) += w * row[a];
            for (std::size_t b = a; b < design.k; ++b) info(a + 1, b + 1) += w * row[a] * row[b];
        }
    }
    for (std::size_t a = 0; a < p; ++a)
        for (std::size_t b = 0; b < a; ++b) info(a, b) = info(b, a);

    Cholesky ch = Cholesky::factor(info);
    if (!ch.ok) throw NumericError("cluster_robust_covariance: singular information matrix");
    Matrix bread = ch.inverse();

    Matrix meat(p, p);
    for (const auto& s : score_sum)
        for (std::size_t a = 0; a < p; ++a)
            for (std::size_t b = 0; b < p; ++b) meat(a, b) += s[a] * s[b];

    const double nd = static_cast<double>(design.n);
    const double gd = static_cast<double>(g_count);
    const double pd = static_cast<double>(p);
    double c = (gd / (gd - 1.0)) * ((nd - 1.0) / (nd - pd));
    Matrix cov = bread * meat * bread;
    Matrix out(p, p);
    for (std::size_t a = 0; a < p; ++a)
        for (std::size_t b = 0; b < p; ++b) out(a, b) = c * cov(a, b);
    return out;
}

double mcfadden_pseudo_r2(const FittedModel& model, const DesignMatrix& design) {
    std::size_t ones = 0;
    for (int v : design.y) ones += v != 0;
    double ybar = static_cast<double>(ones) / static_cast<double>(design.n);
    double ll0 = static_cast<double>(ones) * std::log(ybar) +
                 static_cast<double>(design.n - ones) * std::log1p(-ybar);
    double ll = 0.0;
    for (std::size_t i = 0; i < design.n; ++i) {
        double eta = model.linear_index(design.row(i));
        ll += design.y[i] ? log_sigmoid(eta) : log_sigmoid(-eta);
    }
    return 1.0 - ll / ll0;
}

double accuracy(const FittedModel& model, const DesignMatrix& holdout) {
    if (holdout.n == 0) throw DataError("accuracy: empty holdout");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < holdout.n; ++i) {
        double p = predict_proba(model, holdout.row(i));
        hits += (p >= 0.5) == (holdout.y[i] != 0);
    }
    return static_cast<double>(hits) / static_cast<double>(holdout.n);
}

std::string significance_stars(double p) {
    if (p < 0.001) return "***";
    if (p < 0.01) return "**";
    if (p < 0.05) return "*";
    return "";
}

double FittedModel::se(std::size_t j) const {
    if (cov_cluster.rows() != beta.size()) return 0.0;
    return std::sqrt(std::max(0.0, cov_cluster(j, j)));
}

double FittedModel::z_value(std::size_t j) const {
    double s = se(j);
    return s > 0.0 ? beta[j] / s : 0.0;
}

double FittedModel::p_value(std::size_t j) const {
    double s = se(j);
    return s > 0.0 ? normal_two_sided_p(beta[j] / s) : 1.0;
}

std::string FittedModel::stars(std::size_t j) const { return significance_stars(p_value(j)); }

std::vector<MemTerm> marginal_effects_at_mean(const FittedModel& model,
                                              const DesignMatrix& design,
                                              const std::vector<ModelTermInfo>& terms) {
    const std::size_t k = design.k;
    const std::size_t p = k + 1;
    if (terms.size() != k) throw DataError("marginal_effects_at_mean: term info size mismatch");
    if (model.beta.size() != p) throw DataError("marginal_effects_at_mean: model/design mismatch");

    std::vector<double> xbar(k, 0.0);
    for (std::size_t i = 0; i < design.n; ++i) {
        std::span<const double> row = design.row(i);
        for (std::size_t j = 0; j < k; ++j) xbar[j] += row[j];
    }
    for (double& v : xbar) v /= static_cast<double>(design.n);

    double eta = model.beta[0];
    for (std::size_t j = 0; j < k; ++j) eta += model.beta[j + 1] * xbar[j];
    double s = sigmoid(eta);
    double s1 = s * (1.0 - s);             // sigma'
    double s2 = s1 * (1.0 - 2.0 * s);      // sigma''

    std::vector<MemTerm> out;
    out.reserve(k);
    for (std::size_t j = 0; j < k; ++j) {
        // derivative of eta in the direction of term j
        double d = model.beta[j + 1];
        std::vector<double> dd(p, 0.0);  // d(D_j)/d(beta_l)
        dd[j + 1] = 1.0;
        if (terms[j].interacts_with < 0) {
            for (std::size_t l = 0; l < k; ++l) {
                if (terms[l].interacts_with == static_cast<int>(j)) {
                    d += model.beta[l + 1] * terms[l].partner_mean;
                    dd[l + 1] = terms[l].partner_mean;
                }
            }
        }
        MemTerm t;
        t.name = j < design.feature_names.size() ? design.feature_names[j]
                                                 : "x" + std::to_string(j + 1);
        t.mem = s1 * d;

        // delta method: grad_l = sigma''(eta) * xbar_l * D + sigma'(eta) * dD/dbeta_l
        std::vector<double> grad(p, 0.0);
        grad[0] = s2 * d;
        for (std::size_t l = 0; l < k; ++l) grad[l + 1] = s2 * xbar[l] * d + s1 * dd[l + 1];
        double var = 0.0;
        for (std::size_t a = 0; a < p; ++a)
            for (std::size_t b = 0; b < p; ++b) var += grad[a] * model.cov_cluster(a, b) * grad[b];
        t.se = std::sqrt(std::max(0.0, var));
        t.z = t.se > 0.0 ? t.mem / t.se : 0.0;
        t.p = t.se > 0.0 ? normal_two_sided_p(t.z) : 1.0;
        t.stars = significance_stars(t.p);
        out.push_back(std::move(t));
    }
    return out;
}

std::string FittedModel::to_json_string() const {
    json j;
    j["features"] = feature_names;
    j["beta"] = beta;
    json cov = json::array();
    for (std::size_t a = 0; a < cov_cluster.rows(); ++a) {
        json row = json::array();
        for (std::size_t b = 0; b < cov_cluster.cols(); ++b) row.push_back(cov_cluster(a, b));
        cov.push_back(std::move(row));
    }
    j["cov"] = std::move(cov);
    j["loglik"] = loglik;
    j["null_loglik"] = null_loglik;
    j["pseudo_r2"] = pseudo_r2;
    j["n_obs"] = n_obs;
    j["cluster_count"] = n_clusters;
    j["converged"] = converged;
    j["iterations"] = iterations;
    return j.dump(2);
}

FittedModel FittedModel::from_json_string(const std::string& text) {
    FittedModel m;
    try {
        json j = json::parse(text);
        m.feature_names = j.at("features").get<std::vector<std::string>>();
        m.beta = j.at("beta").get<std::vector<double>>();
        const auto& cov = j.at("cov");
        m.cov_cluster = Matrix(cov.size(), cov.size());
        for (std::size_t a = 0; a < cov.size(); ++a)
            for (std::size_t b = 0; b < cov[a].size(); ++b)
                m.cov_cluster(a, b) = cov[a][b].get<double>();
        m.loglik = j.at("loglik").get<double>();
        m.null_loglik = j.at("null_loglik").get<double>();
        m.pseudo_r2 = j.at("pseudo_r2").get<double>();
        m.n_obs = j.at("n_obs").get<std::size_t>();
        m.n_clusters = j.at("cluster_count").get<std::size_t>();
        m.converged = j.at("converged").get<bool>();
        m.iterations = j.value("iterations", 0);
    } catch (const json::exception& e) {
        throw DataError(std::string("bad model JSON: ") + e.what());
    }
    return m;
}

void FittedModel::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open model output: " + path);
    out << to_json_string() << '\n';
}

FittedModel FittedModel::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open model file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json_string(ss.str());
}

}  // namespace teamlens
