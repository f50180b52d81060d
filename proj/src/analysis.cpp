#include "teamlens/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "teamlens/errors.hpp"
#include "teamlens/rng.hpp"

namespace teamlens {

namespace {

// n_j bins shared by the robustness checks
struct MatchCountBin {
    std::size_t lo;
    std::size_t hi;  // exclusive; 0 = open-ended
    std::string label;
};

const std::vector<MatchCountBin>& match_count_bins() {
    static const std::vector<MatchCountBin> bins = {
        {1, 25, "1-24"},    {25, 50, "25-49"},   {50, 100, "50-99"},
        {100, 200, "100-199"}, {200, 0, "200+"},
    };
    return bins;
}

int bin_of(std::size_t n) {
    const auto& bins = match_count_bins();
    for (std::size_t i = 0; i < bins.size(); ++i)
        if (n >= bins[i].lo && (bins[i].hi == 0 || n < bins[i].hi)) return static_cast<int>(i);
    return -1;
}

std::vector<std::string> usable_features(const FeatureScaler& scaler,
                                         const std::vector<std::string>& wanted) {
    std::vector<std::string> out;
    for (const auto& name : wanted) {
        int idx = feature_index(name);
        if (idx >= 0 && !scaler.dropped[static_cast<std::size_t>(idx)]) out.push_back(name);
    }
    return out;
}

std::string fmt_g(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

}  // namespace

std::string rowset_hash(const std::vector<std::string>& ids) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& id : ids) h = mix64(h ^ hash_str(id));
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

S1Suite run_s1_suite(const std::vector<FeatureRow>& t1_rows, const FeatureScaler& t1_scaler) {
    if (t1_rows.empty()) throw DataError("run_s1_suite: no T1 rows");
    S1Suite suite;
    const std::vector<std::pair<std::string, std::vector<std::string>>> specs = {
        {"S1.1", {"eapm"}},
        {"S1.2", {"eapm", "selo"}},
        {"S1.3", {"eapm", "selo", "ffam_match", "ffam_map", "ffam_civ"}},
    };
    std::vector<std::string> ids;
    ids.reserve(t1_rows.size());
    for (const auto& r : t1_rows) ids.push_back(r.match_id);
    suite.rowset_hash = rowset_hash(ids);

    for (const auto& [name, wanted] : specs) {
        SuiteModel sm;
        sm.name = name;
        sm.features = usable_features(t1_scaler, wanted);
        DesignMatrix design = build_design(t1_rows, sm.features);
        sm.model = fit_logistic(design);
        suite.models.push_back(std::move(sm));
    }
    return suite;
}

std::vector<std::pair<double, double>> task_proficiency(
    const FittedModel& s13, const FeatureScaler& t1_scaler,
    const std::vector<FeatureRow>& t2_rows) {
    std::vector<int> idx;
    std::vector<double> scaled_beta;
    for (std::size_t j = 0; j < s13.feature_names.size(); ++j) {
        int f = feature_index(s13.feature_names[j]);
        if (f < 0)
            throw DataError("task_proficiency: model feature \"" + s13.feature_names[j] +
                            "\" is not a base feature");
        idx.push_back(f);
        scaled_beta.push_back(s13.beta[j + 1] / t1_scaler.sd[static_cast<std::size_t>(f)]);
    }
    std::vector<std::pair<double, double>> out;
    out.reserve(t2_rows.size());
    for (const auto& row : t2_rows) {
        double a = 0.0, b = 0.0;
        for (std::size_t j = 0; j < idx.size(); ++j) {
            a += scaled_beta[j] * row.focal_raw[idx[j]];
            b += scaled_beta[j] * row.opp_raw[idx[j]];
        }
        out.emplace_back(a, b);
    }
    return out;
}

S2Features prepare_s2_features(const std::vector<FeatureRow>& t2_rows, const TeamPlayerIndex& tp,
                               const FittedModel& s13, const FeatureScaler& t1_scaler) {
    S2Features s2;
    const std::size_t n = t2_rows.size();
    if (n == 0) throw DataError("prepare_s2_features: no T2 rows");

    std::vector<double> tp_raw(n), tap_raw(n);
    auto indices = task_proficiency(s13, t1_scaler, t2_rows);
    for (std::size_t i = 0; i < n; ++i) {
        tp_raw[i] = tp.team_effect(t2_rows[i].focal_members) -
                    tp.team_effect(t2_rows[i].opp_members);
        tap_raw[i] = indices[i].first - indices[i].second;
    }

    auto standardize = [&](const std::vector<double>& raw, double& m_out, double& s_out,
                           bool& degenerate) {
        std::vector<double> train;
        for (std::size_t i = 0; i < n; ++i)
            if (!t2_rows[i].holdout) train.push_back(raw[i]);
        m_out = mean_of(train);
        s_out = sd_of(train);
        std::vector<double> out(n, 0.0);
        if (s_out < 1e-12) {
            degenerate = true;
            s_out = 1.0;
            return out;
        }
        for (std::size_t i = 0; i < n; ++i) out[i] = (raw[i] - m_out) / s_out;
        return out;
    };
    s2.d_tp_std = standardize(tp_raw, s2.tp_mean, s2.tp_sd, s2.tp_degenerate);
    s2.d_taskprof_std =
        standardize(tap_raw, s2.taskprof_mean, s2.taskprof_sd, s2.taskprof_degenerate);
    return s2;
}

namespace {

// Assembles a design over T2 rows from named columns: base feature deltas or
// the derived d_tp / d_taskprof columns.
DesignMatrix build_t2_design(const std::vector<FeatureRow>& rows, const S2Features& s2,
                             const std::vector<std::string>& names, bool holdout_rows) {
    DesignMatrix d;
    d.feature_names = names;
    std::vector<std::string> clusters;
    std::vector<double> features(names.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].holdout != holdout_rows) continue;
        for (std::size_t j = 0; j < names.size(); ++j) {
            if (names[j] == "d_tp")
                features[j] = s2.d_tp_std[i];
            else if (names[j] == "d_taskprof")
                features[j] = s2.d_taskprof_std[i];
            else {
                int f = feature_index(names[j] == "d_tfam" ? "tfam" : names[j]);
                if (f < 0) throw DataError("build_t2_design: unknown column " + names[j]);
                features[j] = rows[i].delta_std[f];
            }
        }
        d.add_row(features, rows[i].y, 0);
        clusters.push_back(rows[i].cluster);
    }
    d.cluster = DesignMatrix::densify_clusters(clusters, d.n_clusters);
    return d;
}

std::vector<std::string> t2_row_ids(const std::vector<FeatureRow>& rows, bool holdout_rows) {
    std::vector<std::string> ids;
    for (const auto& r : rows)
        if (r.holdout == holdout_rows) ids.push_back(r.match_id);
    return ids;
}

}  // namespace

S2Suite run_s2_suite(const std::vector<FeatureRow>& t2_rows, const S2Features& s2) {
    S2Suite suite;
    std::vector<std::pair<std::string, std::vector<std::string>>> specs = {
        {"S2.1", {"d_tp"}},
        {"S2.2", {"d_taskprof"}},
        {"S2.3", {"d_tp", "d_taskprof"}},
        {"S2.4", {"d_tp", "d_taskprof", "d_tfam"}},
    };
    // drop degenerate derived columns (e.g. no qualified player anywhere)
    for (auto& [name, feats] : specs) {
        std::vector<std::string> kept;
        for (const auto& f : feats) {
            if (f == "d_tp" && s2.tp_degenerate) continue;
            if (f == "d_taskprof" && s2.taskprof_degenerate) continue;
            kept.push_back(f);
        }
        feats = std::move(kept);
    }

    suite.train_hash = rowset_hash(t2_row_ids(t2_rows, false));
    suite.test_hash = rowset_hash(t2_row_ids(t2_rows, true));

    double prev_acc = 0.5;
    for (const auto& [name, feats] : specs) {
        SuiteModel sm;
        sm.name = name;
        sm.features = feats;
        DesignMatrix train = build_t2_design(t2_rows, s2, feats, false);
        DesignMatrix test = build_t2_design(t2_rows, s2, feats, true);
        sm.model = fit_logistic(train);
        double acc = test.n > 0 ? accuracy(sm.model, test) : accuracy(sm.model, train);
        suite.test_accuracy.push_back(acc);
        suite.delta_accuracy.push_back(acc - prev_acc);
        prev_acc = acc;
        suite.models.push_back(std::move(sm));
    }
    return suite;
}

MemTable interaction_mem(const std::vector<FeatureRow>& t2_rows, const S2Features& s2) {
    MemTable table;
    const int tfam_idx = feature_index("tfam");

    std::vector<double> abs_vals, size_vals, tfam_vals;
    for (std::size_t i = 0; i < t2_rows.size(); ++i) {
        if (t2_rows[i].holdout) continue;
        abs_vals.push_back(t2_rows[i].abs_tfam);
        size_vals.push_back(static_cast<double>(t2_rows[i].team_size));
        tfam_vals.push_back(t2_rows[i].delta_std[tfam_idx]);
    }
    if (abs_vals.empty()) throw DataError("interaction_mem: no train rows");
    const double abs_mean = mean_of(abs_vals);
    const double size_mean = mean_of(size_vals);
    // a constant moderator makes its interaction collinear with the main term
    const bool use_abs = sd_of(abs_vals) > 1e-12;
    const bool use_size = sd_of(size_vals) > 1e-12;
    const bool use_tfam = sd_of(tfam_vals) > 1e-12;

    enum Col { kTp, kTap, kTfam, kAbsTp, kAbsTap, kSizeTp, kSizeTap };
    std::vector<std::pair<Col, std::string>> cols;
    int tp_col = -1, tap_col = -1;
    if (!s2.tp_degenerate) {
        tp_col = static_cast<int>(cols.size());
        cols.emplace_back(kTp, "d_tp");
    }
    if (!s2.taskprof_degenerate) {
        tap_col = static_cast<int>(cols.size());
        cols.emplace_back(kTap, "d_taskprof");
    }
    if (use_tfam) cols.emplace_back(kTfam, "d_tfam");
    if (use_abs && tp_col >= 0) cols.emplace_back(kAbsTp, "abs_tfam_x_tp");
    if (use_abs && tap_col >= 0) cols.emplace_back(kAbsTap, "abs_tfam_x_taskprof");
    if (use_size && tp_col >= 0) cols.emplace_back(kSizeTp, "size_x_tp");
    if (use_size && tap_col >= 0) cols.emplace_back(kSizeTap, "size_x_taskprof");
    if (cols.empty()) throw DataError("interaction_mem: every candidate column is degenerate");

    DesignMatrix train;
    for (const auto& [col, name] : cols) train.feature_names.push_back(name);
    std::vector<std::string> clusters;
    std::vector<double> features(cols.size());
    for (std::size_t i = 0; i < t2_rows.size(); ++i) {
        if (t2_rows[i].holdout) continue;
        const auto& row = t2_rows[i];
        double d_tp = s2.d_tp_std[i];
        double d_tap = s2.d_taskprof_std[i];
        double d_tfam = row.delta_std[tfam_idx];
        for (std::size_t c = 0; c < cols.size(); ++c) {
            switch (cols[c].first) {
                case kTp: features[c] = d_tp; break;
                case kTap: features[c] = d_tap; break;
                case kTfam: features[c] = d_tfam; break;
                case kAbsTp: features[c] = row.abs_tfam * d_tp; break;
                case kAbsTap: features[c] = row.abs_tfam * d_tap; break;
                case kSizeTp: features[c] = row.team_size * d_tp; break;
                case kSizeTap: features[c] = row.team_size * d_tap; break;
            }
        }
        train.add_row(features, row.y, 0);
        clusters.push_back(row.cluster);
    }
    train.cluster = DesignMatrix::densify_clusters(clusters, train.n_clusters);

    table.model = fit_logistic(train);
    std::vector<ModelTermInfo> terms(cols.size());
    for (std::size_t c = 0; c < cols.size(); ++c) {
        switch (cols[c].first) {
            case kAbsTp: terms[c] = {tp_col, abs_mean}; break;
            case kAbsTap: terms[c] = {tap_col, abs_mean}; break;
            case kSizeTp: terms[c] = {tp_col, size_mean}; break;
            case kSizeTap: terms[c] = {tap_col, size_mean}; break;
            default: break;
        }
    }
    table.terms = marginal_effects_at_mean(table.model, train, terms);
    table.n_obs = train.n;
    table.n_clusters = train.n_clusters;
    return table;
}

FacetReport facet_regressions(const std::vector<FeatureRow>& t2_rows, const S2Features& s2,
                              FacetKind kind) {
    FacetReport report;
    report.kind = kind;
    const std::vector<std::string> features = {"d_tp", "d_taskprof", "d_tfam"};

    // facet id per row (train rows only), -1 = not in any facet
    std::vector<int> facet_of(t2_rows.size(), -1);
    std::vector<std::string> labels;

    if (kind == FacetKind::team_size) {
        std::set<int> sizes;
        for (const auto& r : t2_rows)
            if (!r.holdout) sizes.insert(r.team_size);
        std::map<int, int> id_of;
        for (int s : sizes) {
            id_of[s] = static_cast<int>(labels.size());
            labels.push_back("size_" + std::to_string(s));
        }
        for (std::size_t i = 0; i < t2_rows.size(); ++i)
            if (!t2_rows[i].holdout) facet_of[i] = id_of[t2_rows[i].team_size];
    } else {
        std::vector<double> vals;
        for (const auto& r : t2_rows)
            if (!r.holdout) vals.push_back(r.abs_tfam);
        if (vals.empty()) throw DataError("facet_regressions: no train rows");
        std::vector<double> edges(4);
        for (int q = 1; q <= 4; ++q) edges[q - 1] = quantile(vals, 0.2 * q);
        for (int q = 1; q < 4; ++q)
            if (!(edges[q] > edges[q - 1]))
                throw DataError("facet_regressions: degenerate quantiles (familiarity has too "
                                "many ties for five facets)");
        for (int q = 0; q < 5; ++q) labels.push_back("q" + std::to_string(q + 1));
        for (std::size_t i = 0; i < t2_rows.size(); ++i) {
            if (t2_rows[i].holdout) continue;
            double v = t2_rows[i].abs_tfam;
            int f = 4;
            for (int q = 0; q < 4; ++q) {
                if (v <= edges[q]) {  // ties to the lower quantile
                    f = q;
                    break;
                }
            }
            facet_of[i] = f;
        }
    }

    for (std::size_t f = 0; f < labels.size(); ++f) {
        FacetResult res;
        res.label = labels[f];
        res.features = features;
        std::vector<FeatureRow> rows;
        for (std::size_t i = 0; i < t2_rows.size(); ++i)
            if (facet_of[i] == static_cast<int>(f)) rows.push_back(t2_rows[i]);
        // re-index the derived columns for the facet subset
        S2Features sub;
        sub.tp_degenerate = s2.tp_degenerate;
        sub.taskprof_degenerate = s2.taskprof_degenerate;
        for (std::size_t i = 0; i < t2_rows.size(); ++i) {
            if (facet_of[i] != static_cast<int>(f)) continue;
            sub.d_tp_std.push_back(s2.d_tp_std[i]);
            sub.d_taskprof_std.push_back(s2.d_taskprof_std[i]);
        }
        res.n = rows.size();
        res.sparse = res.n < 500;
        std::size_t ones = 0;
        for (const auto& r : rows) ones += r.y != 0;
        if (rows.size() < features.size() + 2 || ones == 0 || ones == rows.size()) {
            res.skipped = true;
            res.note = "degenerate facet (single outcome class or too few rows)";
            report.facets.push_back(std::move(res));
            continue;
        }
        try {
            DesignMatrix design = build_t2_design(rows, sub, features, false);
            res.model = fit_logistic(design);
        } catch (const std::exception& e) {
            res.skipped = true;
            res.note = e.what();
        }
        report.facets.push_back(std::move(res));
    }
    return report;
}

std::vector<KsBin> ks_zero_familiarity(const ResidualLedger& ledger) {
    const auto& bins = match_count_bins();
    std::vector<std::vector<double>> zero(bins.size()), all(bins.size());
    for (const auto& pid : ledger.players) {
        const auto& es = ledger.entries.at(pid);
        int b = bin_of(es.size());
        if (b < 0) continue;
        for (const auto& e : es) {
            all[b].push_back(e.r);
            if (e.zero_fam) zero[b].push_back(e.r);
        }
    }
    std::vector<KsBin> out;
    for (std::size_t b = 0; b < bins.size(); ++b) {
        KsBin kb;
        kb.label = bins[b].label;
        kb.n_zero = zero[b].size();
        kb.n_all = all[b].size();
        if (zero[b].empty() || all[b].empty()) {
            kb.skipped = true;
        } else {
            KsResult ks = ks_two_sample(zero[b], all[b]);
            kb.d = ks.d;
            kb.p = ks.p;
        }
        out.push_back(std::move(kb));
    }
    return out;
}

std::vector<PositionCorrBin> position_residual_correlation(const ResidualLedger& ledger) {
    const auto& bins = match_count_bins();
    std::vector<std::vector<double>> flank(bins.size()), pocket(bins.size());
    for (const auto& pid : ledger.players) {
        const auto& es = ledger.entries.at(pid);
        double fsum = 0.0, psum = 0.0;
        std::size_t fn = 0, pn = 0;
        for (const auto& e : es) {
            if (e.pos == Position::flank) {
                fsum += e.r;
                ++fn;
            } else if (e.pos == Position::pocket) {
                psum += e.r;
                ++pn;
            }
        }
        if (fn == 0 || pn == 0) continue;
        int b = bin_of(es.size());
        if (b < 0) continue;
        flank[b].push_back(fsum / static_cast<double>(fn));
        pocket[b].push_back(psum / static_cast<double>(pn));
    }
    std::vector<PositionCorrBin> out;
    for (std::size_t b = 0; b < bins.size(); ++b) {
        PositionCorrBin pb;
        pb.label = bins[b].label;
        pb.n_players = flank[b].size();
        if (pb.n_players < 3) {
            pb.skipped = true;
        } else {
            CorrResult c = pearson(flank[b], pocket[b]);
            if (!c.defined) {
                pb.skipped = true;
            } else {
                pb.r = c.r;
                pb.p = c.p;
            }
        }
        out.push_back(std::move(pb));
    }
    return out;
}

Descriptives descriptive_stats(const std::vector<FeatureRow>& corpus) {
    if (corpus.empty()) throw DataError("descriptive_stats: empty corpus");
    Descriptives d;
    const std::size_t nf = kNumFeatures;
    d.corr_names.assign(kFeatureNames.begin(), kFeatureNames.end());
    d.corr_names.push_back("win");

    std::vector<std::vector<double>> cols(nf + 1);
    for (const auto& row : corpus) {
        for (std::size_t f = 0; f < nf; ++f) cols[f].push_back(row.delta_raw[f]);
        cols[nf].push_back(static_cast<double>(row.y));
    }
    const std::size_t nv = nf + 1;
    d.corr = Matrix(nv, nv);
    d.corr_p = Matrix(nv, nv);
    d.corr_defined.assign(nv, std::vector<bool>(nv, false));
    for (std::size_t a = 0; a < nv; ++a) {
        d.corr(a, a) = 1.0;
        d.corr_defined[a][a] = sd_of(cols[a]) > 0.0;
        for (std::size_t b = a + 1; b < nv; ++b) {
            CorrResult c = pearson(cols[a], cols[b]);
            d.corr(a, b) = c.r;
            d.corr(b, a) = c.r;
            d.corr_p(a, b) = c.p;
            d.corr_p(b, a) = c.p;
            d.corr_defined[a][b] = c.defined;
            d.corr_defined[b][a] = c.defined;
        }
    }

    // Elo bins over matches: bin by the match-level mean solo Elo
    const int selo = feature_index("selo");
    const int eapm = feature_index("eapm");
    struct Edge {
        double lo, hi;
        const char* label;
    };
    const Edge edges[4] = {{-1e300, 1000.0, "<1000"},
                           {1000.0, 1500.0, "1000-1500"},
                           {1500.0, 2000.0, "1501-2000"},
                           {2000.0, 1e300, ">2000"}};
    for (const auto& e : edges) {
        EloBinStat stat;
        stat.label = e.label;
        std::vector<double> dapm, win;
        double apm_sum = 0.0;
        std::size_t teams = 0;
        for (const auto& row : corpus) {
            double m = 0.5 * (row.focal_raw[selo] + row.opp_raw[selo]);
            bool inside = e.lo == -1e300 ? m < e.hi : (m > e.lo || m == e.lo) && m <= e.hi;
            if (e.lo != -1e300) inside = m > e.lo && m <= e.hi;
            if (e.lo == 1000.0) inside = m >= 1000.0 && m <= 1500.0;
            if (!inside) continue;
            ++stat.n_matches;
            apm_sum += row.focal_raw[eapm] + row.opp_raw[eapm];
            teams += 2;
            dapm.push_back(row.delta_raw[eapm]);
            win.push_back(static_cast<double>(row.y));
        }
        if (teams > 0) stat.mean_team_apm = apm_sum / static_cast<double>(teams);
        CorrResult c = pearson(dapm, win);
        stat.corr_defined = c.defined;
        stat.corr_dapm_win = c.r;
        stat.corr_p = c.p;
        d.elo_bins.push_back(std::move(stat));
    }

    // VIF: each raw delta regressed on the others plus an intercept
    d.vif.assign(nf, std::numeric_limits<double>::quiet_NaN());
    for (std::size_t f = 0; f < nf; ++f) {
        if (sd_of(cols[f]) <= 0.0) continue;
        std::vector<std::vector<double>> x;
        x.push_back(std::vector<double>(corpus.size(), 1.0));
        for (std::size_t g = 0; g < nf; ++g) {
            if (g == f) continue;
            if (sd_of(cols[g]) <= 0.0) continue;
            x.push_back(cols[g]);
        }
        std::vector<double> beta;
        if (!ols_solve(x, cols[f], beta)) continue;
        double my = mean_of(cols[f]);
        double ss_tot = 0.0, ss_res = 0.0;
        for (std::size_t i = 0; i < corpus.size(); ++i) {
            double pred = 0.0;
            for (std::size_t j = 0; j < x.size(); ++j) pred += beta[j] * x[j][i];
            ss_res += (cols[f][i] - pred) * (cols[f][i] - pred);
            ss_tot += (cols[f][i] - my) * (cols[f][i] - my);
        }
        double r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 0.0;
        r2 = std::min(r2, 1.0 - 1e-12);
        d.vif[f] = 1.0 / (1.0 - r2);
    }

    // appearance quantiles
    std::map<std::string, std::size_t> team_counts;
    std::map<std::string, std::size_t> player_counts;
    for (const auto& row : corpus) {
        auto opp_cluster = [&]() {
            std::vector<std::string> pids;
            for (const auto& m : row.opp_members) pids.push_back(m.pid);
            std::sort(pids.begin(), pids.end());
            std::string key;
            for (std::size_t i = 0; i < pids.size(); ++i) {
                if (i) key.push_back('|');
                key += pids[i];
            }
            return key;
        };
        team_counts[row.cluster] += 1;
        team_counts[opp_cluster()] += 1;
        for (const auto& m : row.focal_members) player_counts[m.pid] += 1;
        for (const auto& m : row.opp_members) player_counts[m.pid] += 1;
    }
    std::vector<double> tc, pc;
    for (const auto& [k, v] : team_counts) tc.push_back(static_cast<double>(v));
    for (const auto& [k, v] : player_counts) pc.push_back(static_cast<double>(v));
    const double qs[4] = {0.50, 0.75, 0.95, 0.99};
    for (int i = 0; i < 4; ++i) {
        d.team_appearances[i] = quantile(tc, qs[i]);
        d.player_appearances[i] = quantile(pc, qs[i]);
    }
    return d;
}

std::vector<BandwidthCurve> residual_bandwidth(
    const std::vector<std::pair<std::string, const ResidualLedger*>>& ledgers,
    std::size_t window) {
    std::vector<BandwidthCurve> out;
    for (const auto& [name, ledger] : ledgers) {
        BandwidthCurve curve;
        curve.model_name = name;
        std::vector<std::pair<std::size_t, double>> tp;  // (n_j, mean residual)
        std::vector<std::string> pids = ledger->players;
        std::sort(pids.begin(), pids.end());
        for (const auto& pid : pids) {
            const auto& es = ledger->entries.at(pid);
            if (es.empty()) continue;
            double s = 0.0;
            for (const auto& e : es) s += e.r;
            tp.emplace_back(es.size(), s / static_cast<double>(es.size()));
        }
        std::stable_sort(tp.begin(), tp.end(),
                         [](const auto& a, const auto& b) { return a.first < b.first; });

        auto window_point = [&](std::size_t lo, std::size_t hi) {
            std::vector<double> abs_vals, vals;
            for (std::size_t i = lo; i < hi; ++i) {
                abs_vals.push_back(std::abs(tp[i].second));
                vals.push_back(tp[i].second);
            }
            BandwidthPoint pt;
            pt.n_center = static_cast<double>(tp[(lo + hi) / 2].first);
            pt.p95_abs = quantile(abs_vals, 0.95);
            pt.band_width = quantile(vals, 0.975) - quantile(vals, 0.025);
            return pt;
        };

        if (tp.size() < window) {
            if (!tp.empty()) {
                curve.whole_sample = true;
                curve.points.push_back(window_point(0, tp.size()));
            }
        } else {
            std::size_t n_windows = tp.size() - window + 1;
            std::size_t stride = std::max<std::size_t>(1, n_windows / 400);
            for (std::size_t lo = 0; lo + window <= tp.size(); lo += stride)
                curve.points.push_back(window_point(lo, lo + window));
        }
        out.push_back(std::move(curve));
    }
    return out;
}

AnalysisResult run_analysis(const std::vector<FeatureRow>& t1_rows,
                            const std::vector<FeatureRow>& t2_rows, const TeamPlayerIndex& tp,
                            const FeatureScaler& t1_scaler, const FittedModel* frozen_s13,
                            const AnalysisOptions& opts) {
    AnalysisResult result;
    result.s1 = run_s1_suite(t1_rows, t1_scaler);
    const FittedModel& s13 = result.s1.models.back().model;

    if (frozen_s13) {
        bool same = frozen_s13->beta.size() == s13.beta.size();
        for (std::size_t j = 0; same && j < s13.beta.size(); ++j)
            same = std::abs(frozen_s13->beta[j] - s13.beta[j]) <= 1e-9;
        if (!same)
            throw DataError(
                "run_analysis: refit S1.3 coefficients differ from the persisted model "
                "(stale model artifact?)");
    }

    for (const auto& sm : result.s1.models)
        result.s1_ledgers.push_back(
            compute_residuals(sm.model, t1_rows, opts.focal_only_residuals));
    const ResidualLedger& ledger13 = result.s1_ledgers.back();

    result.s2_features = prepare_s2_features(t2_rows, tp, s13, t1_scaler);
    result.s2 = run_s2_suite(t2_rows, result.s2_features);

    if (opts.run_mem) result.mem = interaction_mem(t2_rows, result.s2_features);
    if (opts.run_facets) {
        try {
            result.familiarity_facets =
                facet_regressions(t2_rows, result.s2_features, FacetKind::familiarity_quantile);
        } catch (const DataError&) {
            result.familiarity_facets.reset();  // degenerate quantiles reported as absent
        }
        result.team_size_facets =
            facet_regressions(t2_rows, result.s2_features, FacetKind::team_size);
    }
    if (opts.run_ks) result.ks = ks_zero_familiarity(ledger13);
    if (opts.run_positions) result.positions = position_residual_correlation(ledger13);
    if (opts.run_descriptives) {
        std::vector<FeatureRow> corpus = t1_rows;
        corpus.insert(corpus.end(), t2_rows.begin(), t2_rows.end());
        result.descriptives = descriptive_stats(corpus);
    }
    if (opts.run_bandwidth) {
        std::vector<std::pair<std::string, const ResidualLedger*>> ledgers;
        for (std::size_t i = 0; i < result.s1.models.size(); ++i)
            ledgers.emplace_back(result.s1.models[i].name, &result.s1_ledgers[i]);
        result.bandwidth = residual_bandwidth(ledgers);
    }
    return result;
}

namespace {

void write_suite_csv(const std::string& path, const std::vector<SuiteModel>& models,
                     const std::string& rowset, const std::vector<double>* accuracy,
                     const std::vector<double>* delta_acc, const std::string* test_hash) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open report: " + path);
    out << "model,term,value,se,z,p_value,stars\n";
    for (std::size_t m = 0; m < models.size(); ++m) {
        const auto& sm = models[m];
        const auto& fm = sm.model;
        out << sm.name << ",intercept," << fmt_g(fm.beta[0]) << ',' << fmt_g(fm.se(0)) << ','
            << fmt_g(fm.z_value(0)) << ',' << fmt_g(fm.p_value(0)) << ',' << fm.stars(0) << '\n';
        for (std::size_t j = 0; j < sm.features.size(); ++j) {
            out << sm.name << ',' << sm.features[j] << ',' << fmt_g(fm.beta[j + 1]) << ','
                << fmt_g(fm.se(j + 1)) << ',' << fmt_g(fm.z_value(j + 1)) << ','
                << fmt_g(fm.p_value(j + 1)) << ',' << fm.stars(j + 1) << '\n';
        }
        out << sm.name << ",pseudo_r2," << fmt_g(fm.pseudo_r2) << ",,,,\n";
        out << sm.name << ",n_obs," << fm.n_obs << ",,,,\n";
        out << sm.name << ",n_clusters," << fm.n_clusters << ",,,,\n";
        out << sm.name << ",converged," << (fm.converged ? 1 : 0) << ",,,,\n";
        if (accuracy) out << sm.name << ",test_accuracy," << fmt_g((*accuracy)[m]) << ",,,,\n";
        if (delta_acc) out << sm.name << ",delta_accuracy," << fmt_g((*delta_acc)[m]) << ",,,,\n";
    }
    out << "all,rowset_hash," << rowset << ",,,,\n";
    if (test_hash) out << "all,test_rowset_hash," << *test_hash << ",,,,\n";
}

}  // namespace

void write_reports(const std::string& dir, const AnalysisResult& result) {
    std::filesystem::create_directories(dir);

    write_suite_csv(dir + "/s1_suite.csv", result.s1.models, result.s1.rowset_hash, nullptr,
                    nullptr, nullptr);
    write_suite_csv(dir + "/s2_suite.csv", result.s2.models, result.s2.train_hash,
                    &result.s2.test_accuracy, &result.s2.delta_accuracy, &result.s2.test_hash);

    if (result.mem) {
        std::ofstream out(dir + "/mem.csv");
        if (!out) throw DataError("cannot open report: mem.csv");
        out << "term,marginal_effect,se,z,p_value,stars\n";
        for (const auto& t : result.mem->terms)
            out << t.name << ',' << fmt_g(t.mem) << ',' << fmt_g(t.se) << ',' << fmt_g(t.z) << ','
                << fmt_g(t.p) << ',' << t.stars << '\n';
        out << "n_obs," << result.mem->n_obs << ",,,,\n";
        out << "n_clusters," << result.mem->n_clusters << ",,,,\n";
    }

    {
        std::ofstream out(dir + "/facets.csv");
        if (!out) throw DataError("cannot open report: facets.csv");
        out << "facet_kind,facet,n,sparse,skipped,term,value,se,z,p_value,stars,note\n";
        auto dump = [&](const FacetReport& rep, const char* kind) {
            for (const auto& f : rep.facets) {
                if (f.skipped || !f.model) {
                    out << kind << ',' << f.label << ',' << f.n << ',' << (f.sparse ? 1 : 0)
                        << ",1,,,,,,," << f.note << '\n';
                    continue;
                }
                const FittedModel& fm = *f.model;
                out << kind << ',' << f.label << ',' << f.n << ',' << (f.sparse ? 1 : 0)
                    << ",0,intercept," << fmt_g(fm.beta[0]) << ',' << fmt_g(fm.se(0)) << ','
                    << fmt_g(fm.z_value(0)) << ',' << fmt_g(fm.p_value(0)) << ',' << fm.stars(0)
                    << ",\n";
                for (std::size_t j = 0; j < f.features.size(); ++j)
                    out << kind << ',' << f.label << ',' << f.n << ',' << (f.sparse ? 1 : 0)
                        << ",0," << f.features[j] << ',' << fmt_g(fm.beta[j + 1]) << ','
                        << fmt_g(fm.se(j + 1)) << ',' << fmt_g(fm.z_value(j + 1)) << ','
                        << fmt_g(fm.p_value(j + 1)) << ',' << fm.stars(j + 1) << ",\n";
            }
        };
        if (result.familiarity_facets) dump(*result.familiarity_facets, "familiarity_quantile");
        if (result.team_size_facets) dump(*result.team_size_facets, "team_size");
    }

    {
        std::ofstream out(dir + "/ks.csv");
        if (!out) throw DataError("cannot open report: ks.csv");
        out << "bin,n_zero,n_all,d,p_value,skipped\n";
        for (const auto& b : result.ks)
            out << b.label << ',' << b.n_zero << ',' << b.n_all << ',' << fmt_g(b.d) << ','
                << fmt_g(b.p) << ',' << (b.skipped ? 1 : 0) << '\n';
    }

    {
        std::ofstream out(dir + "/positions.csv");
        if (!out) throw DataError("cannot open report: positions.csv");
        out << "bin,n_players,corr,p_value,skipped\n";
        for (const auto& b : result.positions)
            out << b.label << ',' << b.n_players << ',' << fmt_g(b.r) << ',' << fmt_g(b.p) << ','
                << (b.skipped ? 1 : 0) << '\n';
    }

    if (result.descriptives) {
        const Descriptives& d = *result.descriptives;
        std::ofstream out(dir + "/descriptives.csv");
        if (!out) throw DataError("cannot open report: descriptives.csv");
        out << "section,key1,key2,value\n";
        for (std::size_t a = 0; a < d.corr_names.size(); ++a)
            for (std::size_t b = 0; b < d.corr_names.size(); ++b) {
                out << "correlation," << d.corr_names[a] << ',' << d.corr_names[b] << ','
                    << (d.corr_defined[a][b] ? fmt_g(d.corr(a, b)) : "undefined") << '\n';
                if (a != b)
                    out << "correlation_p," << d.corr_names[a] << ',' << d.corr_names[b] << ','
                        << (d.corr_defined[a][b] ? fmt_g(d.corr_p(a, b)) : "undefined") << '\n';
            }
        for (const auto& e : d.elo_bins) {
            out << "elo_bin," << e.label << ",n_matches," << e.n_matches << '\n';
            out << "elo_bin," << e.label << ",mean_team_apm," << fmt_g(e.mean_team_apm) << '\n';
            out << "elo_bin," << e.label << ",corr_dapm_win,"
                << (e.corr_defined ? fmt_g(e.corr_dapm_win) : "undefined") << '\n';
            out << "elo_bin," << e.label << ",corr_p,"
                << (e.corr_defined ? fmt_g(e.corr_p) : "undefined") << '\n';
        }
        for (std::size_t f = 0; f < kNumFeatures; ++f)
            out << "vif," << kFeatureNames[f] << ",,"
                << (std::isnan(d.vif[f]) ? "undefined" : fmt_g(d.vif[f])) << '\n';
        const char* qlabels[4] = {"p50", "p75", "p95", "p99"};
        for (int i = 0; i < 4; ++i)
            out << "appearances,team," << qlabels[i] << ',' << fmt_g(d.team_appearances[i])
                << '\n';
        for (int i = 0; i < 4; ++i)
            out << "appearances,player," << qlabels[i] << ',' << fmt_g(d.player_appearances[i])
                << '\n';
    }

    {
        std::ofstream out(dir + "/bandwidth.csv");
        if (!out) throw DataError("cannot open report: bandwidth.csv");
        out << "model,n_center,p95_abs,band_width,whole_sample\n";
        for (const auto& c : result.bandwidth)
            for (const auto& pt : c.points)
                out << c.model_name << ',' << fmt_g(pt.n_center) << ',' << fmt_g(pt.p95_abs)
                    << ',' << fmt_g(pt.band_width) << ',' << (c.whole_sample ? 1 : 0) << '\n';
    }
}

}  // namespace teamlens
