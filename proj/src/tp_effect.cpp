#include "teamlens/tp_effect.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "teamlens/errors.hpp"
#include "teamlens/stats.hpp"

namespace teamlens {

DesignMatrix build_design(const std::vector<FeatureRow>& rows,
                          const std::vector<std::string>& feature_names, bool exclude_holdout) {
    DesignMatrix d;
    d.feature_names = feature_names;
    std::vector<int> idx;
    for (const auto& name : feature_names) {
        int i = feature_index(name);
        if (i < 0) throw DataError("build_design: unknown feature \"" + name + "\"");
        idx.push_back(i);
    }
    std::vector<std::string> cluster_tokens;
    std::vector<double> features(feature_names.size());
    for (const auto& row : rows) {
        if (exclude_holdout && row.holdout) continue;
        for (std::size_t j = 0; j < idx.size(); ++j) features[j] = row.delta_std[idx[j]];
        d.add_row(features, row.y, 0);
        cluster_tokens.push_back(row.cluster);
    }
    d.cluster = DesignMatrix::densify_clusters(cluster_tokens, d.n_clusters);
    return d;
}

void ResidualLedger::add(const std::string& pid, ResidualEntry e) {
    auto it = entries.find(pid);
    if (it == entries.end()) {
        players.push_back(pid);
        entries[pid].push_back(std::move(e));
    } else {
        it->second.push_back(std::move(e));
    }
}

std::size_t ResidualLedger::n_matches(const std::string& pid) const {
    auto it = entries.find(pid);
    return it == entries.end() ? 0 : it->second.size();
}

ResidualLedger compute_residuals(const FittedModel& s1_model,
                                 const std::vector<FeatureRow>& t1_rows, bool focal_only) {
    std::vector<int> idx;
    for (const auto& name : s1_model.feature_names) {
        int i = feature_index(name);
        if (i < 0) throw DataError("compute_residuals: model feature \"" + name +
                                   "\" not present in feature rows");
        idx.push_back(i);
    }
    ResidualLedger ledger;
    std::vector<double> features(idx.size());
    for (const auto& row : t1_rows) {
        for (std::size_t j = 0; j < idx.size(); ++j) features[j] = row.delta_std[idx[j]];
        double p = predict_proba(s1_model, features);
        double r = static_cast<double>(row.y) - p;
        for (const auto& m : row.focal_members)
            ledger.add(m.pid, {row.match_id, r, m.pos, row.zero_fam, true});
        if (!focal_only) {
            for (const auto& m : row.opp_members)
                ledger.add(m.pid, {row.match_id, -r, m.pos, row.zero_fam, false});
        }
    }
    return ledger;
}

std::optional<double> player_effect(const ResidualLedger& ledger, const std::string& pid) {
    auto it = ledger.entries.find(pid);
    if (it == ledger.entries.end() || it->second.empty()) return std::nullopt;
    double s = 0.0;
    for (const auto& e : it->second) s += e.r;
    return s / static_cast<double>(it->second.size());
}

TeamPlayerIndex::TeamPlayerIndex(const ResidualLedger& ledger, int tau) : tau_(tau) {
    for (const auto& pid : ledger.players) {
        const auto& es = ledger.entries.at(pid);
        if (es.empty()) continue;
        PlayerEffect pe;
        pe.n = es.size();
        double s = 0.0;
        for (const auto& e : es) s += e.r;
        pe.tp = s / static_cast<double>(pe.n);
        pe.qualified = pe.n >= static_cast<std::size_t>(tau);
        effects_[pid] = pe;
    }
}

std::optional<PlayerEffect> TeamPlayerIndex::lookup(const std::string& pid) const {
    auto it = effects_.find(pid);
    if (it == effects_.end()) return std::nullopt;
    return it->second;
}

double TeamPlayerIndex::team_effect(const std::vector<RosterMember>& roster) const {
    if (roster.empty()) throw DataError("team_effect: empty roster");
    double s = 0.0;
    std::size_t q = 0;
    for (const auto& m : roster) {
        auto it = effects_.find(m.pid);
        if (it != effects_.end() && it->second.qualified) {
            s += it->second.tp;
            ++q;
        }
    }
    return q > 0 ? s / static_cast<double>(q) : 0.0;
}

void TeamPlayerIndex::save_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open tp output: " + path);
    out << "player_id,n_matches,tp_effect,qualified\n";
    char buf[64];
    for (const auto& [pid, pe] : effects_) {
        std::snprintf(buf, sizeof buf, "%.17g", pe.tp);
        out << pid << ',' << pe.n << ',' << buf << ',' << (pe.qualified ? 1 : 0) << '\n';
    }
}

TeamPlayerIndex TeamPlayerIndex::load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open tp file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty tp file: " + path);
    TeamPlayerIndex index;
    index.tau_ = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::string cur;
        for (char c : line) {
            if (c == ',') {
                f.push_back(cur);
                cur.clear();
            } else if (c != '\r') {
                cur.push_back(c);
            }
        }
        f.push_back(cur);
        if (f.size() != 4) throw DataError("bad tp row: " + line);
        PlayerEffect pe;
        pe.n = static_cast<std::size_t>(std::stoull(f[1]));
        pe.tp = std::stod(f[2]);
        pe.qualified = f[3] == "1";
        index.effects_[f[0]] = pe;
    }
    return index;
}

BandCurve residual_band_curve(const ResidualLedger& ledger, int bin_width) {
    if (bin_width <= 0) throw DataError("residual_band_curve: bin width must be positive");
    std::map<long long, std::vector<double>> bins;  // bin index -> player TP values
    for (const auto& pid : ledger.players) {
        const auto& es = ledger.entries.at(pid);
        if (es.empty()) continue;
        double s = 0.0;
        for (const auto& e : es) s += e.r;
        double tp = s / static_cast<double>(es.size());
        bins[static_cast<long long>(es.size()) / bin_width].push_back(tp);
    }
    BandCurve curve;
    for (auto& [bin, values] : bins) {
        double lo = quantile(values, 0.025);
        double hi = quantile(values, 0.975);
        curve.bin_x.push_back(static_cast<double>(bin * bin_width) + 0.5 * bin_width);
        curve.q_lo.push_back(lo);
        curve.q_hi.push_back(hi);
        curve.width.push_back(hi - lo);
        curve.count.push_back(values.size());
    }
    return curve;
}

ThresholdChoice select_threshold(const ResidualLedger& ledger, int bin_width) {
    ThresholdChoice choice;
    choice.curve = residual_band_curve(ledger, bin_width);

    // quantile band widths from a handful of players are noise; keep the knee
    // search on well-populated bins only
    constexpr std::size_t kMinBinPlayers = 5;
    std::vector<double> xs, ws;
    for (std::size_t i = 0; i < choice.curve.bin_x.size(); ++i) {
        if (choice.curve.count[i] >= kMinBinPlayers) {
            xs.push_back(choice.curve.bin_x[i]);
            ws.push_back(choice.curve.width[i]);
        }
    }
    if (xs.size() < 3)
        throw DataError("select_threshold: insufficient range (" + std::to_string(xs.size()) +
                        " populated bins, need at least 3)");
    KneeResult knee = knee_point(xs, ws);
    if (knee.flat) {
        choice.flat_warning = true;
        choice.tau = static_cast<int>(xs.front() - 0.5 * bin_width);
        return choice;
    }
    choice.tau = static_cast<int>(std::lround(xs[knee.index]));
    return choice;
}

ThresholdSweepResult sweep_threshold(const ResidualLedger& ledger,
                                     const std::vector<FeatureRow>& t2_rows, const TauGrid& grid) {
    if (grid.step <= 0 || grid.max < grid.min) throw DataError("sweep_threshold: empty grid");
    if (t2_rows.empty()) throw DataError("sweep_threshold: no T2 rows");

    std::set<std::string> t2_players;
    for (const auto& row : t2_rows) {
        for (const auto& m : row.focal_members) t2_players.insert(m.pid);
        for (const auto& m : row.opp_members) t2_players.insert(m.pid);
    }
    const double n_t2_players = static_cast<double>(t2_players.size());

    ThresholdSweepResult result;
    double best_r2 = -1.0;
    for (int tau = grid.min; tau <= grid.max; tau += grid.step) {
        TeamPlayerIndex index(ledger, tau);

        SweepPoint pt;
        pt.tau = tau;
        std::size_t covered = 0;
        for (const auto& pid : t2_players) {
            auto pe = index.lookup(pid);
            if (pe && pe->qualified) ++covered;
        }
        pt.coverage = n_t2_players > 0 ? static_cast<double>(covered) / n_t2_players : 0.0;

        // TP-only model on T2 train rows; delta standardized with train moments
        std::vector<double> raw;
        raw.reserve(t2_rows.size());
        for (const auto& row : t2_rows)
            raw.push_back(index.team_effect(row.focal_members) -
                          index.team_effect(row.opp_members));
        std::vector<double> train_vals;
        for (std::size_t i = 0; i < t2_rows.size(); ++i)
            if (!t2_rows[i].holdout) train_vals.push_back(raw[i]);
        double m = mean_of(train_vals);
        double s = sd_of(train_vals);
        if (s < 1e-12 || train_vals.size() < 3) {
            pt.degenerate = true;
            result.points.push_back(pt);
            continue;
        }

        DesignMatrix train, test;
        train.feature_names = {"d_tp"};
        test.feature_names = {"d_tp"};
        std::vector<std::string> train_clusters;
        for (std::size_t i = 0; i < t2_rows.size(); ++i) {
            double z = (raw[i] - m) / s;
            if (t2_rows[i].holdout) {
                test.add_row(std::span<const double>{&z, 1}, t2_rows[i].y, 0);
            } else {
                train.add_row(std::span<const double>{&z, 1}, t2_rows[i].y, 0);
                train_clusters.push_back(t2_rows[i].cluster);
            }
        }
        train.cluster = DesignMatrix::densify_clusters(train_clusters, train.n_clusters);
        try {
            FittedModel model = fit_logistic(train);
            pt.pseudo_r2 = model.pseudo_r2;
            pt.accuracy = test.n > 0 ? accuracy(model, test) : accuracy(model, train);
        } catch (const std::exception&) {
            pt.degenerate = true;
        }
        result.points.push_back(pt);
    }
    if (result.points.empty()) throw DataError("sweep_threshold: empty grid");
    for (const auto& pt : result.points) {
        if (!pt.degenerate && pt.pseudo_r2 > best_r2) {
            best_r2 = pt.pseudo_r2;
            result.best_tau = pt.tau;
        }
    }
    return result;
}

}  // namespace teamlens
