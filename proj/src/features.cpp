#include "teamlens/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "teamlens/errors.hpp"
#include "teamlens/rng.hpp"

namespace teamlens {

using nlohmann::json;

int feature_index(const std::string& name) {
    for (std::size_t i = 0; i < kNumFeatures; ++i)
        if (name == kFeatureNames[i]) return static_cast<int>(i);
    return -1;
}

double effective_apm(long long actions, double duration_min) {
    if (actions < 0) throw DataError("effective_apm: negative action count");
    if (!(duration_min > 0.0)) throw DataError("effective_apm: nonpositive duration");
    return static_cast<double>(actions) / duration_min;
}

double functional_familiarity(long long prior_count) {
    if (prior_count < 0) throw DataError("functional_familiarity: negative count");
    return std::log1p(static_cast<double>(prior_count));
}

double team_familiarity(const std::vector<std::vector<long long>>& pair_counts) {
    const std::size_t n = pair_counts.size();
    if (n < 2) throw DataError("team_familiarity: team size must be >= 2");
    long long total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (pair_counts[i].size() != n) throw DataError("team_familiarity: ragged pair matrix");
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            if (pair_counts[i][j] < 0) throw DataError("team_familiarity: negative pair count");
            total += pair_counts[i][j];
        }
    }
    double denom = static_cast<double>(n * (n - 1));
    return std::log1p(static_cast<double>(total) / denom);
}

namespace {

std::uint64_t pair_key(std::uint32_t a, std::uint32_t b) {
    if (a > b) std::swap(a, b);
    return (static_cast<std::uint64_t>(a) << 32) | b;
}

}  // namespace

std::uint32_t HistoryTracker::intern(const std::string& pid) {
    auto [it, inserted] = id_of_.emplace(pid, static_cast<std::uint32_t>(players_.size()));
    if (inserted) players_.emplace_back();
    return it->second;
}

const HistoryTracker::PlayerState* HistoryTracker::find(const std::string& pid) const {
    auto it = id_of_.find(pid);
    return it == id_of_.end() ? nullptr : &players_[it->second];
}

void HistoryTracker::update(const MatchRecord& rec) {
    if (rec.ts < last_ts_)
        throw DataError("update_history: match " + rec.match_id +
                        " is earlier than already-applied history (causality guard)");
    last_ts_ = rec.ts;

    for (const auto* roster : {&rec.team_a, &rec.team_b}) {
        std::vector<std::uint32_t> ids;
        ids.reserve(roster->size());
        for (const auto& obs : *roster) {
            std::uint32_t id = intern(obs.pid);
            ids.push_back(id);
            PlayerState& st = players_[id];
            st.overall += 1;
            st.per_map[rec.map] += 1;
            st.per_civ[obs.civ] += 1;
            st.eapm_sum += effective_apm(obs.actions, rec.duration_min);
            st.eapm_n += 1;
            st.last_selo = obs.solo_elo;
        }
        for (std::size_t i = 0; i < ids.size(); ++i)
            for (std::size_t j = i + 1; j < ids.size(); ++j)
                pair_counts_[pair_key(ids[i], ids[j])] += 1;
    }
}

long long HistoryTracker::overall_count(const std::string& pid) const {
    const PlayerState* st = find(pid);
    return st ? st->overall : 0;
}

long long HistoryTracker::map_count(const std::string& pid, const std::string& map) const {
    const PlayerState* st = find(pid);
    if (!st) return 0;
    auto it = st->per_map.find(map);
    return it == st->per_map.end() ? 0 : it->second;
}

long long HistoryTracker::civ_count(const std::string& pid, const std::string& civ) const {
    const PlayerState* st = find(pid);
    if (!st) return 0;
    auto it = st->per_civ.find(civ);
    return it == st->per_civ.end() ? 0 : it->second;
}

long long HistoryTracker::pair_count(const std::string& p1, const std::string& p2) const {
    auto i1 = id_of_.find(p1);
    auto i2 = id_of_.find(p2);
    if (i1 == id_of_.end() || i2 == id_of_.end()) return 0;
    auto it = pair_counts_.find(pair_key(i1->second, i2->second));
    return it == pair_counts_.end() ? 0 : it->second;
}

std::optional<double> HistoryTracker::eapm_mean(const std::string& pid) const {
    const PlayerState* st = find(pid);
    if (!st || st->eapm_n == 0) return std::nullopt;
    return st->eapm_sum / static_cast<double>(st->eapm_n);
}

TeamFeatureVector HistoryTracker::aggregate_team(const std::vector<PlayerObservation>& roster,
                                                 const std::string& map, double duration_min,
                                                 EapmMode eapm_mode) const {
    if (roster.empty()) throw DataError("aggregate_team: empty roster");
    TeamFeatureVector out;
    out.team_size = static_cast<int>(roster.size());
    double eapm_sum = 0.0;
    long long eapm_n = 0;
    for (const auto& obs : roster) {
        out.selo_mean += obs.solo_elo;
        out.ffam_match += functional_familiarity(overall_count(obs.pid));
        out.ffam_map += functional_familiarity(map_count(obs.pid, map));
        out.ffam_civ += functional_familiarity(civ_count(obs.pid, obs.civ));
        if (eapm_mode == EapmMode::per_match) {
            eapm_sum += effective_apm(obs.actions, duration_min);
            ++eapm_n;
        } else if (auto m = eapm_mean(obs.pid)) {
            eapm_sum += *m;
            ++eapm_n;
        }
    }
    double n = static_cast<double>(roster.size());
    out.selo_mean /= n;
    out.ffam_match /= n;
    out.ffam_map /= n;
    out.ffam_civ /= n;
    out.eapm_mean = eapm_n > 0 ? eapm_sum / static_cast<double>(eapm_n) : 0.0;
    if (roster.size() >= 2) {
        std::vector<std::vector<long long>> pairs(roster.size(),
                                                  std::vector<long long>(roster.size(), 0));
        for (std::size_t i = 0; i < roster.size(); ++i)
            for (std::size_t j = 0; j < roster.size(); ++j)
                if (i != j) pairs[i][j] = pair_count(roster[i].pid, roster[j].pid);
        out.tfam = team_familiarity(pairs);
    }
    return out;
}

FeatureScaler FeatureScaler::fit(const std::vector<std::array<double, kNumFeatures>>& raw) {
    FeatureScaler s;
    s.names.assign(kFeatureNames.begin(), kFeatureNames.end());
    s.mean.assign(kNumFeatures, 0.0);
    s.sd.assign(kNumFeatures, 1.0);
    s.dropped.assign(kNumFeatures, false);
    if (raw.empty()) throw DataError("scaler fit: no rows");
    const double n = static_cast<double>(raw.size());
    for (std::size_t f = 0; f < kNumFeatures; ++f) {
        double m = 0.0;
        for (const auto& r : raw) m += r[f];
        m /= n;
        double ss = 0.0;
        for (const auto& r : raw) ss += (r[f] - m) * (r[f] - m);
        double sd = raw.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
        s.mean[f] = m;
        if (sd > 1e-12) {
            s.sd[f] = sd;
        } else {
            s.sd[f] = 1.0;
            s.dropped[f] = true;
        }
    }
    return s;
}

std::array<double, kNumFeatures> FeatureScaler::apply(
    const std::array<double, kNumFeatures>& raw) const {
    std::array<double, kNumFeatures> out{};
    for (std::size_t f = 0; f < kNumFeatures; ++f) {
        if (!std::isfinite(raw[f])) throw DataError("delta_standardize: non-finite input");
        out[f] = dropped[f] ? 0.0 : (raw[f] - mean[f]) / sd[f];
    }
    return out;
}

std::string FeatureScaler::to_json_string() const {
    json j;
    for (std::size_t f = 0; f < names.size(); ++f) {
        j[names[f]] = {{"mean", mean[f]}, {"sd", sd[f]}, {"dropped", bool(dropped[f])}};
    }
    return j.dump(2);
}

FeatureScaler FeatureScaler::from_json_string(const std::string& text) {
    FeatureScaler s;
    s.names.assign(kFeatureNames.begin(), kFeatureNames.end());
    s.mean.assign(kNumFeatures, 0.0);
    s.sd.assign(kNumFeatures, 1.0);
    s.dropped.assign(kNumFeatures, false);
    json j;
    try {
        j = json::parse(text);
        for (std::size_t f = 0; f < kNumFeatures; ++f) {
            const json& e = j.at(s.names[f]);
            s.mean[f] = e.at("mean").get<double>();
            s.sd[f] = e.at("sd").get<double>();
            s.dropped[f] = e.value("dropped", false);
        }
    } catch (const json::exception& e) {
        throw DataError(std::string("bad scaler JSON: ") + e.what());
    }
    return s;
}

void FeatureScaler::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open scaler output: " + path);
    out << to_json_string() << '\n';
}

FeatureScaler FeatureScaler::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open scaler file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json_string(ss.str());
}

namespace {

std::string cluster_key(const std::vector<RosterMember>& members) {
    std::vector<std::string> pids;
    pids.reserve(members.size());
    for (const auto& m : members) pids.push_back(m.pid);
    std::sort(pids.begin(), pids.end());
    std::string out;
    for (std::size_t i = 0; i < pids.size(); ++i) {
        if (i) out.push_back('|');
        out += pids[i];
    }
    return out;
}

std::vector<RosterMember> roster_members(const std::vector<PlayerObservation>& roster) {
    std::vector<RosterMember> out;
    out.reserve(roster.size());
    for (const auto& obs : roster) out.push_back({obs.pid, obs.pos});
    return out;
}

}  // namespace

std::vector<FeatureRow> materialize_split(const std::vector<MatchRecord>& all_ordered,
                                          const std::unordered_set<std::string>& split_ids,
                                          const FeaturizeOptions& opts) {
    HistoryTracker history;
    std::vector<FeatureRow> rows;
    rows.reserve(split_ids.size());

    for (const auto& rec : all_ordered) {
        if (!rec.is_solo() && split_ids.count(rec.match_id)) {
            bool focal_is_a = (mix64(opts.focal_seed ^ hash_str(rec.match_id)) & 1) == 0;
            const auto& focal = focal_is_a ? rec.team_a : rec.team_b;
            const auto& opp = focal_is_a ? rec.team_b : rec.team_a;

            FeatureRow row;
            row.match_id = rec.match_id;
            row.team_size = rec.team_size();
            row.y = ((rec.winner == Winner::team_a) == focal_is_a) ? 1 : 0;
            row.focal_members = roster_members(focal);
            row.opp_members = roster_members(opp);
            row.cluster = cluster_key(row.focal_members);

            TeamFeatureVector fa =
                history.aggregate_team(focal, rec.map, rec.duration_min, opts.eapm_mode);
            TeamFeatureVector fb =
                history.aggregate_team(opp, rec.map, rec.duration_min, opts.eapm_mode);
            row.focal_raw = fa.values();
            row.opp_raw = fb.values();
            for (std::size_t f = 0; f < kNumFeatures; ++f)
                row.delta_raw[f] = row.focal_raw[f] - row.opp_raw[f];
            row.abs_tfam = 0.5 * (fa.tfam + fb.tfam);
            row.zero_fam = fa.tfam == 0.0 && fb.tfam == 0.0;
            rows.push_back(std::move(row));
        }
        history.update(rec);
    }

    if (opts.holdout_frac > 0.0 && !rows.empty()) {
        // exact fraction: rank rows by a seeded hash, top slice becomes holdout
        std::vector<std::pair<std::uint64_t, std::size_t>> keyed(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i)
            keyed[i] = {mix64(opts.holdout_seed ^ hash_str(rows[i].match_id)), i};
        std::sort(keyed.begin(), keyed.end());
        std::size_t n_hold = static_cast<std::size_t>(
            std::floor(opts.holdout_frac * static_cast<double>(rows.size())));
        for (std::size_t rank = 0; rank < keyed.size(); ++rank)
            rows[keyed[rank].second].holdout = rank < n_hold;
    }
    return rows;
}

FeatureScaler fit_and_apply_scaler(std::vector<FeatureRow>& rows) {
    std::vector<std::array<double, kNumFeatures>> train;
    for (const auto& r : rows)
        if (!r.holdout) train.push_back(r.delta_raw);
    FeatureScaler scaler = FeatureScaler::fit(train);
    apply_scaler(rows, scaler);
    return scaler;
}

void apply_scaler(std::vector<FeatureRow>& rows, const FeatureScaler& scaler) {
    for (auto& r : rows) r.delta_std = scaler.apply(r.delta_raw);
}

std::string encode_roster(const std::vector<RosterMember>& members) {
    std::string out;
    for (std::size_t i = 0; i < members.size(); ++i) {
        if (i) out.push_back('|');
        out += members[i].pid;
        out.push_back(':');
        out += position_to_string(members[i].pos);
    }
    return out;
}

std::vector<RosterMember> decode_roster(const std::string& text) {
    std::vector<RosterMember> out;
    std::size_t start = 0;
    while (start <= text.size()) {
        std::size_t end = text.find('|', start);
        if (end == std::string::npos) end = text.size();
        std::string item = text.substr(start, end - start);
        if (!item.empty()) {
            std::size_t colon = item.rfind(':');
            if (colon == std::string::npos) throw DataError("bad roster encoding: " + item);
            out.push_back({item.substr(0, colon), position_from_string(item.substr(colon + 1))});
        }
        if (end == text.size()) break;
        start = end + 1;
    }
    return out;
}

namespace {

const char* kFeaturesHeader =
    "match_id,y,cluster,team_size,abs_tfam,zero_fam,holdout,focal_roster,opp_roster,"
    "a_eapm,a_selo,a_ffam_match,a_ffam_map,a_ffam_civ,a_tfam,"
    "b_eapm,b_selo,b_ffam_match,b_ffam_map,b_ffam_civ,b_tfam,"
    "d_eapm,d_selo,d_ffam_match,d_ffam_map,d_ffam_civ,d_tfam";

}  // namespace

void write_features_csv(const std::string& path, const std::vector<FeatureRow>& rows) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open features output: " + path);
    out << kFeaturesHeader << '\n';
    char buf[64];
    auto fmt = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
    };
    for (const auto& r : rows) {
        out << r.match_id << ',' << r.y << ',' << r.cluster << ',' << r.team_size << ','
            << fmt(r.abs_tfam) << ',' << (r.zero_fam ? 1 : 0) << ',' << (r.holdout ? 1 : 0) << ','
            << encode_roster(r.focal_members) << ',' << encode_roster(r.opp_members);
        for (double v : r.focal_raw) out << ',' << fmt(v);
        for (double v : r.opp_raw) out << ',' << fmt(v);
        for (double v : r.delta_std) out << ',' << fmt(v);
        out << '\n';
    }
}

std::vector<FeatureRow> read_features_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open features file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty features file: " + path);
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    if (line != kFeaturesHeader) throw DataError("unexpected features header in " + path);

    std::vector<FeatureRow> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> f;
        {
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
        }
        if (f.size() != 9 + 3 * kNumFeatures)
            throw DataError(path + " row " + std::to_string(lineno) + ": wrong field count");
        FeatureRow r;
        std::size_t i = 0;
        r.match_id = f[i++];
        r.y = std::stoi(f[i++]);
        r.cluster = f[i++];
        r.team_size = std::stoi(f[i++]);
        r.abs_tfam = std::stod(f[i++]);
        r.zero_fam = f[i++] == "1";
        r.holdout = f[i++] == "1";
        r.focal_members = decode_roster(f[i++]);
        r.opp_members = decode_roster(f[i++]);
        for (std::size_t k = 0; k < kNumFeatures; ++k) r.focal_raw[k] = std::stod(f[i++]);
        for (std::size_t k = 0; k < kNumFeatures; ++k) r.opp_raw[k] = std::stod(f[i++]);
        for (std::size_t k = 0; k < kNumFeatures; ++k) r.delta_std[k] = std::stod(f[i++]);
        for (std::size_t k = 0; k < kNumFeatures; ++k)
            r.delta_raw[k] = r.focal_raw[k] - r.opp_raw[k];
        rows.push_back(std::move(r));
    }
    return rows;
}

}  // namespace teamlens
