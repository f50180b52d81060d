#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "teamlens/match_data.hpp"

namespace teamlens {

inline constexpr std::size_t kNumFeatures = 6;
inline constexpr std::array<const char*, kNumFeatures> kFeatureNames = {
    "eapm", "selo", "ffam_match", "ffam_map", "ffam_civ", "tfam"};

int feature_index(const std::string& name);

double effective_apm(long long actions, double duration_min);
double functional_familiarity(long long prior_count);
// pair_counts[i][j] = prior shared-team matches of members i and j.
double team_familiarity(const std::vector<std::vector<long long>>& pair_counts);

struct TeamFeatureVector {
    double eapm_mean = 0.0;
    double selo_mean = 0.0;
    double ffam_match = 0.0;
    double ffam_map = 0.0;
    double ffam_civ = 0.0;
    double tfam = 0.0;
    int team_size = 0;

    std::array<double, kNumFeatures> values() const {
        return {eapm_mean, selo_mean, ffam_match, ffam_map, ffam_civ, tfam};
    }
};

enum class EapmMode { career_to_date, per_match };

// Per-player rolling counters over a time-ordered match stream. Single writer;
// snapshots read before the current match is applied.
class HistoryTracker {
  public:
    // Applies a finished match; must be called in chronological order.
    void update(const MatchRecord& rec);

    long long overall_count(const std::string& pid) const;
    long long map_count(const std::string& pid, const std::string& map) const;
    long long civ_count(const std::string& pid, const std::string& civ) const;
    long long pair_count(const std::string& p1, const std::string& p2) const;
    // Career-to-date mean eAPM; empty when the player has no prior matches.
    std::optional<double> eapm_mean(const std::string& pid) const;

    // Features for one roster of the *upcoming* match (history strictly prior).
    TeamFeatureVector aggregate_team(const std::vector<PlayerObservation>& roster,
                                     const std::string& map, double duration_min,
                                     EapmMode eapm_mode) const;

    std::size_t num_players() const { return players_.size(); }

  private:
    struct PlayerState {
        long long overall = 0;
        std::unordered_map<std::string, long long> per_map;
        std::unordered_map<std::string, long long> per_civ;
        double eapm_sum = 0.0;
        long long eapm_n = 0;
        double last_selo = 0.0;
    };

    std::uint32_t intern(const std::string& pid);
    const PlayerState* find(const std::string& pid) const;

    std::unordered_map<std::string, std::uint32_t> id_of_;
    std::vector<PlayerState> players_;
    std::unordered_map<std::uint64_t, long long> pair_counts_;
    long long last_ts_ = std::numeric_limits<long long>::min();
};

struct FeatureScaler {
    std::vector<std::string> names;
    std::vector<double> mean;
    std::vector<double> sd;
    std::vector<bool> dropped;  // zero-variance features excluded from models

    static FeatureScaler fit(const std::vector<std::array<double, kNumFeatures>>& raw_deltas);
    std::array<double, kNumFeatures> apply(const std::array<double, kNumFeatures>& raw) const;

    std::string to_json_string() const;
    static FeatureScaler from_json_string(const std::string& text);
    void save(const std::string& path) const;
    static FeatureScaler load(const std::string& path);
};

struct RosterMember {
    std::string pid;
    Position pos = Position::none;
};

// One estimation row: a team match seen from the seeded focal side.
struct FeatureRow {
    std::string match_id;
    int y = 0;                // 1 iff the focal team won
    std::string cluster;      // focal-team identity (sorted roster)
    int team_size = 0;
    double abs_tfam = 0.0;    // mean of the two teams' absolute TFam
    bool zero_fam = false;    // no member pair had any prior shared match
    bool holdout = false;
    std::vector<RosterMember> focal_members;
    std::vector<RosterMember> opp_members;
    std::array<double, kNumFeatures> focal_raw{};
    std::array<double, kNumFeatures> opp_raw{};
    std::array<double, kNumFeatures> delta_raw{};
    std::array<double, kNumFeatures> delta_std{};
};

struct FeaturizeOptions {
    std::uint64_t focal_seed = 0;
    std::uint64_t holdout_seed = 0;
    double holdout_frac = 0.0;  // 0 disables the holdout flag
    EapmMode eapm_mode = EapmMode::career_to_date;
};

// Single chronological pass over the *entire* ordered log; emits one raw row
// per team match whose match_id is in split_ids. History accumulates over all
// matches regardless of split membership.
std::vector<FeatureRow> materialize_split(const std::vector<MatchRecord>& all_ordered,
                                          const std::unordered_set<std::string>& split_ids,
                                          const FeaturizeOptions& opts);

// Fits on non-holdout rows only; applies to every row in place.
FeatureScaler fit_and_apply_scaler(std::vector<FeatureRow>& rows);
void apply_scaler(std::vector<FeatureRow>& rows, const FeatureScaler& scaler);

void write_features_csv(const std::string& path, const std::vector<FeatureRow>& rows);
std::vector<FeatureRow> read_features_csv(const std::string& path);

std::string encode_roster(const std::vector<RosterMember>& members);
std::vector<RosterMember> decode_roster(const std::string& text);

}  // namespace teamlens
