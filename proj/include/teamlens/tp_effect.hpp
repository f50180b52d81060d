#pragma once

#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "teamlens/features.hpp"
#include "teamlens/glm.hpp"

namespace teamlens {

// Builds a design from the base delta features, skipping columns the scaler
// dropped. Cluster ids come from the focal-team key.
DesignMatrix build_design(const std::vector<FeatureRow>& rows,
                          const std::vector<std::string>& feature_names,
                          bool exclude_holdout = false);

struct ResidualEntry {
    std::string match_id;
    double r = 0.0;  // own-team perspective residual
    Position pos = Position::none;
    bool zero_fam = false;
    bool focal = false;
};

struct ResidualLedger {
    // insertion-ordered player list for deterministic iteration
    std::vector<std::string> players;
    std::unordered_map<std::string, std::vector<ResidualEntry>> entries;

    void add(const std::string& pid, ResidualEntry e);
    std::size_t n_matches(const std::string& pid) const;
};

// Scores every T1 row with the task-proficiency model and assigns y - p to the
// focal members and the complement-perspective residual -(y - p) to opponents.
// focal_only drops the opponent-side entries.
ResidualLedger compute_residuals(const FittedModel& s1_model,
                                 const std::vector<FeatureRow>& t1_rows,
                                 bool focal_only = false);

// Mean residual; empty when the player has no ledger entries.
std::optional<double> player_effect(const ResidualLedger& ledger, const std::string& pid);

struct PlayerEffect {
    double tp = 0.0;
    std::size_t n = 0;
    bool qualified = false;
};

class TeamPlayerIndex {
  public:
    TeamPlayerIndex() = default;
    TeamPlayerIndex(const ResidualLedger& ledger, int tau);

    int tau() const { return tau_; }
    const std::map<std::string, PlayerEffect>& effects() const { return effects_; }
    std::optional<PlayerEffect> lookup(const std::string& pid) const;

    // Mean TP over qualified roster members; 0 when no member qualifies.
    double team_effect(const std::vector<RosterMember>& roster) const;

    void save_csv(const std::string& path) const;
    static TeamPlayerIndex load_csv(const std::string& path);

  private:
    int tau_ = 0;
    std::map<std::string, PlayerEffect> effects_;
};

struct BandCurve {
    std::vector<double> bin_x;       // bin midpoints over n_j
    std::vector<double> width;      // 95% percentile band width of TP within bin
    std::vector<double> q_lo;
    std::vector<double> q_hi;
    std::vector<std::size_t> count;  // players per bin
};

BandCurve residual_band_curve(const ResidualLedger& ledger, int bin_width = 10);

struct ThresholdChoice {
    int tau = 0;
    bool flat_warning = false;
    BandCurve curve;
};

// Knee of the binned 95%-band-width curve (max perpendicular distance to the
// chord). Flat curve falls back to the smallest bin edge with a warning.
ThresholdChoice select_threshold(const ResidualLedger& ledger, int bin_width = 10);

struct SweepPoint {
    int tau = 0;
    double pseudo_r2 = 0.0;
    double accuracy = 0.5;
    double coverage = 0.0;  // share of T2 players with n_j >= tau
    bool degenerate = false;
};

struct ThresholdSweepResult {
    std::vector<SweepPoint> points;
    int best_tau = 0;
};

struct TauGrid {
    int min = 1;
    int max = 61;
    int step = 2;
};

// For each tau: rebuild team effects, fit a TP-only logistic on the T2 train
// rows, record explanatory power and coverage; best_tau is the pseudo-R2 argmax.
ThresholdSweepResult sweep_threshold(const ResidualLedger& ledger,
                                     const std::vector<FeatureRow>& t2_rows, const TauGrid& grid);

}  // namespace teamlens
