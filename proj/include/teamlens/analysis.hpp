#pragma once

#include <optional>
#include <string>
#include <vector>

#include "teamlens/features.hpp"
#include "teamlens/glm.hpp"
#include "teamlens/stats.hpp"
#include "teamlens/tp_effect.hpp"

namespace teamlens {

struct SuiteModel {
    std::string name;
    std::vector<std::string> features;
    FittedModel model;
};

struct S1Suite {
    std::vector<SuiteModel> models;  // S1.1, S1.2, S1.3
    std::string rowset_hash;
};

// Nested task-proficiency models fitted on the identical T1 row set.
S1Suite run_s1_suite(const std::vector<FeatureRow>& t1_rows, const FeatureScaler& t1_scaler);

// Per-team linear index: sum over S1.3 features of beta_j * raw_j / sd_T1_j.
// Returns (focal_index, opp_index) per row. Never refits the model.
std::vector<std::pair<double, double>> task_proficiency(
    const FittedModel& s13, const FeatureScaler& t1_scaler,
    const std::vector<FeatureRow>& t2_rows);

// T2 derived features, standardized with train-row moments.
struct S2Features {
    std::vector<double> d_tp_std;
    std::vector<double> d_taskprof_std;
    double tp_mean = 0.0, tp_sd = 1.0;
    double taskprof_mean = 0.0, taskprof_sd = 1.0;
    bool tp_degenerate = false;
    bool taskprof_degenerate = false;
};

S2Features prepare_s2_features(const std::vector<FeatureRow>& t2_rows, const TeamPlayerIndex& tp,
                               const FittedModel& s13, const FeatureScaler& t1_scaler);

struct S2Suite {
    std::vector<SuiteModel> models;   // S2.1 .. S2.4
    std::vector<double> test_accuracy;
    std::vector<double> delta_accuracy;  // vs 0.5 for S2.1, else vs previous model
    std::string train_hash;
    std::string test_hash;
};

S2Suite run_s2_suite(const std::vector<FeatureRow>& t2_rows, const S2Features& s2);

struct MemTable {
    std::vector<MemTerm> terms;
    std::size_t n_obs = 0;
    std::size_t n_clusters = 0;
    FittedModel model;
};

// S2.4 mains plus absolute-familiarity and team-size interactions, MEM per
// term with delta-method clustered SEs.
MemTable interaction_mem(const std::vector<FeatureRow>& t2_rows, const S2Features& s2);

enum class FacetKind { familiarity_quantile, team_size };

struct FacetResult {
    std::string label;
    std::size_t n = 0;
    bool sparse = false;   // fewer than 500 train rows
    bool skipped = false;  // degenerate facet (single outcome class or fit failure)
    std::string note;
    std::optional<FittedModel> model;
    std::vector<std::string> features;
};

struct FacetReport {
    FacetKind kind = FacetKind::familiarity_quantile;
    std::vector<FacetResult> facets;
};

FacetReport facet_regressions(const std::vector<FeatureRow>& t2_rows, const S2Features& s2,
                              FacetKind kind);

struct KsBin {
    std::string label;
    std::size_t n_zero = 0;
    std::size_t n_all = 0;
    double d = 0.0;
    double p = 1.0;
    bool skipped = false;
};

// Zero-familiarity-match residuals vs all residuals, per player-match-count bin.
std::vector<KsBin> ks_zero_familiarity(const ResidualLedger& ledger);

struct PositionCorrBin {
    std::string label;
    std::size_t n_players = 0;
    double r = 0.0;
    double p = 1.0;
    bool skipped = false;
};

// Pearson correlation of per-player pocket-mean vs flank-mean residuals.
std::vector<PositionCorrBin> position_residual_correlation(const ResidualLedger& ledger);

struct EloBinStat {
    std::string label;
    std::size_t n_matches = 0;
    double mean_team_apm = 0.0;
    double corr_dapm_win = 0.0;
    double corr_p = 1.0;
    bool corr_defined = false;
};

struct Descriptives {
    std::vector<std::string> corr_names;  // raw deltas plus win
    Matrix corr;
    Matrix corr_p;
    std::vector<std::vector<bool>> corr_defined;
    std::vector<EloBinStat> elo_bins;
    std::vector<double> vif;             // per base feature; NaN when undefined
    std::array<double, 4> team_appearances{};    // p50, p75, p95, p99
    std::array<double, 4> player_appearances{};
};

Descriptives descriptive_stats(const std::vector<FeatureRow>& corpus);

struct BandwidthPoint {
    double n_center = 0.0;
    double p95_abs = 0.0;
    double band_width = 0.0;
};

struct BandwidthCurve {
    std::string model_name;
    std::vector<BandwidthPoint> points;
    bool whole_sample = false;  // fewer entries than the window
};

// Rolling 95th percentile of |TP| and 95% band width over players sorted by
// match count; window of 500 players.
std::vector<BandwidthCurve> residual_bandwidth(
    const std::vector<std::pair<std::string, const ResidualLedger*>>& ledgers,
    std::size_t window = 500);

struct AnalysisOptions {
    bool run_mem = true;
    bool run_facets = true;
    bool run_ks = true;
    bool run_positions = true;
    bool run_descriptives = true;
    bool run_bandwidth = true;
    bool focal_only_residuals = false;
};

struct AnalysisResult {
    S1Suite s1;
    std::vector<ResidualLedger> s1_ledgers;  // aligned with s1.models
    S2Features s2_features;
    S2Suite s2;
    std::optional<MemTable> mem;
    std::optional<FacetReport> familiarity_facets;
    std::optional<FacetReport> team_size_facets;
    std::vector<KsBin> ks;
    std::vector<PositionCorrBin> positions;
    std::optional<Descriptives> descriptives;
    std::vector<BandwidthCurve> bandwidth;
};

// Full analysis stage. When frozen_s13 is given, the refit S1.3 coefficients
// must match it (guards against stale model artifacts).
AnalysisResult run_analysis(const std::vector<FeatureRow>& t1_rows,
                            const std::vector<FeatureRow>& t2_rows, const TeamPlayerIndex& tp,
                            const FeatureScaler& t1_scaler, const FittedModel* frozen_s13,
                            const AnalysisOptions& opts = {});

void write_reports(const std::string& dir, const AnalysisResult& result);

// Order-dependent hash of a sequence of row identifiers.
std::string rowset_hash(const std::vector<std::string>& ids);

}  // namespace teamlens
