#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "teamlens/analysis.hpp"
#include "teamlens/match_data.hpp"
#include "teamlens/tp_effect.hpp"

namespace teamlens {

inline constexpr const char* kTeamlensVersion = "0.1.0";

struct Seeds {
    std::uint64_t split = 1;
    std::uint64_t focal = 2;
    std::uint64_t holdout = 3;
};

enum class TauPolicy { auto_knee, fixed, sweep };

struct TauConfig {
    TauPolicy policy = TauPolicy::auto_knee;
    int value = 25;   // fixed policy
    TauGrid grid;     // sweep policy and the sweep report
};

struct RunConfig {
    std::string input;
    LogFormat format = LogFormat::jsonl;
    std::string out_dir = "out";
    Seeds seeds;
    double holdout_frac = 0.2;
    TauConfig tau;
    EapmMode eapm_mode = EapmMode::career_to_date;
    bool focal_only = false;
    AnalysisOptions toggles;
    bool run_sweep = true;

    std::string to_json_string() const;
    static RunConfig from_json_string(const std::string& text);
    static RunConfig load(const std::string& path);
};

struct ArtifactRecord {
    std::string path;  // relative to out_dir
    std::string fnv64;
};

struct StageRecord {
    std::string name;
    std::vector<ArtifactRecord> artifacts;
};

struct PipelineResult {
    std::string out_dir;
    std::string report_dir;
    std::vector<StageRecord> stages;
    int selected_tau = 0;
};

// split -> featurize -> fit S1 suite -> residuals -> tau -> TP index ->
// task proficiency -> S2 suite -> interactions -> facets -> robustness -> reports.
// Every stage persists its artifact and the next stage reloads it from disk, so
// any stage can be rerun standalone with identical results. A stage failure
// persists a partial manifest naming the stage, then rethrows.
PipelineResult run_pipeline(const RunConfig& config);

// Human-readable suite tables and the accuracy chain from a report directory.
void write_report_summary(std::ostream& out, const std::string& report_dir);

std::uint64_t fnv64_file(const std::string& path);

}  // namespace teamlens
