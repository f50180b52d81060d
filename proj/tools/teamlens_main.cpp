#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <unordered_set>

#include <CLI11.hpp>
#include <json.hpp>

#include "teamlens/analysis.hpp"
#include "teamlens/errors.hpp"
#include "teamlens/match_data.hpp"
#include "teamlens/pipeline.hpp"
#include "teamlens/simgen.hpp"
#include "teamlens/tp_effect.hpp"

namespace fs = std::filesystem;
using namespace teamlens;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

bool g_quiet = false;

std::ostream& info() {
    static std::ofstream null_sink;
    return g_quiet ? static_cast<std::ostream&>(null_sink) : std::cout;
}

LogFormat format_from(const std::string& s) {
    if (s == "jsonl") return LogFormat::jsonl;
    if (s == "csv") return LogFormat::csv;
    throw DataError("format must be jsonl or csv");
}

struct SimulateArgs {
    std::string config_path;
    std::string out = "matches.jsonl";
    std::string truth_dir;
    std::uint64_t seed = 0;
    bool seed_set = false;
};

int cmd_simulate(const SimulateArgs& args) {
    SyntheticConfig config =
        args.config_path.empty() ? SyntheticConfig{} : SyntheticConfig::load(args.config_path);
    if (args.seed_set) config.seed = args.seed;
    SyntheticWorld world = run_world(config);
    write_matches_file(args.out, world.log, LogFormat::jsonl);
    if (!args.truth_dir.empty()) write_truth(args.truth_dir, world);
    info() << "simulated " << world.log.size() << " matches for " << world.players.size()
              << " players -> " << args.out << '\n';
    return kExitOk;
}

struct SplitArgs {
    std::string input;
    std::string format = "jsonl";
    std::uint64_t seed = 1;
    std::string out_dir = "splits";
};

int cmd_split(const SplitArgs& args) {
    auto records = parse_matches_file(args.input, format_from(args.format));
    auto ordered = order_chronologically(std::move(records));
    DatasetSplits splits = split_dataset(ordered, args.seed);
    fs::create_directories(args.out_dir);
    write_matches_file(args.out_dir + "/s.jsonl", splits.split_s, LogFormat::jsonl);
    write_matches_file(args.out_dir + "/t1.jsonl", splits.split_t1, LogFormat::jsonl);
    write_matches_file(args.out_dir + "/t2.jsonl", splits.split_t2, LogFormat::jsonl);
    info() << "split " << ordered.size() << " matches: |S|=" << splits.split_s.size()
              << " |T1|=" << splits.split_t1.size() << " |T2|=" << splits.split_t2.size() << '\n';
    return kExitOk;
}

struct FeaturizeArgs {
    std::string splits_dir = "splits";
    std::string split = "t1";
    std::string scaler = "new";
    std::string out = "features.csv";
    std::uint64_t focal_seed = 2;
    std::uint64_t holdout_seed = 3;
    double holdout_frac = 0.0;
    std::string eapm = "career";
};

int cmd_featurize(const FeaturizeArgs& args) {
    if (args.split != "t1" && args.split != "t2")
        throw DataError("--split must be t1 or t2");
    std::vector<MatchRecord> all;
    for (const char* name : {"s.jsonl", "t1.jsonl", "t2.jsonl"}) {
        std::string path = args.splits_dir + "/" + name;
        if (!fs::exists(path)) continue;
        auto part = parse_matches_file(path, LogFormat::jsonl);
        all.insert(all.end(), std::make_move_iterator(part.begin()),
                   std::make_move_iterator(part.end()));
    }
    if (all.empty()) throw DataError("no split files found under " + args.splits_dir);
    all = order_chronologically(std::move(all));

    std::unordered_set<std::string> split_ids;
    for (const auto& rec :
         parse_matches_file(args.splits_dir + "/" + args.split + ".jsonl", LogFormat::jsonl))
        split_ids.insert(rec.match_id);

    FeaturizeOptions opts;
    opts.focal_seed = args.focal_seed;
    opts.holdout_seed = args.holdout_seed;
    opts.holdout_frac = args.holdout_frac;
    opts.eapm_mode = args.eapm == "match" ? EapmMode::per_match : EapmMode::career_to_date;
    auto rows = materialize_split(all, split_ids, opts);

    if (args.scaler == "new") {
        FeatureScaler scaler = fit_and_apply_scaler(rows);
        scaler.save(args.out + ".scaler.json");
        info() << "scaler written to " << args.out << ".scaler.json\n";
    } else {
        FeatureScaler scaler = FeatureScaler::load(args.scaler);
        apply_scaler(rows, scaler);
    }
    write_features_csv(args.out, rows);
    info() << "featurized " << rows.size() << " " << args.split << " rows -> " << args.out
              << '\n';
    return kExitOk;
}

struct FitArgs {
    std::string features;
    std::string clusters = "cluster";
    std::string terms;
    std::string out = "model.json";
    bool train_only = false;
};

int cmd_fit(const FitArgs& args) {
    if (args.clusters != "cluster")
        throw DataError("unknown cluster column \"" + args.clusters +
                        "\" (feature files carry a single cluster column named \"cluster\")");
    auto rows = read_features_csv(args.features);
    std::vector<std::string> names;
    if (args.terms.empty()) {
        names.assign(kFeatureNames.begin(), kFeatureNames.end());
    } else {
        std::string cur;
        for (char c : args.terms + ",") {
            if (c == ',') {
                if (!cur.empty()) names.push_back(cur);
                cur.clear();
            } else {
                cur.push_back(c);
            }
        }
    }
    DesignMatrix design = build_design(rows, names, args.train_only);
    FittedModel model = fit_logistic(design);
    model.save(args.out);
    info() << "fitted " << names.size() << " features on " << design.n << " rows (pseudo R2 "
              << model.pseudo_r2 << ") -> " << args.out << '\n';
    return kExitOk;
}

struct TpArgs {
    std::string model;
    std::string t1;
    std::string t2;
    std::string tau = "auto";
    std::string sweep;
    std::string out = "tp.csv";
    bool focal_only = false;
};

int cmd_tp(const TpArgs& args) {
    FittedModel model = FittedModel::load(args.model);
    auto t1_rows = read_features_csv(args.t1);
    ResidualLedger ledger = compute_residuals(model, t1_rows, args.focal_only);

    int tau = 0;
    if (args.tau == "auto") {
        ThresholdChoice choice = select_threshold(ledger);
        tau = choice.tau;
        if (choice.flat_warning)
            std::cerr << "warning: flat band curve, falling back to the smallest bin edge\n";
    } else {
        tau = std::stoi(args.tau);
    }

    if (!args.sweep.empty()) {
        if (args.t2.empty()) throw DataError("--sweep requires --t2 features");
        TauGrid grid;
        if (std::sscanf(args.sweep.c_str(), "%d:%d:%d", &grid.min, &grid.max, &grid.step) != 3)
            throw DataError("--sweep expects min:max:step");
        auto t2_rows = read_features_csv(args.t2);
        ThresholdSweepResult sweep = sweep_threshold(ledger, t2_rows, grid);
        std::string sweep_path = args.out + ".sweep.csv";
        std::ofstream sout(sweep_path);
        sout << "tau,pseudo_r2,accuracy,coverage,degenerate\n";
        for (const auto& pt : sweep.points)
            sout << pt.tau << ',' << pt.pseudo_r2 << ',' << pt.accuracy << ',' << pt.coverage
                 << ',' << (pt.degenerate ? 1 : 0) << '\n';
        info() << "sweep argmax tau=" << sweep.best_tau << " -> " << sweep_path << '\n';
    }

    TeamPlayerIndex index(ledger, tau);
    index.save_csv(args.out);
    info() << "tau=" << tau << ", " << index.effects().size() << " players -> " << args.out
              << '\n';
    return kExitOk;
}

struct AnalyzeArgs {
    std::string t1;
    std::string t2;
    std::string tp;
    std::string model;
    std::string t1_scaler;
    std::string out_dir = "reports";
};

int cmd_analyze(const AnalyzeArgs& args) {
    auto t1_rows = read_features_csv(args.t1);
    auto t2_rows = read_features_csv(args.t2);
    TeamPlayerIndex index = TeamPlayerIndex::load_csv(args.tp);
    FeatureScaler t1_scaler = FeatureScaler::load(args.t1_scaler);
    FittedModel s13 = FittedModel::load(args.model);
    AnalysisResult result = run_analysis(t1_rows, t2_rows, index, t1_scaler, &s13);
    write_reports(args.out_dir, result);
    info() << "reports written to " << args.out_dir << '\n';
    return kExitOk;
}

struct PipelineArgs {
    std::string config_path;
};

int cmd_pipeline(const PipelineArgs& args) {
    RunConfig config = RunConfig::load(args.config_path);
    PipelineResult result = run_pipeline(config);
    info() << "pipeline complete, tau=" << result.selected_tau << ", reports in "
              << result.report_dir << '\n';
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"teamlens: team player effect estimation from team match logs"};
    app.require_subcommand(1);
    std::string log_level = "info";
    app.add_option("--log-level", log_level, "info or quiet")->check(CLI::IsMember({"info", "quiet"}));

    SimulateArgs sim;
    auto* sim_cmd = app.add_subcommand("simulate", "generate a synthetic match log");
    sim_cmd->add_option("--config", sim.config_path, "synthetic world JSON config");
    sim_cmd->add_option("--out", sim.out, "output JSONL path");
    sim_cmd->add_option("--truth", sim.truth_dir, "ground-truth sidecar directory");
    auto* seed_opt = sim_cmd->add_option("--seed", sim.seed, "override config seed");

    SplitArgs split;
    auto* split_cmd = app.add_subcommand("split", "order a log and produce S/T1/T2 splits");
    split_cmd->add_option("--input", split.input, "match log path")->required();
    split_cmd->add_option("--format", split.format, "jsonl or csv");
    split_cmd->add_option("--seed", split.seed, "split seed");
    split_cmd->add_option("--out-dir", split.out_dir, "output directory");

    FeaturizeArgs feats;
    auto* feat_cmd = app.add_subcommand("featurize", "materialize feature deltas for a split");
    feat_cmd->add_option("--splits-dir", feats.splits_dir, "directory with s/t1/t2 jsonl files");
    feat_cmd->add_option("--split", feats.split, "t1 or t2")->required();
    feat_cmd->add_option("--scaler", feats.scaler, "\"new\" or path to an existing scaler");
    feat_cmd->add_option("--out", feats.out, "output CSV path");
    feat_cmd->add_option("--focal-seed", feats.focal_seed, "focal team seed");
    feat_cmd->add_option("--holdout-seed", feats.holdout_seed, "holdout seed");
    feat_cmd->add_option("--holdout-frac", feats.holdout_frac, "holdout fraction (0 disables)");
    feat_cmd->add_option("--eapm", feats.eapm, "career or match");

    FitArgs fit;
    auto* fit_cmd = app.add_subcommand("fit", "fit one logistic model on a feature file");
    fit_cmd->add_option("--features", fit.features, "features CSV")->required();
    fit_cmd->add_option("--clusters", fit.clusters, "cluster column name");
    fit_cmd->add_option("--terms", fit.terms, "comma-separated feature names (default: all)");
    fit_cmd->add_option("--out", fit.out, "model JSON path");
    fit_cmd->add_flag("--train-only", fit.train_only, "exclude holdout rows");

    TpArgs tp;
    auto* tp_cmd = app.add_subcommand("tp", "compute residual-based team player effects");
    tp_cmd->add_option("--model", tp.model, "S1.3 model JSON")->required();
    tp_cmd->add_option("--t1", tp.t1, "T1 features CSV")->required();
    tp_cmd->add_option("--t2", tp.t2, "T2 features CSV (for --sweep)");
    tp_cmd->add_option("--tau", tp.tau, "auto or an integer threshold");
    tp_cmd->add_option("--sweep", tp.sweep, "min:max:step threshold sweep");
    tp_cmd->add_option("--out", tp.out, "TP index CSV path");
    tp_cmd->add_flag("--focal-only", tp.focal_only, "score focal-side residuals only");

    AnalyzeArgs analyze;
    auto* an_cmd = app.add_subcommand("analyze", "run suites, interactions and robustness checks");
    an_cmd->add_option("--t1", analyze.t1, "T1 features CSV")->required();
    an_cmd->add_option("--t2", analyze.t2, "T2 features CSV")->required();
    an_cmd->add_option("--tp", analyze.tp, "TP index CSV")->required();
    an_cmd->add_option("--model", analyze.model, "S1.3 model JSON")->required();
    an_cmd->add_option("--t1-scaler", analyze.t1_scaler, "T1 scaler JSON")->required();
    an_cmd->add_option("--out-dir", analyze.out_dir, "report directory");

    PipelineArgs pipe;
    auto* pipe_cmd = app.add_subcommand("pipeline", "run the full staged pipeline");
    pipe_cmd->add_option("--config", pipe.config_path, "run config JSON")->required();

    std::string report_dir;
    auto* report_cmd = app.add_subcommand("report", "print a human-readable report summary");
    report_cmd->add_option("--dir", report_dir, "report directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    g_quiet = log_level == "quiet";
    try {
        sim.seed_set = seed_opt->count() > 0;
        if (sim_cmd->parsed()) return cmd_simulate(sim);
        if (split_cmd->parsed()) return cmd_split(split);
        if (feat_cmd->parsed()) return cmd_featurize(feats);
        if (fit_cmd->parsed()) return cmd_fit(fit);
        if (tp_cmd->parsed()) return cmd_tp(tp);
        if (an_cmd->parsed()) return cmd_analyze(analyze);
        if (pipe_cmd->parsed()) return cmd_pipeline(pipe);
        if (report_cmd->parsed()) {
            write_report_summary(std::cout, report_dir);
            return kExitOk;
        }
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitData;
    }
    return kExitUsage;
}
