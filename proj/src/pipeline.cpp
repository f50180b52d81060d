#include "teamlens/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "teamlens/errors.hpp"
#include "teamlens/glm.hpp"

namespace teamlens {

using nlohmann::json;
namespace fs = std::filesystem;

std::string RunConfig::to_json_string() const {
    json j;
    j["input"] = input;
    j["format"] = format == LogFormat::jsonl ? "jsonl" : "csv";
    j["out_dir"] = out_dir;
    j["seeds"] = {{"split", seeds.split}, {"focal", seeds.focal}, {"holdout", seeds.holdout}};
    j["holdout_frac"] = holdout_frac;
    const char* policy = tau.policy == TauPolicy::auto_knee ? "auto"
                         : tau.policy == TauPolicy::fixed   ? "fixed"
                                                            : "sweep";
    j["tau"] = {{"policy", policy},
                {"value", tau.value},
                {"sweep", {{"min", tau.grid.min}, {"max", tau.grid.max}, {"step", tau.grid.step}}}};
    j["eapm"] = eapm_mode == EapmMode::career_to_date ? "career" : "match";
    j["focal_only"] = focal_only;
    j["toggles"] = {{"mem", toggles.run_mem},
                    {"facets", toggles.run_facets},
                    {"ks", toggles.run_ks},
                    {"positions", toggles.run_positions},
                    {"descriptives", toggles.run_descriptives},
                    {"bandwidth", toggles.run_bandwidth},
                    {"sweep", run_sweep}};
    return j.dump(2);
}

RunConfig RunConfig::from_json_string(const std::string& text) {
    RunConfig c;
    try {
        json j = json::parse(text);
        c.input = j.at("input").get<std::string>();
        std::string fmt = j.value("format", "jsonl");
        if (fmt == "jsonl")
            c.format = LogFormat::jsonl;
        else if (fmt == "csv")
            c.format = LogFormat::csv;
        else
            throw DataError("run config: format must be jsonl or csv");
        c.out_dir = j.value("out_dir", c.out_dir);
        if (j.contains("seeds")) {
            c.seeds.split = j["seeds"].value("split", c.seeds.split);
            c.seeds.focal = j["seeds"].value("focal", c.seeds.focal);
            c.seeds.holdout = j["seeds"].value("holdout", c.seeds.holdout);
        }
        c.holdout_frac = j.value("holdout_frac", c.holdout_frac);
        if (j.contains("tau")) {
            std::string policy = j["tau"].value("policy", "auto");
            if (policy == "auto")
                c.tau.policy = TauPolicy::auto_knee;
            else if (policy == "fixed")
                c.tau.policy = TauPolicy::fixed;
            else if (policy == "sweep")
                c.tau.policy = TauPolicy::sweep;
            else
                throw DataError("run config: tau policy must be auto, fixed or sweep");
            c.tau.value = j["tau"].value("value", c.tau.value);
            if (j["tau"].contains("sweep")) {
                c.tau.grid.min = j["tau"]["sweep"].value("min", c.tau.grid.min);
                c.tau.grid.max = j["tau"]["sweep"].value("max", c.tau.grid.max);
                c.tau.grid.step = j["tau"]["sweep"].value("step", c.tau.grid.step);
            }
        }
        std::string eapm = j.value("eapm", "career");
        c.eapm_mode = eapm == "match" ? EapmMode::per_match : EapmMode::career_to_date;
        c.focal_only = j.value("focal_only", false);
        if (j.contains("toggles")) {
            const auto& t = j["toggles"];
            c.toggles.run_mem = t.value("mem", true);
            c.toggles.run_facets = t.value("facets", true);
            c.toggles.run_ks = t.value("ks", true);
            c.toggles.run_positions = t.value("positions", true);
            c.toggles.run_descriptives = t.value("descriptives", true);
            c.toggles.run_bandwidth = t.value("bandwidth", true);
            c.run_sweep = t.value("sweep", true);
        }
        c.toggles.focal_only_residuals = c.focal_only;
    } catch (const json::exception& e) {
        throw DataError(std::string("bad run config: ") + e.what());
    }
    return c;
}

RunConfig RunConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open run config: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json_string(ss.str());
}

std::uint64_t fnv64_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot hash missing file: " + path);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof buf);
        std::streamsize got = in.gcount();
        for (std::streamsize i = 0; i < got; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

namespace {

std::string hex64(std::uint64_t v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

// Exclusive lock file; one pipeline instance per output directory.
class DirLock {
  public:
    explicit DirLock(const std::string& out_dir) : path_(out_dir + "/.lock") {
        fs::create_directories(out_dir);
        fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd_ < 0)
            throw DataError("another run holds " + path_ +
                            " (remove the lock file if no pipeline is running)");
    }
    ~DirLock() {
        if (fd_ >= 0) {
            ::close(fd_);
            ::unlink(path_.c_str());
        }
    }
    DirLock(const DirLock&) = delete;
    DirLock& operator=(const DirLock&) = delete;

  private:
    std::string path_;
    int fd_ = -1;
};

struct ManifestWriter {
    const RunConfig& config;
    std::vector<StageRecord> stages;

    void add(const std::string& stage, const std::string& out_dir,
             const std::vector<std::string>& rel_paths) {
        StageRecord rec;
        rec.name = stage;
        for (const auto& rel : rel_paths)
            rec.artifacts.push_back({rel, hex64(fnv64_file(out_dir + "/" + rel))});
        stages.push_back(std::move(rec));
    }

    void write(const std::string& path, const std::string& failed_stage,
               const std::string& error, int selected_tau) const {
        json j;
        j["teamlens_version"] = kTeamlensVersion;
        auto now = std::chrono::system_clock::now();
        j["created_utc"] =
            std::chrono::duration_cast<std::chrono::seconds>(now.time_since_epoch()).count();
        j["config"] = json::parse(config.to_json_string());
        j["selected_tau"] = selected_tau;
        json st = json::array();
        for (const auto& s : stages) {
            json art = json::array();
            for (const auto& a : s.artifacts) art.push_back({{"path", a.path}, {"fnv64", a.fnv64}});
            st.push_back({{"name", s.name}, {"artifacts", art}});
        }
        j["stages"] = std::move(st);
        if (!failed_stage.empty()) {
            j["failed_stage"] = failed_stage;
            j["error"] = error;
        }
        std::ofstream out(path);
        if (!out) throw DataError("cannot write manifest: " + path);
        out << j.dump(2) << '\n';
    }
};

std::vector<MatchRecord> load_all_splits(const std::string& splits_dir) {
    std::vector<MatchRecord> all;
    for (const char* name : {"s.jsonl", "t1.jsonl", "t2.jsonl"}) {
        std::string path = splits_dir + "/" + name;
        if (!fs::exists(path)) continue;
        auto part = parse_matches_file(path, LogFormat::jsonl);
        all.insert(all.end(), std::make_move_iterator(part.begin()),
                   std::make_move_iterator(part.end()));
    }
    return order_chronologically(std::move(all));
}

std::unordered_set<std::string> ids_of(const std::string& jsonl_path) {
    std::unordered_set<std::string> ids;
    for (const auto& rec : parse_matches_file(jsonl_path, LogFormat::jsonl))
        ids.insert(rec.match_id);
    return ids;
}

}  // namespace

PipelineResult run_pipeline(const RunConfig& config) {
    const std::string& out = config.out_dir;
    DirLock lock(out);
    ManifestWriter manifest{config, {}};
    PipelineResult result;
    result.out_dir = out;
    result.report_dir = out + "/reports";
    std::string current_stage;

    try {
        // ---- split ----
        current_stage = "split";
        if (!fs::exists(config.input)) throw DataError("input path does not exist: " + config.input);
        fs::create_directories(out + "/splits");
        {
            auto records = parse_matches_file(config.input, config.format);
            auto ordered = order_chronologically(std::move(records));
            DatasetSplits splits = split_dataset(ordered, config.seeds.split);
            write_matches_file(out + "/splits/s.jsonl", splits.split_s, LogFormat::jsonl);
            write_matches_file(out + "/splits/t1.jsonl", splits.split_t1, LogFormat::jsonl);
            write_matches_file(out + "/splits/t2.jsonl", splits.split_t2, LogFormat::jsonl);
        }
        manifest.add("split", out, {"splits/s.jsonl", "splits/t1.jsonl", "splits/t2.jsonl"});

        // ---- featurize (T1 then T2, history over the whole log) ----
        current_stage = "featurize";
        fs::create_directories(out + "/features");
        {
            auto all = load_all_splits(out + "/splits");
            auto t1_ids = ids_of(out + "/splits/t1.jsonl");
            auto t2_ids = ids_of(out + "/splits/t2.jsonl");

            FeaturizeOptions t1_opts;
            t1_opts.focal_seed = config.seeds.focal;
            t1_opts.holdout_frac = 0.0;  // S1 estimates on the full split
            t1_opts.eapm_mode = config.eapm_mode;
            auto t1_rows = materialize_split(all, t1_ids, t1_opts);
            FeatureScaler t1_scaler = fit_and_apply_scaler(t1_rows);
            write_features_csv(out + "/features/t1.csv", t1_rows);
            t1_scaler.save(out + "/features/t1_scaler.json");

            FeaturizeOptions t2_opts = t1_opts;
            t2_opts.holdout_seed = config.seeds.holdout;
            t2_opts.holdout_frac = config.holdout_frac;
            auto t2_rows = materialize_split(all, t2_ids, t2_opts);
            FeatureScaler t2_scaler = fit_and_apply_scaler(t2_rows);
            write_features_csv(out + "/features/t2.csv", t2_rows);
            t2_scaler.save(out + "/features/t2_scaler.json");
        }
        manifest.add("featurize", out,
                     {"features/t1.csv", "features/t1_scaler.json", "features/t2.csv",
                      "features/t2_scaler.json"});

        // ---- fit S1 suite ----
        current_stage = "fit_s1";
        fs::create_directories(out + "/models");
        {
            auto t1_rows = read_features_csv(out + "/features/t1.csv");
            auto t1_scaler = FeatureScaler::load(out + "/features/t1_scaler.json");
            S1Suite suite = run_s1_suite(t1_rows, t1_scaler);
            suite.models[0].model.save(out + "/models/s1_1.json");
            suite.models[1].model.save(out + "/models/s1_2.json");
            suite.models[2].model.save(out + "/models/s1_3.json");
        }
        manifest.add("fit_s1", out,
                     {"models/s1_1.json", "models/s1_2.json", "models/s1_3.json"});

        // ---- residuals, tau, TP index ----
        current_stage = "tp";
        fs::create_directories(out + "/tp");
        int selected_tau = 0;
        {
            auto t1_rows = read_features_csv(out + "/features/t1.csv");
            FittedModel s13 = FittedModel::load(out + "/models/s1_3.json");
            ResidualLedger ledger = compute_residuals(s13, t1_rows, config.focal_only);

            BandCurve band = residual_band_curve(ledger);
            {
                std::ofstream bout(out + "/tp/tau_band.csv");
                if (!bout) throw DataError("cannot write tau_band.csv");
                bout << "bin_x,count,q_lo,q_hi,width\n";
                char buf[64];
                auto fmt = [&](double v) {
                    std::snprintf(buf, sizeof buf, "%.10g", v);
                    return std::string(buf);
                };
                for (std::size_t i = 0; i < band.bin_x.size(); ++i)
                    bout << fmt(band.bin_x[i]) << ',' << band.count[i] << ',' << fmt(band.q_lo[i])
                         << ',' << fmt(band.q_hi[i]) << ',' << fmt(band.width[i]) << '\n';
            }

            bool flat = false;
            if (config.tau.policy == TauPolicy::fixed) {
                selected_tau = config.tau.value;
            } else if (config.tau.policy == TauPolicy::auto_knee) {
                ThresholdChoice choice = select_threshold(ledger);
                selected_tau = choice.tau;
                flat = choice.flat_warning;
            }

            ThresholdSweepResult sweep;
            bool have_sweep = false;
            if (config.run_sweep || config.tau.policy == TauPolicy::sweep) {
                auto t2_rows = read_features_csv(out + "/features/t2.csv");
                sweep = sweep_threshold(ledger, t2_rows, config.tau.grid);
                have_sweep = true;
                if (config.tau.policy == TauPolicy::sweep) selected_tau = sweep.best_tau;
                std::ofstream sout(out + "/tp/tau_sweep.csv");
                if (!sout) throw DataError("cannot write tau_sweep.csv");
                sout << "tau,pseudo_r2,accuracy,coverage,degenerate\n";
                char buf[64];
                auto fmt = [&](double v) {
                    std::snprintf(buf, sizeof buf, "%.10g", v);
                    return std::string(buf);
                };
                for (const auto& pt : sweep.points)
                    sout << pt.tau << ',' << fmt(pt.pseudo_r2) << ',' << fmt(pt.accuracy) << ','
                         << fmt(pt.coverage) << ',' << (pt.degenerate ? 1 : 0) << '\n';
            }

            TeamPlayerIndex index(ledger, selected_tau);
            index.save_csv(out + "/tp/tp.csv");
            {
                json tj;
                tj["tau"] = selected_tau;
                tj["policy"] = config.tau.policy == TauPolicy::auto_knee ? "auto"
                               : config.tau.policy == TauPolicy::fixed  ? "fixed"
                                                                        : "sweep";
                tj["flat_band_warning"] = flat;
                if (have_sweep) tj["sweep_best_tau"] = sweep.best_tau;
                std::ofstream tout(out + "/tp/tau.json");
                tout << tj.dump(2) << '\n';
            }
        }
        result.selected_tau = selected_tau;
        {
            std::vector<std::string> arts = {"tp/tp.csv", "tp/tau.json", "tp/tau_band.csv"};
            if (fs::exists(out + "/tp/tau_sweep.csv")) arts.push_back("tp/tau_sweep.csv");
            manifest.add("tp", out, arts);
        }

        // ---- analyze: task proficiency, S2 suite, interactions, robustness ----
        current_stage = "analyze";
        {
            auto t1_rows = read_features_csv(out + "/features/t1.csv");
            auto t2_rows = read_features_csv(out + "/features/t2.csv");
            auto t1_scaler = FeatureScaler::load(out + "/features/t1_scaler.json");
            FittedModel s13 = FittedModel::load(out + "/models/s1_3.json");
            TeamPlayerIndex index = TeamPlayerIndex::load_csv(out + "/tp/tp.csv");
            AnalysisResult analysis =
                run_analysis(t1_rows, t2_rows, index, t1_scaler, &s13, config.toggles);
            write_reports(result.report_dir, analysis);
            for (const char* name : {"tau_band.csv", "tau_sweep.csv"}) {
                std::string src = out + "/tp/" + name;
                if (fs::exists(src))
                    fs::copy_file(src, result.report_dir + "/" + name,
                                  fs::copy_options::overwrite_existing);
            }
        }
        {
            std::vector<std::string> arts;
            for (const char* name :
                 {"s1_suite.csv", "s2_suite.csv", "mem.csv", "facets.csv", "ks.csv",
                  "positions.csv", "descriptives.csv", "bandwidth.csv", "tau_band.csv"})
                if (fs::exists(result.report_dir + "/" + name))
                    arts.push_back(std::string("reports/") + name);
            if (fs::exists(result.report_dir + "/tau_sweep.csv"))
                arts.push_back("reports/tau_sweep.csv");
            manifest.add("analyze", out, arts);
        }

        current_stage = "manifest";
        manifest.write(result.report_dir + "/manifest.json", "", "", result.selected_tau);
        result.stages = manifest.stages;
        return result;
    } catch (const std::exception& e) {
        fs::create_directories(result.report_dir);
        manifest.write(result.report_dir + "/manifest.json", current_stage, e.what(),
                       result.selected_tau);
        throw;
    }
}

namespace {

std::vector<std::vector<std::string>> read_csv_rows(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    std::vector<std::vector<std::string>> rows;
    std::string line;
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
        rows.push_back(std::move(f));
    }
    return rows;
}

void print_suite(std::ostream& out, const std::string& path, const std::string& title) {
    if (!fs::exists(path)) return;
    auto rows = read_csv_rows(path);
    out << title << '\n';
    std::string model;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const auto& r = rows[i];
        if (r.size() < 7) continue;
        if (r[0] != model) {
            model = r[0];
            if (model == "all") continue;
            out << "  " << model << ":\n";
        }
        if (model == "all") continue;
        const std::string& term = r[1];
        if (term == "pseudo_r2" || term == "n_obs" || term == "n_clusters" ||
            term == "test_accuracy" || term == "delta_accuracy") {
            out << "    " << term << " = " << r[2] << '\n';
        } else if (term == "converged") {
            if (r[2] != "1") out << "    WARNING: not converged\n";
        } else {
            out << "    " << term << " = " << r[2] << r[6];
            if (!r[3].empty()) out << "  (" << r[3] << ")";
            out << '\n';
        }
    }
    out << '\n';
}

}  // namespace

void write_report_summary(std::ostream& out, const std::string& report_dir) {
    std::string manifest_path = report_dir + "/manifest.json";
    if (!fs::exists(manifest_path)) throw DataError("no manifest in " + report_dir);
    json manifest;
    {
        std::ifstream in(manifest_path);
        try {
            in >> manifest;
        } catch (const json::exception& e) {
            throw DataError(std::string("corrupt manifest: ") + e.what());
        }
    }
    out << "teamlens " << manifest.value("teamlens_version", "?") << " report\n";
    if (manifest.contains("failed_stage"))
        out << "INCOMPLETE RUN: failed at stage " << manifest["failed_stage"] << "\n\n";
    out << "selected tau: " << manifest.value("selected_tau", 0) << "\n\n";

    print_suite(out, report_dir + "/s1_suite.csv", "S1 task-proficiency suite (T1)");
    print_suite(out, report_dir + "/s2_suite.csv", "S2 final prediction suite (T2)");

    std::string mem_path = report_dir + "/mem.csv";
    if (fs::exists(mem_path)) {
        auto rows = read_csv_rows(mem_path);
        out << "Marginal effects at the mean (interaction model)\n";
        for (std::size_t i = 1; i < rows.size(); ++i) {
            const auto& r = rows[i];
            if (r.size() < 6 || r[0] == "n_obs" || r[0] == "n_clusters") continue;
            out << "  " << r[0] << " = " << r[1] << r[5] << "  (" << r[2] << ")\n";
        }
        out << '\n';
    }

    std::string s2_path = report_dir + "/s2_suite.csv";
    if (fs::exists(s2_path)) {
        auto rows = read_csv_rows(s2_path);
        out << "Accuracy chain (test set): ";
        bool first = true;
        for (std::size_t i = 1; i < rows.size(); ++i) {
            const auto& r = rows[i];
            if (r.size() < 3 || r[1] != "delta_accuracy") continue;
            if (!first) out << ", ";
            out << r[0] << " " << (r[2][0] == '-' ? "" : "+") << r[2];
            first = false;
        }
        out << '\n';
    }
}

}  // namespace teamlens
