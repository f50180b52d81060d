#include "teamlens/match_data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "teamlens/errors.hpp"
#include "teamlens/rng.hpp"

namespace teamlens {

using nlohmann::json;

int mode_team_size(Mode mode) {
    switch (mode) {
        case Mode::solo: return 1;
        case Mode::team_2v2: return 2;
        case Mode::team_3v3: return 3;
        case Mode::team_4v4: return 4;
    }
    return 1;
}

std::string mode_to_string(Mode mode) {
    switch (mode) {
        case Mode::solo: return "solo";
        case Mode::team_2v2: return "2v2";
        case Mode::team_3v3: return "3v3";
        case Mode::team_4v4: return "4v4";
    }
    return "solo";
}

Mode mode_from_string(const std::string& s) {
    if (s == "solo") return Mode::solo;
    if (s == "2v2") return Mode::team_2v2;
    if (s == "3v3") return Mode::team_3v3;
    if (s == "4v4") return Mode::team_4v4;
    throw DataError("unknown mode \"" + s + "\"");
}

std::string position_to_string(Position pos) {
    switch (pos) {
        case Position::flank: return "flank";
        case Position::pocket: return "pocket";
        case Position::none: return "none";
    }
    return "none";
}

Position position_from_string(const std::string& s) {
    if (s == "flank") return Position::flank;
    if (s == "pocket") return Position::pocket;
    if (s == "none") return Position::none;
    throw DataError("unknown position \"" + s + "\"");
}

namespace {

// Tokens are embedded in CSV fields and roster encodings without quoting.
void check_token(const std::string& value, const std::string& field, const std::string& where) {
    if (value.empty()) throw DataError(where + ": empty " + field);
    for (char c : value) {
        if (c == ',' || c == '|' || c == ':' || c == '\n' || c == '\r')
            throw DataError(where + ": " + field + " contains a reserved character (\"" + value +
                            "\")");
    }
}

}  // namespace

void validate_match(const MatchRecord& rec, const std::string& where) {
    check_token(rec.match_id, "match_id", where);
    check_token(rec.map, "map", where);
    if (!(rec.duration_min > 0.0))
        throw DataError(where + ": nonpositive duration for match " + rec.match_id);
    if (!std::isfinite(rec.duration_min))
        throw DataError(where + ": non-finite duration for match " + rec.match_id);
    const int size = rec.team_size();
    if (static_cast<int>(rec.team_a.size()) != size || static_cast<int>(rec.team_b.size()) != size)
        throw DataError(where + ": roster size mismatch for match " + rec.match_id + " (mode " +
                        mode_to_string(rec.mode) + " expects " + std::to_string(size) +
                        " per team, got " + std::to_string(rec.team_a.size()) + "/" +
                        std::to_string(rec.team_b.size()) + ")");
    std::unordered_set<std::string> seen;
    for (const auto* team : {&rec.team_a, &rec.team_b}) {
        for (const auto& obs : *team) {
            check_token(obs.pid, "pid", where);
            check_token(obs.civ, "civ", where);
            if (!std::isfinite(obs.solo_elo))
                throw DataError(where + ": non-finite selo for player " + obs.pid);
            if (obs.actions < 0)
                throw DataError(where + ": negative actions for player " + obs.pid);
            if (!seen.insert(obs.pid).second)
                throw DataError(where + ": player " + obs.pid + " appears twice in match " +
                                rec.match_id);
        }
    }
}

namespace {

PlayerObservation obs_from_json(const json& j, const std::string& where) {
    PlayerObservation obs;
    try {
        obs.pid = j.at("pid").get<std::string>();
        obs.solo_elo = j.at("selo").get<double>();
        if (j.contains("telo") && !j.at("telo").is_null())
            obs.team_elo = j.at("telo").get<double>();
        obs.actions = j.at("actions").get<long long>();
        obs.pos = position_from_string(j.at("pos").get<std::string>());
        obs.civ = j.at("civ").get<std::string>();
    } catch (const json::exception& e) {
        throw DataError(where + ": bad player observation: " + e.what());
    }
    return obs;
}

json obs_to_json(const PlayerObservation& obs) {
    json j;
    j["pid"] = obs.pid;
    j["selo"] = obs.solo_elo;
    if (obs.team_elo)
        j["telo"] = *obs.team_elo;
    else
        j["telo"] = nullptr;
    j["actions"] = obs.actions;
    j["pos"] = position_to_string(obs.pos);
    j["civ"] = obs.civ;
    return j;
}

MatchRecord match_from_json(const json& j, const std::string& where) {
    MatchRecord rec;
    try {
        rec.match_id = j.at("match_id").get<std::string>();
        rec.ts = j.at("ts").get<long long>();
        rec.mode = mode_from_string(j.at("mode").get<std::string>());
        rec.map = j.at("map").get<std::string>();
        rec.duration_min = j.at("duration_min").get<double>();
        std::string w = j.at("winner").get<std::string>();
        if (w == "A")
            rec.winner = Winner::team_a;
        else if (w == "B")
            rec.winner = Winner::team_b;
        else
            throw DataError(where + ": winner must be \"A\" or \"B\", got \"" + w + "\"");
        for (const auto& o : j.at("team_a")) rec.team_a.push_back(obs_from_json(o, where));
        for (const auto& o : j.at("team_b")) rec.team_b.push_back(obs_from_json(o, where));
    } catch (const json::exception& e) {
        throw DataError(where + ": " + e.what());
    }
    validate_match(rec, where);
    return rec;
}

std::vector<MatchRecord> parse_jsonl(std::istream& in) {
    std::vector<MatchRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::string where = "line " + std::to_string(lineno);
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw DataError(where + ": invalid JSON: " + e.what());
        }
        out.push_back(match_from_json(j, where));
    }
    return out;
}

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

const char* kCsvHeader =
    "match_id,ts,mode,map,duration_min,winner,team,pid,selo,telo,actions,pos,civ";

double parse_double(const std::string& s, const std::string& field, const std::string& where) {
    try {
        std::size_t used = 0;
        double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw DataError(where + ": bad " + field + " \"" + s + "\"");
    }
}

long long parse_ll(const std::string& s, const std::string& field, const std::string& where) {
    try {
        std::size_t used = 0;
        long long v = std::stoll(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw DataError(where + ": bad " + field + " \"" + s + "\"");
    }
}

// One row per player observation, match columns repeated, rows of one match
// contiguous in the stream.
std::vector<MatchRecord> parse_csv(std::istream& in) {
    std::vector<MatchRecord> out;
    std::string line;
    std::size_t lineno = 0;
    if (!std::getline(in, line)) return out;
    ++lineno;
    // strip trailing \r for header comparison
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    if (line != kCsvHeader)
        throw DataError("line 1: unexpected CSV header (want \"" + std::string(kCsvHeader) +
                        "\")");

    MatchRecord cur;
    bool have_cur = false;
    std::string cur_where;
    auto flush = [&]() {
        if (!have_cur) return;
        validate_match(cur, cur_where);
        out.push_back(std::move(cur));
        cur = MatchRecord{};
        have_cur = false;
    };

    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::string where = "row " + std::to_string(lineno);
        auto f = split_fields(line);
        if (f.size() != 13)
            throw DataError(where + ": expected 13 fields, got " + std::to_string(f.size()));
        if (!have_cur || f[0] != cur.match_id) {
            flush();
            cur.match_id = f[0];
            cur.ts = parse_ll(f[1], "ts", where);
            cur.mode = mode_from_string(f[2]);
            cur.map = f[3];
            cur.duration_min = parse_double(f[4], "duration_min", where);
            if (f[5] == "A")
                cur.winner = Winner::team_a;
            else if (f[5] == "B")
                cur.winner = Winner::team_b;
            else
                throw DataError(where + ": winner must be \"A\" or \"B\"");
            cur_where = where;
            have_cur = true;
        }
        PlayerObservation obs;
        obs.pid = f[7];
        obs.solo_elo = parse_double(f[8], "selo", where);
        if (!f[9].empty()) obs.team_elo = parse_double(f[9], "telo", where);
        obs.actions = parse_ll(f[10], "actions", where);
        obs.pos = position_from_string(f[11]);
        obs.civ = f[12];
        if (f[6] == "A")
            cur.team_a.push_back(std::move(obs));
        else if (f[6] == "B")
            cur.team_b.push_back(std::move(obs));
        else
            throw DataError(where + ": team must be \"A\" or \"B\"");
    }
    flush();
    return out;
}

}  // namespace

std::vector<MatchRecord> parse_matches(std::istream& in, LogFormat format) {
    return format == LogFormat::jsonl ? parse_jsonl(in) : parse_csv(in);
}

std::vector<MatchRecord> parse_matches_file(const std::string& path, LogFormat format) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open input file: " + path);
    return parse_matches(in, format);
}

void write_matches_jsonl(std::ostream& out, const std::vector<MatchRecord>& records) {
    for (const auto& rec : records) {
        json j;
        j["match_id"] = rec.match_id;
        j["ts"] = rec.ts;
        j["mode"] = mode_to_string(rec.mode);
        j["map"] = rec.map;
        j["duration_min"] = rec.duration_min;
        j["winner"] = rec.winner == Winner::team_a ? "A" : "B";
        json a = json::array(), b = json::array();
        for (const auto& o : rec.team_a) a.push_back(obs_to_json(o));
        for (const auto& o : rec.team_b) b.push_back(obs_to_json(o));
        j["team_a"] = std::move(a);
        j["team_b"] = std::move(b);
        out << j.dump() << '\n';
    }
}

void write_matches_csv(std::ostream& out, const std::vector<MatchRecord>& records) {
    out << kCsvHeader << '\n';
    char buf[64];
    auto fmt = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
    };
    for (const auto& rec : records) {
        for (char team : {'A', 'B'}) {
            const auto& roster = team == 'A' ? rec.team_a : rec.team_b;
            for (const auto& o : roster) {
                out << rec.match_id << ',' << rec.ts << ',' << mode_to_string(rec.mode) << ','
                    << rec.map << ',' << fmt(rec.duration_min) << ','
                    << (rec.winner == Winner::team_a ? 'A' : 'B') << ',' << team << ',' << o.pid
                    << ',' << fmt(o.solo_elo) << ',' << (o.team_elo ? fmt(*o.team_elo) : "") << ','
                    << o.actions << ',' << position_to_string(o.pos) << ',' << o.civ << '\n';
            }
        }
    }
}

void write_matches_file(const std::string& path, const std::vector<MatchRecord>& records,
                        LogFormat format) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open output file: " + path);
    if (format == LogFormat::jsonl)
        write_matches_jsonl(out, records);
    else
        write_matches_csv(out, records);
}

std::vector<MatchRecord> order_chronologically(std::vector<MatchRecord> records) {
    std::stable_sort(records.begin(), records.end(),
                     [](const MatchRecord& a, const MatchRecord& b) {
                         if (a.ts != b.ts) return a.ts < b.ts;
                         return a.match_id < b.match_id;
                     });
    return records;
}

std::pair<std::size_t, std::size_t> split_sizes(std::size_t n_team) {
    std::size_t t1 = (n_team + 1) / 2;
    return {t1, n_team - t1};
}

DatasetSplits split_dataset(const std::vector<MatchRecord>& ordered, std::uint64_t seed) {
    DatasetSplits splits;
    splits.seed = seed;

    struct Keyed {
        std::uint64_t key;
        std::size_t index;
    };
    std::vector<Keyed> team_matches;
    for (std::size_t i = 0; i < ordered.size(); ++i) {
        if (!ordered[i].is_solo())
            team_matches.push_back({mix64(seed ^ hash_str(ordered[i].match_id)), i});
    }
    std::sort(team_matches.begin(), team_matches.end(), [&](const Keyed& a, const Keyed& b) {
        if (a.key != b.key) return a.key < b.key;
        return ordered[a.index].match_id < ordered[b.index].match_id;
    });

    const std::size_t n_t1 = split_sizes(team_matches.size()).first;
    std::vector<bool> in_t1(ordered.size(), false);
    for (std::size_t rank = 0; rank < team_matches.size(); ++rank)
        in_t1[team_matches[rank].index] = rank < n_t1;

    for (std::size_t i = 0; i < ordered.size(); ++i) {
        if (ordered[i].is_solo())
            splits.split_s.push_back(ordered[i]);
        else if (in_t1[i])
            splits.split_t1.push_back(ordered[i]);
        else
            splits.split_t2.push_back(ordered[i]);
    }
    return splits;
}

}  // namespace teamlens
