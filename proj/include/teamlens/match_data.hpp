#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace teamlens {

enum class Position { flank, pocket, none };
enum class Mode { solo, team_2v2, team_3v3, team_4v4 };
enum class Winner { team_a, team_b };
enum class LogFormat { jsonl, csv };

int mode_team_size(Mode mode);
std::string mode_to_string(Mode mode);
Mode mode_from_string(const std::string& s);
std::string position_to_string(Position pos);
Position position_from_string(const std::string& s);

struct PlayerObservation {
    std::string pid;
    double solo_elo = 0.0;
    std::optional<double> team_elo;
    long long actions = 0;
    Position pos = Position::none;
    std::string civ;
};

struct MatchRecord {
    std::string match_id;
    long long ts = 0;  // epoch seconds
    Mode mode = Mode::solo;
    std::string map;
    double duration_min = 0.0;
    Winner winner = Winner::team_a;
    std::vector<PlayerObservation> team_a;
    std::vector<PlayerObservation> team_b;

    int team_size() const { return mode_team_size(mode); }
    bool is_solo() const { return mode == Mode::solo; }
};

// Throws DataError naming the offending field; `where` prefixes the message
// (e.g. "line 12").
void validate_match(const MatchRecord& rec, const std::string& where);

std::vector<MatchRecord> parse_matches(std::istream& in, LogFormat format);
std::vector<MatchRecord> parse_matches_file(const std::string& path, LogFormat format);

void write_matches_jsonl(std::ostream& out, const std::vector<MatchRecord>& records);
void write_matches_csv(std::ostream& out, const std::vector<MatchRecord>& records);
void write_matches_file(const std::string& path, const std::vector<MatchRecord>& records,
                        LogFormat format);

// Stable sort by (ts, match_id).
std::vector<MatchRecord> order_chronologically(std::vector<MatchRecord> records);

struct DatasetSplits {
    std::vector<MatchRecord> split_s;
    std::vector<MatchRecord> split_t1;
    std::vector<MatchRecord> split_t2;
    std::uint64_t seed = 0;
};

// Balanced 50:50 team-match partition: sizes of (T1, T2) for n team matches.
std::pair<std::size_t, std::size_t> split_sizes(std::size_t n_team);

// Solo matches go to S; team matches are partitioned into T1/T2 by ranking a
// seeded hash of match_id and cutting at the median. Deterministic in (records, seed).
DatasetSplits split_dataset(const std::vector<MatchRecord>& ordered, std::uint64_t seed);

}  // namespace teamlens
