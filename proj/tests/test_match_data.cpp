#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>
#include <sstream>

#include "teamlens/errors.hpp"
#include "teamlens/match_data.hpp"
#include "teamlens/rng.hpp"

using namespace teamlens;

namespace {

PlayerObservation obs(const std::string& pid, double selo = 1000.0, long long actions = 300,
                      Position pos = Position::flank, const std::string& civ = "civ1") {
    PlayerObservation o;
    o.pid = pid;
    o.solo_elo = selo;
    o.actions = actions;
    o.pos = pos;
    o.civ = civ;
    return o;
}

MatchRecord team_match(const std::string& id, long long ts, const std::string& a1,
                       const std::string& a2, const std::string& b1, const std::string& b2,
                       Winner winner = Winner::team_a) {
    MatchRecord m;
    m.match_id = id;
    m.ts = ts;
    m.mode = Mode::team_2v2;
    m.map = "arabia";
    m.duration_min = 30.0;
    m.winner = winner;
    m.team_a = {obs(a1), obs(a2)};
    m.team_b = {obs(b1), obs(b2)};
    return m;
}

MatchRecord solo_match(const std::string& id, long long ts, const std::string& a,
                       const std::string& b) {
    MatchRecord m;
    m.match_id = id;
    m.ts = ts;
    m.mode = Mode::solo;
    m.map = "arabia";
    m.duration_min = 25.0;
    m.team_a = {obs(a, 1000, 200, Position::none)};
    m.team_b = {obs(b, 1000, 200, Position::none)};
    return m;
}

const char* kGoodLine =
    R"({"match_id":"m1","ts":100,"mode":"2v2","map":"arabia","duration_min":31.5,"winner":"A",)"
    R"("team_a":[{"pid":"p1","selo":1000,"telo":1100,"actions":900,"pos":"flank","civ":"franks"},)"
    R"({"pid":"p2","selo":1200,"telo":null,"actions":1100,"pos":"pocket","civ":"huns"}],)"
    R"("team_b":[{"pid":"p3","selo":990,"telo":1050,"actions":800,"pos":"flank","civ":"mayans"},)"
    R"({"pid":"p4","selo":1210,"telo":1000,"actions":950,"pos":"pocket","civ":"celts"}]})";

}  // namespace

TEST_CASE("parse_matches: one well-formed 2v2 line yields four observations") {
    std::istringstream in(kGoodLine);
    auto records = parse_matches(in, LogFormat::jsonl);
    REQUIRE(records.size() == 1);
    const MatchRecord& m = records[0];
    CHECK(m.match_id == "m1");
    CHECK(m.mode == Mode::team_2v2);
    CHECK(m.team_a.size() == 2);
    CHECK(m.team_b.size() == 2);
    CHECK(m.team_a[0].team_elo.has_value());
    CHECK_FALSE(m.team_a[1].team_elo.has_value());
    CHECK(m.team_a[1].pos == Position::pocket);
    CHECK(m.winner == Winner::team_a);
}

TEST_CASE("parse_matches: empty stream yields empty list") {
    std::istringstream in("");
    CHECK(parse_matches(in, LogFormat::jsonl).empty());
}

TEST_CASE("parse_matches: zero duration is rejected with the offending line") {
    std::string line = kGoodLine;
    auto pos = line.find("31.5");
    line.replace(pos, 4, "0.0");
    std::istringstream in("\n" + line);  // blank first line: error should say line 2
    CHECK_THROWS_WITH_AS(parse_matches(in, LogFormat::jsonl),
                         doctest::Contains("line 2: nonpositive duration"), DataError);
}

TEST_CASE("parse_matches: malformed JSON names the line") {
    std::istringstream in("{not json");
    CHECK_THROWS_WITH_AS(parse_matches(in, LogFormat::jsonl), doctest::Contains("line 1"),
                         DataError);
}

TEST_CASE("parse_matches: roster size mismatch is a schema error") {
    std::string line = kGoodLine;
    // drop one team_b member: 2v2 with a 1-player side
    auto start = line.find(R"({"pid":"p4")");
    auto end = line.find(']', start);
    line.erase(start - 1, end - start + 1);
    std::istringstream in(line);
    CHECK_THROWS_WITH_AS(parse_matches(in, LogFormat::jsonl),
                         doctest::Contains("roster size mismatch"), DataError);
}

TEST_CASE("parse_matches: duplicate player in one match is rejected") {
    MatchRecord m = team_match("m1", 1, "p1", "p2", "p1", "p3");
    CHECK_THROWS_WITH_AS(validate_match(m, "here"), doctest::Contains("appears twice"),
                         DataError);
}

TEST_CASE("jsonl round trip preserves records") {
    std::vector<MatchRecord> records = {team_match("m1", 5, "p1", "p2", "p3", "p4"),
                                        solo_match("m2", 9, "p1", "p3")};
    std::ostringstream out;
    write_matches_jsonl(out, records);
    std::istringstream in(out.str());
    auto parsed = parse_matches(in, LogFormat::jsonl);
    REQUIRE(parsed.size() == 2);
    CHECK(parsed[0].match_id == "m1");
    CHECK(parsed[0].team_a[0].pid == "p1");
    CHECK(parsed[1].mode == Mode::solo);
    CHECK(parsed[1].ts == 9);
}

TEST_CASE("csv round trip preserves records") {
    std::vector<MatchRecord> records = {team_match("m1", 5, "p1", "p2", "p3", "p4"),
                                        team_match("m2", 6, "p5", "p6", "p7", "p8",
                                                   Winner::team_b)};
    records[0].team_a[0].team_elo = 1234.5;
    std::ostringstream out;
    write_matches_csv(out, records);
    std::istringstream in(out.str());
    auto parsed = parse_matches(in, LogFormat::csv);
    REQUIRE(parsed.size() == 2);
    CHECK(parsed[0].team_a[0].team_elo == doctest::Approx(1234.5));
    CHECK_FALSE(parsed[0].team_b[0].team_elo.has_value());
    CHECK(parsed[1].winner == Winner::team_b);
    CHECK(parsed[1].team_b[1].pid == "p8");
}

TEST_CASE("order_chronologically is idempotent on sorted input") {
    std::vector<MatchRecord> records = {solo_match("m1", 1, "a", "b"),
                                        solo_match("m2", 2, "a", "b"),
                                        solo_match("m3", 3, "a", "b")};
    auto once = order_chronologically(records);
    auto twice = order_chronologically(once);
    for (std::size_t i = 0; i < once.size(); ++i) CHECK(once[i].match_id == twice[i].match_id);
    CHECK(once[0].match_id == "m1");
}

TEST_CASE("order_chronologically sorts reversed input") {
    std::vector<MatchRecord> records = {solo_match("m3", 3, "a", "b"),
                                        solo_match("m2", 2, "a", "b"),
                                        solo_match("m1", 1, "a", "b")};
    auto sorted = order_chronologically(records);
    CHECK(sorted[0].ts == 1);
    CHECK(sorted[1].ts == 2);
    CHECK(sorted[2].ts == 3);
}

TEST_CASE("order_chronologically breaks timestamp ties by match_id") {
    std::vector<MatchRecord> records = {solo_match("m9", 7, "a", "b"),
                                        solo_match("m1", 7, "c", "d")};
    auto sorted = order_chronologically(records);
    CHECK(sorted[0].match_id == "m1");
    CHECK(sorted[1].match_id == "m9");
}

TEST_CASE("split_dataset: 10 team + 3 solo at seed 42 gives 3/5/5") {
    std::vector<MatchRecord> records;
    for (int i = 0; i < 10; ++i)
        records.push_back(team_match("t" + std::to_string(i), i, "p1", "p2", "p3", "p4"));
    for (int i = 0; i < 3; ++i)
        records.push_back(solo_match("s" + std::to_string(i), 100 + i, "p1", "p3"));
    auto ordered = order_chronologically(records);
    DatasetSplits splits = split_dataset(ordered, 42);
    CHECK(splits.split_s.size() == 3);
    CHECK(splits.split_t1.size() == 5);
    CHECK(splits.split_t2.size() == 5);
}

TEST_CASE("split_dataset: same input and seed give an identical partition") {
    std::vector<MatchRecord> records;
    for (int i = 0; i < 57; ++i)
        records.push_back(team_match("t" + std::to_string(i), i, "p1", "p2", "p3", "p4"));
    auto ordered = order_chronologically(records);
    DatasetSplits a = split_dataset(ordered, 9);
    DatasetSplits b = split_dataset(ordered, 9);
    REQUIRE(a.split_t1.size() == b.split_t1.size());
    for (std::size_t i = 0; i < a.split_t1.size(); ++i)
        CHECK(a.split_t1[i].match_id == b.split_t1[i].match_id);

    // a different seed actually moves matches
    DatasetSplits c = split_dataset(ordered, 10);
    bool any_diff = a.split_t1.size() != c.split_t1.size();
    for (std::size_t i = 0; !any_diff && i < a.split_t1.size(); ++i)
        any_diff = a.split_t1[i].match_id != c.split_t1[i].match_id;
    CHECK(any_diff);
}

TEST_CASE("split_dataset partitions team matches exactly") {
    CounterRng rng(3, 3);
    std::vector<MatchRecord> records;
    for (int i = 0; i < 101; ++i) {
        if (rng.coin())
            records.push_back(team_match("t" + std::to_string(i), i, "p1", "p2", "p3", "p4"));
        else
            records.push_back(solo_match("s" + std::to_string(i), i, "p1", "p3"));
    }
    auto ordered = order_chronologically(records);
    DatasetSplits splits = split_dataset(ordered, 5);

    std::set<std::string> team_ids, got;
    for (const auto& m : ordered)
        if (!m.is_solo()) team_ids.insert(m.match_id);
    for (const auto& m : splits.split_t1) CHECK(got.insert(m.match_id).second);
    for (const auto& m : splits.split_t2) CHECK(got.insert(m.match_id).second);
    CHECK(got == team_ids);
    CHECK(splits.split_t1.size() + splits.split_t2.size() == team_ids.size());
    long long diff = static_cast<long long>(splits.split_t1.size()) -
                     static_cast<long long>(splits.split_t2.size());
    CHECK(std::abs(diff) <= 1);

    // splits stay chronologically ordered
    for (std::size_t i = 1; i < splits.split_t1.size(); ++i)
        CHECK(splits.split_t1[i - 1].ts <= splits.split_t1[i].ts);
}

TEST_CASE("split_sizes: balanced halves at corpus scale") {
    auto [t1, t2] = split_sizes(1'623'828);
    CHECK(t1 == 811'914);
    CHECK(t2 == 811'914);
    auto [o1, o2] = split_sizes(11);
    CHECK(o1 == 6);
    CHECK(o2 == 5);
}
