#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>
#include <sstream>

#include "oracles.hpp"
#include "teamlens/errors.hpp"
#include "teamlens/match_data.hpp"
#include "teamlens/simgen.hpp"
#include "teamlens/stats.hpp"

using namespace teamlens;

namespace {

SyntheticConfig small_world() {
    SyntheticConfig c;
    c.n_players = 80;
    c.matches_per_mode = {{"solo", 800}, {"2v2", 1200}};
    c.seed = 5;
    return c;
}

}  // namespace

TEST_CASE("generate_players: zero sds give identical players") {
    SyntheticConfig c = small_world();
    c.mech = {40.0, 0.0};
    c.tact = {0.0, 0.0};
    c.theta = {0.0, 0.0};
    auto players = generate_players(c);
    for (const auto& p : players) {
        CHECK(p.mu == doctest::Approx(40.0));
        CHECK(p.s == doctest::Approx(0.0));
        CHECK(p.theta == doctest::Approx(0.0));
        CHECK(p.solo_elo == doctest::Approx(c.elo_base));
    }
}

TEST_CASE("generate_players: fixed seed reproduces the population") {
    SyntheticConfig c = small_world();
    auto a = generate_players(c);
    auto b = generate_players(c);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].pid == b[i].pid);
        CHECK(a[i].mu == b[i].mu);
        CHECK(a[i].theta == b[i].theta);
        CHECK(a[i].premade_partner == b[i].premade_partner);
    }
}

TEST_CASE("generate_players: sample moments match the configured distributions") {
    SyntheticConfig c;
    c.n_players = 10000;
    c.mech = {40.0, 8.0};
    c.tact = {0.0, 1.0};
    c.theta = {0.5, 2.0};
    c.matches_per_mode = {{"solo", 1}};
    auto players = generate_players(c);
    std::vector<double> mu, s, theta;
    for (const auto& p : players) {
        mu.push_back(p.mu);
        s.push_back(p.s);
        theta.push_back(p.theta);
    }
    // 3 standard errors of the mean: 3 * sd / sqrt(n)
    CHECK(std::abs(oracle::mean(mu) - 40.0) < 3.0 * 8.0 / 100.0);
    CHECK(std::abs(oracle::mean(s) - 0.0) < 3.0 / 100.0);
    CHECK(std::abs(oracle::mean(theta) - 0.5) < 3.0 * 2.0 / 100.0);
    CHECK(std::abs(oracle::sample_sd(mu) - 8.0) < 0.35);
    CHECK(std::abs(oracle::sample_sd(theta) - 2.0) < 0.1);
}

TEST_CASE("generate_players rejects populations too small for the modes") {
    SyntheticConfig c;
    c.n_players = 7;
    c.matches_per_mode = {{"4v4", 10}};
    CHECK_THROWS_AS(generate_players(c), DataError);
}

TEST_CASE("matchmake: four identical ratings give a zero Elo gap") {
    std::vector<QueueEntry> queue = {{{0}, 1000}, {{1}, 1000}, {{2}, 1000}, {{3}, 1000}};
    auto made = matchmake(queue, 2, 50.0);
    REQUIRE(made.has_value());
    CHECK(made->elo_gap == doctest::Approx(0.0));
    CHECK(made->team_a.size() == 2);
    CHECK(made->team_b.size() == 2);
}

TEST_CASE("matchmake keeps premade groups on one team") {
    std::vector<QueueEntry> queue = {
        {{0, 1}, 1010}, {{2}, 990}, {{3}, 1000}, {{4, 5}, 1005}, {{6}, 995}};
    for (int size : {2, 3}) {
        auto made = matchmake(queue, size, 500.0);
        REQUIRE(made.has_value());
        auto side_of = [&](std::uint32_t id) {
            for (auto m : made->team_a)
                if (m == id) return 'A';
            for (auto m : made->team_b)
                if (m == id) return 'B';
            return '-';
        };
        if (side_of(0) != '-') CHECK(side_of(0) == side_of(1));
        if (side_of(4) != '-') CHECK(side_of(4) == side_of(5));
    }
}

TEST_CASE("matchmake returns nothing when no pairing meets the tolerance") {
    std::vector<QueueEntry> queue = {{{0}, 400}, {{1}, 2600}};
    CHECK_FALSE(matchmake(queue, 1, 100.0).has_value());
    // the same queue pairs fine with a generous tolerance
    CHECK(matchmake(queue, 1, 5000.0).has_value());
}

TEST_CASE("win_probability: mirror teams land on one half") {
    OutcomeWeights w{1.0, 0.7, 0.3, 0.1};
    CHECK(win_probability(w, 0, 0, 0, 0, 0) == doctest::Approx(0.5));
    CHECK(win_probability(w, 0.5, 0, 0, 0, 0) > 0.5);
    CHECK(win_probability(w, -0.5, 0, 0, 0, 0) < 0.5);
}

TEST_CASE("elo update: equal ratings with K=32 move 16 points, zero-sum") {
    CHECK(elo_expected(1000, 1000, 400) == doctest::Approx(0.5));
    CHECK(elo_delta(1000, 1000, 1, 32, 400) == doctest::Approx(16.0));
    CHECK(elo_delta(1000, 1000, 0, 32, 400) == doctest::Approx(-16.0));
    // winner gain equals loser loss at any rating difference
    double gain = elo_delta(1107, 983, 1, 32, 400);
    double loss = elo_delta(983, 1107, 0, 32, 400);
    CHECK(gain == doctest::Approx(-loss));
    CHECK(gain < 16.0);  // favourite gains less
}

TEST_CASE("run_world: log round-trips through the ingestion parser losslessly") {
    SyntheticConfig c = small_world();
    SyntheticWorld world = run_world(c);
    REQUIRE(world.log.size() == 2000);
    std::ostringstream buffer;
    write_matches_jsonl(buffer, world.log);
    std::istringstream in(buffer.str());
    auto parsed = parse_matches(in, LogFormat::jsonl);  // zero errors
    REQUIRE(parsed.size() == world.log.size());
    for (std::size_t i = 0; i < parsed.size(); ++i) {
        CHECK(parsed[i].match_id == world.log[i].match_id);
        CHECK(parsed[i].ts == world.log[i].ts);
    }
    // chronological by construction
    for (std::size_t i = 1; i < world.log.size(); ++i)
        CHECK(world.log[i - 1].ts < world.log[i].ts);
    CHECK(world.true_p.size() == world.log.size());
}

TEST_CASE("run_world: fixed config gives a bit-identical log and sidecar") {
    SyntheticConfig c = small_world();
    c.matches_per_mode = {{"solo", 300}, {"2v2", 400}};
    SyntheticWorld a = run_world(c);
    SyntheticWorld b = run_world(c);
    std::ostringstream ja, jb;
    write_matches_jsonl(ja, a.log);
    write_matches_jsonl(jb, b.log);
    CHECK(ja.str() == jb.str());
    REQUIRE(a.true_p.size() == b.true_p.size());
    for (std::size_t i = 0; i < a.true_p.size(); ++i) {
        CHECK(a.true_p[i].first == b.true_p[i].first);
        CHECK(a.true_p[i].second == b.true_p[i].second);
    }
}

TEST_CASE("run_world: realized win rates are calibrated against true probabilities") {
    SyntheticConfig c = small_world();
    c.matches_per_mode = {{"solo", 2000}, {"2v2", 3000}};
    c.seed = 17;
    SyntheticWorld world = run_world(c);
    std::map<std::string, double> p_of;
    for (const auto& [mid, p] : world.true_p) p_of[mid] = p;

    std::vector<double> bin_p(10, 0.0), bin_w(10, 0.0), bin_n(10, 0.0);
    for (const auto& m : world.log) {
        double p = p_of.at(m.match_id);
        int b = std::min(9, static_cast<int>(p * 10.0));
        bin_p[b] += p;
        bin_w[b] += m.winner == Winner::team_a ? 1.0 : 0.0;
        bin_n[b] += 1.0;
    }
    for (int b = 0; b < 10; ++b) {
        if (bin_n[b] < 50) continue;
        double expect = bin_p[b] / bin_n[b];
        double got = bin_w[b] / bin_n[b];
        double se = std::sqrt(expect * (1.0 - expect) / bin_n[b]);
        CHECK(std::abs(got - expect) < 4.0 * se + 1e-9);
    }
}

TEST_CASE("run_world: empirical win rate increases across skill-gap deciles") {
    SyntheticConfig c = small_world();
    c.weights = {1.2, 0.0, 0.0, 0.0};
    c.noise_sd = 0.2;
    c.matches_per_mode = {{"2v2", 4000}};
    c.seed = 23;
    SyntheticWorld world = run_world(c);
    auto players = generate_players(c);
    std::map<std::string, const SimPlayer*> by_pid;
    for (const auto& p : players) by_pid[p.pid] = &p;

    auto skill = [&](const std::vector<PlayerObservation>& roster) {
        double s = 0.0;
        for (const auto& o : roster) {
            const SimPlayer* p = by_pid.at(o.pid);
            s += c.w_mech * (p->mu - c.mech.mean) / c.mech.sd + c.w_tact * p->s;
        }
        return s / static_cast<double>(roster.size());
    };

    std::vector<std::pair<double, int>> rows;  // (skill delta, team A won)
    for (const auto& m : world.log)
        rows.emplace_back(skill(m.team_a) - skill(m.team_b), m.winner == Winner::team_a ? 1 : 0);
    std::sort(rows.begin(), rows.end());
    const std::size_t per = rows.size() / 10;
    double first = 0.0, last = 0.0;
    std::vector<double> rates;
    for (int d = 0; d < 10; ++d) {
        double w = 0.0;
        for (std::size_t i = d * per; i < (d + 1) * per; ++i) w += rows[i].second;
        rates.push_back(w / static_cast<double>(per));
    }
    first = rates.front();
    last = rates.back();
    CHECK(first < 0.35);
    CHECK(last > 0.65);
    // broadly increasing: each decile above the one two steps back
    for (std::size_t d = 2; d < rates.size(); ++d) CHECK(rates[d] > rates[d - 2] - 0.03);
}

TEST_CASE("quasi-randomness: teammate theta is unrelated to own theta under pure matchmaking") {
    // One finite world carries a chance correlation between theta and ladder
    // position, so the audit runs several worlds: the mechanism is theta-blind
    // iff the slope of teammate theta on own theta is centered on zero.
    std::vector<double> slopes;
    for (std::uint64_t seed : {29ULL, 30ULL, 31ULL, 32ULL, 33ULL, 34ULL}) {
        SyntheticConfig c;
        c.n_players = 120;
        c.weights = {1.0, 0.0, 0.0, 0.0};  // theta never touches outcomes or ratings
        c.theta = {0.0, 1.0};
        c.matches_per_mode = {{"solo", 500}, {"2v2", 2500}};
        c.premade_frac = 0.0;  // pure ladder assignment
        c.seed = seed;
        SyntheticWorld world = run_world(c);
        auto players = generate_players(c);
        std::map<std::string, double> theta;
        for (const auto& p : players) theta[p.pid] = p.theta;

        std::vector<double> own, mate;
        double gap_sum = 0.0;
        std::size_t team_matches = 0;
        for (const auto& m : world.log) {
            if (m.is_solo()) continue;
            ++team_matches;
            double ra = 0, rb = 0;
            for (const auto& o : m.team_a) ra += *o.team_elo;
            for (const auto& o : m.team_b) rb += *o.team_elo;
            gap_sum += std::abs(ra - rb) / static_cast<double>(m.team_size());
            for (const auto* roster : {&m.team_a, &m.team_b}) {
                for (const auto& o : *roster) {
                    double mates = 0.0;
                    for (const auto& o2 : *roster)
                        if (o2.pid != o.pid) mates += theta.at(o2.pid);
                    own.push_back(theta.at(o.pid));
                    mate.push_back(mates / static_cast<double>(roster->size() - 1));
                }
            }
        }
        CHECK(gap_sum / static_cast<double>(team_matches) <= c.mm_tolerance);

        double mx = oracle::mean(own), my = oracle::mean(mate);
        double sxx = 0.0, sxy = 0.0;
        for (std::size_t i = 0; i < own.size(); ++i) {
            sxx += (own[i] - mx) * (own[i] - mx);
            sxy += (own[i] - mx) * (mate[i] - my);
        }
        slopes.push_back(sxy / sxx);
        CHECK(std::abs(slopes.back()) < 0.08);  // never a material association
    }
    double m = oracle::mean(slopes);
    double se = oracle::sample_sd(slopes) / std::sqrt(static_cast<double>(slopes.size()));
    CHECK(std::abs(m) < 2.0 * se + 1e-12);
}

TEST_CASE("solo ladder converges on the tactical trait") {
    SyntheticConfig c;
    c.n_players = 100;
    c.w_mech = 0.0;  // solo outcomes driven by the tactical trait alone
    c.w_tact = 1.0;
    c.noise_sd = 0.2;
    c.matches_per_mode = {{"solo", 10000}};  // 200 matches per player on average
    c.seed = 41;
    SyntheticWorld world = run_world(c);

    std::map<std::string, double> final_selo;
    for (const auto& m : world.log)
        for (const auto* roster : {&m.team_a, &m.team_b})
            for (const auto& o : *roster) final_selo[o.pid] = o.solo_elo;

    auto players = generate_players(c);
    std::vector<double> s_true, elo;
    for (const auto& p : players) {
        auto it = final_selo.find(p.pid);
        if (it == final_selo.end()) continue;
        s_true.push_back(p.s);
        elo.push_back(it->second);
    }
    CHECK(spearman(elo, s_true) > 0.8);
}

TEST_CASE("synthetic config JSON round trip") {
    SyntheticConfig c = small_world();
    c.weights = {0.9, 0.5, 0.25, 0.05};
    c.participation_skew = 2.5;
    SyntheticConfig back = SyntheticConfig::from_json_string(c.to_json_string());
    CHECK(back.n_players == c.n_players);
    CHECK(back.weights.theta == doctest::Approx(c.weights.theta));
    CHECK(back.weights.fam_theta == doctest::Approx(c.weights.fam_theta));
    CHECK(back.participation_skew == doctest::Approx(c.participation_skew));
    CHECK(back.matches_per_mode == c.matches_per_mode);
    CHECK(back.seed == c.seed);
}

TEST_CASE("synthetic config validation") {
    CHECK_THROWS_AS(SyntheticConfig::from_json_string(R"({"premade_frac": 1.5})"), DataError);
    CHECK_THROWS_AS(SyntheticConfig::from_json_string(R"({"theta": {"sd": -1}})"), DataError);
    CHECK_THROWS_AS(SyntheticConfig::from_json_string("{nope"), DataError);
}
