#include "teamlens/simgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "teamlens/errors.hpp"
#include "teamlens/features.hpp"
#include "teamlens/glm.hpp"
#include "teamlens/rng.hpp"

namespace teamlens {

using nlohmann::json;

namespace {

// rng stream ids
constexpr std::uint64_t kStreamTraits = 1;
constexpr std::uint64_t kStreamPremade = 2;
constexpr std::uint64_t kStreamMatchBase = 1000;

constexpr long long kEpochBase = 1'600'000'000;
constexpr long long kTsSpacing = 60;

}  // namespace

std::string SyntheticConfig::to_json_string() const {
    json j;
    j["n_players"] = n_players;
    j["mech"] = {{"mean", mech.mean}, {"sd", mech.sd}};
    j["tact"] = {{"mean", tact.mean}, {"sd", tact.sd}};
    j["theta"] = {{"mean", theta.mean}, {"sd", theta.sd}};
    j["w_mech"] = w_mech;
    j["w_tact"] = w_tact;
    j["weights"] = {{"skill", weights.skill},
                    {"theta", weights.theta},
                    {"fam_theta", weights.fam_theta},
                    {"fam", weights.fam}};
    j["noise_sd"] = noise_sd;
    j["premade_frac"] = premade_frac;
    j["premade_prob"] = premade_prob;
    j["matches_per_mode"] = matches_per_mode;
    j["map_pool"] = map_pool;
    j["civ_pool"] = civ_pool;
    j["elo_k"] = elo_k;
    j["elo_scale"] = elo_scale;
    j["elo_base"] = elo_base;
    j["mm_tolerance"] = mm_tolerance;
    j["pool_size"] = pool_size;
    j["queue_by_solo_elo"] = queue_by_solo_elo;
    j["duration_mean"] = duration_mean;
    j["duration_sd"] = duration_sd;
    j["eapm_noise"] = eapm_noise;
    j["participation_skew"] = participation_skew;
    j["casual_frac"] = casual_frac;
    j["casual_weight"] = casual_weight;
    j["seed"] = seed;
    return j.dump(2);
}

SyntheticConfig SyntheticConfig::from_json_string(const std::string& text) {
    SyntheticConfig c;
    json j;
    try {
        j = json::parse(text);
        c.n_players = j.value("n_players", c.n_players);
        if (j.contains("mech")) c.mech = {j["mech"].value("mean", 40.0), j["mech"].value("sd", 8.0)};
        if (j.contains("tact")) c.tact = {j["tact"].value("mean", 0.0), j["tact"].value("sd", 1.0)};
        if (j.contains("theta"))
            c.theta = {j["theta"].value("mean", 0.0), j["theta"].value("sd", 1.0)};
        c.w_mech = j.value("w_mech", c.w_mech);
        c.w_tact = j.value("w_tact", c.w_tact);
        if (j.contains("weights")) {
            c.weights.skill = j["weights"].value("skill", c.weights.skill);
            c.weights.theta = j["weights"].value("theta", c.weights.theta);
            c.weights.fam_theta = j["weights"].value("fam_theta", c.weights.fam_theta);
            c.weights.fam = j["weights"].value("fam", c.weights.fam);
        }
        c.noise_sd = j.value("noise_sd", c.noise_sd);
        c.premade_frac = j.value("premade_frac", c.premade_frac);
        c.premade_prob = j.value("premade_prob", c.premade_prob);
        if (j.contains("matches_per_mode"))
            c.matches_per_mode =
                j["matches_per_mode"].get<std::map<std::string, std::size_t>>();
        c.map_pool = j.value("map_pool", c.map_pool);
        c.civ_pool = j.value("civ_pool", c.civ_pool);
        c.elo_k = j.value("elo_k", c.elo_k);
        c.elo_scale = j.value("elo_scale", c.elo_scale);
        c.elo_base = j.value("elo_base", c.elo_base);
        c.mm_tolerance = j.value("mm_tolerance", c.mm_tolerance);
        c.pool_size = j.value("pool_size", c.pool_size);
        c.queue_by_solo_elo = j.value("queue_by_solo_elo", c.queue_by_solo_elo);
        c.duration_mean = j.value("duration_mean", c.duration_mean);
        c.duration_sd = j.value("duration_sd", c.duration_sd);
        c.eapm_noise = j.value("eapm_noise", c.eapm_noise);
        c.participation_skew = j.value("participation_skew", c.participation_skew);
        c.casual_frac = j.value("casual_frac", c.casual_frac);
        c.casual_weight = j.value("casual_weight", c.casual_weight);
        c.seed = j.value("seed", c.seed);
    } catch (const json::exception& e) {
        throw DataError(std::string("bad synthetic config: ") + e.what());
    }
    if (c.mech.sd < 0 || c.tact.sd < 0 || c.theta.sd < 0)
        throw DataError("synthetic config: trait sds must be >= 0");
    if (c.premade_frac < 0 || c.premade_frac > 1 || c.premade_prob < 0 || c.premade_prob > 1)
        throw DataError("synthetic config: probabilities must lie in [0,1]");
    return c;
}

SyntheticConfig SyntheticConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json_string(ss.str());
}

std::vector<SimPlayer> generate_players(const SyntheticConfig& config) {
    int max_size = 1;
    for (const auto& [mode, n] : config.matches_per_mode)
        if (n > 0) max_size = std::max(max_size, mode_team_size(mode_from_string(mode)));
    if (config.n_players < static_cast<std::size_t>(2 * max_size))
        throw DataError("generate_players: need at least " + std::to_string(2 * max_size) +
                        " players for the requested modes");

    CounterRng rng(config.seed, kStreamTraits);
    std::vector<SimPlayer> players(config.n_players);
    char buf[32];
    for (std::size_t i = 0; i < config.n_players; ++i) {
        SimPlayer& p = players[i];
        p.idx = static_cast<std::uint32_t>(i);
        std::snprintf(buf, sizeof buf, "p%06zu", i);
        p.pid = buf;
        p.mu = rng.next_normal(config.mech.mean, config.mech.sd);
        p.s = rng.next_normal(config.tact.mean, config.tact.sd);
        p.theta = rng.next_normal(config.theta.mean, config.theta.sd);
        p.solo_elo = config.elo_base;
        p.team_elo = config.elo_base;
        p.queue_weight = config.participation_skew > 0.0
                             ? std::exp(config.participation_skew * rng.next_unit())
                             : 1.0;
        if (config.casual_frac > 0.0 && rng.next_unit() < config.casual_frac)
            p.queue_weight *= config.casual_weight;
    }

    // premade partners: pair up a random premade_frac slice of the population
    CounterRng prng(config.seed, kStreamPremade);
    std::vector<std::uint32_t> order(config.n_players);
    std::iota(order.begin(), order.end(), 0u);
    prng.shuffle(order);
    std::size_t n_premade = static_cast<std::size_t>(
        std::floor(config.premade_frac * static_cast<double>(config.n_players)));
    n_premade -= n_premade % 2;
    for (std::size_t i = 0; i + 1 < n_premade; i += 2) {
        players[order[i]].premade_partner = static_cast<int>(order[i + 1]);
        players[order[i + 1]].premade_partner = static_cast<int>(order[i]);
    }
    return players;
}

std::optional<MatchmakeResult> matchmake(const std::vector<QueueEntry>& queue, int team_size,
                                         double tolerance) {
    const std::size_t want = static_cast<std::size_t>(2 * team_size);
    std::vector<std::size_t> order(queue.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return queue[a].rating < queue[b].rating;
    });

    std::optional<MatchmakeResult> best;
    for (std::size_t start = 0; start < order.size(); ++start) {
        // greedy window: walk up the rating ladder collecting entries that fit
        std::vector<std::size_t> picked;
        std::size_t total = 0;
        for (std::size_t i = start; i < order.size() && total < want; ++i) {
            std::size_t sz = queue[order[i]].members.size();
            if (total + sz <= want) {
                picked.push_back(order[i]);
                total += sz;
            }
        }
        if (total != want) continue;

        // partition picked entries into two sides, premade entries atomic
        std::vector<std::size_t> by_size = picked;
        std::stable_sort(by_size.begin(), by_size.end(), [&](std::size_t a, std::size_t b) {
            if (queue[a].members.size() != queue[b].members.size())
                return queue[a].members.size() > queue[b].members.size();
            return queue[a].rating > queue[b].rating;
        });
        std::vector<std::uint32_t> team_a, team_b;
        double sum_a = 0.0, sum_b = 0.0;
        bool feasible = true;
        for (std::size_t e : by_size) {
            std::size_t sz = queue[e].members.size();
            bool fits_a = team_a.size() + sz <= static_cast<std::size_t>(team_size);
            bool fits_b = team_b.size() + sz <= static_cast<std::size_t>(team_size);
            bool to_a;
            if (fits_a && fits_b)
                to_a = sum_a <= sum_b;
            else if (fits_a)
                to_a = true;
            else if (fits_b)
                to_a = false;
            else {
                feasible = false;
                break;
            }
            for (std::uint32_t m : queue[e].members) {
                (to_a ? team_a : team_b).push_back(m);
            }
            (to_a ? sum_a : sum_b) += queue[e].rating * static_cast<double>(sz);
        }
        if (!feasible) continue;

        double gap = std::abs(sum_a - sum_b) / static_cast<double>(team_size);
        if (!best || gap < best->elo_gap) {
            best = MatchmakeResult{std::move(team_a), std::move(team_b), gap};
            if (best->elo_gap == 0.0) break;
        }
    }
    if (best && best->elo_gap <= tolerance) return best;
    return std::nullopt;
}

double win_probability(const OutcomeWeights& w, double d_skill, double d_theta,
                       double d_fam_theta, double d_fam, double eps) {
    return sigmoid(w.skill * d_skill + w.theta * d_theta + w.fam_theta * d_fam_theta +
                   w.fam * d_fam + eps);
}

double elo_expected(double rating_a, double rating_b, double scale) {
    return 1.0 / (1.0 + std::pow(10.0, (rating_b - rating_a) / scale));
}

double elo_delta(double rating_a, double rating_b, int score_a, double k, double scale) {
    return k * (static_cast<double>(score_a) - elo_expected(rating_a, rating_b, scale));
}

namespace {

struct WorldState {
    std::vector<SimPlayer> players;
    std::unordered_map<std::uint64_t, long long> pair_counts;

    long long pair_count(std::uint32_t a, std::uint32_t b) const {
        std::uint64_t key = a < b ? (static_cast<std::uint64_t>(a) << 32) | b
                                  : (static_cast<std::uint64_t>(b) << 32) | a;
        auto it = pair_counts.find(key);
        return it == pair_counts.end() ? 0 : it->second;
    }

    void bump_pairs(const std::vector<std::uint32_t>& roster) {
        for (std::size_t i = 0; i < roster.size(); ++i)
            for (std::size_t j = i + 1; j < roster.size(); ++j) {
                std::uint32_t a = roster[i], b = roster[j];
                std::uint64_t key = a < b ? (static_cast<std::uint64_t>(a) << 32) | b
                                          : (static_cast<std::uint64_t>(b) << 32) | a;
                pair_counts[key] += 1;
            }
    }

    double team_tfam(const std::vector<std::uint32_t>& roster) const {
        if (roster.size() < 2) return 0.0;
        std::vector<std::vector<long long>> pairs(roster.size(),
                                                  std::vector<long long>(roster.size(), 0));
        for (std::size_t i = 0; i < roster.size(); ++i)
            for (std::size_t j = 0; j < roster.size(); ++j)
                if (i != j) pairs[i][j] = pair_count(roster[i], roster[j]);
        return team_familiarity(pairs);
    }
};

// Cumulative queue weights; rebuilt once per phase (weights are static).
struct QueueSampler {
    std::vector<double> prefix;

    explicit QueueSampler(const std::vector<SimPlayer>& players) {
        prefix.reserve(players.size());
        double acc = 0.0;
        for (const auto& p : players) {
            acc += p.queue_weight;
            prefix.push_back(acc);
        }
    }

    std::vector<std::uint32_t> sample(std::size_t size, CounterRng& rng) const {
        std::vector<std::uint32_t> pool;
        std::vector<char> used(prefix.size(), 0);
        std::size_t attempts = 0;
        const std::size_t max_attempts = 50 * size + 200;
        const double total = prefix.back();
        while (pool.size() < size && attempts++ < max_attempts) {
            double target = rng.next_unit() * total;
            auto it = std::upper_bound(prefix.begin(), prefix.end(), target);
            std::size_t pick = std::min<std::size_t>(it - prefix.begin(), prefix.size() - 1);
            if (!used[pick]) {
                used[pick] = 1;
                pool.push_back(static_cast<std::uint32_t>(pick));
            }
        }
        return pool;
    }
};

std::vector<QueueEntry> build_queue(const std::vector<SimPlayer>& players,
                                    const std::vector<std::uint32_t>& pool, bool team_phase,
                                    bool rate_by_team_elo, double premade_prob, CounterRng& rng) {
    std::vector<QueueEntry> queue;
    std::vector<char> consumed(players.size(), 0);
    for (std::uint32_t id : pool) {
        if (consumed[id]) continue;
        const SimPlayer& p = players[id];
        QueueEntry entry;
        if (team_phase && p.premade_partner >= 0 &&
            !consumed[static_cast<std::size_t>(p.premade_partner)] &&
            rng.next_unit() < premade_prob) {
            entry.members = {id, static_cast<std::uint32_t>(p.premade_partner)};
            consumed[static_cast<std::size_t>(p.premade_partner)] = 1;
        } else {
            entry.members = {id};
        }
        consumed[id] = 1;
        double sum = 0.0;
        for (std::uint32_t m : entry.members)
            sum += rate_by_team_elo ? players[m].team_elo : players[m].solo_elo;
        entry.rating = sum / static_cast<double>(entry.members.size());
        queue.push_back(std::move(entry));
    }
    return queue;
}

std::vector<Position> position_template(int team_size) {
    switch (team_size) {
        case 2: return {Position::flank, Position::flank};
        case 3: return {Position::flank, Position::pocket, Position::flank};
        case 4: return {Position::flank, Position::pocket, Position::pocket, Position::flank};
        default: return {Position::none};
    }
}

}  // namespace

SyntheticWorld run_world(const SyntheticConfig& config) {
    SyntheticWorld world;
    WorldState state;
    state.players = generate_players(config);
    world.players.reserve(state.players.size());
    for (const auto& p : state.players) world.players.push_back({p.pid, p.mu, p.s, p.theta});

    auto skill_index = [&](const SimPlayer& p) {
        double z_mu = config.mech.sd > 0 ? (p.mu - config.mech.mean) / config.mech.sd : 0.0;
        double z_s = config.tact.sd > 0 ? (p.s - config.tact.mean) / config.tact.sd : 0.0;
        return config.w_mech * z_mu + config.w_tact * z_s;
    };

    long long ordinal = 0;
    char idbuf[32];

    const QueueSampler sampler(state.players);

    auto play_phase = [&](Mode mode, std::size_t target) {
        const int size = mode_team_size(mode);
        const bool team_phase = mode != Mode::solo;
        std::size_t emitted = 0;
        std::size_t attempts = 0;
        const std::size_t max_attempts = 4 * target + 64;
        while (emitted < target && attempts < max_attempts) {
            ++attempts;
            CounterRng rng(config.seed,
                           kStreamMatchBase + static_cast<std::uint64_t>(ordinal) * 4 + attempts % 4);
            std::vector<std::uint32_t> pool =
                sampler.sample(std::min(config.pool_size, state.players.size()), rng);
            std::vector<QueueEntry> queue =
                build_queue(state.players, pool, team_phase,
                            team_phase && !config.queue_by_solo_elo, config.premade_prob, rng);
            auto made = matchmake(queue, size, config.mm_tolerance);
            if (!made) continue;

            // outcome model
            auto roster_means = [&](const std::vector<std::uint32_t>& roster) {
                double sk = 0.0, th = 0.0;
                for (std::uint32_t id : roster) {
                    sk += skill_index(state.players[id]);
                    th += state.players[id].theta;
                }
                double n = static_cast<double>(roster.size());
                return std::pair<double, double>{sk / n, th / n};
            };
            auto [skill_a, theta_a] = roster_means(made->team_a);
            auto [skill_b, theta_b] = roster_means(made->team_b);
            double tfam_a = state.team_tfam(made->team_a);
            double tfam_b = state.team_tfam(made->team_b);

            double eps = rng.next_normal(0.0, config.noise_sd);
            double p_a;
            if (team_phase) {
                p_a = win_probability(config.weights, skill_a - skill_b, theta_a - theta_b,
                                      tfam_a * theta_a - tfam_b * theta_b, tfam_a - tfam_b, eps);
            } else {
                // solo outcomes carry no teamwork terms: theta is a team trait
                p_a = win_probability(config.weights, skill_a - skill_b, 0.0, 0.0, 0.0, eps);
            }
            bool a_wins = rng.next_unit() < p_a;

            double duration =
                std::clamp(rng.next_normal(config.duration_mean, config.duration_sd), 8.0, 120.0);

            MatchRecord rec;
            std::snprintf(idbuf, sizeof idbuf, "m%08lld", ordinal);
            rec.match_id = idbuf;
            rec.ts = kEpochBase + ordinal * kTsSpacing;
            rec.mode = mode;
            rec.map = "map" + std::to_string(rng.uniform_below(config.map_pool));
            rec.duration_min = std::round(duration * 10.0) / 10.0;
            rec.winner = a_wins ? Winner::team_a : Winner::team_b;

            std::vector<Position> positions = position_template(size);
            auto emit_roster = [&](const std::vector<std::uint32_t>& roster) {
                std::vector<Position> pos = positions;
                rng.shuffle(pos);
                std::vector<PlayerObservation> out;
                for (std::size_t i = 0; i < roster.size(); ++i) {
                    const SimPlayer& p = state.players[roster[i]];
                    PlayerObservation obs;
                    obs.pid = p.pid;
                    obs.solo_elo = p.solo_elo;
                    obs.team_elo = p.team_elo;
                    double actions =
                        rng.next_normal(p.mu * duration, config.eapm_noise * duration);
                    obs.actions = std::max(0LL, static_cast<long long>(std::llround(actions)));
                    obs.pos = team_phase ? pos[i] : Position::none;
                    obs.civ = "civ" + std::to_string(rng.uniform_below(config.civ_pool));
                    out.push_back(std::move(obs));
                }
                return out;
            };
            rec.team_a = emit_roster(made->team_a);
            rec.team_b = emit_roster(made->team_b);

            // ratings update after observations were recorded
            if (team_phase) {
                double mean_a = 0.0, mean_b = 0.0;
                for (std::uint32_t id : made->team_a) mean_a += state.players[id].team_elo;
                for (std::uint32_t id : made->team_b) mean_b += state.players[id].team_elo;
                mean_a /= static_cast<double>(size);
                mean_b /= static_cast<double>(size);
                double delta_a =
                    elo_delta(mean_a, mean_b, a_wins ? 1 : 0, config.elo_k, config.elo_scale);
                double delta_b =
                    elo_delta(mean_b, mean_a, a_wins ? 0 : 1, config.elo_k, config.elo_scale);
                for (std::uint32_t id : made->team_a) state.players[id].team_elo += delta_a;
                for (std::uint32_t id : made->team_b) state.players[id].team_elo += delta_b;
                state.bump_pairs(made->team_a);
                state.bump_pairs(made->team_b);
            } else {
                SimPlayer& pa = state.players[made->team_a[0]];
                SimPlayer& pb = state.players[made->team_b[0]];
                double da =
                    elo_delta(pa.solo_elo, pb.solo_elo, a_wins ? 1 : 0, config.elo_k,
                              config.elo_scale);
                double db =
                    elo_delta(pb.solo_elo, pa.solo_elo, a_wins ? 0 : 1, config.elo_k,
                              config.elo_scale);
                pa.solo_elo += da;
                pb.solo_elo += db;
            }

            world.true_p.emplace_back(rec.match_id, p_a);
            world.log.push_back(std::move(rec));
            ++ordinal;
            ++emitted;
        }
    };

    auto solo_it = config.matches_per_mode.find("solo");
    if (solo_it != config.matches_per_mode.end() && solo_it->second > 0)
        play_phase(Mode::solo, solo_it->second);
    for (const char* mode : {"2v2", "3v3", "4v4"}) {
        auto it = config.matches_per_mode.find(mode);
        if (it != config.matches_per_mode.end() && it->second > 0)
            play_phase(mode_from_string(mode), it->second);
    }
    return world;
}

void write_truth(const std::string& dir, const SyntheticWorld& world) {
    std::filesystem::create_directories(dir);
    char buf[64];
    auto fmt = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
    };
    {
        std::ofstream out(dir + "/players.csv");
        if (!out) throw DataError("cannot open " + dir + "/players.csv");
        out << "player_id,mu,s,theta\n";
        for (const auto& p : world.players)
            out << p.pid << ',' << fmt(p.mu) << ',' << fmt(p.s) << ',' << fmt(p.theta) << '\n';
    }
    {
        std::ofstream out(dir + "/true_p.csv");
        if (!out) throw DataError("cannot open " + dir + "/true_p.csv");
        out << "match_id,true_p\n";
        for (const auto& [mid, p] : world.true_p) out << mid << ',' << fmt(p) << '\n';
    }
}

}  // namespace teamlens
