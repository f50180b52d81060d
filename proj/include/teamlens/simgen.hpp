#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "teamlens/match_data.hpp"

namespace teamlens {

struct TraitDist {
    double mean = 0.0;
    double sd = 1.0;
};

// P(A wins) = sigma(a * d_skill + b * d_theta + c * d_famtheta + d * d_fam + eps)
struct OutcomeWeights {
    double skill = 1.0;      // a
    double theta = 0.0;      // b
    double fam_theta = 0.0;  // c
    double fam = 0.0;        // d
};

struct SyntheticConfig {
    std::size_t n_players = 200;
    TraitDist mech{40.0, 8.0};   // mu: expected actions per minute
    TraitDist tact{0.0, 1.0};    // s: tactical skill
    TraitDist theta{0.0, 1.0};   // latent team-player trait
    double w_mech = 0.3;         // mechanical share of the skill index
    double w_tact = 0.7;
    OutcomeWeights weights{1.0, 0.6, 0.0, 0.0};
    double noise_sd = 0.3;
    double premade_frac = 0.4;   // share of players holding a premade partner
    double premade_prob = 0.8;   // chance the partner joins a queue entry
    std::map<std::string, std::size_t> matches_per_mode{{"solo", 4000}, {"2v2", 4000}};
    std::size_t map_pool = 5;
    std::size_t civ_pool = 8;
    double elo_k = 32.0;
    double elo_scale = 400.0;
    double elo_base = 1000.0;
    double mm_tolerance = 150.0;
    std::size_t pool_size = 40;
    bool queue_by_solo_elo = false;  // team queues rate entries by solo Elo instead
    double duration_mean = 30.0;
    double duration_sd = 8.0;
    double eapm_noise = 6.0;          // per-minute sd of the action draw
    double participation_skew = 0.0;  // >0 makes match counts heterogeneous
    double casual_frac = 0.0;         // share of players queueing far less often
    double casual_weight = 1.0;       // queue-weight multiplier for that share
    std::uint64_t seed = 1;

    std::string to_json_string() const;
    static SyntheticConfig from_json_string(const std::string& text);
    static SyntheticConfig load(const std::string& path);
};

struct PlayerTruth {
    std::string pid;
    double mu = 0.0;
    double s = 0.0;
    double theta = 0.0;
};

struct SimPlayer {
    std::uint32_t idx = 0;
    std::string pid;
    double mu = 0.0;
    double s = 0.0;
    double theta = 0.0;
    double solo_elo = 0.0;
    double team_elo = 0.0;
    int premade_partner = -1;
    double queue_weight = 1.0;
};

// i.i.d. trait draws; deterministic in the config seed.
std::vector<SimPlayer> generate_players(const SyntheticConfig& config);

struct QueueEntry {
    std::vector<std::uint32_t> members;  // premade groups stay atomic
    double rating = 0.0;                 // mean team Elo of the entry
};

struct MatchmakeResult {
    std::vector<std::uint32_t> team_a;
    std::vector<std::uint32_t> team_b;
    double elo_gap = 0.0;
};

// Greedy Elo-balanced assembly of two rosters of team_size players from the
// queue; returns nothing when no pairing falls within tolerance.
std::optional<MatchmakeResult> matchmake(const std::vector<QueueEntry>& queue, int team_size,
                                         double tolerance);

double win_probability(const OutcomeWeights& w, double d_skill, double d_theta,
                       double d_fam_theta, double d_fam, double eps);

double elo_expected(double rating_a, double rating_b, double scale);
// Standard Elo update for one side; score_a is 1 on win, 0 on loss.
double elo_delta(double rating_a, double rating_b, int score_a, double k, double scale);

struct SyntheticWorld {
    std::vector<MatchRecord> log;  // chronological, ingestion schema
    std::vector<PlayerTruth> players;
    std::vector<std::pair<std::string, double>> true_p;  // (match_id, P(A wins))
};

// Solo phase first (populates solo Elo and eAPM history), then team phases.
SyntheticWorld run_world(const SyntheticConfig& config);

// players.csv (player_id,mu,s,theta) and true_p.csv (match_id,true_p)
void write_truth(const std::string& dir, const SyntheticWorld& world);

}  // namespace teamlens
