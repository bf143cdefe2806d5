#pragma once

#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "ethos/model.hpp"
#include "ethos/time.hpp"
#include "ethos/vocabulary.hpp"

namespace ethos {

// Stopping condition for one simulated future timeline.
struct StopSpec {
    std::set<TokenId> positive_tokens;  // emission marks the event
    std::set<TokenId> negative_tokens;  // emission ends the trajectory as a non-event
    std::optional<Seconds> horizon;     // simulated-time limit (strict >)
    size_t max_tokens = 4096;           // hard generation cap

    void validate() const;
};

enum class TrajectoryStatus { positive, negative, horizon, ambiguous };

const char* to_string(TrajectoryStatus s);

// One generated future timeline with its simulated clock.
struct Trajectory {
    std::vector<TokenId> tokens;
    std::vector<Seconds> elapsed;  // cumulative simulated time after each token
    TrajectoryStatus status = TrajectoryStatus::ambiguous;
    std::optional<Seconds> event_time;  // simulated time of the positive token
};

// Simulated elapsed time: the sum of interval-token representative
// durations; other tokens contribute nothing.
Seconds simulated_clock(std::span<const TokenId> tokens, const Vocabulary& vocab);

// Per-token second contributions, precomputed once per vocabulary.
std::vector<Seconds> interval_duration_table(const Vocabulary& vocab);

// Generates tokens until a positive token, a negative token, the simulated
// clock passes the horizon, or max_tokens is hit (ambiguous). Deterministic
// given the rng. Contexts longer than the model window keep their most
// recent tokens.
Trajectory generate_fpht(const TokenModel& model, std::span<const TokenId> context, const StopSpec& stop,
                         double top_p, Rng& rng, const std::vector<Seconds>& durations);

struct OutcomeCounts {
    size_t n_total = 0;
    size_t n_valid = 0;      // non-ambiguous
    size_t m_positive = 0;
    size_t discarded = 0;    // ambiguous repetitions
    std::vector<Seconds> event_times;  // per positive trajectory
};

// N independent trajectories with derived per-trajectory seeds (seed xor i);
// ambiguous repetitions are discarded from the denominator. Identical for
// any thread count.
OutcomeCounts run_monte_carlo(const TokenModel& model, std::span<const TokenId> context, const StopSpec& stop,
                              size_t n, double top_p, std::uint64_t seed, const Vocabulary& vocab,
                              unsigned threads = 1);

struct RiskEstimate {
    double p_hat = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    size_t n = 0;
    size_t m = 0;
    std::optional<Seconds> time_mean;
    std::optional<Seconds> time_median;
};

// M/N with an exact binomial (Clopper-Pearson) 95% interval and timing
// aggregated over positive trajectories.
RiskEstimate estimate_probability(const OutcomeCounts& counts);

}  // namespace ethos
