#include "ethos/simulator.hpp"

#include <algorithm>
#include <stdexcept>

#include "ethos/intervals.hpp"
#include "ethos/parallel.hpp"
#include "ethos/sampling.hpp"
#include "ethos/stats.hpp"

namespace ethos {

void StopSpec::validate() const {
    for (TokenId id : positive_tokens) {
        if (negative_tokens.count(id))
            throw std::invalid_argument("stop spec: positive and negative token sets overlap");
    }
    if (max_tokens < 1) throw std::invalid_argument("stop spec: max_tokens must be >= 1");
}

const char* to_string(TrajectoryStatus s) {
    switch (s) {
        case TrajectoryStatus::positive: return "positive";
        case TrajectoryStatus::negative: return "negative";
        case TrajectoryStatus::horizon: return "horizon";
        case TrajectoryStatus::ambiguous: return "ambiguous";
    }
    return "?";
}

std::vector<Seconds> interval_duration_table(const Vocabulary& vocab) {
    std::vector<Seconds> table(vocab.size(), 0.0);
    const auto& scale = IntervalScale::instance();
    for (TokenId id = 0; id < vocab.size(); ++id)
        table[id] = scale.representative_or_zero(vocab.token_of(id));
    return table;
}

Seconds simulated_clock(std::span<const TokenId> tokens, const Vocabulary& vocab) {
    const auto& scale = IntervalScale::instance();
    Seconds total = 0.0;
    for (TokenId id : tokens) total += scale.representative_or_zero(vocab.token_of(id));
    return total;
}

Trajectory generate_fpht(const TokenModel& model, std::span<const TokenId> context, const StopSpec& stop,
                         double top_p, Rng& rng, const std::vector<Seconds>& durations) {
    if (context.empty()) throw std::invalid_argument("empty context");
    stop.validate();
    if (durations.size() != model.vocab_size())
        throw std::invalid_argument("duration table size does not match the model vocabulary");

    Trajectory traj;
    auto session = model.make_session();
    const std::vector<float>* logits = &session->prime(context);

    Seconds clock = 0.0;
    for (size_t step = 0; step < stop.max_tokens; ++step) {
        const TokenId token = nucleus_sample(*logits, top_p, rng);
        traj.tokens.push_back(token);
        clock += durations[token];
        traj.elapsed.push_back(clock);

        if (stop.horizon && clock > *stop.horizon) {
            traj.status = TrajectoryStatus::horizon;
            return traj;
        }
        if (stop.positive_tokens.count(token)) {
            traj.status = TrajectoryStatus::positive;
            traj.event_time = clock;
            return traj;
        }
        if (stop.negative_tokens.count(token)) {
            traj.status = TrajectoryStatus::negative;
            return traj;
        }
        logits = &session->step(token);
    }
    traj.status = TrajectoryStatus::ambiguous;
    return traj;
}

OutcomeCounts run_monte_carlo(const TokenModel& model, std::span<const TokenId> context, const StopSpec& stop,
                              size_t n, double top_p, std::uint64_t seed, const Vocabulary& vocab,
                              unsigned threads) {
    if (n < 1) throw std::invalid_argument("monte carlo needs n >= 1");
    const std::vector<Seconds> durations = interval_duration_table(vocab);

    std::vector<TrajectoryStatus> status(n);
    std::vector<Seconds> times(n, 0.0);
    parallel_for(n, threads, [&](size_t i) {
        Rng rng(seed ^ static_cast<std::uint64_t>(i));
        const Trajectory traj = generate_fpht(model, context, stop, top_p, rng, durations);
        status[i] = traj.status;
        if (traj.event_time) times[i] = *traj.event_time;
    });

    OutcomeCounts counts;
    counts.n_total = n;
    for (size_t i = 0; i < n; ++i) {
        if (status[i] == TrajectoryStatus::ambiguous) {
            counts.discarded += 1;
            continue;
        }
        counts.n_valid += 1;
        if (status[i] == TrajectoryStatus::positive) {
            counts.m_positive += 1;
            counts.event_times.push_back(times[i]);
        }
    }
    if (counts.n_valid == 0) throw std::runtime_error("all repetitions ambiguous");
    return counts;
}

RiskEstimate estimate_probability(const OutcomeCounts& counts) {
    if (counts.n_valid < 1) throw std::invalid_argument("estimate needs at least one valid repetition");
    RiskEstimate est;
    est.n = counts.n_valid;
    est.m = counts.m_positive;
    est.p_hat = static_cast<double>(counts.m_positive) / static_cast<double>(counts.n_valid);
    const auto [lo, hi] = clopper_pearson(counts.m_positive, counts.n_valid);
    est.ci_low = lo;
    est.ci_high = hi;
    if (!counts.event_times.empty()) {
        std::vector<Seconds> sorted = counts.event_times;
        std::sort(sorted.begin(), sorted.end());
        Seconds sum = 0.0;
        for (Seconds t : sorted) sum += t;
        est.time_mean = sum / static_cast<double>(sorted.size());
        const size_t mid = sorted.size() / 2;
        est.time_median = sorted.size() % 2 == 1 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
    }
    return est;
}

}  // namespace ethos
