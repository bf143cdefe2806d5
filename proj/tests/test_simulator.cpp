#include <doctest.h>

#include <cmath>

#include "ethos/intervals.hpp"
#include "ethos/simulator.hpp"
#include "rigged_models.hpp"

using namespace ethos;
using ethos::testing::FunctionModel;
using ethos::testing::fixed_distribution_model;

namespace {

// Vocabulary for rigged simulations. Ids follow sorted token order, so
// distributions are always built through id_of.
Vocabulary rigged_vocab() {
    return Vocabulary({"CTX", "MEDS_DEATH", "HOSPITAL_DISCHARGE", "1d-2d"});
}

StopSpec death_vs_discharge_stop(const Vocabulary& vocab) {
    StopSpec stop;
    stop.positive_tokens = {*vocab.id_of("MEDS_DEATH")};
    stop.negative_tokens = {*vocab.id_of("HOSPITAL_DISCHARGE")};
    return stop;
}

// weights: token string -> probability; everything else gets zero.
FunctionModel token_distribution(const Vocabulary& vocab,
                                 const std::vector<std::pair<std::string, double>>& weights) {
    std::vector<double> probs(vocab.size(), 0.0);
    for (const auto& [token, p] : weights) probs[*vocab.id_of(token)] = p;
    return fixed_distribution_model(probs);
}

}  // namespace

TEST_CASE("the simulated clock sums representative interval durations") {
    const Vocabulary vocab = rigged_vocab();
    const TokenId interval = *vocab.id_of("1d-2d");
    const TokenId marker = *vocab.id_of("MEDS_DEATH");

    CHECK(simulated_clock(std::vector<TokenId>{}, vocab) == 0.0);
    CHECK(simulated_clock(std::vector<TokenId>{marker}, vocab) == 0.0);

    const Seconds rep = IntervalScale::instance().bin("1d-2d").representative;
    CHECK(simulated_clock(std::vector<TokenId>{interval}, vocab) == doctest::Approx(rep));
    CHECK(simulated_clock(std::vector<TokenId>{interval, marker, interval}, vocab) ==
          doctest::Approx(2 * rep));
}

TEST_CASE("a model that always emits the event stops positive after one token") {
    const Vocabulary vocab = rigged_vocab();
    const auto model = token_distribution(vocab, {{"MEDS_DEATH", 1.0}});
    const auto durations = interval_duration_table(vocab);
    Rng rng(1);
    const std::vector<TokenId> context{*vocab.id_of("CTX")};
    const auto traj = generate_fpht(model, context, death_vs_discharge_stop(vocab), 1.0, rng, durations);
    CHECK(traj.status == TrajectoryStatus::positive);
    CHECK(traj.tokens.size() == 1);
    CHECK(traj.event_time == 0.0);
}

TEST_CASE("a zero horizon stops at the first interval token") {
    const Vocabulary vocab = rigged_vocab();
    const auto model = token_distribution(vocab, {{"1d-2d", 1.0}});  // always the interval
    const auto durations = interval_duration_table(vocab);
    StopSpec stop = death_vs_discharge_stop(vocab);
    stop.horizon = 0.0;
    Rng rng(2);
    const std::vector<TokenId> context{*vocab.id_of("CTX")};
    const auto traj = generate_fpht(model, context, stop, 1.0, rng, durations);
    CHECK(traj.status == TrajectoryStatus::horizon);
    CHECK(traj.tokens.size() == 1);
}

TEST_CASE("hitting max_tokens without a terminal token is ambiguous") {
    const Vocabulary vocab = rigged_vocab();
    const auto model = token_distribution(vocab, {{"CTX", 1.0}});  // chatter, never terminal
    const auto durations = interval_duration_table(vocab);
    StopSpec stop = death_vs_discharge_stop(vocab);
    stop.max_tokens = 1;
    Rng rng(3);
    const std::vector<TokenId> context{*vocab.id_of("CTX")};
    const auto traj = generate_fpht(model, context, stop, 1.0, rng, durations);
    CHECK(traj.status == TrajectoryStatus::ambiguous);
}

TEST_CASE("empty contexts are rejected") {
    const Vocabulary vocab = rigged_vocab();
    const auto model = token_distribution(vocab, {{"CTX", 1.0}});
    const auto durations = interval_duration_table(vocab);
    Rng rng(4);
    CHECK_THROWS(generate_fpht(model, std::vector<TokenId>{}, death_vs_discharge_stop(vocab), 1.0, rng,
                               durations));
}

TEST_CASE("overlapping positive and negative sets are rejected") {
    StopSpec stop;
    stop.positive_tokens = {1};
    stop.negative_tokens = {1};
    CHECK_THROWS(stop.validate());
}

TEST_CASE("a deterministic death model counts all positives with none discarded") {
    const Vocabulary vocab = rigged_vocab();
    const auto model = token_distribution(vocab, {{"MEDS_DEATH", 1.0}});
    const std::vector<TokenId> context{*vocab.id_of("CTX")};
    const auto counts = run_monte_carlo(model, context, death_vs_discharge_stop(vocab), 100, 1.0, 5, vocab);
    CHECK(counts.m_positive == 100);
    CHECK(counts.n_valid == 100);
    CHECK(counts.discarded == 0);
}

TEST_CASE("a fair coin model lands in the central binomial band") {
    const Vocabulary vocab = rigged_vocab();
    const auto model = token_distribution(vocab, {{"MEDS_DEATH", 0.5}, {"HOSPITAL_DISCHARGE", 0.5}});
    const std::vector<TokenId> context{*vocab.id_of("CTX")};
    const auto counts = run_monte_carlo(model, context, death_vs_discharge_stop(vocab), 100, 1.0, 6, vocab);
    // central 99.7% band of Binomial(100, 0.5)
    CHECK(counts.m_positive >= 36);
    CHECK(counts.m_positive <= 64);
}

TEST_CASE("monte carlo is deterministic given the seed and parallel-safe") {
    const Vocabulary vocab = rigged_vocab();
    const auto model = token_distribution(vocab, {{"MEDS_DEATH", 0.3}, {"HOSPITAL_DISCHARGE", 0.7}});
    const std::vector<TokenId> context{*vocab.id_of("CTX")};
    const auto stop = death_vs_discharge_stop(vocab);
    const auto a = run_monte_carlo(model, context, stop, 200, 1.0, 7, vocab, 1);
    const auto b = run_monte_carlo(model, context, stop, 200, 1.0, 7, vocab, 8);
    CHECK(a.m_positive == b.m_positive);
    CHECK(a.n_valid == b.n_valid);
    CHECK(a.event_times == b.event_times);
}

TEST_CASE("all-ambiguous runs are an error") {
    const Vocabulary vocab = rigged_vocab();
    const auto model = token_distribution(vocab, {{"CTX", 1.0}});
    const std::vector<TokenId> context{*vocab.id_of("CTX")};
    StopSpec stop = death_vs_discharge_stop(vocab);
    stop.max_tokens = 2;
    CHECK_THROWS_WITH((void)run_monte_carlo(model, context, stop, 10, 1.0, 9, vocab),
                      doctest::Contains("ambiguous"));
}

TEST_CASE("estimate_probability is M over N with exact binomial bounds") {
    OutcomeCounts counts;
    counts.n_total = 100;
    counts.n_valid = 100;
    counts.m_positive = 25;
    const auto est = estimate_probability(counts);
    CHECK(est.p_hat == doctest::Approx(0.25));
    CHECK(est.ci_low < 0.25);
    CHECK(est.ci_high > 0.25);
}

TEST_CASE("zero successes match the closed-form upper bound") {
    OutcomeCounts counts;
    counts.n_total = 100;
    counts.n_valid = 100;
    counts.m_positive = 0;
    const auto est = estimate_probability(counts);
    CHECK(est.p_hat == 0.0);
    CHECK(est.ci_low == 0.0);
    const double expected = 1.0 - std::exp(std::log(0.025) / 100.0);  // 1 - 0.025^(1/100)
    CHECK(est.ci_high == doctest::Approx(expected).epsilon(1e-9));
    CHECK(est.ci_high == doctest::Approx(0.0362).epsilon(1e-2));
}

TEST_CASE("all successes mirror the zero-success bound") {
    OutcomeCounts counts;
    counts.n_total = 100;
    counts.n_valid = 100;
    counts.m_positive = 100;
    const auto est = estimate_probability(counts);
    CHECK(est.p_hat == 1.0);
    CHECK(est.ci_high == 1.0);
    const double expected = std::exp(std::log(0.025) / 100.0);
    CHECK(est.ci_low == doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("timing statistics aggregate over positive trajectories") {
    OutcomeCounts counts;
    counts.n_total = 4;
    counts.n_valid = 4;
    counts.m_positive = 3;
    counts.event_times = {3.0, 1.0, 2.0};
    const auto est = estimate_probability(counts);
    CHECK(est.time_mean == doctest::Approx(2.0));
    CHECK(est.time_median == doctest::Approx(2.0));
}

TEST_CASE("the estimator is unbiased on a rigged Bernoulli model") {
    const Vocabulary vocab = rigged_vocab();
    const std::vector<TokenId> context{*vocab.id_of("CTX")};
    const double p = 0.3;
    const auto model = token_distribution(vocab, {{"MEDS_DEATH", p}, {"HOSPITAL_DISCHARGE", 1.0 - p}});
    const auto stop = death_vs_discharge_stop(vocab);

    const size_t reps = 300, n = 100;
    double sum = 0.0;
    for (size_t r = 0; r < reps; ++r) {
        const auto counts = run_monte_carlo(model, context, stop, n, 1.0, derive_seed(1234, r), vocab);
        sum += static_cast<double>(counts.m_positive) / static_cast<double>(counts.n_valid);
    }
    const double mean = sum / static_cast<double>(reps);
    const double sigma = std::sqrt(p * (1.0 - p) / static_cast<double>(n * reps));
    CHECK(std::abs(mean - p) < 4.0 * sigma);
}
