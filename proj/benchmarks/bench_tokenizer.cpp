#include <benchmark/benchmark.h>

#include "ethos/rng.hpp"
#include "ethos/synth.hpp"
#include "ethos/tokenizer.hpp"

using namespace ethos;

namespace {

void TokenizeCohort(benchmark::State& state) {
    const auto n = static_cast<size_t>(state.range(0));
    const auto cohort = generate_cohort(default_generator_spec(), n, 3);
    const auto bins = fit_all_quantiles(cohort.stream);
    const Vocabulary vocab = build_vocabulary(cohort.stream, bins);
    for (auto _ : state) {
        auto timelines = tokenize_cohort(cohort.stream, vocab, bins);
        benchmark::DoNotOptimize(timelines.data());
    }
    state.SetItemsProcessed(static_cast<int64_t>(state.iterations()) *
                            static_cast<int64_t>(cohort.stream.events().size()));
}
BENCHMARK(TokenizeCohort)->Arg(100)->Arg(500);

void FitQuantiles(benchmark::State& state) {
    const auto n = static_cast<size_t>(state.range(0));
    Rng rng(5);
    std::vector<double> values(n);
    for (auto& v : values) v = rng.normal(0.0, 1.0);
    for (auto _ : state) {
        auto bins = fit_quantiles_from_values("LAB//BENCH", values);
        benchmark::DoNotOptimize(bins.boundaries.data());
    }
    state.SetItemsProcessed(static_cast<int64_t>(state.iterations()) * static_cast<int64_t>(n));
}
BENCHMARK(FitQuantiles)->Arg(1000)->Arg(100000);

void GenerateCohort(benchmark::State& state) {
    const auto spec = default_generator_spec();
    for (auto _ : state) {
        auto cohort = generate_cohort(spec, static_cast<size_t>(state.range(0)), 7);
        benchmark::DoNotOptimize(cohort.rows.data());
    }
    state.SetItemsProcessed(static_cast<int64_t>(state.iterations()) * state.range(0));
}
BENCHMARK(GenerateCohort)->Arg(200);

}  // namespace
