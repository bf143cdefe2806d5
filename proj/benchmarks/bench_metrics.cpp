#include <benchmark/benchmark.h>

#include "ethos/eval.hpp"
#include "ethos/rng.hpp"
#include "ethos/sampling.hpp"
#include "ethos/stats.hpp"

using namespace ethos;

namespace {

ScoredSet random_set(size_t n, std::uint64_t seed) {
    Rng rng(seed);
    ScoredSet set;
    for (size_t i = 0; i < n; ++i) {
        const double s = rng.uniform01();
        set.pairs.push_back({s, rng.uniform01() < s ? 1 : 0, ""});
    }
    return set;
}

void RocAuc(benchmark::State& state) {
    const auto set = random_set(static_cast<size_t>(state.range(0)), 11);
    for (auto _ : state) benchmark::DoNotOptimize(roc_auc(set));
    state.SetItemsProcessed(static_cast<int64_t>(state.iterations()) * state.range(0));
}
BENCHMARK(RocAuc)->Arg(1000)->Arg(10000);

void BootstrapAuc(benchmark::State& state) {
    const auto set = random_set(500, 12);
    for (auto _ : state) {
        auto ci = bootstrap_ci(set, roc_auc, static_cast<size_t>(state.range(0)), 13);
        benchmark::DoNotOptimize(ci.first);
    }
}
BENCHMARK(BootstrapAuc)->Arg(200);

void NucleusSampling(benchmark::State& state) {
    Rng rng(14);
    std::vector<float> logits(static_cast<size_t>(state.range(0)));
    for (auto& l : logits) l = static_cast<float>(rng.normal(0.0, 2.0));
    for (auto _ : state) benchmark::DoNotOptimize(nucleus_sample(logits, 0.9, rng));
}
BENCHMARK(NucleusSampling)->Arg(64)->Arg(4096);

void ClopperPearson(benchmark::State& state) {
    size_t m = 0;
    for (auto _ : state) {
        auto ci = clopper_pearson(m % 101, 100);
        benchmark::DoNotOptimize(ci.first);
        ++m;
    }
}
BENCHMARK(ClopperPearson);

}  // namespace
