#include <benchmark/benchmark.h>

#include "ethos/model.hpp"
#include "ethos/optimizer.hpp"

using namespace ethos;

namespace {

std::vector<TokenId> cycle_tokens(size_t n, int vocab) {
    std::vector<TokenId> out(n);
    for (size_t i = 0; i < n; ++i) out[i] = static_cast<TokenId>(i % static_cast<size_t>(vocab));
    return out;
}

void ForwardDeskConfig(benchmark::State& state) {
    const auto T = static_cast<size_t>(state.range(0));
    ModelConfig cfg = desk_config(64, 1);
    const auto model = Transformer<float>::init(cfg);
    const auto window = cycle_tokens(T, cfg.vocab_size);
    for (auto _ : state) {
        auto logits = model.forward(window);
        benchmark::DoNotOptimize(logits.data());
    }
    state.SetItemsProcessed(static_cast<int64_t>(state.iterations()) * static_cast<int64_t>(T));
}
BENCHMARK(ForwardDeskConfig)->Arg(64)->Arg(128)->Arg(256);

void TrainStepDeskConfig(benchmark::State& state) {
    const auto batch = static_cast<size_t>(state.range(0));
    ModelConfig cfg = desk_config(64, 1);
    cfg.context_len = 128;
    auto model = Transformer<float>::init(cfg);
    AdamWState opt = AdamWState::init(model.param_count());
    std::vector<std::vector<TokenId>> windows(batch, cycle_tokens(128, cfg.vocab_size));
    std::vector<std::vector<TokenId>> targets = windows;
    std::vector<float> grads;
    for (auto _ : state) {
        const double loss = model.loss_and_gradients(windows, targets, grads);
        adamw_step(model.params(), grads, opt);
        benchmark::DoNotOptimize(loss);
    }
    state.SetItemsProcessed(static_cast<int64_t>(state.iterations()) * static_cast<int64_t>(batch * 128));
}
BENCHMARK(TrainStepDeskConfig)->Arg(1)->Arg(8);

void DecodeStep(benchmark::State& state) {
    ModelConfig cfg = desk_config(64, 1);
    const auto model = Transformer<float>::init(cfg);
    const TransformerTokenModel wrapped(model);
    const auto context = cycle_tokens(32, cfg.vocab_size);
    auto session = wrapped.make_session();
    session->prime(context);
    TokenId next = 0;
    for (auto _ : state) {
        const auto& logits = session->step(next);
        benchmark::DoNotOptimize(logits.data());
        next = (next + 1) % 64;
    }
    state.SetItemsProcessed(static_cast<int64_t>(state.iterations()));
}
BENCHMARK(DecodeStep);

}  // namespace
