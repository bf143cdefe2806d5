#include "ethos/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "ethos/model.hpp"

namespace ethos {

GradCheckReport run_gradcheck(size_t n_configs, std::uint64_t seed, double tolerance) {
    GradCheckReport report;
    report.tolerance = tolerance;

    Rng seeds(seed);
    for (size_t c = 0; c < n_configs; ++c) {
        ModelConfig cfg;
        cfg.n_heads = 1 + static_cast<int>(seeds.below(2));
        cfg.d_model = cfg.n_heads * (4 + static_cast<int>(seeds.below(3)) * 2);
        cfg.n_layers = 1 + static_cast<int>(seeds.below(2));
        cfg.context_len = 4 + static_cast<int>(seeds.below(3));
        cfg.dropout = 0.0;
        cfg.vocab_size = 5 + static_cast<int>(seeds.below(5));
        cfg.seed = seeds.next_u64();
        cfg.tie_embedding = seeds.below(2) == 0;

        auto model = Transformer<double>::init(cfg);
        Rng rng(seeds.next_u64());
        const auto T = static_cast<size_t>(cfg.context_len);
        std::vector<std::vector<TokenId>> windows(1), targets(1);
        for (size_t i = 0; i < T; ++i)
            windows[0].push_back(static_cast<TokenId>(rng.below(static_cast<std::uint64_t>(cfg.vocab_size))));
        for (size_t i = 0; i < T; ++i)
            targets[0].push_back(static_cast<TokenId>(rng.below(static_cast<std::uint64_t>(cfg.vocab_size))));

        std::vector<double> grads;
        model.loss_and_gradients(windows, targets, grads);

        const double h = 1e-3;
        double worst = 0.0;
        for (size_t i = 0; i < model.param_count(); ++i) {
            const double orig = model.params()[i];
            auto loss_at = [&](double v) {
                model.params()[i] = v;
                const double loss = model.loss(windows[0], targets[0]);
                model.params()[i] = orig;
                return loss;
            };
            const double numeric = (loss_at(orig - 2 * h) - 8 * loss_at(orig - h) + 8 * loss_at(orig + h) -
                                    loss_at(orig + 2 * h)) /
                                   (12.0 * h);
            const double analytic = grads[i];
            if (std::abs(numeric) < 1e-10 && std::abs(analytic) < 1e-10) continue;
            const double rel =
                std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-6});
            worst = std::max(worst, rel);
        }

        char desc[128];
        std::snprintf(desc, sizeof(desc), "layers=%d heads=%d d=%d ctx=%d vocab=%d tie=%d", cfg.n_layers,
                      cfg.n_heads, cfg.d_model, cfg.context_len, cfg.vocab_size,
                      cfg.tie_embedding ? 1 : 0);
        report.configs.push_back({desc, worst});
        report.max_rel_error = std::max(report.max_rel_error, worst);
    }
    report.pass = report.max_rel_error < tolerance;
    return report;
}

}  // namespace ethos
