#include "ethos/trainer.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace ethos {
namespace {

// Window length: the configured context, shrunk for tiny corpora.
size_t window_len(const ModelConfig& cfg, size_t train_len) {
    const auto ctx = static_cast<size_t>(cfg.context_len);
    if (train_len <= 1) throw std::runtime_error("corpus shorter than one window");
    return std::min(ctx, train_len - 1);
}

}  // namespace

double evaluate_stream_loss(const Transformer<float>& model, std::span<const TokenId> corpus, size_t begin,
                            size_t end) {
    if (end > corpus.size() || begin >= end || end - begin < 2)
        throw std::invalid_argument("evaluate_stream_loss: bad range");
    const size_t w = window_len(model.config(), end - begin);
    double total = 0.0;
    size_t positions = 0;
    for (size_t start = begin; start + 1 < end; start += w) {
        const size_t len = std::min(w, end - 1 - start);
        std::vector<TokenId> window(corpus.begin() + static_cast<std::ptrdiff_t>(start),
                                    corpus.begin() + static_cast<std::ptrdiff_t>(start + len));
        std::vector<TokenId> targets(corpus.begin() + static_cast<std::ptrdiff_t>(start + 1),
                                     corpus.begin() + static_cast<std::ptrdiff_t>(start + len + 1));
        total += model.loss(window, targets) * static_cast<double>(len);
        positions += len;
    }
    return total / static_cast<double>(positions);
}

void train_more(ModelCheckpoint& ckpt, std::span<const TokenId> corpus, const TrainOptions& opts) {
    const ModelConfig& cfg = ckpt.model.config();
    if (corpus.size() <= static_cast<size_t>(cfg.context_len))
        throw std::runtime_error("corpus shorter than one window");
    if (opts.batch_size == 0) throw std::invalid_argument("batch_size must be positive");

    const auto val_len = static_cast<size_t>(static_cast<double>(corpus.size()) * opts.val_fraction);
    const size_t train_len = corpus.size() - val_len;
    const size_t w = window_len(cfg, train_len);
    const bool has_val = val_len >= 2;

    Rng rng(opts.seed);
    std::vector<std::vector<TokenId>> windows(opts.batch_size), targets(opts.batch_size);
    std::vector<float> grads;

    for (std::uint64_t step = 0; step < opts.steps; ++step) {
        for (size_t b = 0; b < opts.batch_size; ++b) {
            const size_t start = static_cast<size_t>(rng.below(train_len - w));
            windows[b].assign(corpus.begin() + static_cast<std::ptrdiff_t>(start),
                              corpus.begin() + static_cast<std::ptrdiff_t>(start + w));
            targets[b].assign(corpus.begin() + static_cast<std::ptrdiff_t>(start + 1),
                              corpus.begin() + static_cast<std::ptrdiff_t>(start + w + 1));
        }
        const bool train_mode = cfg.dropout > 0.0;
        const double loss = ckpt.model.loss_and_gradients(windows, targets, grads, train_mode, &rng);
        adamw_step(ckpt.model.params(), grads, ckpt.opt);
        ckpt.train_steps += 1;

        LossRecord rec;
        rec.step = ckpt.train_steps;
        rec.train_loss = loss;
        rec.val_loss = std::nan("");
        if (has_val && (step + 1) % opts.val_every == 0)
            rec.val_loss = evaluate_stream_loss(ckpt.model, corpus, train_len, corpus.size());
        ckpt.loss_history.push_back(rec);
    }
}

ModelCheckpoint train(const ModelConfig& cfg, std::span<const TokenId> corpus, const TrainOptions& opts,
                      std::uint64_t vocab_fingerprint) {
    ModelCheckpoint ckpt{Transformer<float>::init(cfg)};
    ckpt.opt = AdamWState::init(ckpt.model.param_count(), opts.adam);
    ckpt.vocab_fingerprint = vocab_fingerprint;
    if (opts.steps > 0) train_more(ckpt, corpus, opts);
    return ckpt;
}

std::string loss_history_csv(const std::vector<LossRecord>& history) {
    std::ostringstream out;
    out << "step,train_loss,val_loss\n";
    for (const auto& rec : history) {
        out << rec.step << ',' << rec.train_loss << ',';
        if (std::isfinite(rec.val_loss)) out << rec.val_loss;
        out << "\n";
    }
    return out.str();
}

}  // namespace ethos
