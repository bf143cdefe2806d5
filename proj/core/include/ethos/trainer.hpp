#pragma once

#include <span>

#include "ethos/checkpoint.hpp"
#include "ethos/model.hpp"
#include "ethos/optimizer.hpp"

namespace ethos {

struct TrainOptions {
    std::uint64_t steps = 0;
    size_t batch_size = 8;
    double val_fraction = 0.018;  // held-out tail of the concatenated stream
    std::uint64_t val_every = 10;
    std::uint64_t seed = 0;
    AdamWParams adam;
};

// Trains on random contiguous windows of the concatenated token stream. The
// final val_fraction of the stream is held out; train loss is recorded every
// step and validation loss every val_every steps. Deterministic given the
// seed; single-threaded.
ModelCheckpoint train(const ModelConfig& cfg, std::span<const TokenId> corpus, const TrainOptions& opts,
                      std::uint64_t vocab_fingerprint = 0);

// Continues training an existing checkpoint in place.
void train_more(ModelCheckpoint& ckpt, std::span<const TokenId> corpus, const TrainOptions& opts);

// Mean cross-entropy over windows tiling [begin, end) of the stream.
double evaluate_stream_loss(const Transformer<float>& model, std::span<const TokenId> corpus, size_t begin,
                            size_t end);

std::string loss_history_csv(const std::vector<LossRecord>& history);

}  // namespace ethos
