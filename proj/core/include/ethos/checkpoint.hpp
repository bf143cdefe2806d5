#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ethos/model.hpp"
#include "ethos/optimizer.hpp"

namespace ethos {

struct LossRecord {
    std::uint64_t step = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;  // NaN when not evaluated at this step
};

struct ModelCheckpoint {
    Transformer<float> model;
    AdamWState opt;
    std::uint64_t vocab_fingerprint = 0;
    std::uint64_t train_steps = 0;
    std::vector<LossRecord> loss_history;

    explicit ModelCheckpoint(ModelConfig cfg) : model(Transformer<float>(cfg)) {}
    explicit ModelCheckpoint(Transformer<float> m) : model(std::move(m)) {}
};

// File layout: magic "ETHS", u16 version, u32 JSON header length, JSON
// header (config, fingerprint, step, optimizer hyperparameters, loss
// history), then little-endian f32 arrays: params, adam m, adam v.
void save_checkpoint(const ModelCheckpoint& ckpt, const std::string& path);

// Round-trips bitwise. A truncated or corrupt file throws without returning
// partial state. When expected_fingerprint is given (loading for inference
// against a vocabulary), a mismatch throws "vocabulary drift".
ModelCheckpoint load_checkpoint(const std::string& path,
                                std::optional<std::uint64_t> expected_fingerprint = std::nullopt);

}  // namespace ethos
