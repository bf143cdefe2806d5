#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "ethos/rng.hpp"
#include "ethos/vocabulary.hpp"

namespace ethos {

template <typename Real>
using MatX = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Real>
using RowX = Eigen::Matrix<Real, 1, Eigen::Dynamic, Eigen::RowMajor>;

struct ModelConfig {
    int n_layers = 2;
    int n_heads = 4;
    int d_model = 64;
    int context_len = 256;
    double dropout = 0.0;
    int vocab_size = 0;
    std::uint64_t seed = 0;
    bool tie_embedding = true;

    void validate() const;
};

// Large-scale reference configuration (6 layers, 12 heads, 768 dims, 2048
// context, dropout 0.3); the desk default above is what tests train.
ModelConfig reference_config(int vocab_size, std::uint64_t seed = 0);
ModelConfig desk_config(int vocab_size, std::uint64_t seed = 0);

// Offsets into the flat parameter vector, in checkpoint declaration order.
struct ParamLayout {
    struct Layer {
        size_t ln1_g, ln1_b, w_qkv, b_qkv, w_proj, b_proj;
        size_t ln2_g, ln2_b, w_fc, b_fc, w_out, b_out;
    };
    size_t tok_emb = 0;
    size_t pos_emb = 0;
    std::vector<Layer> layers;
    size_t lnf_g = 0, lnf_b = 0;
    size_t head = 0;  // only when untied
    size_t total = 0;

    static ParamLayout from_config(const ModelConfig& cfg);
};

// Decoder-only transformer: learned absolute positions, pre-norm blocks,
// multi-head causal attention, tanh-gelu MLP, output projection tied to the
// token embedding by default. Templated on the scalar so gradient checks can
// run the same graph in double precision.
template <typename Real>
class Transformer {
public:
    explicit Transformer(ModelConfig cfg);

    // Weights ~ N(0, 0.02^2), normalization gains 1, biases 0; deterministic
    // in cfg.seed.
    static Transformer init(const ModelConfig& cfg);

    const ModelConfig& config() const { return cfg_; }
    const ParamLayout& layout() const { return layout_; }
    std::vector<Real>& params() { return params_; }
    const std::vector<Real>& params() const { return params_; }
    size_t param_count() const { return params_.size(); }

    // Logits (T x vocab) for one token window. Causal: row t depends only on
    // tokens <= t. Eval mode is deterministic; train mode applies dropout
    // when cfg.dropout > 0 (rng required then).
    MatX<Real> forward(std::span<const TokenId> window, bool train_mode = false, Rng* rng = nullptr) const;

    // Mean cross-entropy (nats) plus gradients of the batch-mean loss.
    // Windows may have different lengths; each window's position losses are
    // averaged, then windows are averaged.
    double loss_and_gradients(const std::vector<std::vector<TokenId>>& windows,
                              const std::vector<std::vector<TokenId>>& targets,
                              std::vector<Real>& grads, bool train_mode = false, Rng* rng = nullptr) const;

    double loss(std::span<const TokenId> window, std::span<const TokenId> targets) const;

    // Copies parameters from another precision (used by the double-precision
    // gradient-check path).
    template <typename Other>
    void copy_params_from(const Transformer<Other>& other) {
        for (size_t i = 0; i < params_.size(); ++i)
            params_[i] = static_cast<Real>(other.params()[i]);
    }

private:
    struct Cache;
    void forward_internal(std::span<const TokenId> window, bool train_mode, Rng* rng, Cache& cache) const;
    double backward_internal(const Cache& cache, std::span<const TokenId> window,
                             std::span<const TokenId> targets, double weight, std::vector<Real>& grads) const;

    ModelConfig cfg_;
    ParamLayout layout_;
    std::vector<Real> params_;
};

// Mean next-token cross-entropy in nats over logit rows.
template <typename Real>
double next_token_loss(const MatX<Real>& logits, std::span<const TokenId> targets);

// Numerically stable row softmax (double accumulation), for tests and
// sampling.
std::vector<double> softmax_row(std::span<const float> logits);

// Abstract autoregressive next-token scorer. The Monte Carlo machinery only
// needs logits given a growing context, so rigged test models and the real
// transformer share this surface.
class TokenModelSession {
public:
    virtual ~TokenModelSession() = default;
    virtual const std::vector<float>& prime(std::span<const TokenId> context) = 0;
    virtual const std::vector<float>& step(TokenId token) = 0;
};

class TokenModel {
public:
    virtual ~TokenModel() = default;
    virtual size_t vocab_size() const = 0;
    virtual size_t context_len() const = 0;
    virtual std::unique_ptr<TokenModelSession> make_session() const = 0;
};

// Incremental decoding with a per-layer key/value cache. When the window is
// full the oldest token is dropped and the cache rebuilt, so generation
// always sees the most recent context_len tokens.
class TransformerTokenModel : public TokenModel {
public:
    explicit TransformerTokenModel(const Transformer<float>& model) : model_(model) {}
    size_t vocab_size() const override { return static_cast<size_t>(model_.config().vocab_size); }
    size_t context_len() const override { return static_cast<size_t>(model_.config().context_len); }
    std::unique_ptr<TokenModelSession> make_session() const override;

private:
    const Transformer<float>& model_;
};

extern template class Transformer<float>;
extern template class Transformer<double>;
extern template double next_token_loss<float>(const MatX<float>&, std::span<const TokenId>);
extern template double next_token_loss<double>(const MatX<double>&, std::span<const TokenId>);

}  // namespace ethos
