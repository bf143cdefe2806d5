#include "ethos/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace ethos {
namespace {

constexpr double kLnEps = 1e-5;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

template <typename Real>
Real gelu(Real x) {
    const Real u = static_cast<Real>(kGeluC) * (x + static_cast<Real>(kGeluA) * x * x * x);
    return Real(0.5) * x * (Real(1) + std::tanh(u));
}

template <typename Real>
Real gelu_grad(Real x) {
    const Real u = static_cast<Real>(kGeluC) * (x + static_cast<Real>(kGeluA) * x * x * x);
    const Real t = std::tanh(u);
    const Real du = static_cast<Real>(kGeluC) * (Real(1) + Real(3) * static_cast<Real>(kGeluA) * x * x);
    return Real(0.5) * (Real(1) + t) + Real(0.5) * x * (Real(1) - t * t) * du;
}

template <typename Real>
using VecX = Eigen::Matrix<Real, Eigen::Dynamic, 1>;

// Row-wise layernorm; returns xhat and rstd for the backward pass.
template <typename Real>
void layernorm_forward(const MatX<Real>& x, const Real* gain, const Real* bias, MatX<Real>& y,
                       MatX<Real>& xhat, VecX<Real>& rstd) {
    const auto rows = x.rows();
    const auto cols = x.cols();
    y.resize(rows, cols);
    xhat.resize(rows, cols);
    rstd.resize(rows);
    Eigen::Map<const RowX<Real>> g(gain, 1, cols);
    Eigen::Map<const RowX<Real>> b(bias, 1, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const Real mu = x.row(r).mean();
        const Real var = (x.row(r).array() - mu).square().mean();
        const Real rs = Real(1) / std::sqrt(var + static_cast<Real>(kLnEps));
        rstd(r) = rs;
        xhat.row(r) = (x.row(r).array() - mu) * rs;
        y.row(r) = xhat.row(r).cwiseProduct(g) + b;
    }
}

template <typename Real>
void layernorm_backward(const MatX<Real>& dy, const MatX<Real>& xhat, const VecX<Real>& rstd,
                        const Real* gain, MatX<Real>& dx, Real* dgain, Real* dbias) {
    const auto rows = dy.rows();
    const auto cols = dy.cols();
    dx.resize(rows, cols);
    Eigen::Map<const RowX<Real>> g(gain, 1, cols);
    Eigen::Map<RowX<Real>> dg(dgain, 1, cols);
    Eigen::Map<RowX<Real>> db(dbias, 1, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const RowX<Real> dxhat = dy.row(r).cwiseProduct(g);
        const Real m1 = dxhat.mean();
        const Real m2 = dxhat.cwiseProduct(xhat.row(r)).mean();
        dx.row(r) = ((dxhat.array() - m1) - xhat.row(r).array() * m2) * rstd(r);
        dg += dy.row(r).cwiseProduct(xhat.row(r));
        db += dy.row(r);
    }
}

template <typename Real>
void row_softmax_inplace(MatX<Real>& s) {
    for (Eigen::Index r = 0; r < s.rows(); ++r) {
        const Real mx = s.row(r).maxCoeff();
        s.row(r) = (s.row(r).array() - mx).exp();
        const Real sum = s.row(r).sum();
        s.row(r) /= sum;
    }
}

}  // namespace

void ModelConfig::validate() const {
    if (n_layers < 1) throw std::invalid_argument("n_layers must be >= 1");
    if (n_heads < 1) throw std::invalid_argument("n_heads must be >= 1");
    if (d_model < 1 || d_model % n_heads != 0)
        throw std::invalid_argument("d_model must be positive and divisible by n_heads");
    if (context_len < 2) throw std::invalid_argument("context_len must be >= 2");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("dropout must be in [0,1)");
    if (vocab_size < 1) throw std::invalid_argument("vocab_size must be >= 1");
}

ModelConfig reference_config(int vocab_size, std::uint64_t seed) {
    ModelConfig cfg;
    cfg.n_layers = 6;
    cfg.n_heads = 12;
    cfg.d_model = 768;
    cfg.context_len = 2048;
    cfg.dropout = 0.3;
    cfg.vocab_size = vocab_size;
    cfg.seed = seed;
    return cfg;
}

ModelConfig desk_config(int vocab_size, std::uint64_t seed) {
    ModelConfig cfg;
    cfg.n_layers = 2;
    cfg.n_heads = 4;
    cfg.d_model = 64;
    cfg.context_len = 256;
    cfg.dropout = 0.0;
    cfg.vocab_size = vocab_size;
    cfg.seed = seed;
    return cfg;
}

ParamLayout ParamLayout::from_config(const ModelConfig& cfg) {
    cfg.validate();
    ParamLayout l;
    const auto V = static_cast<size_t>(cfg.vocab_size);
    const auto d = static_cast<size_t>(cfg.d_model);
    const auto C = static_cast<size_t>(cfg.context_len);
    size_t off = 0;
    auto take = [&](size_t n) {
        const size_t at = off;
        off += n;
        return at;
    };
    l.tok_emb = take(V * d);
    l.pos_emb = take(C * d);
    l.layers.resize(static_cast<size_t>(cfg.n_layers));
    for (auto& layer : l.layers) {
        layer.ln1_g = take(d);
        layer.ln1_b = take(d);
        layer.w_qkv = take(d * 3 * d);
        layer.b_qkv = take(3 * d);
        layer.w_proj = take(d * d);
        layer.b_proj = take(d);
        layer.ln2_g = take(d);
        layer.ln2_b = take(d);
        layer.w_fc = take(d * 4 * d);
        layer.b_fc = take(4 * d);
        layer.w_out = take(4 * d * d);
        layer.b_out = take(d);
    }
    l.lnf_g = take(d);
    l.lnf_b = take(d);
    if (!cfg.tie_embedding) l.head = take(V * d);
    l.total = off;
    return l;
}

template <typename Real>
Transformer<Real>::Transformer(ModelConfig cfg) : cfg_(cfg), layout_(ParamLayout::from_config(cfg)) {
    params_.assign(layout_.total, Real(0));
}

template <typename Real>
Transformer<Real> Transformer<Real>::init(const ModelConfig& cfg) {
    Transformer model(cfg);
    Rng rng(cfg.seed);
    auto fill_normal = [&](size_t off, size_t n) {
        for (size_t i = 0; i < n; ++i) model.params_[off + i] = static_cast<Real>(rng.normal(0.0, 0.02));
    };
    auto fill_ones = [&](size_t off, size_t n) {
        for (size_t i = 0; i < n; ++i) model.params_[off + i] = Real(1);
    };
    const auto& l = model.layout_;
    const auto V = static_cast<size_t>(cfg.vocab_size);
    const auto d = static_cast<size_t>(cfg.d_model);
    const auto C = static_cast<size_t>(cfg.context_len);
    fill_normal(l.tok_emb, V * d);
    fill_normal(l.pos_emb, C * d);
    for (const auto& layer : l.layers) {
        fill_ones(layer.ln1_g, d);
        fill_normal(layer.w_qkv, d * 3 * d);
        fill_normal(layer.w_proj, d * d);
        fill_ones(layer.ln2_g, d);
        fill_normal(layer.w_fc, d * 4 * d);
        fill_normal(layer.w_out, 4 * d * d);
    }
    fill_ones(l.lnf_g, d);
    if (!cfg.tie_embedding) fill_normal(l.head, V * d);
    return model;
}

template <typename Real>
struct Transformer<Real>::Cache {
    struct Layer {
        MatX<Real> x_in;
        MatX<Real> ln1_xhat;
        VecX<Real> ln1_rstd;
        MatX<Real> ln1_out;
        MatX<Real> qkv;
        std::vector<MatX<Real>> probs;
        MatX<Real> att_concat;
        MatX<Real> drop_att;
        MatX<Real> x_mid;
        MatX<Real> ln2_xhat;
        VecX<Real> ln2_rstd;
        MatX<Real> ln2_out;
        MatX<Real> fc_pre;
        MatX<Real> fc_act;
        MatX<Real> drop_mlp;
    };
    MatX<Real> drop_emb;
    std::vector<Layer> layers;
    MatX<Real> x_final;
    MatX<Real> lnf_xhat;
    VecX<Real> lnf_rstd;
    MatX<Real> z;
    MatX<Real> logits;
};

template <typename Real>
void Transformer<Real>::forward_internal(std::span<const TokenId> window, bool train_mode, Rng* rng,
                                         Cache& cache) const {
    const auto T = static_cast<Eigen::Index>(window.size());
    const auto d = static_cast<Eigen::Index>(cfg_.d_model);
    const auto V = static_cast<Eigen::Index>(cfg_.vocab_size);
    const int H = cfg_.n_heads;
    const Eigen::Index hd = d / H;
    if (T == 0) throw std::invalid_argument("empty token window");
    if (T > cfg_.context_len) throw std::invalid_argument("window longer than context_len");
    for (TokenId id : window) {
        if (id >= static_cast<TokenId>(V)) throw std::invalid_argument("token id out of vocabulary range");
    }

    const bool use_dropout = train_mode && cfg_.dropout > 0.0;
    if (use_dropout && rng == nullptr) throw std::invalid_argument("dropout requires an rng in train mode");
    const Real keep = static_cast<Real>(1.0 - cfg_.dropout);
    auto make_mask = [&](Eigen::Index rows, Eigen::Index cols, MatX<Real>& mask) {
        mask.resize(rows, cols);
        for (Eigen::Index r = 0; r < rows; ++r)
            for (Eigen::Index c = 0; c < cols; ++c)
                mask(r, c) = rng->uniform01() < static_cast<double>(keep) ? Real(1) / keep : Real(0);
    };

    Eigen::Map<const MatX<Real>> E(params_.data() + layout_.tok_emb, V, d);
    Eigen::Map<const MatX<Real>> P(params_.data() + layout_.pos_emb, cfg_.context_len, d);

    MatX<Real> x(T, d);
    for (Eigen::Index t = 0; t < T; ++t)
        x.row(t) = E.row(static_cast<Eigen::Index>(window[static_cast<size_t>(t)])) + P.row(t);
    if (use_dropout) {
        make_mask(T, d, cache.drop_emb);
        x = x.cwiseProduct(cache.drop_emb);
    }

    cache.layers.resize(static_cast<size_t>(cfg_.n_layers));
    const Real inv_sqrt_hd = Real(1) / std::sqrt(static_cast<Real>(hd));
    const Real neg_inf = -std::numeric_limits<Real>::infinity();

    for (int li = 0; li < cfg_.n_layers; ++li) {
        auto& lc = cache.layers[static_cast<size_t>(li)];
        const auto& lp = layout_.layers[static_cast<size_t>(li)];
        lc.x_in = x;

        layernorm_forward(lc.x_in, params_.data() + lp.ln1_g, params_.data() + lp.ln1_b, lc.ln1_out,
                          lc.ln1_xhat, lc.ln1_rstd);

        Eigen::Map<const MatX<Real>> Wqkv(params_.data() + lp.w_qkv, d, 3 * d);
        Eigen::Map<const RowX<Real>> bqkv(params_.data() + lp.b_qkv, 1, 3 * d);
        lc.qkv.noalias() = lc.ln1_out * Wqkv;
        lc.qkv.rowwise() += bqkv;

        lc.att_concat.resize(T, d);
        lc.probs.assign(static_cast<size_t>(H), MatX<Real>());
        for (int h = 0; h < H; ++h) {
            auto Q = lc.qkv.middleCols(h * hd, hd);
            auto K = lc.qkv.middleCols(d + h * hd, hd);
            auto Vh = lc.qkv.middleCols(2 * d + h * hd, hd);
            MatX<Real>& S = lc.probs[static_cast<size_t>(h)];
            S.noalias() = Q * K.transpose();
            S *= inv_sqrt_hd;
            for (Eigen::Index i = 0; i < T; ++i)
                for (Eigen::Index j = i + 1; j < T; ++j) S(i, j) = neg_inf;
            row_softmax_inplace(S);
            lc.att_concat.middleCols(h * hd, hd).noalias() = S * Vh;
        }

        Eigen::Map<const MatX<Real>> Wproj(params_.data() + lp.w_proj, d, d);
        Eigen::Map<const RowX<Real>> bproj(params_.data() + lp.b_proj, 1, d);
        MatX<Real> att_out;
        att_out.noalias() = lc.att_concat * Wproj;
        att_out.rowwise() += bproj;
        if (use_dropout) {
            make_mask(T, d, lc.drop_att);
            att_out = att_out.cwiseProduct(lc.drop_att);
        }
        lc.x_mid = lc.x_in + att_out;

        layernorm_forward(lc.x_mid, params_.data() + lp.ln2_g, params_.data() + lp.ln2_b, lc.ln2_out,
                          lc.ln2_xhat, lc.ln2_rstd);

        Eigen::Map<const MatX<Real>> Wfc(params_.data() + lp.w_fc, d, 4 * d);
        Eigen::Map<const RowX<Real>> bfc(params_.data() + lp.b_fc, 1, 4 * d);
        lc.fc_pre.noalias() = lc.ln2_out * Wfc;
        lc.fc_pre.rowwise() += bfc;
        lc.fc_act = lc.fc_pre.unaryExpr([](Real v) { return gelu(v); });

        Eigen::Map<const MatX<Real>> Wout(params_.data() + lp.w_out, 4 * d, d);
        Eigen::Map<const RowX<Real>> bout(params_.data() + lp.b_out, 1, d);
        MatX<Real> mlp_out;
        mlp_out.noalias() = lc.fc_act * Wout;
        mlp_out.rowwise() += bout;
        if (use_dropout) {
            make_mask(T, d, lc.drop_mlp);
            mlp_out = mlp_out.cwiseProduct(lc.drop_mlp);
        }
        x = lc.x_mid + mlp_out;
    }

    cache.x_final = x;
    layernorm_forward(cache.x_final, params_.data() + layout_.lnf_g, params_.data() + layout_.lnf_b, cache.z,
                      cache.lnf_xhat, cache.lnf_rstd);

    if (cfg_.tie_embedding) {
        cache.logits.noalias() = cache.z * E.transpose();
    } else {
        Eigen::Map<const MatX<Real>> Head(params_.data() + layout_.head, V, d);
        cache.logits.noalias() = cache.z * Head.transpose();
    }
}

template <typename Real>
MatX<Real> Transformer<Real>::forward(std::span<const TokenId> window, bool train_mode, Rng* rng) const {
    Cache cache;
    forward_internal(window, train_mode, rng, cache);
    return cache.logits;
}

template <typename Real>
double next_token_loss(const MatX<Real>& logits, std::span<const TokenId> targets) {
    if (static_cast<size_t>(logits.rows()) != targets.size())
        throw std::invalid_argument("targets length must match logit rows");
    double total = 0.0;
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        const TokenId y = targets[static_cast<size_t>(r)];
        if (y >= static_cast<TokenId>(logits.cols())) throw std::invalid_argument("target id out of range");
        const double mx = static_cast<double>(logits.row(r).maxCoeff());
        double sum = 0.0;
        for (Eigen::Index c = 0; c < logits.cols(); ++c)
            sum += std::exp(static_cast<double>(logits(r, c)) - mx);
        const double lse = mx + std::log(sum);
        total += lse - static_cast<double>(logits(r, static_cast<Eigen::Index>(y)));
    }
    const double loss = total / static_cast<double>(logits.rows());
    if (!std::isfinite(loss)) throw std::runtime_error("numerical overflow in cross-entropy");
    return loss;
}

template <typename Real>
double Transformer<Real>::loss(std::span<const TokenId> window, std::span<const TokenId> targets) const {
    Cache cache;
    forward_internal(window, false, nullptr, cache);
    return next_token_loss<Real>(cache.logits, targets);
}

template <typename Real>
double Transformer<Real>::backward_internal(const Cache& cache, std::span<const TokenId> window,
                                            std::span<const TokenId> targets, double weight,
                                            std::vector<Real>& grads) const {
    const auto T = static_cast<Eigen::Index>(window.size());
    const auto d = static_cast<Eigen::Index>(cfg_.d_model);
    const auto V = static_cast<Eigen::Index>(cfg_.vocab_size);
    const int H = cfg_.n_heads;
    const Eigen::Index hd = d / H;
    const Real inv_sqrt_hd = Real(1) / std::sqrt(static_cast<Real>(hd));

    // Softmax and loss in double; dlogits carries the 1/T (mean over
    // positions) and the batch weight.
    MatX<Real> dlogits(T, V);
    double total = 0.0;
    for (Eigen::Index r = 0; r < T; ++r) {
        const TokenId y = targets[static_cast<size_t>(r)];
        if (y >= static_cast<TokenId>(V)) throw std::invalid_argument("target id out of range");
        const double mx = static_cast<double>(cache.logits.row(r).maxCoeff());
        double sum = 0.0;
        for (Eigen::Index c = 0; c < V; ++c) sum += std::exp(static_cast<double>(cache.logits(r, c)) - mx);
        const double lse = mx + std::log(sum);
        total += lse - static_cast<double>(cache.logits(r, static_cast<Eigen::Index>(y)));
        const double scale = weight / static_cast<double>(T);
        for (Eigen::Index c = 0; c < V; ++c) {
            const double p = std::exp(static_cast<double>(cache.logits(r, c)) - lse);
            const double grad = (p - (static_cast<TokenId>(c) == y ? 1.0 : 0.0)) * scale;
            dlogits(r, c) = static_cast<Real>(grad);
        }
    }
    const double loss = total / static_cast<double>(T);
    if (!std::isfinite(loss)) throw std::runtime_error("numerical overflow in cross-entropy");

    Eigen::Map<const MatX<Real>> E(params_.data() + layout_.tok_emb, V, d);
    Eigen::Map<MatX<Real>> dE(grads.data() + layout_.tok_emb, V, d);
    Eigen::Map<MatX<Real>> dP(grads.data() + layout_.pos_emb, cfg_.context_len, d);

    MatX<Real> dz;
    if (cfg_.tie_embedding) {
        dz.noalias() = dlogits * E;
        dE.noalias() += dlogits.transpose() * cache.z;
    } else {
        Eigen::Map<const MatX<Real>> Head(params_.data() + layout_.head, V, d);
        Eigen::Map<MatX<Real>> dHead(grads.data() + layout_.head, V, d);
        dz.noalias() = dlogits * Head;
        dHead.noalias() += dlogits.transpose() * cache.z;
    }

    MatX<Real> dx;
    layernorm_backward(dz, cache.lnf_xhat, cache.lnf_rstd, params_.data() + layout_.lnf_g, dx,
                       grads.data() + layout_.lnf_g, grads.data() + layout_.lnf_b);

    const bool use_dropout = cache.drop_emb.size() > 0;

    for (int li = cfg_.n_layers - 1; li >= 0; --li) {
        const auto& lc = cache.layers[static_cast<size_t>(li)];
        const auto& lp = layout_.layers[static_cast<size_t>(li)];

        // MLP branch: x_out = x_mid + drop(mlp_out)
        MatX<Real> dmlp = dx;
        if (use_dropout) dmlp = dmlp.cwiseProduct(lc.drop_mlp);
        Eigen::Map<const MatX<Real>> Wout(params_.data() + lp.w_out, 4 * d, d);
        Eigen::Map<MatX<Real>> dWout(grads.data() + lp.w_out, 4 * d, d);
        Eigen::Map<RowX<Real>> dbout(grads.data() + lp.b_out, 1, d);
        dWout.noalias() += lc.fc_act.transpose() * dmlp;
        dbout += dmlp.colwise().sum();
        MatX<Real> dfc_act;
        dfc_act.noalias() = dmlp * Wout.transpose();
        MatX<Real> dfc_pre = dfc_act.cwiseProduct(lc.fc_pre.unaryExpr([](Real v) { return gelu_grad(v); }));

        Eigen::Map<const MatX<Real>> Wfc(params_.data() + lp.w_fc, d, 4 * d);
        Eigen::Map<MatX<Real>> dWfc(grads.data() + lp.w_fc, d, 4 * d);
        Eigen::Map<RowX<Real>> dbfc(grads.data() + lp.b_fc, 1, 4 * d);
        dWfc.noalias() += lc.ln2_out.transpose() * dfc_pre;
        dbfc += dfc_pre.colwise().sum();
        MatX<Real> dln2_out;
        dln2_out.noalias() = dfc_pre * Wfc.transpose();

        MatX<Real> dx_mid;
        layernorm_backward(dln2_out, lc.ln2_xhat, lc.ln2_rstd, params_.data() + lp.ln2_g, dx_mid,
                           grads.data() + lp.ln2_g, grads.data() + lp.ln2_b);
        dx_mid += dx;  // residual skip

        // Attention branch: x_mid = x_in + drop(att_out)
        MatX<Real> datt_out = dx_mid;
        if (use_dropout) datt_out = datt_out.cwiseProduct(lc.drop_att);
        Eigen::Map<const MatX<Real>> Wproj(params_.data() + lp.w_proj, d, d);
        Eigen::Map<MatX<Real>> dWproj(grads.data() + lp.w_proj, d, d);
        Eigen::Map<RowX<Real>> dbproj(grads.data() + lp.b_proj, 1, d);
        dWproj.noalias() += lc.att_concat.transpose() * datt_out;
        dbproj += datt_out.colwise().sum();
        MatX<Real> dconcat;
        dconcat.noalias() = datt_out * Wproj.transpose();

        MatX<Real> dqkv = MatX<Real>::Zero(T, 3 * d);
        for (int h = 0; h < H; ++h) {
            const MatX<Real>& P = lc.probs[static_cast<size_t>(h)];
            auto Q = lc.qkv.middleCols(h * hd, hd);
            auto K = lc.qkv.middleCols(d + h * hd, hd);
            auto Vh = lc.qkv.middleCols(2 * d + h * hd, hd);
            auto dOh = dconcat.middleCols(h * hd, hd);

            MatX<Real> dPm;
            dPm.noalias() = dOh * Vh.transpose();
            dqkv.middleCols(2 * d + h * hd, hd).noalias() += P.transpose() * dOh;

            MatX<Real> dS(T, T);
            for (Eigen::Index r = 0; r < T; ++r) {
                const Real rowdot = dPm.row(r).cwiseProduct(P.row(r)).sum();
                dS.row(r) = (P.row(r).array() * (dPm.row(r).array() - rowdot)).matrix();
            }
            dqkv.middleCols(h * hd, hd).noalias() += dS * K * inv_sqrt_hd;
            dqkv.middleCols(d + h * hd, hd).noalias() += dS.transpose() * Q * inv_sqrt_hd;
        }

        Eigen::Map<const MatX<Real>> Wqkv(params_.data() + lp.w_qkv, d, 3 * d);
        Eigen::Map<MatX<Real>> dWqkv(grads.data() + lp.w_qkv, d, 3 * d);
        Eigen::Map<RowX<Real>> dbqkv(grads.data() + lp.b_qkv, 1, 3 * d);
        dWqkv.noalias() += lc.ln1_out.transpose() * dqkv;
        dbqkv += dqkv.colwise().sum();
        MatX<Real> dln1_out;
        dln1_out.noalias() = dqkv * Wqkv.transpose();

        MatX<Real> dx_in;
        layernorm_backward(dln1_out, lc.ln1_xhat, lc.ln1_rstd, params_.data() + lp.ln1_g, dx_in,
                           grads.data() + lp.ln1_g, grads.data() + lp.ln1_b);
        dx = dx_in + dx_mid;  // residual skip into the block input
    }

    if (use_dropout) dx = dx.cwiseProduct(cache.drop_emb);
    for (Eigen::Index t = 0; t < T; ++t) {
        dE.row(static_cast<Eigen::Index>(window[static_cast<size_t>(t)])) += dx.row(t);
        dP.row(t) += dx.row(t);
    }
    return loss;
}

template <typename Real>
double Transformer<Real>::loss_and_gradients(const std::vector<std::vector<TokenId>>& windows,
                                             const std::vector<std::vector<TokenId>>& targets,
                                             std::vector<Real>& grads, bool train_mode, Rng* rng) const {
    if (windows.empty() || windows.size() != targets.size())
        throw std::invalid_argument("batch windows/targets mismatch");
    grads.assign(layout_.total, Real(0));
    const double weight = 1.0 / static_cast<double>(windows.size());
    double loss = 0.0;
    Cache cache;
    for (size_t b = 0; b < windows.size(); ++b) {
        if (windows[b].size() != targets[b].size())
            throw std::invalid_argument("window/target length mismatch");
        forward_internal(windows[b], train_mode, rng, cache);
        loss += weight * backward_internal(cache, windows[b], targets[b], weight, grads);
    }
    for (Real g : grads) {
        if (!std::isfinite(static_cast<double>(g))) throw std::runtime_error("numerical overflow in gradients");
    }
    return loss;
}

std::vector<double> softmax_row(std::span<const float> logits) {
    if (logits.empty()) throw std::invalid_argument("empty logits");
    double mx = -std::numeric_limits<double>::infinity();
    for (float v : logits) {
        if (!std::isfinite(v)) throw std::runtime_error("non-finite logit");
        mx = std::max(mx, static_cast<double>(v));
    }
    std::vector<double> p(logits.size());
    double sum = 0.0;
    for (size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(static_cast<double>(logits[i]) - mx);
        sum += p[i];
    }
    for (double& v : p) v /= sum;
    return p;
}

namespace {

class TransformerSession final : public TokenModelSession {
public:
    explicit TransformerSession(const Transformer<float>& model)
        : m_(model),
          d_(model.config().d_model),
          H_(model.config().n_heads),
          hd_(d_ / H_),
          C_(model.config().context_len) {
        const auto L = static_cast<size_t>(m_.config().n_layers);
        k_cache_.assign(L, MatX<float>::Zero(C_, d_));
        v_cache_.assign(L, MatX<float>::Zero(C_, d_));
        logits_.resize(static_cast<size_t>(m_.config().vocab_size));
    }

    const std::vector<float>& prime(std::span<const TokenId> context) override {
        if (context.empty()) throw std::invalid_argument("empty context");
        // Keep only the most recent context_len tokens.
        const size_t start = context.size() > static_cast<size_t>(C_) ? context.size() - static_cast<size_t>(C_) : 0;
        window_.assign(context.begin() + static_cast<std::ptrdiff_t>(start), context.end());
        rebuild();
        return logits_;
    }

    const std::vector<float>& step(TokenId token) override {
        if (window_.empty()) throw std::logic_error("step before prime");
        if (window_.size() == static_cast<size_t>(C_)) {
            window_.erase(window_.begin());
            window_.push_back(token);
            rebuild();
        } else {
            window_.push_back(token);
            append(token, static_cast<Eigen::Index>(window_.size() - 1));
        }
        return logits_;
    }

private:
    void rebuild() {
        len_ = 0;
        for (size_t i = 0; i < window_.size(); ++i) append(window_[i], static_cast<Eigen::Index>(i));
    }

    void ln_row(const RowX<float>& x, const float* gain, const float* bias, RowX<float>& y) const {
        const float mu = x.mean();
        const float var = (x.array() - mu).square().mean();
        const float rstd = 1.0f / std::sqrt(var + static_cast<float>(kLnEps));
        Eigen::Map<const RowX<float>> g(gain, 1, d_);
        Eigen::Map<const RowX<float>> b(bias, 1, d_);
        y = (((x.array() - mu) * rstd).matrix().cwiseProduct(g)) + b;
    }

    void append(TokenId token, Eigen::Index pos) {
        const auto& cfg = m_.config();
        const auto& layout = m_.layout();
        const float* p = m_.params().data();
        const auto V = static_cast<Eigen::Index>(cfg.vocab_size);
        if (token >= static_cast<TokenId>(V)) throw std::invalid_argument("token id out of vocabulary range");

        Eigen::Map<const MatX<float>> E(p + layout.tok_emb, V, d_);
        Eigen::Map<const MatX<float>> P(p + layout.pos_emb, C_, d_);
        RowX<float> x = E.row(static_cast<Eigen::Index>(token)) + P.row(pos);

        const float inv_sqrt_hd = 1.0f / std::sqrt(static_cast<float>(hd_));
        RowX<float> a(d_), y(d_);
        for (int li = 0; li < cfg.n_layers; ++li) {
            const auto& lp = layout.layers[static_cast<size_t>(li)];
            auto& K = k_cache_[static_cast<size_t>(li)];
            auto& Vc = v_cache_[static_cast<size_t>(li)];

            ln_row(x, p + lp.ln1_g, p + lp.ln1_b, a);
            Eigen::Map<const MatX<float>> Wqkv(p + lp.w_qkv, d_, 3 * d_);
            Eigen::Map<const RowX<float>> bqkv(p + lp.b_qkv, 1, 3 * d_);
            RowX<float> qkv = a * Wqkv + bqkv;
            K.row(pos) = qkv.segment(d_, d_);
            Vc.row(pos) = qkv.segment(2 * d_, d_);

            RowX<float> concat(d_);
            const Eigen::Index n = pos + 1;
            for (int h = 0; h < H_; ++h) {
                auto q = qkv.segment(h * hd_, hd_);
                Eigen::VectorXf scores(n);
                for (Eigen::Index j = 0; j < n; ++j)
                    scores(j) = q.dot(K.row(j).segment(h * hd_, hd_)) * inv_sqrt_hd;
                const float mx = scores.maxCoeff();
                scores = (scores.array() - mx).exp();
                scores /= scores.sum();
                RowX<float> out = RowX<float>::Zero(1, hd_);
                for (Eigen::Index j = 0; j < n; ++j) out += scores(j) * Vc.row(j).segment(h * hd_, hd_);
                concat.segment(h * hd_, hd_) = out;
            }

            Eigen::Map<const MatX<float>> Wproj(p + lp.w_proj, d_, d_);
            Eigen::Map<const RowX<float>> bproj(p + lp.b_proj, 1, d_);
            x += concat * Wproj + bproj;

            ln_row(x, p + lp.ln2_g, p + lp.ln2_b, y);
            Eigen::Map<const MatX<float>> Wfc(p + lp.w_fc, d_, 4 * d_);
            Eigen::Map<const RowX<float>> bfc(p + lp.b_fc, 1, 4 * d_);
            RowX<float> fc = y * Wfc + bfc;
            fc = fc.unaryExpr([](float v) { return gelu(v); });
            Eigen::Map<const MatX<float>> Wout(p + lp.w_out, 4 * d_, d_);
            Eigen::Map<const RowX<float>> bout(p + lp.b_out, 1, d_);
            x += fc * Wout + bout;
        }

        RowX<float> z(d_);
        ln_row(x, p + layout.lnf_g, p + layout.lnf_b, z);
        Eigen::Map<RowX<float>> out(logits_.data(), 1, V);
        if (cfg.tie_embedding) {
            out.noalias() = z * E.transpose();
        } else {
            Eigen::Map<const MatX<float>> Head(p + layout.head, V, d_);
            out.noalias() = z * Head.transpose();
        }
        len_ = pos + 1;
    }

    const Transformer<float>& m_;
    Eigen::Index d_;
    int H_;
    Eigen::Index hd_, C_;
    Eigen::Index len_ = 0;
    std::vector<MatX<float>> k_cache_, v_cache_;
    std::vector<TokenId> window_;
    std::vector<float> logits_;
};

}  // namespace

std::unique_ptr<TokenModelSession> TransformerTokenModel::make_session() const {
    return std::make_unique<TransformerSession>(model_);
}

template class Transformer<float>;
template class Transformer<double>;
template double next_token_loss<float>(const MatX<float>&, std::span<const TokenId>);
template double next_token_loss<double>(const MatX<double>&, std::span<const TokenId>);

}  // namespace ethos
