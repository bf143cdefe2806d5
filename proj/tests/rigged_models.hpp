#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "ethos/model.hpp"

namespace ethos::testing {

// Next-token model defined by an arbitrary function of the full context;
// rigs exact distributions for the Monte Carlo machinery.
class FunctionModel final : public TokenModel {
public:
    using LogitsFn = std::function<std::vector<float>(const std::vector<TokenId>&)>;

    FunctionModel(size_t vocab, LogitsFn fn, size_t context_len = 4096)
        : vocab_(vocab), context_len_(context_len), fn_(std::move(fn)) {}

    size_t vocab_size() const override { return vocab_; }
    size_t context_len() const override { return context_len_; }

    std::unique_ptr<TokenModelSession> make_session() const override {
        class Session final : public TokenModelSession {
        public:
            explicit Session(const FunctionModel& m) : m_(m) {}
            const std::vector<float>& prime(std::span<const TokenId> context) override {
                ctx_.assign(context.begin(), context.end());
                logits_ = m_.fn_(ctx_);
                return logits_;
            }
            const std::vector<float>& step(TokenId token) override {
                ctx_.push_back(token);
                logits_ = m_.fn_(ctx_);
                return logits_;
            }

        private:
            const FunctionModel& m_;
            std::vector<TokenId> ctx_;
            std::vector<float> logits_;
        };
        return std::make_unique<Session>(*this);
    }

private:
    size_t vocab_;
    size_t context_len_;
    LogitsFn fn_;
};

// Context-independent distribution over the vocabulary.
inline FunctionModel fixed_distribution_model(const std::vector<double>& probs) {
    std::vector<float> logits(probs.size());
    for (size_t i = 0; i < probs.size(); ++i)
        logits[i] = probs[i] > 0.0 ? static_cast<float>(std::log(probs[i])) : -80.0f;
    return FunctionModel(probs.size(), [logits](const std::vector<TokenId>&) { return logits; });
}

}  // namespace ethos::testing
