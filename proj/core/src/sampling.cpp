#include "ethos/sampling.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "ethos/model.hpp"

namespace ethos {

Nucleus nucleus_candidates(std::span<const float> logits, double top_p) {
    if (!(top_p > 0.0 && top_p <= 1.0)) throw std::invalid_argument("top_p must be in (0, 1]");
    const std::vector<double> probs = softmax_row(logits);  // validates finiteness

    std::vector<TokenId> order(probs.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](TokenId a, TokenId b) {
        if (probs[a] != probs[b]) return probs[a] > probs[b];
        return a < b;
    });

    Nucleus nucleus;
    double cum = 0.0;
    for (TokenId id : order) {
        nucleus.ids.push_back(id);
        nucleus.probs.push_back(probs[id]);
        cum += probs[id];
        if (cum > top_p) break;
    }
    for (double& p : nucleus.probs) p /= cum;
    return nucleus;
}

TokenId nucleus_sample(std::span<const float> logits, double top_p, Rng& rng) {
    const Nucleus nucleus = nucleus_candidates(logits, top_p);
    const double u = rng.uniform01();
    double cum = 0.0;
    for (size_t i = 0; i < nucleus.ids.size(); ++i) {
        cum += nucleus.probs[i];
        if (u < cum) return nucleus.ids[i];
    }
    return nucleus.ids.back();
}

}  // namespace ethos
