#pragma once

#include <span>
#include <vector>

#include "ethos/rng.hpp"
#include "ethos/vocabulary.hpp"

namespace ethos {

struct Nucleus {
    std::vector<TokenId> ids;     // probability-sorted candidate prefix
    std::vector<double> probs;    // renormalized over the prefix
};

// Smallest probability-sorted prefix whose cumulative probability exceeds
// top_p (ties in probability break by ascending id). top_p = 1 keeps the
// whole distribution.
Nucleus nucleus_candidates(std::span<const float> logits, double top_p);

// Draws one token from the renormalized nucleus. Throws on non-finite
// logits or top_p outside (0, 1].
TokenId nucleus_sample(std::span<const float> logits, double top_p, Rng& rng);

}  // namespace ethos
