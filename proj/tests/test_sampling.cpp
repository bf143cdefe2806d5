#include <doctest.h>

#include <cmath>
#include <vector>

#include "ethos/sampling.hpp"
#include "ethos/stats.hpp"

using namespace ethos;

namespace {

std::vector<float> logits_for(const std::vector<double>& probs) {
    std::vector<float> logits(probs.size());
    for (size_t i = 0; i < probs.size(); ++i) logits[i] = static_cast<float>(std::log(probs[i]));
    return logits;
}

}  // namespace

TEST_CASE("a dominant token forms a singleton nucleus") {
    const auto logits = logits_for({0.95, 0.04, 0.01});
    const auto nucleus = nucleus_candidates(logits, 0.9);
    REQUIRE(nucleus.ids.size() == 1);
    CHECK(nucleus.ids[0] == 0);
    CHECK(nucleus.probs[0] == doctest::Approx(1.0));

    Rng rng(1);
    for (int i = 0; i < 100; ++i) CHECK(nucleus_sample(logits, 0.9, rng) == 0);
}

TEST_CASE("nucleus keeps the smallest prefix exceeding top_p and renormalizes") {
    const auto logits = logits_for({0.5, 0.3, 0.15, 0.05});
    const auto nucleus = nucleus_candidates(logits, 0.9);
    REQUIRE(nucleus.ids.size() == 3);
    CHECK(nucleus.ids == std::vector<TokenId>{0, 1, 2});
    CHECK(nucleus.probs[0] == doctest::Approx(10.0 / 19.0).epsilon(1e-6));
    CHECK(nucleus.probs[1] == doctest::Approx(6.0 / 19.0).epsilon(1e-6));
    CHECK(nucleus.probs[2] == doctest::Approx(3.0 / 19.0).epsilon(1e-6));
}

TEST_CASE("a uniform distribution over four keeps all four at top_p 0.9") {
    const auto logits = logits_for({0.25, 0.25, 0.25, 0.25});
    const auto nucleus = nucleus_candidates(logits, 0.9);
    CHECK(nucleus.ids.size() == 4);
}

TEST_CASE("top_p of one keeps the full distribution") {
    const auto logits = logits_for({0.7, 0.2, 0.06, 0.04});
    const auto nucleus = nucleus_candidates(logits, 1.0);
    CHECK(nucleus.ids.size() == 4);
    CHECK(nucleus.probs[0] == doctest::Approx(0.7).epsilon(1e-6));
}

TEST_CASE("non-finite logits are rejected") {
    std::vector<float> logits{0.0f, std::nanf("")};
    Rng rng(2);
    CHECK_THROWS(nucleus_sample(logits, 0.9, rng));
    CHECK_THROWS(nucleus_sample(logits_for({0.5, 0.5}), 0.0, rng));
    CHECK_THROWS(nucleus_sample(logits_for({0.5, 0.5}), 1.5, rng));
}

TEST_CASE("empirical frequencies match the renormalized nucleus") {
    Rng meta(4);
    for (int trial = 0; trial < 5; ++trial) {
        const size_t vocab = 8 + meta.below(9);
        std::vector<double> weights(vocab);
        double total = 0.0;
        for (auto& w : weights) {
            w = 0.2 + meta.uniform01();
            total += w;
        }
        for (auto& w : weights) w /= total;

        const auto logits = logits_for(weights);
        for (double top_p : {0.5, 0.9, 1.0}) {
            const auto nucleus = nucleus_candidates(logits, top_p);
            const size_t draws = 20000;
            std::vector<size_t> counts(vocab, 0);
            Rng rng(meta.next_u64());
            for (size_t i = 0; i < draws; ++i) counts[nucleus_sample(logits, top_p, rng)] += 1;

            double chi2 = 0.0;
            size_t in_nucleus = 0;
            for (size_t k = 0; k < nucleus.ids.size(); ++k) {
                const double expected = nucleus.probs[k] * static_cast<double>(draws);
                const double observed = static_cast<double>(counts[nucleus.ids[k]]);
                chi2 += (observed - expected) * (observed - expected) / expected;
                in_nucleus += static_cast<size_t>(observed);
            }
            CHECK(in_nucleus == draws);  // nothing outside the nucleus
            const double p_value = chi_squared_sf(chi2, static_cast<double>(nucleus.ids.size() - 1));
            CHECK(p_value > 0.001);
        }
    }
}
