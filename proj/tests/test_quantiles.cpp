#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "ethos/quantiles.hpp"
#include "ethos/rng.hpp"

using namespace ethos;

namespace {

// Independent oracle: full sort, then pick the lower-interpolated decile by
// index arithmetic.
double decile_oracle(std::vector<double> values, int i) {
    std::sort(values.begin(), values.end());
    const size_t idx = (values.size() - 1) * static_cast<size_t>(i) / 10;
    return values[idx];
}

}  // namespace

TEST_CASE("deciles of 1..100 are 10,20,...,90") {
    std::vector<double> values;
    for (int i = 1; i <= 100; ++i) values.push_back(i);
    const auto bins = fit_quantiles_from_values("LAB//X", values);
    CHECK(!bins.degenerate);
    CHECK(bins.n_fit == 100);
    for (int i = 1; i <= 9; ++i) {
        CHECK(bins.boundaries[static_cast<size_t>(i - 1)] == doctest::Approx(10.0 * i));
        CHECK(bins.boundaries[static_cast<size_t>(i - 1)] == decile_oracle(values, i));
    }
}

TEST_CASE("boundaries match the sort-and-index oracle on random samples") {
    Rng rng(77);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> values;
        const size_t n = 10 + rng.below(500);
        for (size_t i = 0; i < n; ++i) values.push_back(rng.normal(0.0, 10.0));
        const auto bins = fit_quantiles_from_values("LAB//R", values);
        for (int i = 1; i <= 9; ++i)
            CHECK(bins.boundaries[static_cast<size_t>(i - 1)] == decile_oracle(values, i));
    }
}

TEST_CASE("constant samples produce degenerate bins") {
    const std::vector<double> values(10, 5.0);
    const auto bins = fit_quantiles_from_values("LAB//C", values);
    CHECK(bins.degenerate);
    for (double b : bins.boundaries) CHECK(b == 5.0);
    CHECK(encode_numeric(123.0, bins) == 5);  // degenerate maps to Q5
}

TEST_CASE("fitting is invariant under input permutation") {
    std::vector<double> values = {5, 1, 9, 2, 8, 3, 7, 4, 6, 0, 11, 13};
    const auto a = fit_quantiles_from_values("X", values);
    std::reverse(values.begin(), values.end());
    const auto b = fit_quantiles_from_values("X", values);
    CHECK(a.boundaries == b.boundaries);
}

TEST_CASE("fit with no values is an error") {
    CHECK_THROWS_WITH(fit_quantiles_from_values("X", {}), doctest::Contains("no values"));
}

TEST_CASE("encode_numeric clamps at the extremes") {
    std::vector<double> values;
    for (int i = 1; i <= 100; ++i) values.push_back(i);
    const auto bins = fit_quantiles_from_values("X", values);
    CHECK(encode_numeric(0.5, bins) == 1);     // below the training minimum
    CHECK(encode_numeric(100.0, bins) == 10);  // the training maximum
    CHECK(encode_numeric(1e9, bins) == 10);
}

TEST_CASE("encode_numeric uses strictly-below counting") {
    std::vector<double> values;
    for (int i = 1; i <= 100; ++i) values.push_back(i);
    const auto bins = fit_quantiles_from_values("X", values);
    // Rank oracle: 55 sits in the 6th decile of 1..100.
    CHECK(encode_numeric(55.0, bins) == 6);
    // Boundary values belong to the lower bucket under strict comparison.
    CHECK(encode_numeric(10.0, bins) == 1);
    CHECK(encode_numeric(10.5, bins) == 2);
}

TEST_CASE("encode_numeric rejects non-finite values") {
    const auto bins = fit_quantiles_from_values("X", {1, 2, 3, 4, 5, 6, 7, 8, 9, 10});
    CHECK_THROWS_WITH(encode_numeric(std::nan(""), bins), doctest::Contains("non-finite"));
}

TEST_CASE("decile occupancy is exactly 10% on distinct training values") {
    Rng rng(5);
    std::vector<double> values;
    for (int i = 0; i < 1000; ++i) values.push_back(i + rng.uniform01() * 0.5);
    const auto bins = fit_quantiles_from_values("X", values);
    std::vector<int> counts(11, 0);
    for (double v : values) counts[static_cast<size_t>(encode_numeric(v, bins))]++;
    for (int k = 1; k <= 10; ++k) CHECK(counts[static_cast<size_t>(k)] == 100);
}

TEST_CASE("decile occupancy with ties stays within tie-induced slack") {
    Rng rng(6);
    std::vector<double> values;
    for (int i = 0; i < 1000; ++i) values.push_back(std::floor(rng.uniform01() * 20.0));
    const auto bins = fit_quantiles_from_values("X", values);
    std::vector<int> counts(11, 0);
    for (double v : values) counts[static_cast<size_t>(encode_numeric(v, bins))]++;
    int total = 0;
    for (int k = 1; k <= 10; ++k) total += counts[static_cast<size_t>(k)];
    CHECK(total == 1000);
    // With ~50 duplicates per distinct value, a bucket can absorb a whole
    // tie group but never much more than two.
    for (int k = 1; k <= 10; ++k) CHECK(counts[static_cast<size_t>(k)] <= 250);
}

TEST_CASE("age encodes as tens and ones quantile tokens") {
    CHECK(encode_age(46).tens == "Q5");
    CHECK(encode_age(46).ones == "Q7");
    CHECK(encode_age(0).tens == "Q1");
    CHECK(encode_age(0).ones == "Q1");
    CHECK(encode_age(99).tens == "Q10");
    CHECK(encode_age(99).ones == "Q10");
    CHECK(!encode_age(46).clamped);
}

TEST_CASE("out-of-range ages clamp and flag") {
    const auto low = encode_age(-3);
    CHECK(low.clamped);
    CHECK(low.tens == "Q1");
    CHECK(low.ones == "Q1");
    const auto high = encode_age(120);
    CHECK(high.clamped);
    CHECK(high.tens == "Q10");
    CHECK(high.ones == "Q10");
}
