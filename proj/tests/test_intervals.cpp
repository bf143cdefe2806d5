#include <doctest.h>

#include <cmath>

#include "ethos/intervals.hpp"
#include "ethos/rng.hpp"

using namespace ethos;

TEST_CASE("the scale has exactly 19 contiguous bins from 5 minutes") {
    const auto& bins = IntervalScale::instance().bins();
    REQUIRE(bins.size() == 19);
    CHECK(bins.front().lower == 5 * kMinute);
    CHECK(bins.front().label == "5m-15m");
    CHECK(bins.back().label == "=6mt");
    for (size_t i = 1; i < bins.size(); ++i) CHECK(bins[i].lower == bins[i - 1].upper);
}

TEST_CASE("representative durations lie inside their bins") {
    for (const auto& bin : IntervalScale::instance().bins()) {
        CHECK(bin.representative >= bin.lower);
        CHECK(bin.representative < bin.upper);
    }
    // geometric mean of 15m and 45m is about 26 minutes
    CHECK(IntervalScale::instance().bin("15m-45m").representative ==
          doctest::Approx(std::sqrt(15.0 * 45.0) * 60.0));
    CHECK(IntervalScale::instance().bin("=6mt").representative == 270.0 * kDay);
}

TEST_CASE("a 30 minute gap maps to 15m-45m") {
    const auto tokens = IntervalScale::instance().tokens_for_gap(30 * kMinute);
    REQUIRE(tokens.size() == 1);
    CHECK(tokens[0] == "15m-45m");
}

TEST_CASE("gaps under 5 minutes are omitted") {
    CHECK(IntervalScale::instance().tokens_for_gap(3 * kMinute).empty());
    CHECK(IntervalScale::instance().tokens_for_gap(0).empty());
    CHECK(IntervalScale::instance().tokens_for_gap(5 * kMinute - 1).empty());
}

TEST_CASE("400 days emits two half-year tokens") {
    const auto tokens = IntervalScale::instance().tokens_for_gap(400 * kDay);
    REQUIRE(tokens.size() == 2);
    CHECK(tokens[0] == "=6mt");
    CHECK(tokens[1] == "=6mt");
}

TEST_CASE("very long gaps cap at 8 tokens") {
    const auto tokens = IntervalScale::instance().tokens_for_gap(50.0 * 365.0 * kDay);
    CHECK(tokens.size() == 8);
}

TEST_CASE("bins are left-closed right-open at 45 minutes") {
    const auto at_boundary = IntervalScale::instance().tokens_for_gap(45 * kMinute);
    REQUIRE(at_boundary.size() == 1);
    CHECK(at_boundary[0] == "45m-1h15m");
}

TEST_CASE("negative gaps are an error") {
    CHECK_THROWS_WITH(IntervalScale::instance().tokens_for_gap(-1.0), doctest::Contains("backwards"));
}

TEST_CASE("single-token gaps always land inside the emitted bin") {
    Rng rng(11);
    const auto& scale = IntervalScale::instance();
    for (int i = 0; i < 2000; ++i) {
        const Seconds gap = 5 * kMinute + rng.uniform01() * (kHalfYear - 5 * kMinute - 1);
        const auto tokens = scale.tokens_for_gap(gap);
        REQUIRE(tokens.size() == 1);
        const auto& bin = scale.bin(tokens[0]);
        CHECK(gap >= bin.lower);
        CHECK(gap < bin.upper);
    }
}

TEST_CASE("non-interval labels contribute zero duration") {
    CHECK(IntervalScale::instance().representative_or_zero("HOSPITAL_ADMISSION") == 0.0);
    CHECK(IntervalScale::instance().representative_or_zero("Q4") == 0.0);
    CHECK(IntervalScale::instance().representative_or_zero("1d-2d") > 0.0);
}
