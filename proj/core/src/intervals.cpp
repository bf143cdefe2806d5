#include "ethos/intervals.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace ethos {
namespace {

struct RawBin {
    const char* label;
    double lower;  // seconds
    double upper;  // seconds; <0 means open-ended
};

constexpr double kMin = 60.0, kHr = 3600.0, kD = 86400.0;

// 2mt is 61 days and 6mt is 183 days, keeping the scale contiguous.
constexpr RawBin kRawBins[] = {
    {"5m-15m", 5 * kMin, 15 * kMin},
    {"15m-45m", 15 * kMin, 45 * kMin},
    {"45m-1h15m", 45 * kMin, 75 * kMin},
    {"1h15m-2h", 75 * kMin, 2 * kHr},
    {"2h-3h", 2 * kHr, 3 * kHr},
    {"3h-5h", 3 * kHr, 5 * kHr},
    {"5h-8h", 5 * kHr, 8 * kHr},
    {"8h-12h", 8 * kHr, 12 * kHr},
    {"12h-18h", 12 * kHr, 18 * kHr},
    {"18h-1d", 18 * kHr, 1 * kD},
    {"1d-2d", 1 * kD, 2 * kD},
    {"2d-4d", 2 * kD, 4 * kD},
    {"4d-7d", 4 * kD, 7 * kD},
    {"7d-12d", 7 * kD, 12 * kD},
    {"12d-20d", 12 * kD, 20 * kD},
    {"20d-30d", 20 * kD, 30 * kD},
    {"30d-2mt", 30 * kD, 61 * kD},
    {"2mt-6mt", 61 * kD, 183 * kD},
    {"=6mt", 183 * kD, -1.0},
};

}  // namespace

IntervalScale::IntervalScale() {
    for (const RawBin& raw : kRawBins) {
        IntervalBin bin;
        bin.label = raw.label;
        bin.lower = raw.lower;
        if (raw.upper < 0) {
            bin.upper = std::numeric_limits<double>::infinity();
            bin.representative = 270.0 * kD;
        } else {
            bin.upper = raw.upper;
            bin.representative = std::sqrt(raw.lower * raw.upper);
        }
        bins_.push_back(std::move(bin));
    }
}

const IntervalScale& IntervalScale::instance() {
    static const IntervalScale scale;
    return scale;
}

bool IntervalScale::is_interval_label(const std::string& label) const {
    for (const auto& b : bins_)
        if (b.label == label) return true;
    return false;
}

const IntervalBin& IntervalScale::bin(const std::string& label) const {
    for (const auto& b : bins_)
        if (b.label == label) return b;
    throw std::out_of_range("not an interval token: '" + label + "'");
}

std::vector<std::string> IntervalScale::tokens_for_gap(Seconds gap) const {
    if (gap < 0) throw std::runtime_error("time went backwards (negative gap)");
    std::vector<std::string> out;
    if (gap < bins_.front().lower) return out;  // under 5 minutes: omitted
    if (gap >= kHalfYear) {
        int n = static_cast<int>(std::floor(gap / kHalfYear));
        n = std::min(n, kMaxLongGapTokens);
        out.assign(static_cast<size_t>(n), bins_.back().label);
        return out;
    }
    for (const auto& b : bins_) {
        if (gap >= b.lower && gap < b.upper) {
            out.push_back(b.label);
            return out;
        }
    }
    throw std::logic_error("interval scale has a gap in coverage");
}

Seconds IntervalScale::representative_or_zero(const std::string& label) const {
    for (const auto& b : bins_)
        if (b.label == label) return b.representative;
    return 0.0;
}

}  // namespace ethos
