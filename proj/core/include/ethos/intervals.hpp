#pragma once

#include <string>
#include <vector>

#include "ethos/time.hpp"

namespace ethos {

struct IntervalBin {
    std::string label;
    Seconds lower = 0;      // inclusive
    Seconds upper = 0;      // exclusive; last bin is open-ended
    Seconds representative = 0;
};

// The fixed scale of 19 elapsed-time tokens, contiguous from 5 minutes
// upward. Bins are left-closed right-open; the representative duration is
// the geometric mean of the bounds (the open-ended top bin uses 270 days).
class IntervalScale {
public:
    static const IntervalScale& instance();

    const std::vector<IntervalBin>& bins() const { return bins_; }
    size_t size() const { return bins_.size(); }

    bool is_interval_label(const std::string& label) const;
    const IntervalBin& bin(const std::string& label) const;

    // Tokens for a non-negative gap: empty below 5 minutes, one bin label up
    // to 183 days, and one top-bin token per whole 183-day span (capped at 8)
    // beyond that. Throws on negative gaps.
    std::vector<std::string> tokens_for_gap(Seconds gap) const;

    // Simulated elapsed time contributed by one token (0 for non-intervals).
    Seconds representative_or_zero(const std::string& label) const;

private:
    IntervalScale();
    std::vector<IntervalBin> bins_;
};

inline constexpr Seconds kHalfYear = 183.0 * kDay;
inline constexpr int kMaxLongGapTokens = 8;

}  // namespace ethos
