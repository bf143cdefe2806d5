#pragma once

#include <array>
#include <string>
#include <vector>

#include "ethos/event_store.hpp"

namespace ethos {

// Decile cut points for one numeric code, fitted on training values.
struct QuantileBins {
    std::string code;
    std::array<double, 9> boundaries{};  // non-decreasing
    size_t n_fit = 0;
    bool degenerate = false;  // constant sample or fewer than 10 values
};

// Empirical deciles (lower interpolation of the sorted sample). Order of the
// input values does not matter. Throws if the code has no numeric values.
QuantileBins fit_quantiles(const EventStream& train, const std::string& code);
QuantileBins fit_quantiles_from_values(const std::string& code, std::vector<double> values);

// Quantile index in 1..10: 1 + (number of boundaries strictly below value),
// clamped. Degenerate bins map everything to 5 (Q5). Throws on non-finite
// values.
int encode_numeric(double value, const QuantileBins& bins);

inline std::string quantile_token(int k) { return "Q" + std::to_string(k); }

struct AgeTokens {
    std::string tens;
    std::string ones;
    bool clamped = false;
};

// Age 0..99 as two quantile tokens: tens digit d1 and ones digit d2 become
// Q(d1+1), Q(d2+1). Out-of-range ages clamp to the bounds and are flagged.
AgeTokens encode_age(int years);

}  // namespace ethos
