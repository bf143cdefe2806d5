#include "ethos/quantiles.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ethos {

QuantileBins fit_quantiles_from_values(const std::string& code, std::vector<double> values) {
    if (values.empty()) throw std::runtime_error("no values to fit for code '" + code + "'");
    std::sort(values.begin(), values.end());

    QuantileBins bins;
    bins.code = code;
    bins.n_fit = values.size();
    const size_t n = values.size();
    for (int i = 1; i <= 9; ++i) {
        // Lower-interpolated empirical quantile: index floor((n-1) * i/10).
        const size_t idx = (n - 1) * static_cast<size_t>(i) / 10;
        bins.boundaries[static_cast<size_t>(i - 1)] = values[idx];
    }
    bins.degenerate = n < 10 || values.front() == values.back();
    return bins;
}

QuantileBins fit_quantiles(const EventStream& train, const std::string& code) {
    std::vector<double> values;
    for (const Event& ev : train.events()) {
        if (ev.code == code && ev.numeric_value) values.push_back(*ev.numeric_value);
    }
    return fit_quantiles_from_values(code, std::move(values));
}

int encode_numeric(double value, const QuantileBins& bins) {
    if (!std::isfinite(value)) throw std::runtime_error("non-finite value for code '" + bins.code + "'");
    if (bins.degenerate) return 5;
    int below = 0;
    for (double b : bins.boundaries) {
        if (b < value) ++below;
    }
    return std::clamp(below + 1, 1, 10);
}

AgeTokens encode_age(int years) {
    AgeTokens out;
    if (years < 0) {
        years = 0;
        out.clamped = true;
    } else if (years > 99) {
        years = 99;
        out.clamped = true;
    }
    out.tens = quantile_token(years / 10 + 1);
    out.ones = quantile_token(years % 10 + 1);
    return out;
}

}  // namespace ethos
