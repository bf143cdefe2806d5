#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ethos {

struct GradCheckConfigResult {
    std::string description;
    double max_rel_error = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckConfigResult> configs;
    double max_rel_error = 0.0;
    double tolerance = 1e-3;
    bool pass = false;
};

// Compares analytic gradients against five-point central finite differences
// (h = 1e-3) of the double-precision loss, over n random small configs.
// The numeric side touches only the forward/loss path.
GradCheckReport run_gradcheck(size_t n_configs, std::uint64_t seed, double tolerance = 1e-3);

}  // namespace ethos
