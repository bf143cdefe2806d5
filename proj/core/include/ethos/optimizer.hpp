#pragma once

#include <cstdint>
#include <vector>

namespace ethos {

struct AdamWParams {
    double lr = 4e-4;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// AdamW with decoupled weight decay:
//   p <- p - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * p
struct AdamWState {
    AdamWParams hp;
    std::vector<float> m;
    std::vector<float> v;
    std::uint64_t t = 0;

    static AdamWState init(size_t n_params, AdamWParams hp = {});
};

// One update step; t is incremented before bias correction. Throws on shape
// mismatch or non-finite gradients.
void adamw_step(std::vector<float>& params, const std::vector<float>& grads, AdamWState& state);

}  // namespace ethos
