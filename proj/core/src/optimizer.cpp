#include "ethos/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace ethos {

AdamWState AdamWState::init(size_t n_params, AdamWParams hp) {
    AdamWState s;
    s.hp = hp;
    s.m.assign(n_params, 0.0f);
    s.v.assign(n_params, 0.0f);
    s.t = 0;
    return s;
}

void adamw_step(std::vector<float>& params, const std::vector<float>& grads, AdamWState& state) {
    if (params.size() != grads.size() || params.size() != state.m.size() || params.size() != state.v.size())
        throw std::invalid_argument("adamw_step: shape mismatch");
    for (float g : grads) {
        if (!std::isfinite(g)) throw std::runtime_error("adamw_step: non-finite gradient");
    }
    state.t += 1;
    const double b1 = state.hp.beta1;
    const double b2 = state.hp.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
    for (size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        const double m = b1 * state.m[i] + (1.0 - b1) * g;
        const double v = b2 * state.v[i] + (1.0 - b2) * g * g;
        state.m[i] = static_cast<float>(m);
        state.v[i] = static_cast<float>(v);
        const double m_hat = m / bc1;
        const double v_hat = v / bc2;
        const double p = params[i];
        params[i] = static_cast<float>(p - state.hp.lr * m_hat / (std::sqrt(v_hat) + state.hp.eps) -
                                       state.hp.lr * state.hp.weight_decay * p);
    }
}

}  // namespace ethos
