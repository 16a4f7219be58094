#ifndef MRDIS_OPTIM_HPP
#define MRDIS_OPTIM_HPP

#include <span>
#include <vector>

#include "mrdis/tensor.hpp"

namespace mrdis {

struct LrMilestone {
    std::size_t step = 0;
    double multiplier = 1.0;

    friend bool operator==(const LrMilestone&, const LrMilestone&) = default;
};

/// SGD with momentum and a step-decay schedule: from step `s` on, the base
/// rate is multiplied by every milestone with step <= s.
template <typename T>
struct OptimizerState {
    double learning_rate = 0.05;
    double momentum = 0.9;
    std::vector<LrMilestone> schedule;
    std::size_t step = 0;
    std::vector<Tensor<T>> velocity;

    void validate() const {
        require(learning_rate > 0, "bad_config", "learning rate must be positive");
        require(momentum >= 0 && momentum < 1, "bad_config", "momentum must be in [0,1)");
        for (std::size_t i = 1; i < schedule.size(); ++i)
            require(schedule[i].step > schedule[i - 1].step, "bad_config", "schedule steps must be strictly increasing");
    }

    double lr_at(std::size_t s) const {
        double lr = learning_rate;
        for (const auto& m : schedule)
            if (s >= m.step) lr *= m.multiplier;
        return lr;
    }

    double current_lr() const { return lr_at(step); }
};

/// v <- momentum v - lr g; w <- w + v. Velocity buffers are created on the
/// first call and must keep matching the parameter shapes afterwards.
template <typename T>
void sgd_step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>> grads, OptimizerState<T>& state) {
    state.validate();
    require(params.size() == grads.size(), "shape_mismatch", "parameter and gradient counts differ");
    if (state.velocity.empty())
        for (const auto* p : params) state.velocity.emplace_back(p->shape());
    require(state.velocity.size() == params.size(), "shape_mismatch", "velocity buffer count differs");
    for (std::size_t i = 0; i < params.size(); ++i) {
        require_shape(grads[i], params[i]->shape(), "gradient");
        require_shape(state.velocity[i], params[i]->shape(), "velocity");
        require_finite(grads[i], "gradient");
    }
    const T lr = static_cast<T>(state.current_lr());
    const T mom = static_cast<T>(state.momentum);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto w = params[i]->values();
        auto v = state.velocity[i].values();
        auto g = grads[i].values();
        for (std::size_t j = 0; j < w.size(); ++j) {
            v[j] = mom * v[j] - lr * g[j];
            w[j] += v[j];
        }
        require_finite(*params[i], "updated parameter");
    }
    ++state.step;
}

}  // namespace mrdis

#endif
