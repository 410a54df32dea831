#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "psp/autograd.hpp"
#include "psp/errors.hpp"
#include "psp/tensor.hpp"

namespace psp {

enum class Schedule { constant, step_decay };

inline const char* to_string(Schedule s) {
    return s == Schedule::constant ? "constant" : "step-decay";
}

inline Schedule schedule_from_string(const std::string& s) {
    if (s == "constant") return Schedule::constant;
    if (s == "step-decay") return Schedule::step_decay;
    throw ConfigError("unknown schedule: " + s);
}

template <typename T>
struct SgdConfig {
    T eta = T(0);
    T momentum = T(0);
    Schedule schedule = Schedule::constant;
    int warm_epochs = 150;  // epochs before the first step-decay drop

    void validate() const {
        if (!(eta > T(0))) throw ConfigError("learning rate must be > 0");
        if (!(momentum >= T(0) && momentum < T(1))) {
            throw ConfigError("momentum must be in [0,1)");
        }
    }
};

/// Per-parameter velocity buffers.
template <typename T>
struct OptState {
    std::vector<Tensor<T>> velocity;

    void ensure(const std::vector<Parameter<T>>& params) {
        if (velocity.empty()) {
            velocity.reserve(params.size());
            for (const auto& p : params) velocity.emplace_back(p.value.shape());
            return;
        }
        if (velocity.size() != params.size()) {
            throw ContractError("optimizer state holds " + std::to_string(velocity.size()) +
                                " velocities for " + std::to_string(params.size()) +
                                " parameters");
        }
    }
};

/// v ← momentum·v + (η·∇L + λ·∇R); θ ← θ − v. The loss gradient is read
/// from Parameter::grad; lambda_reg_grads, when present, carries the
/// already λ-scaled regularizer gradient per parameter (same order).
template <typename T>
void sgd_step(std::vector<Parameter<T>>& params, OptState<T>& state, const SgdConfig<T>& config,
              const std::vector<Tensor<T>>* lambda_reg_grads = nullptr) {
    config.validate();
    state.ensure(params);
    if (lambda_reg_grads && lambda_reg_grads->size() != params.size()) {
        throw ContractError("regularizer gradients: " + std::to_string(lambda_reg_grads->size()) +
                            " tensors for " + std::to_string(params.size()) + " parameters");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        Parameter<T>& p = params[i];
        Tensor<T>& v = state.velocity[i];
        if (lambda_reg_grads && !(*lambda_reg_grads)[i].same_shape(p.value)) {
            throw ContractError("regularizer gradient shape " + (*lambda_reg_grads)[i].shape_str() +
                                " vs parameter " + p.name + " " + p.value.shape_str());
        }
        const T* rg = lambda_reg_grads ? (*lambda_reg_grads)[i].data() : nullptr;
        for (std::size_t j = 0; j < p.value.size(); ++j) {
            T step = config.eta * p.grad[j];
            if (rg) step += rg[j];
            v[j] = config.momentum * v[j] + step;
            p.value[j] -= v[j];
        }
    }
}

/// Learning rate for an epoch: constant, or η·0.1^(1+floor((e−E₀)/100))
/// once e reaches the warm-up boundary E₀.
template <typename T>
T lr_at_epoch(const SgdConfig<T>& config, int epoch) {
    if (epoch < 0) throw ContractError("epoch must be >= 0");
    if (config.schedule == Schedule::constant || epoch < config.warm_epochs) {
        return config.eta;
    }
    const int drops = 1 + (epoch - config.warm_epochs) / 100;
    return config.eta * static_cast<T>(std::pow(0.1, drops));
}

}  // namespace psp
