// SPDX-License-Identifier: Apache-2.0
#include "xlmeta/optim.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace xlmeta::optim {

SgdConfig make_sgd(double alpha) {
    if (!(alpha > 0.0)) {
        throw std::invalid_argument("sgd: alpha must be > 0, got " + std::to_string(alpha));
    }
    return SgdConfig{alpha};
}

ad::ParamSet sgd_functional_step(const ad::ParamSet& params, const ad::GradientMap& grads,
                                 double alpha) {
    if (alpha < 0.0) {
        throw std::invalid_argument("sgd_functional_step: alpha must be >= 0, got " +
                                    std::to_string(alpha));
    }
    ad::ParamSet adapted;
    for (const auto& [name, theta] : params) {
        auto it = grads.find(name);
        if (it == grads.end()) {
            throw std::invalid_argument("sgd_functional_step: missing gradient for parameter '" +
                                        name + "'");
        }
        adapted.emplace(name, ad::sub(theta, ad::scale(it->second, alpha)));
    }
    return adapted;
}

AdamWState make_adamw(double lr, double weight_decay) {
    if (!(lr > 0.0)) {
        throw std::invalid_argument("adamw: lr must be > 0, got " + std::to_string(lr));
    }
    if (weight_decay < 0.0) {
        throw std::invalid_argument("adamw: weight decay must be >= 0, got " +
                                    std::to_string(weight_decay));
    }
    AdamWState s;
    s.lr = lr;
    s.weight_decay = weight_decay;
    return s;
}

void adamw_step(AdamWState& state, ad::TensorMap& params, const ad::TensorMap& grads,
                double lr_t) {
    if (lr_t < 0.0) {
        throw std::invalid_argument("adamw_step: lr_t must be >= 0, got " + std::to_string(lr_t));
    }
    state.t += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (auto& [name, theta] : params) {
        auto git = grads.find(name);
        if (git == grads.end()) {
            throw std::invalid_argument("adamw_step: missing gradient for parameter '" + name +
                                        "'");
        }
        const Tensor& g = git->second;
        if (!g.same_shape(theta)) {
            throw std::invalid_argument("adamw_step: gradient shape " + shape_str(g.shape()) +
                                        " does not match parameter '" + name + "' " +
                                        shape_str(theta.shape()));
        }
        auto mit = state.m.find(name);
        if (mit == state.m.end()) {
            mit = state.m.emplace(name, Tensor::zeros(theta.shape())).first;
            state.v.emplace(name, Tensor::zeros(theta.shape()));
        }
        const Tensor& m_old = mit->second;
        const Tensor& v_old = state.v.at(name);

        const std::size_t n = theta.numel();
        std::vector<double> m_new(n), v_new(n), theta_new(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double gi = g.at(i);
            m_new[i] = state.beta1 * m_old.at(i) + (1.0 - state.beta1) * gi;
            v_new[i] = state.beta2 * v_old.at(i) + (1.0 - state.beta2) * gi * gi;
            const double mhat = m_new[i] / bc1;
            const double vhat = v_new[i] / bc2;
            theta_new[i] = theta.at(i) - lr_t * mhat / (std::sqrt(vhat) + state.eps) -
                           lr_t * state.weight_decay * theta.at(i);
        }
        state.m[name] = Tensor::from_vector(theta.shape(), std::move(m_new));
        state.v[name] = Tensor::from_vector(theta.shape(), std::move(v_new));
        params[name] = Tensor::from_vector(theta.shape(), std::move(theta_new));
    }
}

void adamw_step(AdamWState& state, ad::TensorMap& params, const ad::TensorMap& grads) {
    adamw_step(state, params, grads, state.lr);
}

ad::TensorMap adamw_state_tensors(const AdamWState& state) {
    ad::TensorMap out;
    out.emplace("adamw.t", Tensor::scalar(static_cast<double>(state.t)));
    for (const auto& [name, m] : state.m) out.emplace("adamw.m." + name, m);
    for (const auto& [name, v] : state.v) out.emplace("adamw.v." + name, v);
    return out;
}

void adamw_restore(AdamWState& state, const ad::TensorMap& saved) {
    auto it = saved.find("adamw.t");
    if (it == saved.end()) {
        throw std::invalid_argument("adamw_restore: missing 'adamw.t' in saved state");
    }
    state.t = static_cast<std::int64_t>(it->second.scalar_value());
    state.m.clear();
    state.v.clear();
    for (const auto& [key, tensor] : saved) {
        if (key.rfind("adamw.m.", 0) == 0) {
            state.m.emplace(key.substr(8), tensor);
        } else if (key.rfind("adamw.v.", 0) == 0) {
            state.v.emplace(key.substr(8), tensor);
        }
    }
}

double linear_lr(std::int64_t step, std::int64_t total_steps, double base) {
    if (total_steps < 1) {
        throw std::invalid_argument("linear_lr: total_steps must be >= 1, got " +
                                    std::to_string(total_steps));
    }
    if (step < 0) {
        throw std::invalid_argument("linear_lr: step must be >= 0, got " + std::to_string(step));
    }
    if (step >= total_steps) return 0.0;
    return base * (1.0 - static_cast<double>(step) / static_cast<double>(total_steps));
}

}  // namespace xlmeta::optim
