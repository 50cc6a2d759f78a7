#pragma once

#include "uda/tensor.hpp"

namespace uda {

// Adam with bias correction, one moment pair per parameter tensor.
template <class T>
struct AdamState {
    long step = 0;
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::vector<std::vector<T>> m;
    std::vector<std::vector<T>> v;

    static AdamState make(const std::vector<Tensor<T>>& params, double lr) {
        AdamState s;
        s.lr = lr;
        s.m.reserve(params.size());
        s.v.reserve(params.size());
        for (const auto& p : params) {
            s.m.emplace_back(p->size(), T(0));
            s.v.emplace_back(p->size(), T(0));
        }
        return s;
    }
};

template <class T>
void adam_step(const std::vector<Tensor<T>>& params, AdamState<T>& state) {
    if (params.size() != state.m.size())
        throw ParamError("adam_step: state holds " + std::to_string(state.m.size()) +
                         " moment buffers but got " + std::to_string(params.size()) + " parameters");
    state.step += 1;
    double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (size_t pi = 0; pi < params.size(); ++pi) {
        auto& p = params[pi];
        if (state.m[pi].size() != p->size())
            throw ParamError("adam_step: moment buffer " + std::to_string(pi) +
                             " does not match parameter shape " + shape_str(p->shape));
        p->ensure_grad();
        auto& m = state.m[pi];
        auto& v = state.v[pi];
        for (size_t i = 0; i < p->size(); ++i) {
            double g = static_cast<double>(p->grad[i]);
            double mi = state.beta1 * static_cast<double>(m[i]) + (1.0 - state.beta1) * g;
            double vi = state.beta2 * static_cast<double>(v[i]) + (1.0 - state.beta2) * g * g;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            double mhat = mi / bc1;
            double vhat = vi / bc2;
            p->data[i] -= static_cast<T>(state.lr * mhat / (std::sqrt(vhat) + state.epsilon));
        }
    }
}

template <class T>
void zero_grads(const std::vector<Tensor<T>>& params) {
    for (const auto& p : params) p->zero_grad();
}

}  // namespace uda
