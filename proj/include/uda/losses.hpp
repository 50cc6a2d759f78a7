#pragma once

#include "uda/ops.hpp"

namespace uda {

constexpr double kProbClamp = 1e-7;

// scalar snapshot of one GAN step, for monitoring and the stop rule
struct GanLossTerms {
    double d_loss_real = 0.0;
    double d_loss_fake = 0.0;
    double g_adv_loss = 0.0;   // adv(S->T) + adv(T->S)
    double cycle_loss = 0.0;
    double g_total = 0.0;
};

// mean(-log d_real - log(1 - d_fake)); inputs are "real" probabilities
template <class T>
Tensor<T> discriminator_loss(const Tensor<T>& d_real, const Tensor<T>& d_fake) {
    T lo = static_cast<T>(kProbClamp), hi = static_cast<T>(1.0 - kProbClamp);
    auto real_term = neg(mean(log_(clamp(d_real, lo, hi))));
    auto fake_term = neg(mean(log_(clamp(neg(add_scalar(d_fake, T(-1))), lo, hi))));
    return add(real_term, fake_term);
}

// non-saturating form: mean(-log d_fake)
template <class T>
Tensor<T> generator_adv_loss(const Tensor<T>& d_fake) {
    T lo = static_cast<T>(kProbClamp), hi = static_cast<T>(1.0 - kProbClamp);
    return neg(mean(log_(clamp(d_fake, lo, hi))));
}

// mean-L1 reconstruction penalty, both cycle directions
template <class T>
Tensor<T> cycle_loss(const Tensor<T>& x_s, const Tensor<T>& x_s_rec, const Tensor<T>& x_t,
                     const Tensor<T>& x_t_rec) {
    return add(l1_distance(x_s, x_s_rec), l1_distance(x_t, x_t_rec));
}

// mean per-pixel cross entropy of NCHW logits against NHW class indices
template <class T>
Tensor<T> segmentation_loss(const Tensor<T>& logits, const std::vector<int>& labels,
                            int ignore_index = -1, bool* all_ignored = nullptr) {
    return softmax_cross_entropy(logits, labels, ignore_index, all_ignored);
}

// adv(S->T) + adv(T->S) + lambda_cycle * cycle
template <class T>
Tensor<T> total_generator_objective(const Tensor<T>& adv_st, const Tensor<T>& adv_ts,
                                    const Tensor<T>& cycle, double lambda_cycle) {
    if (lambda_cycle < 0.0) throw ParamError("total_generator_objective: lambda_cycle must be >= 0");
    return add(add(adv_st, adv_ts), scale(cycle, static_cast<T>(lambda_cycle)));
}

}  // namespace uda
