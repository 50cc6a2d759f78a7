#include <cmath>

#include "doctest.h"
#include "uda/adam.hpp"

using namespace uda;

TEST_CASE("adam first step moves by -lr * sign(gradient)") {
    auto p = make_tensor<double>({3}, {1.0, 2.0, 3.0}, true);
    p->ensure_grad();
    p->grad = {0.5, -2.0, 0.0};
    auto st = AdamState<double>::make({p}, 0.01);
    adam_step({p}, st);
    // mhat/ (sqrt(vhat)+eps) == g/(|g|+eps) ~= sign(g) on the first step
    CHECK(p->data[0] == doctest::Approx(1.0 - 0.01).epsilon(1e-6));
    CHECK(p->data[1] == doctest::Approx(2.0 + 0.01).epsilon(1e-6));
    CHECK(p->data[2] == doctest::Approx(3.0));
}

TEST_CASE("adam matches a hand-rolled two-step oracle") {
    const double lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double g1 = 0.3, g2 = -0.7;
    double x = 1.0, m = 0.0, v = 0.0;
    for (int t = 1; t <= 2; ++t) {
        double g = t == 1 ? g1 : g2;
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        double mh = m / (1 - std::pow(b1, t));
        double vh = v / (1 - std::pow(b2, t));
        x -= lr * mh / (std::sqrt(vh) + eps);
    }

    auto p = make_tensor<double>({1}, {1.0}, true);
    auto st = AdamState<double>::make({p}, lr);
    p->ensure_grad();
    p->grad = {g1};
    adam_step({p}, st);
    p->grad = {g2};
    adam_step({p}, st);
    CHECK(p->data[0] == doctest::Approx(x).epsilon(1e-12));
    CHECK(st.step == 2);
}

TEST_CASE("adam rejects mismatched parameter lists") {
    auto p = make_tensor<double>({2}, {1.0, 2.0}, true);
    auto q = make_tensor<double>({2}, {1.0, 2.0}, true);
    auto st = AdamState<double>::make({p}, 0.01);
    CHECK_THROWS_AS(adam_step({p, q}, st), ParamError);
}

TEST_CASE("zero_grads resets gradients and the backward latch") {
    auto p = make_tensor<double>({2}, {1.0, 2.0}, true);
    auto loss = sum(mul(p, p));
    backward(loss);
    CHECK(p->grad[0] != 0.0);
    zero_grads<double>({p});
    CHECK(p->grad[0] == 0.0);
    CHECK(p->grad[1] == 0.0);
}
