#include <cmath>

#include "doctest.h"
#include "grad_check.hpp"
#include "uda/losses.hpp"

using namespace uda;
using testutil::max_rel_error;

TEST_CASE("discriminator_loss closed form at p = 0.5 is 2 ln 2") {
    auto half = full<double>({4}, 0.5);
    auto loss = discriminator_loss(half, half);
    CHECK(loss->data[0] == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("discriminator_loss rewards confident correct calls") {
    auto good_real = full<double>({2}, 0.99);
    auto good_fake = full<double>({2}, 0.01);
    auto bad_real = full<double>({2}, 0.01);
    auto bad_fake = full<double>({2}, 0.99);
    CHECK(discriminator_loss(good_real, good_fake)->data[0] <
          discriminator_loss(bad_real, bad_fake)->data[0]);
}

TEST_CASE("probability clamping keeps the losses finite at 0 and 1") {
    auto zero = full<double>({2}, 0.0);
    auto one = full<double>({2}, 1.0);
    CHECK(std::isfinite(discriminator_loss(zero, one)->data[0]));
    CHECK(std::isfinite(generator_adv_loss(zero)->data[0]));
    // clamp at 1e-7: -ln(1e-7)
    CHECK(generator_adv_loss(zero)->data[0] == doctest::Approx(-std::log(kProbClamp)));
}

TEST_CASE("generator_adv_loss closed form: -ln p") {
    auto half = full<double>({3}, 0.5);
    CHECK(generator_adv_loss(half)->data[0] == doctest::Approx(std::log(2.0)));
    auto p = make_tensor<double>({2}, {0.3, 0.6}, true);
    CHECK(max_rel_error({p}, [&] { return generator_adv_loss(p); }) < 1e-5);
}

TEST_CASE("cycle_loss is zero under identity reconstruction") {
    Rng rng(3);
    auto x_s = randn<double>({1, 3, 4, 4}, rng);
    auto x_t = randn<double>({1, 3, 4, 4}, rng);
    CHECK(cycle_loss(x_s, x_s, x_t, x_t)->data[0] == 0.0);
    auto rec = add_scalar(x_s, 0.25);
    CHECK(cycle_loss(x_s, rec, x_t, x_t)->data[0] == doctest::Approx(0.25));
}

TEST_CASE("total_generator_objective combines terms with lambda") {
    auto a = full<double>({1}, 1.0);
    auto b = full<double>({1}, 2.0);
    auto c = full<double>({1}, 0.5);
    CHECK(total_generator_objective(a, b, c, 10.0)->data[0] == doctest::Approx(8.0));
    CHECK(total_generator_objective(a, b, c, 0.0)->data[0] == doctest::Approx(3.0));
    CHECK_THROWS_AS(total_generator_objective(a, b, c, -1.0), ParamError);
}

TEST_CASE("segmentation_loss is mean cross entropy, ln C for uniform logits") {
    auto logits = zeros<double>({1, 6, 4, 4});
    std::vector<int> labels(16, 2);
    CHECK(segmentation_loss(logits, labels)->data[0] ==
          doctest::Approx(std::log(6.0)).epsilon(1e-9));
}

TEST_CASE("loss gradients pass finite differences") {
    Rng rng(17);
    std::vector<double> dr(6), df(6);
    for (auto& v : dr) v = rng.uniform(0.1, 0.9);
    for (auto& v : df) v = rng.uniform(0.1, 0.9);
    auto real = make_tensor<double>({6}, dr, true);
    auto fake = make_tensor<double>({6}, df, true);
    CHECK(max_rel_error({real, fake}, [&] { return discriminator_loss(real, fake); }) < 1e-5);

    auto x_s = randn<double>({1, 2, 3, 3}, rng, 0.0, 1.0, true);
    auto r_s = randn<double>({1, 2, 3, 3}, rng, 0.0, 1.0, true);
    auto x_t = randn<double>({1, 2, 3, 3}, rng, 0.0, 1.0, true);
    auto r_t = randn<double>({1, 2, 3, 3}, rng, 0.0, 1.0, true);
    CHECK(max_rel_error({x_s, r_s, x_t, r_t},
                        [&] { return cycle_loss(x_s, r_s, x_t, r_t); }) < 1e-5);
}
