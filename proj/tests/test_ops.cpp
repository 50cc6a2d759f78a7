#include <cmath>

#include "doctest.h"
#include "grad_check.hpp"
#include "uda/ops.hpp"

using namespace uda;
using testutil::max_rel_error;

namespace {

// quadruple-loop reference convolution, NCHW / OIKK
std::vector<double> conv_reference(const std::vector<double>& x, int N, int I, int H, int W,
                                   const std::vector<double>& w, int O, int K,
                                   const std::vector<double>& b, int stride, int pad) {
    int OH = conv_out_dim(H, K, stride, pad);
    int OW = conv_out_dim(W, K, stride, pad);
    std::vector<double> y(static_cast<size_t>(N) * O * OH * OW, 0.0);
    for (int n = 0; n < N; ++n)
        for (int o = 0; o < O; ++o)
            for (int oy = 0; oy < OH; ++oy)
                for (int ox = 0; ox < OW; ++ox) {
                    double acc = b[static_cast<size_t>(o)];
                    for (int i = 0; i < I; ++i)
                        for (int ky = 0; ky < K; ++ky)
                            for (int kx = 0; kx < K; ++kx) {
                                int iy = oy * stride + ky - pad;
                                int ix = ox * stride + kx - pad;
                                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                                acc += x[((static_cast<size_t>(n) * I + i) * H + iy) * W + ix] *
                                       w[((static_cast<size_t>(o) * I + i) * K + ky) * K + kx];
                            }
                    y[((static_cast<size_t>(n) * O + o) * OH + oy) * OW + ox] = acc;
                }
    return y;
}

Tensor<double> randt(std::vector<int> shape, Rng& rng, bool grad = true) {
    std::vector<double> d(numel(shape));
    for (auto& v : d) v = rng.uniform(-1.0, 1.0);
    return make_tensor<double>(shape, d, grad);
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace

TEST_CASE("matmul kernels agree with naive products") {
    Rng rng(11);
    size_t M = 4, K = 5, N = 3;
    std::vector<double> A(M * K), B(K * N), Bt(N * K), At(K * M);
    for (auto& v : A) v = rng.uniform(-1, 1);
    for (auto& v : B) v = rng.uniform(-1, 1);
    for (size_t i = 0; i < N; ++i)
        for (size_t k = 0; k < K; ++k) Bt[i * K + k] = B[k * N + i];
    for (size_t k = 0; k < K; ++k)
        for (size_t i = 0; i < M; ++i) At[k * M + i] = A[i * K + k];
    std::vector<double> ref(M * N, 0.0);
    for (size_t i = 0; i < M; ++i)
        for (size_t k = 0; k < K; ++k)
            for (size_t j = 0; j < N; ++j) ref[i * N + j] += A[i * K + k] * B[k * N + j];
    std::vector<double> c1(M * N, 0.0), c2(M * N, 0.0), c3(M * N, 0.0);
    matmul_nn(M, K, N, A.data(), B.data(), c1.data());
    matmul_nt(M, K, N, A.data(), Bt.data(), c2.data());
    matmul_tn(M, K, N, At.data(), B.data(), c3.data());
    for (size_t i = 0; i < M * N; ++i) {
        CHECK(c1[i] == doctest::Approx(ref[i]));
        CHECK(c2[i] == doctest::Approx(ref[i]));
        CHECK(c3[i] == doctest::Approx(ref[i]));
    }
}

TEST_CASE("conv2d matches the quadruple-loop oracle over random shapes") {
    Rng rng(21);
    for (int trial = 0; trial < 25; ++trial) {
        int N = 1 + static_cast<int>(rng.uniform_int(2));
        int I = 1 + static_cast<int>(rng.uniform_int(3));
        int O = 1 + static_cast<int>(rng.uniform_int(3));
        int K = 1 + static_cast<int>(rng.uniform_int(3));
        int stride = 1 + static_cast<int>(rng.uniform_int(2));
        int pad = static_cast<int>(rng.uniform_int(2));
        int H = K + static_cast<int>(rng.uniform_int(5));
        int W = K + static_cast<int>(rng.uniform_int(5));
        auto x = randt({N, I, H, W}, rng);
        auto w = randt({O, I, K, K}, rng);
        auto b = randt({O}, rng);
        auto y = conv2d(x, w, b, stride, pad);
        auto ref = conv_reference(x->data, N, I, H, W, w->data, O, K, b->data, stride, pad);
        REQUIRE(y->size() == ref.size());
        for (size_t i = 0; i < ref.size(); ++i) CHECK(y->data[i] == doctest::Approx(ref[i]));
    }
}

TEST_CASE("conv2d shape validation") {
    Rng rng(1);
    auto x = randt({1, 2, 5, 5}, rng);
    auto w = randt({3, 2, 3, 3}, rng);
    auto b = randt({3}, rng);
    CHECK_THROWS_AS(conv2d(x, randt({3, 4, 3, 3}, rng), b, 1, 1), ShapeError);
    CHECK_THROWS_AS(conv2d(x, w, randt({2}, rng), 1, 1), ShapeError);
    CHECK_THROWS_AS(conv2d(x, w, b, 0, 1), ParamError);
    CHECK_THROWS_AS(conv2d(x, randt({3, 2, 9, 9}, rng), b, 1, 0), ShapeError);
}

TEST_CASE("conv2d gradients pass finite differences") {
    Rng rng(31);
    for (int trial = 0; trial < 8; ++trial) {
        int I = 1 + static_cast<int>(rng.uniform_int(2));
        int O = 1 + static_cast<int>(rng.uniform_int(2));
        int K = 2 + static_cast<int>(rng.uniform_int(2));
        int stride = 1 + static_cast<int>(rng.uniform_int(2));
        auto x = randt({1, I, 6, 6}, rng);
        auto w = randt({O, I, K, K}, rng);
        auto b = randt({O}, rng);
        CHECK(max_rel_error({x, w, b}, [&] { return mean(mul(conv2d(x, w, b, stride, 1),
                                                             conv2d(x, w, b, stride, 1))); }) < 1e-5);
    }
}

TEST_CASE("conv_transpose2d is the exact adjoint of conv2d") {
    // inner-product identity <conv(x), y> == <x, convT(y)> with shared weights
    Rng rng(41);
    for (int trial = 0; trial < 10; ++trial) {
        int I = 1 + static_cast<int>(rng.uniform_int(3));
        int O = 1 + static_cast<int>(rng.uniform_int(3));
        int stride = 1 + static_cast<int>(rng.uniform_int(2));
        int pad = 1;
        int H = 6, W = 6;
        // the identity needs conv2d's floor-division output size to round-trip:
        // (H + 2*pad - K) must be divisible by the stride
        int K = stride == 2 ? 2 + 2 * static_cast<int>(rng.uniform_int(2))
                            : 2 + static_cast<int>(rng.uniform_int(3));
        auto x = randt({1, I, H, W}, rng, false);
        auto w_oikk = randt({O, I, K, K}, rng, false);
        auto zb_o = zeros<double>({O});
        auto zb_i = zeros<double>({I});
        auto cx = conv2d(x, w_oikk, zb_o, stride, pad);
        auto y = randt(cx->shape, rng, false);
        // conv_transpose2d weight layout is IOKK with I = conv output channels
        std::vector<double> w_iokk(w_oikk->size());
        for (int o = 0; o < O; ++o)
            for (int i = 0; i < I; ++i)
                for (int k = 0; k < K * K; ++k)
                    w_iokk[(static_cast<size_t>(o) * I + i) * K * K + k] =
                        w_oikk->data[(static_cast<size_t>(o) * I + i) * K * K + k];
        auto wT = make_tensor<double>({O, I, K, K}, w_iokk);
        auto xty = conv_transpose2d(y, wT, zb_i, stride, pad);
        CHECK(xty->shape == x->shape);
        CHECK(dot(cx->data, y->data) == doctest::Approx(dot(x->data, xty->data)));
    }
}

TEST_CASE("conv_transpose2d output size and gradients") {
    Rng rng(51);
    auto x = randt({1, 2, 4, 4}, rng);
    auto w = randt({2, 3, 4, 4}, rng);
    auto b = randt({3}, rng);
    auto y = conv_transpose2d(x, w, b, 2, 1);
    CHECK(y->shape == std::vector<int>{1, 3, 8, 8});
    CHECK(max_rel_error({x, w, b}, [&] { return mean(mul(conv_transpose2d(x, w, b, 2, 1),
                                                         conv_transpose2d(x, w, b, 2, 1))); }) < 1e-5);
    CHECK_THROWS_AS(conv_transpose2d(x, randt({3, 3, 4, 4}, rng), b, 2, 1), ShapeError);
}

TEST_CASE("instance_norm hand values and gradients") {
    // one channel, plane {1,3}: mean 2, var 1 -> xhat {-1, 1} (up to eps)
    auto x = make_tensor<double>({1, 1, 1, 2}, {1.0, 3.0}, true);
    auto g = full<double>({1}, 2.0, true);
    auto b = full<double>({1}, 0.5, true);
    auto y = instance_norm(x, 1e-10, g, b);
    CHECK(y->data[0] == doctest::Approx(-1.5));
    CHECK(y->data[1] == doctest::Approx(2.5));
    CHECK_THROWS_AS(instance_norm(x, 0.0, g, b), ParamError);
    CHECK_THROWS_AS(instance_norm(x, 1e-5, full<double>({2}, 1.0), b), ShapeError);

    Rng rng(61);
    for (int trial = 0; trial < 8; ++trial) {
        int C = 1 + static_cast<int>(rng.uniform_int(3));
        auto xi = randt({2, C, 3, 4}, rng);
        auto gi = randt({C}, rng);
        auto bi = randt({C}, rng);
        CHECK(max_rel_error({xi, gi, bi}, [&] {
                  return mean(mul(instance_norm(xi, 1e-5, gi, bi), instance_norm(xi, 1e-5, gi, bi)));
              }) < 1e-5);
    }
}

TEST_CASE("global_avg_pool and linear") {
    auto x = make_tensor<double>({1, 2, 1, 2}, {1.0, 3.0, 5.0, 7.0}, true);
    auto p = global_avg_pool(x);
    CHECK(p->shape == std::vector<int>{1, 2});
    CHECK(p->data[0] == doctest::Approx(2.0));
    CHECK(p->data[1] == doctest::Approx(6.0));

    auto w = make_tensor<double>({2, 2}, {1.0, 0.0, 0.0, 1.0}, true);
    auto b = make_tensor<double>({2}, {0.5, -0.5}, true);
    auto y = linear(p, w, b);
    CHECK(y->data[0] == doctest::Approx(2.5));
    CHECK(y->data[1] == doctest::Approx(5.5));

    Rng rng(71);
    for (int trial = 0; trial < 10; ++trial) {
        auto xi = randt({3, 4, 2, 2}, rng);
        auto wi = randt({2, 4}, rng);
        auto bi = randt({2}, rng);
        CHECK(max_rel_error({xi, wi, bi}, [&] {
                  auto o = linear(global_avg_pool(xi), wi, bi);
                  return mean(mul(o, o));
              }) < 1e-5);
    }
}

TEST_CASE("softmax_cross_entropy matches a log-softmax oracle") {
    Rng rng(81);
    for (int trial = 0; trial < 10; ++trial) {
        int C = 2 + static_cast<int>(rng.uniform_int(5));
        int H = 2, W = 3;
        auto logits = randt({1, C, H, W}, rng);
        std::vector<int> labels(static_cast<size_t>(H) * W);
        for (auto& l : labels) l = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(C)));
        auto loss = softmax_cross_entropy(logits, labels);
        double ref = 0.0;
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                double mx = -1e300, z = 0.0;
                for (int c = 0; c < C; ++c)
                    mx = std::max(mx, logits->data[(static_cast<size_t>(c) * H + y) * W + x]);
                for (int c = 0; c < C; ++c)
                    z += std::exp(logits->data[(static_cast<size_t>(c) * H + y) * W + x] - mx);
                int lab = labels[static_cast<size_t>(y) * W + x];
                ref -= logits->data[(static_cast<size_t>(lab) * H + y) * W + x] - mx - std::log(z);
            }
        CHECK(loss->data[0] == doctest::Approx(ref / (H * W)));
        CHECK(max_rel_error({logits}, [&] { return softmax_cross_entropy(logits, labels); }) < 1e-5);
    }
}

TEST_CASE("softmax_cross_entropy: uniform logits give ln C") {
    auto logits = zeros<double>({1, 6, 4, 4});
    std::vector<int> labels(16, 3);
    auto loss = softmax_cross_entropy(logits, labels);
    CHECK(loss->data[0] == doctest::Approx(std::log(6.0)).epsilon(1e-9));
}

TEST_CASE("softmax_cross_entropy: ignore_index, empty batches, bad labels") {
    Rng rng(91);
    auto logits = randt({1, 3, 2, 2}, rng);
    std::vector<int> labels = {0, -1, 2, -1};
    bool empty = false;
    auto loss = softmax_cross_entropy(logits, labels, -1, &empty);
    CHECK_FALSE(empty);
    std::vector<int> all_ignored(4, -1);
    auto z = softmax_cross_entropy(logits, all_ignored, -1, &empty);
    CHECK(empty);
    CHECK(z->data[0] == 0.0);
    std::vector<int> bad = {0, 1, 7, 2};
    try {
        softmax_cross_entropy(logits, bad);
        FAIL("expected ParamError");
    } catch (const ParamError& e) {
        // the diagnostic names the offending pixel
        CHECK(std::string(e.what()).find("y=1") != std::string::npos);
        CHECK(std::string(e.what()).find("x=0") != std::string::npos);
    }
    CHECK_THROWS_AS(softmax_cross_entropy(logits, std::vector<int>(3, 0)), ShapeError);
}
