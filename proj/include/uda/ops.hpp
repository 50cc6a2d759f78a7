#pragma once

#include "uda/tensor.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace uda {

// ---- dense kernels (internal) ----

// C[M,N] += A[M,K] * B[K,N]
template <class T>
void matmul_nn(size_t M, size_t K, size_t N, const T* A, const T* B, T* C) {
#pragma omp parallel for schedule(static)
    for (long long ii = 0; ii < static_cast<long long>(M); ++ii) {
        size_t i = static_cast<size_t>(ii);
        T* c = C + i * N;
        const T* a = A + i * K;
        for (size_t k = 0; k < K; ++k) {
            T av = a[k];
            if (av == T(0)) continue;
            const T* b = B + k * N;
            for (size_t j = 0; j < N; ++j) c[j] += av * b[j];
        }
    }
}

// C[M,N] += A[M,K] * B[N,K]^T
template <class T>
void matmul_nt(size_t M, size_t K, size_t N, const T* A, const T* B, T* C) {
#pragma omp parallel for schedule(static)
    for (long long ii = 0; ii < static_cast<long long>(M); ++ii) {
        size_t i = static_cast<size_t>(ii);
        const T* a = A + i * K;
        T* c = C + i * N;
        for (size_t j = 0; j < N; ++j) {
            const T* b = B + j * K;
            T acc = T(0);
            for (size_t k = 0; k < K; ++k) acc += a[k] * b[k];
            c[j] += acc;
        }
    }
}

// C[M,N] += A[K,M]^T * B[K,N]
template <class T>
void matmul_tn(size_t M, size_t K, size_t N, const T* A, const T* B, T* C) {
#pragma omp parallel for schedule(static)
    for (long long ii = 0; ii < static_cast<long long>(M); ++ii) {
        size_t i = static_cast<size_t>(ii);
        T* c = C + i * N;
        for (size_t k = 0; k < K; ++k) {
            T av = A[k * M + i];
            if (av == T(0)) continue;
            const T* b = B + k * N;
            for (size_t j = 0; j < N; ++j) c[j] += av * b[j];
        }
    }
}

inline int conv_out_dim(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}

// col[C*K*K, OH*OW] from a single image x[C,H,W], zero padding
template <class T>
void im2col(const T* x, int C, int H, int W, int K, int stride, int pad, T* col) {
    int OH = conv_out_dim(H, K, stride, pad);
    int OW = conv_out_dim(W, K, stride, pad);
    for (int c = 0; c < C; ++c) {
        for (int ky = 0; ky < K; ++ky) {
            for (int kx = 0; kx < K; ++kx) {
                T* row = col + ((static_cast<size_t>(c) * K + ky) * K + kx) * (static_cast<size_t>(OH) * OW);
                for (int oy = 0; oy < OH; ++oy) {
                    int iy = oy * stride + ky - pad;
                    for (int ox = 0; ox < OW; ++ox) {
                        int ix = ox * stride + kx - pad;
                        row[static_cast<size_t>(oy) * OW + ox] =
                            (iy >= 0 && iy < H && ix >= 0 && ix < W)
                                ? x[(static_cast<size_t>(c) * H + iy) * W + ix]
                                : T(0);
                    }
                }
            }
        }
    }
}

// adjoint of im2col: scatter-add col back into x[C,H,W]
template <class T>
void col2im_add(const T* col, int C, int H, int W, int K, int stride, int pad, T* x) {
    int OH = conv_out_dim(H, K, stride, pad);
    int OW = conv_out_dim(W, K, stride, pad);
    for (int c = 0; c < C; ++c) {
        for (int ky = 0; ky < K; ++ky) {
            for (int kx = 0; kx < K; ++kx) {
                const T* row = col + ((static_cast<size_t>(c) * K + ky) * K + kx) * (static_cast<size_t>(OH) * OW);
                for (int oy = 0; oy < OH; ++oy) {
                    int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= H) continue;
                    for (int ox = 0; ox < OW; ++ox) {
                        int ix = ox * stride + kx - pad;
                        if (ix < 0 || ix >= W) continue;
                        x[(static_cast<size_t>(c) * H + iy) * W + ix] += row[static_cast<size_t>(oy) * OW + ox];
                    }
                }
            }
        }
    }
}

// ---- convolution ----
// input NCHW, weight [O, I, K, K], bias [O]
template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 int stride, int pad) {
    if (input->shape.size() != 4) throw ShapeError("conv2d: input must be NCHW, got " + shape_str(input->shape));
    if (weight->shape.size() != 4 || weight->shape[2] != weight->shape[3])
        throw ShapeError("conv2d: weight must be OIKK with square kernel, got " + shape_str(weight->shape));
    int N = input->shape[0], I = input->shape[1], H = input->shape[2], W = input->shape[3];
    int O = weight->shape[0], K = weight->shape[2];
    if (weight->shape[1] != I)
        throw ShapeError("conv2d: input has " + std::to_string(I) + " channels but weight expects " +
                         std::to_string(weight->shape[1]));
    if (bias->shape != std::vector<int>{O})
        throw ShapeError("conv2d: bias shape " + shape_str(bias->shape) + " != (" + std::to_string(O) + ")");
    if (stride < 1) throw ParamError("conv2d: stride must be >= 1");
    if (K > H + 2 * pad || K > W + 2 * pad)
        throw ShapeError("conv2d: kernel " + std::to_string(K) + " exceeds padded input " +
                         shape_str(input->shape));
    int OH = conv_out_dim(H, K, stride, pad);
    int OW = conv_out_dim(W, K, stride, pad);
    size_t ckk = static_cast<size_t>(I) * K * K;
    size_t ohw = static_cast<size_t>(OH) * OW;

    std::vector<T> out(static_cast<size_t>(N) * O * ohw, T(0));
    std::vector<T> col(ckk * ohw);
    for (int n = 0; n < N; ++n) {
        im2col(input->data.data() + static_cast<size_t>(n) * I * H * W, I, H, W, K, stride, pad, col.data());
        T* y = out.data() + static_cast<size_t>(n) * O * ohw;
        matmul_nn(static_cast<size_t>(O), ckk, ohw, weight->data.data(), col.data(), y);
        for (int o = 0; o < O; ++o) {
            T b = bias->data[static_cast<size_t>(o)];
            T* row = y + static_cast<size_t>(o) * ohw;
            for (size_t i = 0; i < ohw; ++i) row[i] += b;
        }
    }

    Tensor<T> xi = input, wt = weight, bs = bias;
    return make_op<T>(
        "conv2d", {N, O, OH, OW}, std::move(out), {input, weight, bias},
        [xi, wt, bs, N, I, H, W, O, K, stride, pad, OH, OW, ckk, ohw](TensorNode<T>& self) {
            std::vector<T> col(ckk * ohw);
            std::vector<T> dcol(ckk * ohw);
            for (int n = 0; n < N; ++n) {
                const T* dy = self.grad.data() + static_cast<size_t>(n) * O * ohw;
                if (wt->requires_grad || xi->requires_grad)
                    im2col(xi->data.data() + static_cast<size_t>(n) * I * H * W, I, H, W, K, stride, pad,
                           col.data());
                if (wt->requires_grad) {
                    wt->ensure_grad();
                    matmul_nt(static_cast<size_t>(O), ohw, ckk, dy, col.data(), wt->grad.data());
                }
                if (xi->requires_grad) {
                    xi->ensure_grad();
                    std::fill(dcol.begin(), dcol.end(), T(0));
                    matmul_tn(ckk, static_cast<size_t>(O), ohw, wt->data.data(), dy, dcol.data());
                    col2im_add(dcol.data(), I, H, W, K, stride, pad,
                               xi->grad.data() + static_cast<size_t>(n) * I * H * W);
                }
                if (bs->requires_grad) {
                    bs->ensure_grad();
                    for (int o = 0; o < O; ++o) {
                        T acc = T(0);
                        const T* row = dy + static_cast<size_t>(o) * ohw;
                        for (size_t i = 0; i < ohw; ++i) acc += row[i];
                        bs->grad[static_cast<size_t>(o)] += acc;
                    }
                }
            }
        });
}

// input NCHW with C == I, weight [I, O, K, K], bias [O].
// Forward is the adjoint of conv2d's input gradient with the same weight.
template <class T>
Tensor<T> conv_transpose2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                           int stride, int pad) {
    if (input->shape.size() != 4)
        throw ShapeError("conv_transpose2d: input must be NCHW, got " + shape_str(input->shape));
    if (weight->shape.size() != 4 || weight->shape[2] != weight->shape[3])
        throw ShapeError("conv_transpose2d: weight must be IOKK with square kernel, got " +
                         shape_str(weight->shape));
    int N = input->shape[0], I = input->shape[1], H = input->shape[2], W = input->shape[3];
    int O = weight->shape[1], K = weight->shape[2];
    if (weight->shape[0] != I)
        throw ShapeError("conv_transpose2d: input has " + std::to_string(I) +
                         " channels but weight expects " + std::to_string(weight->shape[0]));
    if (bias->shape != std::vector<int>{O})
        throw ShapeError("conv_transpose2d: bias shape " + shape_str(bias->shape) + " != (" +
                         std::to_string(O) + ")");
    if (stride < 1) throw ParamError("conv_transpose2d: stride must be >= 1");
    int OH = (H - 1) * stride - 2 * pad + K;
    int OW = (W - 1) * stride - 2 * pad + K;
    if (OH < 1 || OW < 1) throw ShapeError("conv_transpose2d: output would be empty");
    size_t okk = static_cast<size_t>(O) * K * K;
    size_t hw = static_cast<size_t>(H) * W;
    size_t ohw = static_cast<size_t>(OH) * OW;

    std::vector<T> out(static_cast<size_t>(N) * O * ohw, T(0));
    std::vector<T> cols(okk * hw);
    for (int n = 0; n < N; ++n) {
        std::fill(cols.begin(), cols.end(), T(0));
        // cols = W^T[OKK, I] * x[I, HW]
        matmul_tn(okk, static_cast<size_t>(I), hw, weight->data.data(),
                  input->data.data() + static_cast<size_t>(n) * I * hw, cols.data());
        T* y = out.data() + static_cast<size_t>(n) * O * ohw;
        col2im_add(cols.data(), O, OH, OW, K, stride, pad, y);
        for (int o = 0; o < O; ++o) {
            T b = bias->data[static_cast<size_t>(o)];
            T* row = y + static_cast<size_t>(o) * ohw;
            for (size_t i = 0; i < ohw; ++i) row[i] += b;
        }
    }

    Tensor<T> xi = input, wt = weight, bs = bias;
    return make_op<T>(
        "conv_transpose2d", {N, O, OH, OW}, std::move(out), {input, weight, bias},
        [xi, wt, bs, N, I, H, W, O, K, stride, pad, OH, OW, okk, hw, ohw](TensorNode<T>& self) {
            std::vector<T> dcols(okk * hw);
            for (int n = 0; n < N; ++n) {
                const T* dy = self.grad.data() + static_cast<size_t>(n) * O * ohw;
                if (xi->requires_grad || wt->requires_grad)
                    im2col(dy, O, OH, OW, K, stride, pad, dcols.data());
                if (xi->requires_grad) {
                    xi->ensure_grad();
                    matmul_nn(static_cast<size_t>(I), okk, hw, wt->data.data(), dcols.data(),
                              xi->grad.data() + static_cast<size_t>(n) * I * hw);
                }
                if (wt->requires_grad) {
                    wt->ensure_grad();
                    matmul_nt(static_cast<size_t>(I), hw, okk,
                              xi->data.data() + static_cast<size_t>(n) * I * hw, dcols.data(),
                              wt->grad.data());
                }
                if (bs->requires_grad) {
                    bs->ensure_grad();
                    for (int o = 0; o < O; ++o) {
                        T acc = T(0);
                        const T* row = dy + static_cast<size_t>(o) * ohw;
                        for (size_t i = 0; i < ohw; ++i) acc += row[i];
                        bs->grad[static_cast<size_t>(o)] += acc;
                    }
                }
            }
        });
}

// Per-(instance, channel) normalization with learnable affine parameters.
template <class T>
Tensor<T> instance_norm(const Tensor<T>& x, double epsilon, const Tensor<T>& gamma,
                        const Tensor<T>& beta) {
    if (x->shape.size() != 4) throw ShapeError("instance_norm: input must be NCHW");
    if (epsilon <= 0.0) throw ParamError("instance_norm: epsilon must be > 0");
    int N = x->shape[0], C = x->shape[1], H = x->shape[2], W = x->shape[3];
    if (gamma->shape != std::vector<int>{C} || beta->shape != std::vector<int>{C})
        throw ShapeError("instance_norm: gamma/beta must have shape (" + std::to_string(C) + ")");
    size_t plane = static_cast<size_t>(H) * W;
    T inv_plane = T(1) / static_cast<T>(plane);

    auto xhat = std::make_shared<std::vector<T>>(x->size());
    auto invstd = std::make_shared<std::vector<T>>(static_cast<size_t>(N) * C);
    std::vector<T> out(x->size());
    for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
            const T* p = x->data.data() + (static_cast<size_t>(n) * C + c) * plane;
            T mu = T(0);
            for (size_t i = 0; i < plane; ++i) mu += p[i];
            mu *= inv_plane;
            T var = T(0);
            for (size_t i = 0; i < plane; ++i) {
                T d = p[i] - mu;
                var += d * d;
            }
            var *= inv_plane;
            T is = T(1) / std::sqrt(var + static_cast<T>(epsilon));
            (*invstd)[static_cast<size_t>(n) * C + c] = is;
            T g = gamma->data[static_cast<size_t>(c)], b = beta->data[static_cast<size_t>(c)];
            T* xh = xhat->data() + (static_cast<size_t>(n) * C + c) * plane;
            T* y = out.data() + (static_cast<size_t>(n) * C + c) * plane;
            for (size_t i = 0; i < plane; ++i) {
                xh[i] = (p[i] - mu) * is;
                y[i] = g * xh[i] + b;
            }
        }
    }

    Tensor<T> xp = x, gp = gamma, bp = beta;
    return make_op<T>(
        "instance_norm", x->shape, std::move(out), {x, gamma, beta},
        [xp, gp, bp, xhat, invstd, N, C, plane, inv_plane](TensorNode<T>& self) {
            for (int n = 0; n < N; ++n) {
                for (int c = 0; c < C; ++c) {
                    size_t base = (static_cast<size_t>(n) * C + c) * plane;
                    const T* dy = self.grad.data() + base;
                    const T* xh = xhat->data() + base;
                    if (gp->requires_grad) {
                        gp->ensure_grad();
                        T acc = T(0);
                        for (size_t i = 0; i < plane; ++i) acc += dy[i] * xh[i];
                        gp->grad[static_cast<size_t>(c)] += acc;
                    }
                    if (bp->requires_grad) {
                        bp->ensure_grad();
                        T acc = T(0);
                        for (size_t i = 0; i < plane; ++i) acc += dy[i];
                        bp->grad[static_cast<size_t>(c)] += acc;
                    }
                    if (xp->requires_grad) {
                        xp->ensure_grad();
                        T g = gp->data[static_cast<size_t>(c)];
                        T is = (*invstd)[static_cast<size_t>(n) * C + c];
                        T mean_dxh = T(0), mean_dxh_xh = T(0);
                        for (size_t i = 0; i < plane; ++i) {
                            T dxh = dy[i] * g;
                            mean_dxh += dxh;
                            mean_dxh_xh += dxh * xh[i];
                        }
                        mean_dxh *= inv_plane;
                        mean_dxh_xh *= inv_plane;
                        T* dx = xp->grad.data() + base;
                        for (size_t i = 0; i < plane; ++i) {
                            T dxh = dy[i] * g;
                            dx[i] += is * (dxh - mean_dxh - xh[i] * mean_dxh_xh);
                        }
                    }
                }
            }
        });
}

// NCHW -> NC
template <class T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
    if (x->shape.size() != 4) throw ShapeError("global_avg_pool: input must be NCHW");
    int N = x->shape[0], C = x->shape[1];
    size_t plane = static_cast<size_t>(x->shape[2]) * x->shape[3];
    T inv = T(1) / static_cast<T>(plane);
    std::vector<T> out(static_cast<size_t>(N) * C);
    for (size_t nc = 0; nc < out.size(); ++nc) {
        const T* p = x->data.data() + nc * plane;
        T acc = T(0);
        for (size_t i = 0; i < plane; ++i) acc += p[i];
        out[nc] = acc * inv;
    }
    Tensor<T> xp = x;
    return make_op<T>("global_avg_pool", {N, C}, std::move(out), {x},
                      [xp, plane, inv](TensorNode<T>& self) {
                          if (!xp->requires_grad) return;
                          xp->ensure_grad();
                          for (size_t nc = 0; nc < self.size(); ++nc) {
                              T g = self.grad[nc] * inv;
                              T* dx = xp->grad.data() + nc * plane;
                              for (size_t i = 0; i < plane; ++i) dx[i] += g;
                          }
                      });
}

// x[N,K] * w[M,K]^T + b[M] -> [N,M]
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    if (x->shape.size() != 2 || w->shape.size() != 2)
        throw ShapeError("linear: expects 2-d input and weight");
    int N = x->shape[0], K = x->shape[1], M = w->shape[0];
    if (w->shape[1] != K)
        throw ShapeError("linear: input features " + std::to_string(K) + " != weight features " +
                         std::to_string(w->shape[1]));
    if (b->shape != std::vector<int>{M}) throw ShapeError("linear: bad bias shape");
    std::vector<T> out(static_cast<size_t>(N) * M, T(0));
    matmul_nt(static_cast<size_t>(N), static_cast<size_t>(K), static_cast<size_t>(M),
              x->data.data(), w->data.data(), out.data());
    for (int n = 0; n < N; ++n)
        for (int m = 0; m < M; ++m) out[static_cast<size_t>(n) * M + m] += b->data[static_cast<size_t>(m)];
    Tensor<T> xp = x, wp = w, bp = b;
    return make_op<T>("linear", {N, M}, std::move(out), {x, w, b},
                      [xp, wp, bp, N, K, M](TensorNode<T>& self) {
                          if (xp->requires_grad) {
                              xp->ensure_grad();
                              matmul_nn(static_cast<size_t>(N), static_cast<size_t>(M),
                                        static_cast<size_t>(K), self.grad.data(), wp->data.data(),
                                        xp->grad.data());
                          }
                          if (wp->requires_grad) {
                              wp->ensure_grad();
                              matmul_tn(static_cast<size_t>(M), static_cast<size_t>(N),
                                        static_cast<size_t>(K), self.grad.data(), xp->data.data(),
                                        wp->grad.data());
                          }
                          if (bp->requires_grad) {
                              bp->ensure_grad();
                              for (int n = 0; n < N; ++n)
                                  for (int m = 0; m < M; ++m)
                                      bp->grad[static_cast<size_t>(m)] +=
                                          self.grad[static_cast<size_t>(n) * M + m];
                          }
                      });
}

// Mean cross entropy over non-ignored pixels of NCHW logits against NHW
// integer labels. Returns a scalar; *empty_flag (optional) is set when every
// pixel was ignored, in which case the loss is 0.
template <class T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels,
                                int ignore_index = -1, bool* empty_flag = nullptr) {
    if (logits->shape.size() != 4) throw ShapeError("softmax_cross_entropy: logits must be NCHW");
    int N = logits->shape[0], C = logits->shape[1], H = logits->shape[2], W = logits->shape[3];
    size_t npix = static_cast<size_t>(N) * H * W;
    if (labels.size() != npix)
        throw ShapeError("softmax_cross_entropy: labels length " + std::to_string(labels.size()) +
                         " != N*H*W " + std::to_string(npix));
    size_t plane = static_cast<size_t>(H) * W;

    auto probs = std::make_shared<std::vector<T>>(logits->size());
    double loss = 0.0;
    size_t count = 0;
    for (int n = 0; n < N; ++n) {
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                size_t pix = (static_cast<size_t>(n) * H + y) * W + x;
                int lab = labels[pix];
                size_t base = static_cast<size_t>(n) * C * plane + static_cast<size_t>(y) * W + x;
                T mx = logits->data[base];
                for (int c = 1; c < C; ++c) mx = std::max(mx, logits->data[base + static_cast<size_t>(c) * plane]);
                T denom = T(0);
                for (int c = 0; c < C; ++c) {
                    T e = std::exp(logits->data[base + static_cast<size_t>(c) * plane] - mx);
                    (*probs)[base + static_cast<size_t>(c) * plane] = e;
                    denom += e;
                }
                for (int c = 0; c < C; ++c) (*probs)[base + static_cast<size_t>(c) * plane] /= denom;
                if (lab == ignore_index) continue;
                if (lab < 0 || lab >= C)
                    throw ParamError("softmax_cross_entropy: label " + std::to_string(lab) +
                                     " out of range [0," + std::to_string(C) + ") at pixel (n=" +
                                     std::to_string(n) + ",y=" + std::to_string(y) + ",x=" +
                                     std::to_string(x) + ")");
                T p = (*probs)[base + static_cast<size_t>(lab) * plane];
                loss -= std::log(std::max(static_cast<double>(p), 1e-300));
                ++count;
            }
        }
    }
    if (empty_flag) *empty_flag = (count == 0);
    T out = count ? static_cast<T>(loss / static_cast<double>(count)) : T(0);

    Tensor<T> lp = logits;
    auto labs = std::make_shared<std::vector<int>>(labels);
    return make_op<T>("softmax_cross_entropy", {1}, {out}, {logits},
                      [lp, probs, labs, N, C, H, W, plane, ignore_index, count](TensorNode<T>& self) {
                          if (!lp->requires_grad || count == 0) return;
                          lp->ensure_grad();
                          T scale = self.grad[0] / static_cast<T>(count);
                          for (int n = 0; n < N; ++n) {
                              for (int y = 0; y < H; ++y) {
                                  for (int x = 0; x < W; ++x) {
                                      size_t pix = (static_cast<size_t>(n) * H + y) * W + x;
                                      int lab = (*labs)[pix];
                                      if (lab == ignore_index) continue;
                                      size_t base = static_cast<size_t>(n) * C * plane +
                                                    static_cast<size_t>(y) * W + x;
                                      for (int c = 0; c < C; ++c) {
                                          size_t i = base + static_cast<size_t>(c) * plane;
                                          T g = (*probs)[i] - (c == lab ? T(1) : T(0));
                                          lp->grad[i] += scale * g;
                                      }
                                  }
                              }
                          }
                      });
}

inline void set_num_threads(int n) {
#ifdef _OPENMP
    omp_set_num_threads(n > 0 ? n : 1);
#else
    (void)n;
#endif
}

}  // namespace uda
