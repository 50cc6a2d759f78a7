#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace uda {

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ParamError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline std::string shape_str(const std::vector<int>& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

inline size_t numel(const std::vector<int>& shape) {
    size_t n = 1;
    for (int d : shape) n *= static_cast<size_t>(d);
    return n;
}

// Deterministic RNG. Hand-rolled converters so that streams are identical
// across standard library versions and element types.
class Rng {
public:
    explicit Rng(uint64_t seed) : s_(seed ? seed : 0x9e3779b97f4a7c15ULL) {}

    uint64_t next_u64() {
        // splitmix64
        uint64_t z = (s_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller with a cached spare.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // uniform integer in [0, n)
    uint64_t uniform_int(uint64_t n) { return next_u64() % n; }

private:
    uint64_t s_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

template <class T>
struct TensorNode;

template <class T>
using Tensor = std::shared_ptr<TensorNode<T>>;

inline thread_local bool g_grad_enabled = true;

// RAII guard disabling tape construction (inference mode).
struct NoGrad {
    bool prev;
    NoGrad() : prev(g_grad_enabled) { g_grad_enabled = false; }
    ~NoGrad() { g_grad_enabled = prev; }
};

template <class T>
struct TensorNode {
    std::vector<int> shape;
    std::vector<T> data;
    bool requires_grad = false;
    std::vector<T> grad;  // allocated lazily, same length as data
    std::vector<Tensor<T>> parents;
    std::function<void(TensorNode<T>&)> backward_fn;
    const char* op = "leaf";
    bool backward_done = false;

    size_t size() const { return data.size(); }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }

    void zero_grad() {
        if (!grad.empty()) std::fill(grad.begin(), grad.end(), T(0));
        backward_done = false;
    }
};

template <class T>
void check_finite(const char* op, const std::vector<T>& v) {
    for (const T& x : v) {
        if (!std::isfinite(static_cast<double>(x))) {
            throw NumericError(std::string("non-finite value produced by op '") + op + "'");
        }
    }
}

template <class T>
Tensor<T> make_tensor(std::vector<int> shape, std::vector<T> data, bool requires_grad = false) {
    if (numel(shape) != data.size())
        throw ShapeError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
    auto t = std::make_shared<TensorNode<T>>();
    t->shape = std::move(shape);
    t->data = std::move(data);
    t->requires_grad = requires_grad;
    return t;
}

template <class T>
Tensor<T> zeros(std::vector<int> shape, bool requires_grad = false) {
    size_t n = numel(shape);
    return make_tensor<T>(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
}

template <class T>
Tensor<T> full(std::vector<int> shape, T value, bool requires_grad = false) {
    size_t n = numel(shape);
    return make_tensor<T>(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <class T>
Tensor<T> randn(std::vector<int> shape, Rng& rng, double mean = 0.0, double stddev = 1.0,
                bool requires_grad = false) {
    size_t n = numel(shape);
    std::vector<T> d(n);
    for (size_t i = 0; i < n; ++i) d[i] = static_cast<T>(rng.normal(mean, stddev));
    return make_tensor<T>(std::move(shape), std::move(d), requires_grad);
}

// Central op constructor: validates output values and attaches the tape edge
// only when grad mode is on and some parent needs gradients.
template <class T>
Tensor<T> make_op(const char* op, std::vector<int> shape, std::vector<T> data,
                  std::vector<Tensor<T>> parents,
                  std::function<void(TensorNode<T>&)> backward_fn) {
    check_finite(op, data);
    auto t = make_tensor<T>(std::move(shape), std::move(data));
    t->op = op;
    bool need = false;
    if (g_grad_enabled) {
        for (const auto& p : parents)
            if (p->requires_grad) need = true;
    }
    if (need) {
        t->requires_grad = true;
        t->parents = std::move(parents);
        t->backward_fn = std::move(backward_fn);
    }
    return t;
}

template <class T>
Tensor<T> detach(const Tensor<T>& x) {
    return make_tensor<T>(x->shape, x->data, false);
}

// ---- reverse-mode backward over the tape ----

template <class T>
void backward(const Tensor<T>& loss) {
    if (loss->size() != 1) throw ShapeError("backward requires a scalar loss, got " + shape_str(loss->shape));
    if (loss->backward_done) throw ParamError("backward called twice on the same loss without reset");
    loss->backward_done = true;

    // iterative post-order topological sort
    std::vector<TensorNode<T>*> order;
    std::unordered_set<TensorNode<T>*> visited;
    std::vector<std::pair<TensorNode<T>*, size_t>> stack;
    stack.push_back({loss.get(), 0});
    visited.insert(loss.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            TensorNode<T>* p = node->parents[idx].get();
            ++idx;
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    loss->ensure_grad();
    loss->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode<T>* n = *it;
        if (n->backward_fn) n->backward_fn(*n);
    }
}

// ---- elementwise primitives ----

template <class T, class F, class DF>
Tensor<T> unary_op(const char* op, const Tensor<T>& x, F f, DF df) {
    std::vector<T> out(x->size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = f(x->data[i]);
    Tensor<T> xp = x;
    return make_op<T>(op, x->shape, std::move(out), {x},
                      [xp, df](TensorNode<T>& self) {
                          if (!xp->requires_grad) return;
                          xp->ensure_grad();
                          for (size_t i = 0; i < self.size(); ++i)
                              xp->grad[i] += self.grad[i] * df(xp->data[i], self.data[i]);
                      });
}

template <class T>
void check_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
    if (a->shape != b->shape)
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a->shape) + " vs " +
                         shape_str(b->shape));
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape("add", a, b);
    std::vector<T> out(a->size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a->data[i] + b->data[i];
    Tensor<T> ap = a, bp = b;
    return make_op<T>("add", a->shape, std::move(out), {a, b}, [ap, bp](TensorNode<T>& self) {
        if (ap->requires_grad) {
            ap->ensure_grad();
            for (size_t i = 0; i < self.size(); ++i) ap->grad[i] += self.grad[i];
        }
        if (bp->requires_grad) {
            bp->ensure_grad();
            for (size_t i = 0; i < self.size(); ++i) bp->grad[i] += self.grad[i];
        }
    });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape("sub", a, b);
    std::vector<T> out(a->size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a->data[i] - b->data[i];
    Tensor<T> ap = a, bp = b;
    return make_op<T>("sub", a->shape, std::move(out), {a, b}, [ap, bp](TensorNode<T>& self) {
        if (ap->requires_grad) {
            ap->ensure_grad();
            for (size_t i = 0; i < self.size(); ++i) ap->grad[i] += self.grad[i];
        }
        if (bp->requires_grad) {
            bp->ensure_grad();
            for (size_t i = 0; i < self.size(); ++i) bp->grad[i] -= self.grad[i];
        }
    });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape("mul", a, b);
    std::vector<T> out(a->size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a->data[i] * b->data[i];
    Tensor<T> ap = a, bp = b;
    return make_op<T>("mul", a->shape, std::move(out), {a, b}, [ap, bp](TensorNode<T>& self) {
        if (ap->requires_grad) {
            ap->ensure_grad();
            for (size_t i = 0; i < self.size(); ++i) ap->grad[i] += self.grad[i] * bp->data[i];
        }
        if (bp->requires_grad) {
            bp->ensure_grad();
            for (size_t i = 0; i < self.size(); ++i) bp->grad[i] += self.grad[i] * ap->data[i];
        }
    });
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T s) {
    return unary_op<T>("scale", x, [s](T v) { return v * s; }, [s](T, T) { return s; });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) {
    return unary_op<T>("add_scalar", x, [s](T v) { return v + s; }, [](T, T) { return T(1); });
}

template <class T>
Tensor<T> neg(const Tensor<T>& x) {
    return scale(x, T(-1));
}

template <class T>
Tensor<T> log_(const Tensor<T>& x) {
    return unary_op<T>("log", x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <class T>
Tensor<T> exp_(const Tensor<T>& x) {
    return unary_op<T>("exp", x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <class T>
Tensor<T> tanh_(const Tensor<T>& x) {
    return unary_op<T>("tanh", x, [](T v) { return std::tanh(v); },
                       [](T, T y) { return T(1) - y * y; });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    return unary_op<T>("sigmoid", x, [](T v) { return T(1) / (T(1) + std::exp(-v)); },
                       [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
    return unary_op<T>("relu", x, [](T v) { return v > T(0) ? v : T(0); },
                       [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <class T>
Tensor<T> leaky_relu(const Tensor<T>& x, T alpha) {
    if (alpha < T(0)) throw ParamError("leaky_relu: alpha must be >= 0");
    return unary_op<T>("leaky_relu", x, [alpha](T v) { return v >= T(0) ? v : alpha * v; },
                       [alpha](T v, T) { return v >= T(0) ? T(1) : alpha; });
}

// Straight-through clamp: gradient passes only strictly inside [lo, hi].
template <class T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
    return unary_op<T>("clamp", x,
                       [lo, hi](T v) { return v < lo ? lo : (v > hi ? hi : v); },
                       [lo, hi](T v, T) { return (v > lo && v < hi) ? T(1) : T(0); });
}

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
    T acc = T(0);
    for (const T& v : x->data) acc += v;
    Tensor<T> xp = x;
    return make_op<T>("sum", {1}, {acc}, {x}, [xp](TensorNode<T>& self) {
        if (!xp->requires_grad) return;
        xp->ensure_grad();
        for (size_t i = 0; i < xp->size(); ++i) xp->grad[i] += self.grad[0];
    });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
    if (x->size() == 0) throw ShapeError("mean of empty tensor");
    T acc = T(0);
    for (const T& v : x->data) acc += v;
    T inv = T(1) / static_cast<T>(x->size());
    Tensor<T> xp = x;
    return make_op<T>("mean", {1}, {acc * inv}, {x}, [xp, inv](TensorNode<T>& self) {
        if (!xp->requires_grad) return;
        xp->ensure_grad();
        for (size_t i = 0; i < xp->size(); ++i) xp->grad[i] += self.grad[0] * inv;
    });
}

// mean |a - b|; subgradient 0 at ties
template <class T>
Tensor<T> l1_distance(const Tensor<T>& a, const Tensor<T>& b) {
    check_same_shape("l1_distance", a, b);
    T acc = T(0);
    for (size_t i = 0; i < a->size(); ++i) acc += std::abs(a->data[i] - b->data[i]);
    T inv = T(1) / static_cast<T>(a->size());
    Tensor<T> ap = a, bp = b;
    return make_op<T>("l1_distance", {1}, {acc * inv}, {a, b}, [ap, bp, inv](TensorNode<T>& self) {
        for (size_t i = 0; i < ap->size(); ++i) {
            T d = ap->data[i] - bp->data[i];
            T s = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
            if (ap->requires_grad) {
                ap->ensure_grad();
                ap->grad[i] += self.grad[0] * inv * s;
            }
            if (bp->requires_grad) {
                bp->ensure_grad();
                bp->grad[i] -= self.grad[0] * inv * s;
            }
        }
    });
}

template <class T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
    int nd = static_cast<int>(x->shape.size());
    if (axis < 0) axis += nd;
    if (axis < 0 || axis >= nd) throw ParamError("softmax: axis out of range");
    size_t outer = 1, inner = 1;
    size_t n = static_cast<size_t>(x->shape[axis]);
    for (int i = 0; i < axis; ++i) outer *= static_cast<size_t>(x->shape[i]);
    for (int i = axis + 1; i < nd; ++i) inner *= static_cast<size_t>(x->shape[i]);

    std::vector<T> out(x->size());
    for (size_t o = 0; o < outer; ++o) {
        for (size_t in = 0; in < inner; ++in) {
            size_t base = o * n * inner + in;
            T mx = x->data[base];
            for (size_t k = 1; k < n; ++k) mx = std::max(mx, x->data[base + k * inner]);
            T denom = T(0);
            for (size_t k = 0; k < n; ++k) {
                T e = std::exp(x->data[base + k * inner] - mx);
                out[base + k * inner] = e;
                denom += e;
            }
            for (size_t k = 0; k < n; ++k) out[base + k * inner] /= denom;
        }
    }
    Tensor<T> xp = x;
    return make_op<T>("softmax", x->shape, std::move(out), {x},
                      [xp, outer, n, inner](TensorNode<T>& self) {
                          if (!xp->requires_grad) return;
                          xp->ensure_grad();
                          for (size_t o = 0; o < outer; ++o) {
                              for (size_t in = 0; in < inner; ++in) {
                                  size_t base = o * n * inner + in;
                                  T dot = T(0);
                                  for (size_t k = 0; k < n; ++k)
                                      dot += self.grad[base + k * inner] * self.data[base + k * inner];
                                  for (size_t k = 0; k < n; ++k) {
                                      size_t i = base + k * inner;
                                      xp->grad[i] += self.data[i] * (self.grad[i] - dot);
                                  }
                              }
                          }
                      });
}

template <class T>
Tensor<T> dropout(const Tensor<T>& x, double p, bool training, Rng& rng) {
    if (p < 0.0 || p >= 1.0) throw ParamError("dropout: p must be in [0, 1)");
    if (!training || p == 0.0) return unary_op<T>("dropout", x, [](T v) { return v; }, [](T, T) { return T(1); });
    T keep_scale = static_cast<T>(1.0 / (1.0 - p));
    auto mask = std::make_shared<std::vector<T>>(x->size());
    std::vector<T> out(x->size());
    for (size_t i = 0; i < x->size(); ++i) {
        T m = rng.uniform() < p ? T(0) : keep_scale;
        (*mask)[i] = m;
        out[i] = x->data[i] * m;
    }
    Tensor<T> xp = x;
    return make_op<T>("dropout", x->shape, std::move(out), {x}, [xp, mask](TensorNode<T>& self) {
        if (!xp->requires_grad) return;
        xp->ensure_grad();
        for (size_t i = 0; i < self.size(); ++i) xp->grad[i] += self.grad[i] * (*mask)[i];
    });
}

// Concatenate two NCHW tensors along the channel axis.
template <class T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
    if (a->shape.size() != 4 || b->shape.size() != 4)
        throw ShapeError("concat_channels expects 4-d tensors");
    if (a->shape[0] != b->shape[0] || a->shape[2] != b->shape[2] || a->shape[3] != b->shape[3])
        throw ShapeError("concat_channels: incompatible shapes " + shape_str(a->shape) + " vs " +
                         shape_str(b->shape));
    int N = a->shape[0], Ca = a->shape[1], Cb = b->shape[1], H = a->shape[2], W = a->shape[3];
    size_t plane = static_cast<size_t>(H) * W;
    std::vector<T> out(static_cast<size_t>(N) * (Ca + Cb) * plane);
    for (int nn = 0; nn < N; ++nn) {
        const T* pa = a->data.data() + static_cast<size_t>(nn) * Ca * plane;
        const T* pb = b->data.data() + static_cast<size_t>(nn) * Cb * plane;
        T* po = out.data() + static_cast<size_t>(nn) * (Ca + Cb) * plane;
        std::copy(pa, pa + Ca * plane, po);
        std::copy(pb, pb + Cb * plane, po + Ca * plane);
    }
    Tensor<T> ap = a, bp = b;
    return make_op<T>("concat_channels", {N, Ca + Cb, H, W}, std::move(out), {a, b},
                      [ap, bp, N, Ca, Cb, plane](TensorNode<T>& self) {
                          for (int nn = 0; nn < N; ++nn) {
                              const T* g = self.grad.data() + static_cast<size_t>(nn) * (Ca + Cb) * plane;
                              if (ap->requires_grad) {
                                  ap->ensure_grad();
                                  T* ga = ap->grad.data() + static_cast<size_t>(nn) * Ca * plane;
                                  for (size_t i = 0; i < static_cast<size_t>(Ca) * plane; ++i) ga[i] += g[i];
                              }
                              if (bp->requires_grad) {
                                  bp->ensure_grad();
                                  T* gb = bp->grad.data() + static_cast<size_t>(nn) * Cb * plane;
                                  for (size_t i = 0; i < static_cast<size_t>(Cb) * plane; ++i)
                                      gb[i] += g[Ca * plane + i];
                              }
                          }
                      });
}

// Column j of a 2-d tensor, as shape (N).
template <class T>
Tensor<T> select_column(const Tensor<T>& x, int col) {
    if (x->shape.size() != 2) throw ShapeError("select_column expects a 2-d tensor");
    int N = x->shape[0], C = x->shape[1];
    if (col < 0 || col >= C) throw ParamError("select_column: column out of range");
    std::vector<T> out(static_cast<size_t>(N));
    for (int i = 0; i < N; ++i) out[static_cast<size_t>(i)] = x->data[static_cast<size_t>(i) * C + col];
    Tensor<T> xp = x;
    return make_op<T>("select_column", {N}, std::move(out), {x}, [xp, N, C, col](TensorNode<T>& self) {
        if (!xp->requires_grad) return;
        xp->ensure_grad();
        for (int i = 0; i < N; ++i) xp->grad[static_cast<size_t>(i) * C + col] += self.grad[static_cast<size_t>(i)];
    });
}

}  // namespace uda
