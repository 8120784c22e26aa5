#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "madn/tensor.hpp"

// Reverse-mode automatic differentiation over 4D tensors. Graphs are built
// define-by-run; backward() topologically sorts from the root and runs each
// node's pullback. Templated on the scalar type: tests differentiate in
// double, the training stack instantiates float.

namespace madn::ad {

template <class T>
struct NodeT;

template <class T>
using VarT = std::shared_ptr<NodeT<T>>;

using VarD = VarT<double>;
using VarF = VarT<float>;

template <class T>
struct NodeT {
    TensorT<T> value;
    TensorT<T> grad;  // allocated lazily by ensure_grad()
    bool requires_grad = false;
    std::vector<VarT<T>> parents;
    std::function<void(NodeT<T>&)> backward_fn;
    const char* op = "leaf";

    void ensure_grad() {
        if (grad.empty()) grad = TensorT<T>(value.shape(), T(0));
    }
};

template <class T>
VarT<T> make_leaf(TensorT<T> v, bool requires_grad = true) {
    auto n = std::make_shared<NodeT<T>>();
    n->value = std::move(v);
    n->requires_grad = requires_grad;
    return n;
}

template <class T>
VarT<T> constant(TensorT<T> v) {
    return make_leaf(std::move(v), false);
}

template <class T>
VarT<T> detach(const VarT<T>& x) {
    return make_leaf(x->value, false);
}

namespace detail {

template <class T>
bool any_requires(const std::vector<VarT<T>>& ps) {
    for (const auto& p : ps)
        if (p->requires_grad) return true;
    return false;
}

template <class T>
VarT<T> make_op(const char* name, TensorT<T> out, std::vector<VarT<T>> parents,
                std::function<void(NodeT<T>&)> bwd) {
    auto n = std::make_shared<NodeT<T>>();
    n->value = std::move(out);
    n->op = name;
    n->requires_grad = any_requires(parents);
    if (n->requires_grad) {
        n->parents = std::move(parents);
        n->backward_fn = std::move(bwd);
    }
    return n;
}

template <class T>
void topo_sort(const VarT<T>& root, std::vector<NodeT<T>*>& order) {
    // Iterative postorder DFS; graphs are DAGs with shared subexpressions.
    std::unordered_set<NodeT<T>*> visited;
    std::vector<std::pair<NodeT<T>*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            NodeT<T>* p = node->parents[next++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
}

}  // namespace detail

// Drop any accumulated gradient; the next backward() re-allocates it as zero.
template <class T>
void clear_grad(const VarT<T>& x) {
    x->grad = TensorT<T>();
}

// Backpropagate from a scalar root node.
template <class T>
void backward(const VarT<T>& root) {
    MADN_CHECK(root->value.numel() == 1, "backward root must be scalar, got ", root->value.shape().str());
    if (!root->requires_grad) return;
    std::vector<NodeT<T>*> order;
    detail::topo_sort(root, order);
    root->ensure_grad();
    root->grad[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        NodeT<T>* n = *it;
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
}

// ---------------------------------------------------------------------------
// Elementwise ops

namespace detail {

template <class T, class FwdFn, class BwdFn>
VarT<T> unary_op(const char* name, const VarT<T>& x, FwdFn fwd, BwdFn dfdx_from_in_out) {
    TensorT<T> out(x->value.shape());
    const T* in = x->value.data();
    T* o = out.data();
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) o[i] = fwd(in[i]);
    return make_op<T>(
        name, std::move(out), {x},
        [x, dfdx_from_in_out](NodeT<T>& self) {
            if (!x->requires_grad) return;
            x->ensure_grad();
            const T* in = x->value.data();
            const T* o = self.value.data();
            const T* g = self.grad.data();
            T* gx = x->grad.data();
            const int64_t n = self.value.numel();
            for (int64_t i = 0; i < n; ++i) gx[i] += g[i] * dfdx_from_in_out(in[i], o[i]);
        });
}

}  // namespace detail

template <class T>
VarT<T> add(const VarT<T>& a, const VarT<T>& b) {
    MADN_CHECK(a->value.shape() == b->value.shape(), "add: shape mismatch ", a->value.shape().str(), " vs ",
               b->value.shape().str());
    TensorT<T> out(a->value.shape());
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = a->value[i] + b->value[i];
    return detail::make_op<T>("add", std::move(out), {a, b}, [a, b](NodeT<T>& self) {
        const T* g = self.grad.data();
        const int64_t n = self.value.numel();
        if (a->requires_grad) {
            a->ensure_grad();
            T* ga = a->grad.data();
            for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            T* gb = b->grad.data();
            for (int64_t i = 0; i < n; ++i) gb[i] += g[i];
        }
    });
}

template <class T>
VarT<T> sub(const VarT<T>& a, const VarT<T>& b) {
    MADN_CHECK(a->value.shape() == b->value.shape(), "sub: shape mismatch ", a->value.shape().str(), " vs ",
               b->value.shape().str());
    TensorT<T> out(a->value.shape());
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = a->value[i] - b->value[i];
    return detail::make_op<T>("sub", std::move(out), {a, b}, [a, b](NodeT<T>& self) {
        const T* g = self.grad.data();
        const int64_t n = self.value.numel();
        if (a->requires_grad) {
            a->ensure_grad();
            T* ga = a->grad.data();
            for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            T* gb = b->grad.data();
            for (int64_t i = 0; i < n; ++i) gb[i] -= g[i];
        }
    });
}

template <class T>
VarT<T> mul(const VarT<T>& a, const VarT<T>& b) {
    MADN_CHECK(a->value.shape() == b->value.shape(), "mul: shape mismatch ", a->value.shape().str(), " vs ",
               b->value.shape().str());
    TensorT<T> out(a->value.shape());
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = a->value[i] * b->value[i];
    return detail::make_op<T>("mul", std::move(out), {a, b}, [a, b](NodeT<T>& self) {
        const T* g = self.grad.data();
        const int64_t n = self.value.numel();
        if (a->requires_grad) {
            a->ensure_grad();
            T* ga = a->grad.data();
            const T* vb = b->value.data();
            for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * vb[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            T* gb = b->grad.data();
            const T* va = a->value.data();
            for (int64_t i = 0; i < n; ++i) gb[i] += g[i] * va[i];
        }
    });
}

template <class T>
VarT<T> div(const VarT<T>& a, const VarT<T>& b) {
    MADN_CHECK(a->value.shape() == b->value.shape(), "div: shape mismatch ", a->value.shape().str(), " vs ",
               b->value.shape().str());
    TensorT<T> out(a->value.shape());
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out[i] = a->value[i] / b->value[i];
    return detail::make_op<T>("div", std::move(out), {a, b}, [a, b](NodeT<T>& self) {
        const T* g = self.grad.data();
        const T* va = a->value.data();
        const T* vb = b->value.data();
        const int64_t n = self.value.numel();
        if (a->requires_grad) {
            a->ensure_grad();
            T* ga = a->grad.data();
            for (int64_t i = 0; i < n; ++i) ga[i] += g[i] / vb[i];
        }
        if (b->requires_grad) {
            b->ensure_grad();
            T* gb = b->grad.data();
            for (int64_t i = 0; i < n; ++i) gb[i] -= g[i] * va[i] / (vb[i] * vb[i]);
        }
    });
}

template <class T>
VarT<T> neg(const VarT<T>& x) {
    return detail::unary_op<T>(
        "neg", x, [](T v) { return -v; }, [](T, T) { return T(-1); });
}

template <class T>
VarT<T> add_scalar(const VarT<T>& x, T s) {
    return detail::unary_op<T>(
        "add_scalar", x, [s](T v) { return v + s; }, [](T, T) { return T(1); });
}

template <class T>
VarT<T> mul_scalar(const VarT<T>& x, T s) {
    return detail::unary_op<T>(
        "mul_scalar", x, [s](T v) { return v * s; }, [s](T, T) { return s; });
}

template <class T>
VarT<T> relu(const VarT<T>& x) {
    return detail::unary_op<T>(
        "relu", x, [](T v) { return v > T(0) ? v : T(0); }, [](T in, T) { return in > T(0) ? T(1) : T(0); });
}

template <class T>
VarT<T> leaky_relu(const VarT<T>& x, T alpha) {
    return detail::unary_op<T>(
        "leaky_relu", x, [alpha](T v) { return v > T(0) ? v : alpha * v; },
        [alpha](T in, T) { return in > T(0) ? T(1) : alpha; });
}

template <class T>
VarT<T> tanh_act(const VarT<T>& x) {
    return detail::unary_op<T>(
        "tanh", x, [](T v) { return std::tanh(v); }, [](T, T out) { return T(1) - out * out; });
}

// Numerically stable log(1 + exp(x)).
template <class T>
VarT<T> softplus(const VarT<T>& x) {
    return detail::unary_op<T>(
        "softplus", x,
        [](T v) { return std::max(v, T(0)) + std::log1p(std::exp(-std::abs(v))); },
        [](T in, T) { return T(1) / (T(1) + std::exp(-in)); });
}

template <class T>
VarT<T> abs_val(const VarT<T>& x) {
    return detail::unary_op<T>(
        "abs", x, [](T v) { return std::abs(v); },
        [](T in, T) { return in > T(0) ? T(1) : (in < T(0) ? T(-1) : T(0)); });
}

template <class T>
VarT<T> sqrt_val(const VarT<T>& x) {
    return detail::unary_op<T>(
        "sqrt", x, [](T v) { return std::sqrt(v); }, [](T, T out) { return T(0.5) / out; });
}

template <class T>
VarT<T> square(const VarT<T>& x) {
    return detail::unary_op<T>(
        "square", x, [](T v) { return v * v; }, [](T in, T) { return T(2) * in; });
}

// ---------------------------------------------------------------------------
// Reductions (accumulate in double regardless of T)

template <class T>
VarT<T> sum_all(const VarT<T>& x) {
    double acc = 0.0;
    const T* in = x->value.data();
    const int64_t n = x->value.numel();
    for (int64_t i = 0; i < n; ++i) acc += double(in[i]);
    TensorT<T> out(Shape{1, 1, 1, 1});
    out[0] = T(acc);
    return detail::make_op<T>("sum", std::move(out), {x}, [x](NodeT<T>& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        const T g = self.grad[0];
        T* gx = x->grad.data();
        const int64_t n = x->value.numel();
        for (int64_t i = 0; i < n; ++i) gx[i] += g;
    });
}

template <class T>
VarT<T> mean_all(const VarT<T>& x) {
    const int64_t n = x->value.numel();
    double acc = 0.0;
    const T* in = x->value.data();
    for (int64_t i = 0; i < n; ++i) acc += double(in[i]);
    TensorT<T> out(Shape{1, 1, 1, 1});
    out[0] = T(acc / double(n));
    return detail::make_op<T>("mean", std::move(out), {x}, [x, n](NodeT<T>& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        const T g = self.grad[0] / T(n);
        T* gx = x->grad.data();
        for (int64_t i = 0; i < n; ++i) gx[i] += g;
    });
}

// ---------------------------------------------------------------------------
// Shape ops

template <class T>
VarT<T> concat_c(const VarT<T>& a, const VarT<T>& b) {
    const Shape& sa = a->value.shape();
    const Shape& sb = b->value.shape();
    MADN_CHECK(sa.n == sb.n && sa.h == sb.h && sa.w == sb.w, "concat_c: incompatible shapes ", sa.str(), " vs ",
               sb.str());
    Shape so{sa.n, sa.c + sb.c, sa.h, sa.w};
    TensorT<T> out(so);
    const int64_t plane = int64_t(sa.h) * sa.w;
    for (int n = 0; n < sa.n; ++n) {
        std::copy_n(a->value.data() + int64_t(n) * sa.c * plane, sa.c * plane,
                    out.data() + int64_t(n) * so.c * plane);
        std::copy_n(b->value.data() + int64_t(n) * sb.c * plane, sb.c * plane,
                    out.data() + int64_t(n) * so.c * plane + sa.c * plane);
    }
    return detail::make_op<T>("concat_c", std::move(out), {a, b}, [a, b, plane](NodeT<T>& self) {
        const Shape& sa = a->value.shape();
        const Shape& sb = b->value.shape();
        const Shape& so = self.value.shape();
        const T* g = self.grad.data();
        for (int n = 0; n < sa.n; ++n) {
            if (a->requires_grad) {
                a->ensure_grad();
                T* ga = a->grad.data() + int64_t(n) * sa.c * plane;
                const T* gs = g + int64_t(n) * so.c * plane;
                for (int64_t i = 0; i < sa.c * plane; ++i) ga[i] += gs[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                T* gb = b->grad.data() + int64_t(n) * sb.c * plane;
                const T* gs = g + int64_t(n) * so.c * plane + sa.c * plane;
                for (int64_t i = 0; i < sb.c * plane; ++i) gb[i] += gs[i];
            }
        }
    });
}

// Channels [c0, c1) of x.
template <class T>
VarT<T> slice_c(const VarT<T>& x, int c0, int c1) {
    const Shape& s = x->value.shape();
    MADN_CHECK(0 <= c0 && c0 < c1 && c1 <= s.c, "slice_c: bad channel range [", c0, ",", c1, ") for ", s.str());
    Shape so{s.n, c1 - c0, s.h, s.w};
    TensorT<T> out(so);
    const int64_t plane = int64_t(s.h) * s.w;
    for (int n = 0; n < s.n; ++n)
        std::copy_n(x->value.data() + (int64_t(n) * s.c + c0) * plane, (c1 - c0) * plane,
                    out.data() + int64_t(n) * so.c * plane);
    return detail::make_op<T>("slice_c", std::move(out), {x}, [x, c0, c1, plane](NodeT<T>& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        const Shape& s = x->value.shape();
        const Shape& so = self.value.shape();
        const T* g = self.grad.data();
        for (int n = 0; n < s.n; ++n) {
            T* gx = x->grad.data() + (int64_t(n) * s.c + c0) * plane;
            const T* gs = g + int64_t(n) * so.c * plane;
            for (int64_t i = 0; i < (c1 - c0) * plane; ++i) gx[i] += gs[i];
        }
    });
}

namespace detail {
// Symmetric (edge-including) reflection index: valid for pad <= n.
inline int reflect_sym(int i, int n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - 1 - i;
    return i;
}
}  // namespace detail

// Pad H and W by r pixels with symmetric reflection.
template <class T>
VarT<T> pad_symmetric(const VarT<T>& x, int r) {
    const Shape& s = x->value.shape();
    MADN_CHECK(r >= 0 && r <= s.h && r <= s.w, "pad_symmetric: radius ", r, " too large for ", s.str());
    Shape so{s.n, s.c, s.h + 2 * r, s.w + 2 * r};
    auto row_map = std::make_shared<std::vector<int>>(so.h);
    auto col_map = std::make_shared<std::vector<int>>(so.w);
    for (int i = 0; i < so.h; ++i) (*row_map)[i] = detail::reflect_sym(i - r, s.h);
    for (int i = 0; i < so.w; ++i) (*col_map)[i] = detail::reflect_sym(i - r, s.w);
    TensorT<T> out(so);
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int y = 0; y < so.h; ++y) {
                const T* src = &x->value.at(n, c, (*row_map)[y], 0);
                T* dst = &out.at(n, c, y, 0);
                for (int xw = 0; xw < so.w; ++xw) dst[xw] = src[(*col_map)[xw]];
            }
    return detail::make_op<T>("pad_symmetric", std::move(out), {x}, [x, row_map, col_map](NodeT<T>& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        const Shape& s = x->value.shape();
        const Shape& so = self.value.shape();
        for (int n = 0; n < s.n; ++n)
            for (int c = 0; c < s.c; ++c)
                for (int y = 0; y < so.h; ++y) {
                    T* gx = &x->grad.at(n, c, (*row_map)[y], 0);
                    const T* g = &self.grad.at(n, c, y, 0);
                    for (int xw = 0; xw < so.w; ++xw) gx[(*col_map)[xw]] += g[xw];
                }
    });
}

// Valid 1D correlation along W with a constant kernel.
template <class T>
VarT<T> conv1d_w(const VarT<T>& x, std::shared_ptr<const std::vector<T>> kernel) {
    const Shape& s = x->value.shape();
    const int k = int(kernel->size());
    MADN_CHECK(k >= 1 && k <= s.w, "conv1d_w: kernel length ", k, " vs width ", s.w);
    Shape so{s.n, s.c, s.h, s.w - k + 1};
    TensorT<T> out(so);
    const T* kd = kernel->data();
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int y = 0; y < s.h; ++y) {
                const T* src = &x->value.at(n, c, y, 0);
                T* dst = &out.at(n, c, y, 0);
                for (int xo = 0; xo < so.w; ++xo) {
                    T acc = T(0);
                    for (int t = 0; t < k; ++t) acc += kd[t] * src[xo + t];
                    dst[xo] = acc;
                }
            }
    return detail::make_op<T>("conv1d_w", std::move(out), {x}, [x, kernel](NodeT<T>& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        const Shape& s = x->value.shape();
        const Shape& so = self.value.shape();
        const int k = int(kernel->size());
        const T* kd = kernel->data();
        for (int n = 0; n < s.n; ++n)
            for (int c = 0; c < s.c; ++c)
                for (int y = 0; y < s.h; ++y) {
                    T* gx = &x->grad.at(n, c, y, 0);
                    const T* g = &self.grad.at(n, c, y, 0);
                    for (int xo = 0; xo < so.w; ++xo)
                        for (int t = 0; t < k; ++t) gx[xo + t] += kd[t] * g[xo];
                }
    });
}

// Valid 1D correlation along H with a constant kernel.
template <class T>
VarT<T> conv1d_h(const VarT<T>& x, std::shared_ptr<const std::vector<T>> kernel) {
    const Shape& s = x->value.shape();
    const int k = int(kernel->size());
    MADN_CHECK(k >= 1 && k <= s.h, "conv1d_h: kernel length ", k, " vs height ", s.h);
    Shape so{s.n, s.c, s.h - k + 1, s.w};
    TensorT<T> out(so);
    const T* kd = kernel->data();
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int yo = 0; yo < so.h; ++yo) {
                T* dst = &out.at(n, c, yo, 0);
                for (int t = 0; t < k; ++t) {
                    const T* src = &x->value.at(n, c, yo + t, 0);
                    const T kt = kd[t];
                    for (int xw = 0; xw < s.w; ++xw) dst[xw] += kt * src[xw];
                }
            }
    return detail::make_op<T>("conv1d_h", std::move(out), {x}, [x, kernel](NodeT<T>& self) {
        if (!x->requires_grad) return;
        x->ensure_grad();
        const Shape& s = x->value.shape();
        const Shape& so = self.value.shape();
        const int k = int(kernel->size());
        const T* kd = kernel->data();
        for (int n = 0; n < s.n; ++n)
            for (int c = 0; c < s.c; ++c)
                for (int yo = 0; yo < so.h; ++yo) {
                    const T* g = &self.grad.at(n, c, yo, 0);
                    for (int t = 0; t < k; ++t) {
                        T* gx = &x->grad.at(n, c, yo + t, 0);
                        const T kt = kd[t];
                        for (int xw = 0; xw < s.w; ++xw) gx[xw] += kt * g[xw];
                    }
                }
    });
}

}  // namespace madn::ad
