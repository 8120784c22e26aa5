#pragma once

#define EIGEN_DONT_PARALLELIZE
#include <Eigen/Core>

#include "madn/ad.hpp"

// GEMM-backed conv / transposed-conv / instance-norm graph ops (im2col).

namespace madn::ad {

struct Pad4 {
    int t = 0, l = 0, b = 0, r = 0;
};

// TF-style SAME padding: output extent = ceil(in / stride).
inline Pad4 same_pad(int in_h, int in_w, int k, int stride) {
    auto one = [&](int in) {
        const int out = (in + stride - 1) / stride;
        return std::max(0, (out - 1) * stride + k - in);
    };
    const int ph = one(in_h), pw = one(in_w);
    return Pad4{ph / 2, pw / 2, ph - ph / 2, pw - pw / 2};
}

namespace detail {

template <class T>
using MatCM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;
template <class T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// col is (Cin*kh*kw) x (Ho*Wo), column-major. Entry ((c,ky,kx),(ho,wo)) =
// x[c, ho*s - pt + ky, wo*s - pl + kx], zero outside.
template <class T>
void im2col(const T* x, int C, int H, int W, int kh, int kw, int stride, Pad4 p, int Ho, int Wo, T* col) {
    const int rows = C * kh * kw;
    for (int ho = 0; ho < Ho; ++ho) {
        for (int wo = 0; wo < Wo; ++wo) {
            T* dst = col + (int64_t(ho) * Wo + wo) * rows;
            const int y0 = ho * stride - p.t;
            const int x0 = wo * stride - p.l;
            for (int c = 0; c < C; ++c) {
                const T* xc = x + int64_t(c) * H * W;
                for (int ky = 0; ky < kh; ++ky) {
                    const int y = y0 + ky;
                    if (y < 0 || y >= H) {
                        for (int kx = 0; kx < kw; ++kx) *dst++ = T(0);
                        continue;
                    }
                    const T* row = xc + int64_t(y) * W;
                    for (int kx = 0; kx < kw; ++kx) {
                        const int xx = x0 + kx;
                        *dst++ = (xx >= 0 && xx < W) ? row[xx] : T(0);
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: scatter-add columns back into the image.
template <class T>
void col2im(const T* col, int C, int H, int W, int kh, int kw, int stride, Pad4 p, int Ho, int Wo, T* x) {
    const int rows = C * kh * kw;
    for (int ho = 0; ho < Ho; ++ho) {
        for (int wo = 0; wo < Wo; ++wo) {
            const T* src = col + (int64_t(ho) * Wo + wo) * rows;
            const int y0 = ho * stride - p.t;
            const int x0 = wo * stride - p.l;
            for (int c = 0; c < C; ++c) {
                T* xc = x + int64_t(c) * H * W;
                for (int ky = 0; ky < kh; ++ky) {
                    const int y = y0 + ky;
                    if (y < 0 || y >= H) {
                        src += kw;
                        continue;
                    }
                    T* row = xc + int64_t(y) * W;
                    for (int kx = 0; kx < kw; ++kx) {
                        const int xx = x0 + kx;
                        if (xx >= 0 && xx < W) row[xx] += *src;
                        ++src;
                    }
                }
            }
        }
    }
}

}  // namespace detail

// 2D correlation, NCHW. w is (Cout, Cin, kh, kw); b is (1, Cout, 1, 1) or an
// empty Var for no bias.
template <class T>
VarT<T> conv2d(const VarT<T>& x, const VarT<T>& w, const VarT<T>& b, int stride, Pad4 pad) {
    const Shape& sx = x->value.shape();
    const Shape& sw = w->value.shape();
    MADN_CHECK(sx.c == sw.c, "conv2d: input channels ", sx.c, " != weight Cin ", sw.c);
    const int Cout = sw.n, Cin = sw.c, kh = sw.h, kw = sw.w;
    const int Ho = (sx.h + pad.t + pad.b - kh) / stride + 1;
    const int Wo = (sx.w + pad.l + pad.r - kw) / stride + 1;
    MADN_CHECK(Ho >= 1 && Wo >= 1, "conv2d: output would be empty for input ", sx.str());
    const bool has_bias = b && !b->value.empty();
    if (has_bias)
        MADN_CHECK(b->value.shape() == Shape(1, Cout, 1, 1), "conv2d: bias shape ", b->value.shape().str());

    const int rows = Cin * kh * kw;
    const int64_t P = int64_t(Ho) * Wo;
    auto cols = std::make_shared<std::vector<T>>(int64_t(sx.n) * rows * P);
    TensorT<T> out(Shape{sx.n, Cout, Ho, Wo});

    Eigen::Map<const detail::MatRM<T>> W(w->value.data(), Cout, rows);
    for (int n = 0; n < sx.n; ++n) {
        T* col = cols->data() + int64_t(n) * rows * P;
        detail::im2col(x->value.data() + x->value.idx(n, 0, 0, 0), Cin, sx.h, sx.w, kh, kw, stride, pad, Ho, Wo,
                       col);
        Eigen::Map<const detail::MatCM<T>> C(col, rows, P);
        Eigen::Map<detail::MatRM<T>> Y(out.data() + out.idx(n, 0, 0, 0), Cout, P);
        Y.noalias() = W * C;
    }
    if (has_bias) {
        for (int n = 0; n < sx.n; ++n)
            for (int c = 0; c < Cout; ++c) {
                const T bias = b->value[c];
                T* o = out.data() + out.idx(n, c, 0, 0);
                for (int64_t i = 0; i < P; ++i) o[i] += bias;
            }
    }

    std::vector<VarT<T>> parents = has_bias ? std::vector<VarT<T>>{x, w, b} : std::vector<VarT<T>>{x, w};
    return detail::make_op<T>(
        "conv2d", std::move(out), std::move(parents),
        [x, w, b, stride, pad, cols, Cout, Cin, kh, kw, Ho, Wo, P, rows, has_bias](NodeT<T>& self) {
            const Shape& sx = x->value.shape();
            if (w->requires_grad) w->ensure_grad();
            if (x->requires_grad) x->ensure_grad();
            if (has_bias && b->requires_grad) b->ensure_grad();
            Eigen::Map<const detail::MatRM<T>> W(w->value.data(), Cout, rows);
            std::vector<T> dcol;
            if (x->requires_grad) dcol.resize(rows * P);
            for (int n = 0; n < sx.n; ++n) {
                Eigen::Map<const detail::MatRM<T>> dY(self.grad.data() + self.grad.idx(n, 0, 0, 0), Cout, P);
                if (w->requires_grad) {
                    Eigen::Map<const detail::MatCM<T>> C(cols->data() + int64_t(n) * rows * P, rows, P);
                    Eigen::Map<detail::MatRM<T>> dW(w->grad.data(), Cout, rows);
                    dW.noalias() += dY * C.transpose();
                }
                if (x->requires_grad) {
                    Eigen::Map<detail::MatCM<T>> dC(dcol.data(), rows, P);
                    dC.noalias() = W.transpose() * dY;
                    detail::col2im(dcol.data(), Cin, sx.h, sx.w, kh, kw, stride, pad, Ho, Wo,
                                   x->grad.data() + x->grad.idx(n, 0, 0, 0));
                }
                if (has_bias && b->requires_grad) {
                    for (int c = 0; c < Cout; ++c) {
                        const T* g = self.grad.data() + self.grad.idx(n, c, 0, 0);
                        double acc = 0.0;
                        for (int64_t i = 0; i < P; ++i) acc += double(g[i]);
                        b->grad[c] += T(acc);
                    }
                }
            }
        });
}

// Transposed convolution (stride-s upsampling), NCHW. w is (Cin, Cout, kh, kw);
// output is (H-1)*s - 2*pad + k.
template <class T>
VarT<T> conv_transpose2d(const VarT<T>& x, const VarT<T>& w, const VarT<T>& b, int stride, int pad) {
    const Shape& sx = x->value.shape();
    const Shape& sw = w->value.shape();
    MADN_CHECK(sx.c == sw.n, "conv_transpose2d: input channels ", sx.c, " != weight Cin ", sw.n);
    const int Cin = sw.n, Cout = sw.c, kh = sw.h, kw = sw.w;
    const int Ho = (sx.h - 1) * stride - 2 * pad + kh;
    const int Wo = (sx.w - 1) * stride - 2 * pad + kw;
    MADN_CHECK(Ho >= 1 && Wo >= 1, "conv_transpose2d: output would be empty for input ", sx.str());
    const bool has_bias = b && !b->value.empty();
    if (has_bias)
        MADN_CHECK(b->value.shape() == Shape(1, Cout, 1, 1), "conv_transpose2d: bias shape ",
                   b->value.shape().str());

    const int rows = Cout * kh * kw;
    const int64_t P = int64_t(sx.h) * sx.w;  // input positions
    const Pad4 g{pad, pad, pad, pad};
    TensorT<T> out(Shape{sx.n, Cout, Ho, Wo}, T(0));

    Eigen::Map<const detail::MatRM<T>> W2(w->value.data(), Cin, rows);
    std::vector<T> colT(rows * P);
    for (int n = 0; n < sx.n; ++n) {
        Eigen::Map<const detail::MatRM<T>> X(x->value.data() + x->value.idx(n, 0, 0, 0), Cin, P);
        Eigen::Map<detail::MatCM<T>> C(colT.data(), rows, P);
        C.noalias() = W2.transpose() * X;
        // scatter: out[co, hi*s - p + ky, wi*s - p + kx] += colT
        detail::col2im(colT.data(), Cout, Ho, Wo, kh, kw, stride, g, sx.h, sx.w,
                       out.data() + out.idx(n, 0, 0, 0));
    }
    if (has_bias) {
        const int64_t Po = int64_t(Ho) * Wo;
        for (int n = 0; n < sx.n; ++n)
            for (int c = 0; c < Cout; ++c) {
                const T bias = b->value[c];
                T* o = out.data() + out.idx(n, c, 0, 0);
                for (int64_t i = 0; i < Po; ++i) o[i] += bias;
            }
    }

    std::vector<VarT<T>> parents = has_bias ? std::vector<VarT<T>>{x, w, b} : std::vector<VarT<T>>{x, w};
    return detail::make_op<T>(
        "conv_transpose2d", std::move(out), std::move(parents),
        [x, w, b, stride, pad, Cin, Cout, kh, kw, Ho, Wo, P, rows, has_bias](NodeT<T>& self) {
            const Shape& sx = x->value.shape();
            const Pad4 g{pad, pad, pad, pad};
            if (w->requires_grad) w->ensure_grad();
            if (x->requires_grad) x->ensure_grad();
            if (has_bias && b->requires_grad) b->ensure_grad();
            Eigen::Map<const detail::MatRM<T>> W2(w->value.data(), Cin, rows);
            std::vector<T> dcolT(rows * P);
            for (int n = 0; n < sx.n; ++n) {
                // gather from dOut: dcolT = im2col(dY) over the input grid
                detail::im2col(self.grad.data() + self.grad.idx(n, 0, 0, 0), Cout, Ho, Wo, kh, kw, stride, g,
                               sx.h, sx.w, dcolT.data());
                Eigen::Map<const detail::MatCM<T>> dC(dcolT.data(), rows, P);
                if (x->requires_grad) {
                    Eigen::Map<detail::MatRM<T>> dX(x->grad.data() + x->grad.idx(n, 0, 0, 0), Cin, P);
                    dX.noalias() += W2 * dC;
                }
                if (w->requires_grad) {
                    Eigen::Map<const detail::MatRM<T>> X(x->value.data() + x->value.idx(n, 0, 0, 0), Cin, P);
                    Eigen::Map<detail::MatRM<T>> dW2(w->grad.data(), Cin, rows);
                    dW2.noalias() += X * dC.transpose();
                }
                if (has_bias && b->requires_grad) {
                    const int64_t Po = int64_t(Ho) * Wo;
                    for (int c = 0; c < Cout; ++c) {
                        const T* gg = self.grad.data() + self.grad.idx(n, c, 0, 0);
                        double acc = 0.0;
                        for (int64_t i = 0; i < Po; ++i) acc += double(gg[i]);
                        b->grad[c] += T(acc);
                    }
                }
            }
        });
}

// Per-sample, per-channel normalization with affine parameters gamma/beta of
// shape (1, C, 1, 1).
template <class T>
VarT<T> instance_norm(const VarT<T>& x, const VarT<T>& gamma, const VarT<T>& beta, T eps = T(1e-5)) {
    const Shape& s = x->value.shape();
    MADN_CHECK(gamma->value.shape() == Shape(1, s.c, 1, 1) && beta->value.shape() == Shape(1, s.c, 1, 1),
               "instance_norm: affine params must be (1,C,1,1)");
    const int64_t P = int64_t(s.h) * s.w;
    TensorT<T> out(s);
    auto xhat = std::make_shared<TensorT<T>>(s);
    auto inv_std = std::make_shared<std::vector<T>>(int64_t(s.n) * s.c);
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            const T* xc = x->value.data() + x->value.idx(n, c, 0, 0);
            double mu = 0.0;
            for (int64_t i = 0; i < P; ++i) mu += double(xc[i]);
            mu /= double(P);
            double var = 0.0;
            for (int64_t i = 0; i < P; ++i) {
                const double d = double(xc[i]) - mu;
                var += d * d;
            }
            var /= double(P);
            const T istd = T(1.0 / std::sqrt(var + double(eps)));
            (*inv_std)[int64_t(n) * s.c + c] = istd;
            const T g = gamma->value[c], bt = beta->value[c];
            T* xh = xhat->data() + xhat->idx(n, c, 0, 0);
            T* o = out.data() + out.idx(n, c, 0, 0);
            for (int64_t i = 0; i < P; ++i) {
                xh[i] = (xc[i] - T(mu)) * istd;
                o[i] = g * xh[i] + bt;
            }
        }
    return detail::make_op<T>(
        "instance_norm", std::move(out), {x, gamma, beta}, [x, gamma, beta, xhat, inv_std, P](NodeT<T>& self) {
            const Shape& s = x->value.shape();
            if (x->requires_grad) x->ensure_grad();
            if (gamma->requires_grad) gamma->ensure_grad();
            if (beta->requires_grad) beta->ensure_grad();
            for (int n = 0; n < s.n; ++n)
                for (int c = 0; c < s.c; ++c) {
                    const T* g = self.grad.data() + self.grad.idx(n, c, 0, 0);
                    const T* xh = xhat->data() + xhat->idx(n, c, 0, 0);
                    double sum_g = 0.0, sum_gx = 0.0;
                    for (int64_t i = 0; i < P; ++i) {
                        sum_g += double(g[i]);
                        sum_gx += double(g[i]) * double(xh[i]);
                    }
                    if (beta->requires_grad) beta->grad[c] += T(sum_g);
                    if (gamma->requires_grad) gamma->grad[c] += T(sum_gx);
                    if (x->requires_grad) {
                        const T istd = (*inv_std)[int64_t(n) * s.c + c];
                        const T gam = gamma->value[c];
                        const T mg = T(sum_g / double(P));
                        const T mgx = T(sum_gx / double(P));
                        T* gx = x->grad.data() + x->grad.idx(n, c, 0, 0);
                        for (int64_t i = 0; i < P; ++i) gx[i] += gam * istd * (g[i] - mg - xh[i] * mgx);
                    }
                }
        });
}

}  // namespace madn::ad
