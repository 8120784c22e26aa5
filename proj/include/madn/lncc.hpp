#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include "madn/ad.hpp"

// Locally Normalised Cross Correlation with a Gaussian window, computed via
// separable convolutions so it stays differentiable, plus the similarity loss
// 1 - E[|LNCC|].

namespace madn {

struct LnccConfig {
    double sigma = 5.0;
    int truncation_radius = 15;
    double epsilon = 1e-5;

    void validate() const {
        MADN_CHECK(sigma > 0.0, "LnccConfig: sigma must be > 0, got ", sigma);
        MADN_CHECK(truncation_radius >= int(std::ceil(3.0 * sigma)),
                   "LnccConfig: truncation_radius ", truncation_radius, " < ceil(3*sigma) for sigma ", sigma);
        MADN_CHECK(epsilon > 0.0, "LnccConfig: epsilon must be > 0, got ", epsilon);
    }
};

// Separable 1D window of length 2r+1, w[t] ~ exp(-t^2 / (2 sigma^2)),
// normalized to sum exactly 1. Computed from |t| so w[t] == w[-t] bitwise.
template <class T>
std::shared_ptr<const std::vector<T>> gaussian_kernel_t(const LnccConfig& cfg) {
    cfg.validate();
    const int r = cfg.truncation_radius;
    std::vector<double> w(2 * r + 1);
    double z = 0.0;
    for (int t = -r; t <= r; ++t) {
        w[t + r] = std::exp(-double(std::abs(t)) * std::abs(t) / (2.0 * cfg.sigma * cfg.sigma));
        z += w[t + r];
    }
    std::vector<T> out(w.size());
    for (size_t i = 0; i < w.size(); ++i) out[i] = T(w[i] / z);
    return std::make_shared<const std::vector<T>>(std::move(out));
}

inline std::vector<double> gaussian_kernel(const LnccConfig& cfg) { return *gaussian_kernel_t<double>(cfg); }

namespace lncc_detail {

// K * x with the window applied per channel; reflect padding keeps the shape.
template <class T>
ad::VarT<T> blur(const ad::VarT<T>& x, const std::shared_ptr<const std::vector<T>>& k, int r) {
    return ad::conv1d_w(ad::conv1d_h(ad::pad_symmetric(x, r), k), k);
}

}  // namespace lncc_detail

// mean = K*img, variance = max(K*img^2 - mean^2, 0); same shape as img.
template <class T>
std::pair<ad::VarT<T>, ad::VarT<T>> local_moments(const ad::VarT<T>& img, const LnccConfig& cfg) {
    MADN_CHECK(all_finite(img->value.data(), img->value.numel()), "local_moments: non-finite input");
    auto k = gaussian_kernel_t<T>(cfg);
    const int r = cfg.truncation_radius;
    auto mean = lncc_detail::blur(img, k, r);
    auto var = ad::relu(ad::sub(lncc_detail::blur(ad::mul(img, img), k, r), ad::mul(mean, mean)));
    return {mean, var};
}

// Per-pixel LNCC = cov / sqrt((var_a + eps)(var_b + eps)), values in [-1, 1]
// up to rounding. Symmetric in (a, b) down to the bit.
template <class T>
ad::VarT<T> lncc_map(const ad::VarT<T>& a, const ad::VarT<T>& b, const LnccConfig& cfg) {
    MADN_CHECK(a->value.shape() == b->value.shape(), "lncc_map: shape mismatch ", a->value.shape().str(),
               " vs ", b->value.shape().str());
    MADN_CHECK(all_finite(a->value.data(), a->value.numel()) && all_finite(b->value.data(), b->value.numel()),
               "lncc_map: non-finite input");
    auto k = gaussian_kernel_t<T>(cfg);
    const int r = cfg.truncation_radius;
    const T eps = T(cfg.epsilon);
    auto ma = lncc_detail::blur(a, k, r);
    auto mb = lncc_detail::blur(b, k, r);
    auto cov = ad::sub(lncc_detail::blur(ad::mul(a, b), k, r), ad::mul(ma, mb));
    auto va = ad::relu(ad::sub(lncc_detail::blur(ad::mul(a, a), k, r), ad::mul(ma, ma)));
    auto vb = ad::relu(ad::sub(lncc_detail::blur(ad::mul(b, b), k, r), ad::mul(mb, mb)));
    auto denom = ad::sqrt_val(ad::mul(ad::add_scalar(va, eps), ad::add_scalar(vb, eps)));
    return ad::div(cov, denom);
}

// Eq. 6: L_sim = 1 - E[|LNCC(x_ct, x_mr)|].
template <class T>
ad::VarT<T> sim_loss(const ad::VarT<T>& x_ct, const ad::VarT<T>& x_mr, const LnccConfig& cfg) {
    return ad::add_scalar(ad::neg(ad::mean_all(ad::abs_val(lncc_map(x_ct, x_mr, cfg)))), T(1));
}

// Forward-only conveniences on plain 2D tensors (shape (1,1,H,W)).
inline TensorD lncc_map(const TensorD& a, const TensorD& b, const LnccConfig& cfg) {
    return lncc_map(ad::constant(a), ad::constant(b), cfg)->value;
}

inline double sim_loss(const TensorD& a, const TensorD& b, const LnccConfig& cfg) {
    return sim_loss(ad::constant(a), ad::constant(b), cfg)->value[0];
}

}  // namespace madn
