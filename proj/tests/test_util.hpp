#pragma once

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "madn/ad.hpp"
#include "madn/rng.hpp"

namespace madn::testing {

using Var = ad::VarT<double>;

inline TensorT<double> random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
    TensorT<double> t(s);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

// Central finite differences against the analytic gradient of a scalar loss.
// make_loss must rebuild the graph from the current values of `inputs`.
inline void check_grad(const std::function<Var()>& make_loss, const std::vector<Var>& inputs, double h = 1e-5,
                       double tol = 1e-6) {
    for (const auto& v : inputs) ad::clear_grad(v);
    Var loss = make_loss();
    ASSERT_EQ(loss->value.numel(), 1);
    ad::backward(loss);
    std::vector<TensorT<double>> analytic;
    for (const auto& v : inputs) {
        ASSERT_FALSE(v->grad.empty()) << "input received no gradient";
        analytic.push_back(v->grad.clone());
    }
    for (size_t vi = 0; vi < inputs.size(); ++vi) {
        auto& val = inputs[vi]->value;
        for (int64_t i = 0; i < val.numel(); ++i) {
            const double orig = val[i];
            val[i] = orig + h;
            const double fp = make_loss()->value[0];
            val[i] = orig - h;
            const double fm = make_loss()->value[0];
            val[i] = orig;
            const double fd = (fp - fm) / (2.0 * h);
            const double an = analytic[vi][i];
            const double denom = std::max({1.0, std::abs(fd), std::abs(an)});
            EXPECT_NEAR(an / denom, fd / denom, tol) << "input " << vi << " element " << i;
        }
    }
}

}  // namespace madn::testing
