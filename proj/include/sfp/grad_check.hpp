#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "sfp/tensor.hpp"

namespace sfp {

/// Central-difference gradient verification. `objective` evaluates a scalar
/// function of `param`; `analytic` is the claimed gradient w.r.t. `param`.
/// Returns the worst relative error max|a - n| / max(|a|, |n|, 1e-8).
/// Meant to run in 64-bit mode only.
inline double grad_check(const std::function<double()>& objective,
                         TensorD& param, const TensorD& analytic, double epsilon) {
    double worst = 0.0;
    for (std::size_t i = 0; i < param.numel(); ++i) {
        const double saved = param[i];
        param[i] = saved + epsilon;
        const double f_plus = objective();
        param[i] = saved - epsilon;
        const double f_minus = objective();
        param[i] = saved;
        const double numeric = (f_plus - f_minus) / (2.0 * epsilon);
        const double a = analytic[i];
        const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
        worst = std::max(worst, std::fabs(a - numeric) / denom);
    }
    return worst;
}

} // namespace sfp
