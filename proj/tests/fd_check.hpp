// Central-difference gradient checking shared by the layer tests: 64-bit,
// step 1e-5, relative error against max(|analytic|, |numeric|, 1e-6).
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "orflow/ndarray.hpp"

namespace fd {

constexpr double kStep = 1e-5;
constexpr double kTol = 1e-4;

inline double rel_err(double analytic, double numeric) {
    return std::abs(analytic - numeric) /
           std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

inline double numeric_grad(double& slot, const std::function<double()>& loss,
                           double step = kStep) {
    const double orig = slot;
    slot = orig + step;
    const double up = loss();
    slot = orig - step;
    const double down = loss();
    slot = orig;
    return (up - down) / (2.0 * step);
}

// Fixed random projection turning a matrix output into a scalar loss; the
// gradient of the loss w.r.t. the output is the projection itself.
inline double weighted_sum(const orflow::Mat& y, const orflow::Mat& w) {
    double acc = 0.0;
    for (std::size_t i = 0; i < y.data.size(); ++i) acc += y.data[i] * w.data[i];
    return acc;
}

}  // namespace fd
