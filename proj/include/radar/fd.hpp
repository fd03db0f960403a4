#pragma once

#include <cmath>
#include <utility>

#include "radar/tensor.hpp"

namespace radar {

// Central-difference gradient of a scalar-valued function of one tensor. The
// reference oracle for every analytic gradient in the library: O(2 numel) calls
// of f, so only for small problems.
template <typename F>
Tensor finite_difference_gradient(F&& f, const Tensor& x, double h = 1e-5) {
    require(h > 0.0, "finite_difference_gradient: h must be positive");
    Tensor g(x.shape);
    Tensor probe = x;
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        const double saved = probe.data[i];
        probe.data[i] = saved + h;
        const double up = f(static_cast<const Tensor&>(probe));
        probe.data[i] = saved - h;
        const double dn = f(static_cast<const Tensor&>(probe));
        probe.data[i] = saved;
        g.data[i] = (up - dn) / (2.0 * h);
    }
    return g;
}

// Worst-entry deviation scaled by the largest magnitude present; 0 when both
// gradients vanish.
inline double gradient_rel_error(const Tensor& analytic, const Tensor& numeric) {
    check_same_shape(analytic, numeric, "gradient_rel_error");
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.data.size(); ++i)
        worst = std::max(worst, std::abs(analytic.data[i] - numeric.data[i]));
    const double scale = std::max({max_abs(analytic), max_abs(numeric), 1e-10});
    return worst / scale;
}

}  // namespace radar
