#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

namespace dk {

// loss_and_grad evaluates the loss at `p` and, when `grad` is non-null,
// fills the analytic gradient. Returns the max over coordinates of
// |analytic - central difference| / max(1e-8, |analytic| + |fd|).
inline double check_gradients(
    const std::function<double(std::span<const double>, std::span<double>)>& loss_and_grad,
    std::vector<double> params, double eps) {
    if (eps <= 0.0) throw std::invalid_argument("check_gradients: eps must be positive");
    std::vector<double> analytic(params.size(), 0.0);
    double base = loss_and_grad(params, analytic);
    if (!std::isfinite(base)) throw std::runtime_error("check_gradients: non-finite loss");
    double worst = 0.0;
    for (size_t i = 0; i < params.size(); ++i) {
        double orig = params[i];
        params[i] = orig + eps;
        double up = loss_and_grad(params, {});
        params[i] = orig - eps;
        double down = loss_and_grad(params, {});
        params[i] = orig;
        if (!std::isfinite(up) || !std::isfinite(down))
            throw std::runtime_error("check_gradients: non-finite loss");
        double fd = (up - down) / (2.0 * eps);
        double err = std::fabs(analytic[i] - fd) / std::max(1e-8, std::fabs(analytic[i]) + std::fabs(fd));
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace dk
