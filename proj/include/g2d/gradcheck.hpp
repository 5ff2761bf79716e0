#pragma once

#include <functional>
#include <vector>

#include "g2d/param.hpp"
#include "g2d/tensor.hpp"

namespace g2d {

// Central-difference gradient estimate, (f(theta+eps) - f(theta-eps)) / 2eps
// per coordinate. Deliberately independent of Graph::backward: it only
// re-evaluates f, so it serves as the oracle the analytic path is checked
// against.
inline std::vector<Tensor> finite_diff_grad(const std::function<double()>& f,
                                            ParamGroup& params, double eps = 1e-5) {
    if (eps <= 0.0) throw ConfigError("finite_diff_grad: eps must be positive");
    std::vector<Tensor> grads;
    grads.reserve(params.size());
    for (Tensor& t : params.tensors()) {
        Tensor g(t.shape);
        for (std::size_t j = 0; j < t.numel(); ++j) {
            const double saved = t.data[j];
            t.data[j] = saved + eps;
            const double hi = f();
            t.data[j] = saved - eps;
            const double lo = f();
            t.data[j] = saved;
            g.data[j] = (hi - lo) / (2.0 * eps);
        }
        grads.push_back(std::move(g));
    }
    return grads;
}

// Max relative error between an analytic and a reference gradient set,
// with an absolute floor to keep near-zero coordinates from exploding the
// ratio.
inline double max_relative_error(const std::vector<Tensor>& analytic,
                                 const std::vector<Tensor>& reference,
                                 double floor = 1e-6) {
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        require_same_shape(analytic[i], reference[i], "max_relative_error");
        for (std::size_t j = 0; j < analytic[i].numel(); ++j) {
            const double a = analytic[i].data[j];
            const double r = reference[i].data[j];
            const double denom = std::max({std::abs(a), std::abs(r), floor});
            worst = std::max(worst, std::abs(a - r) / denom);
        }
    }
    return worst;
}

} // namespace g2d
