// Copyright (c) 2026, The hemalign Authors
// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference verification of reverse-mode gradients.

#ifndef HEMALIGN_GRADCHECK_HPP
#define HEMALIGN_GRADCHECK_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "hemalign/autodiff.hpp"

namespace hemalign {

struct GradCheckOptions {
    double step = 1e-5;
    /// Denominator floor for the relative error; below it the comparison is effectively absolute.
    double floor = 1e-5;
    /// Components checked per parameter (evenly strided); 0 checks all.
    std::size_t max_per_param = 0;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::string worst;  // "name[index]" of the worst component

    bool passed(double tol) const { return max_rel_error < tol; }
};

inline double relative_error(double analytic, double numeric, double floor) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares every parameter gradient of `build` against central differences.
/// Stop-gradient outputs are frozen at their reference-pass values while perturbing.
inline GradCheckResult check_gradients(ParamStore& params, const std::function<Var(Graph&)>& build,
                                       const GradCheckOptions& opt = {}) {
    params.zero_grads();
    std::vector<Tensor> frozen;
    {
        Graph g;
        g.record_frozen();
        Var loss = build(g);
        g.backward(loss);
        frozen = g.recorded_frozen();
    }
    auto evaluate = [&]() {
        Graph g;
        g.replay_frozen(&frozen);
        return build(g).value().item();
    };

    GradCheckResult res;
    for (const auto& name : params.names()) {
        Tensor& value = params.value(name);
        const Tensor analytic = params.grad(name);
        const std::size_t n = value.size();
        const std::size_t stride =
            (opt.max_per_param == 0 || n <= opt.max_per_param) ? 1 : (n + opt.max_per_param - 1) / opt.max_per_param;
        for (std::size_t i = 0; i < n; i += stride) {
            const double orig = value[i];
            value[i] = orig + opt.step;
            const double up = evaluate();
            value[i] = orig - opt.step;
            const double down = evaluate();
            value[i] = orig;
            const double numeric = (up - down) / (2.0 * opt.step);
            const double err = relative_error(analytic[i], numeric, opt.floor);
            ++res.checked;
            if (err >= res.max_rel_error) {
                res.max_rel_error = err;
                res.worst = name + "[" + std::to_string(i) + "]";
            }
        }
    }
    return res;
}

} // namespace hemalign

#endif // HEMALIGN_GRADCHECK_HPP
