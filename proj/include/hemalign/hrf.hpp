// Copyright (c) 2026, The hemalign Authors
// SPDX-License-Identifier: Apache-2.0
//
// Canonical double-gamma hemodynamic response, sampled and normalized to unit sum.

#ifndef HEMALIGN_HRF_HPP
#define HEMALIGN_HRF_HPP

#include <cmath>
#include <cstddef>
#include <vector>

#include "hemalign/error.hpp"
#include "hemalign/tensor.hpp"

namespace hemalign {

struct HrfShape {
    double peak_shape = 6.0;
    double peak_scale = 1.0;
    double undershoot_shape = 16.0;
    double undershoot_scale = 1.0;
    double undershoot_ratio = 1.0 / 6.0;
};

/// Gamma density with shape a and scale b.
inline double gamma_pdf(double t, double a, double b) {
    if (t <= 0.0) return 0.0;
    return std::exp((a - 1.0) * std::log(t) - t / b - a * std::log(b) - std::lgamma(a));
}

/// Unnormalized double-gamma response at time t (seconds).
inline double double_gamma(double t, const HrfShape& s = {}) {
    return gamma_pdf(t, s.peak_shape, s.peak_scale) -
           s.undershoot_ratio * gamma_pdf(t, s.undershoot_shape, s.undershoot_scale);
}

struct HrfKernel {
    double tr_seconds = 1.0;
    std::size_t length = 0;
    Tensor taps;  // rank 1, `length` values
    /// Set when length * tr < 10 s: the undershoot is cut off.
    bool truncated = false;

    double tap(std::size_t i) const { return taps[i]; }
};

inline HrfKernel hrf_kernel(double tr_seconds, std::size_t length, const HrfShape& shape = {}) {
    if (!(tr_seconds > 0.0)) throw ConfigError("hrf_kernel: tr_seconds must be positive");
    if (length < 2) throw ConfigError("hrf_kernel: length must be at least 2");
    std::vector<double> taps(length);
    double total = 0.0;
    for (std::size_t i = 0; i < length; ++i) total += (taps[i] = double_gamma(static_cast<double>(i) * tr_seconds, shape));
    if (!(total > 0.0)) throw NumericError("hrf_kernel: taps sum to a non-positive value");
    for (auto& t : taps) t /= total;
    HrfKernel k;
    k.tr_seconds = tr_seconds;
    k.length = length;
    k.taps = Tensor({length}, std::move(taps));
    k.truncated = static_cast<double>(length) * tr_seconds < 10.0;
    return k;
}

/// Single-tap kernel (1, 0, ..., 0): the HRF operator becomes the identity.
inline HrfKernel delta_kernel(std::size_t length, double tr_seconds = 1.0) {
    HrfKernel k;
    k.tr_seconds = tr_seconds;
    k.length = length;
    k.taps = Tensor({length});
    k.taps[0] = 1.0;
    return k;
}

} // namespace hemalign

#endif // HEMALIGN_HRF_HPP
