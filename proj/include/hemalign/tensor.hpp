// Copyright (c) 2026, The hemalign Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensor of doubles and the named parameter store used by
// every trainable module.

#ifndef HEMALIGN_TENSOR_HPP
#define HEMALIGN_TENSOR_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <map>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "hemalign/error.hpp"

namespace hemalign {

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& s) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << 'x';
        os << s[i];
    }
    os << ')';
    return os.str();
}

inline std::size_t shape_size(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>{});
}

class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
        validate_extents();
        data_.assign(shape_size(shape_), fill);
    }

    Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
        validate_extents();
        if (data_.size() != shape_size(shape_))
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_string(shape_));
    }

    static Tensor zeros(std::size_t rows, std::size_t cols) { return Tensor({rows, cols}); }
    static Tensor filled(std::size_t rows, std::size_t cols, double v) { return Tensor({rows, cols}, v); }

    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
        return Tensor({rows, cols}, std::move(data));
    }

    /// Row vector (1 x n), the graph's convention for vectors.
    static Tensor row(std::initializer_list<double> values) {
        return Tensor({1, values.size()}, std::vector<double>(values));
    }
    static Tensor row(std::vector<double> values) {
        const std::size_t n = values.size();
        return Tensor({1, n}, std::move(values));
    }

    static Tensor identity(std::size_t n) {
        Tensor t({n, n});
        for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
        return t;
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    /// Rank-2 view extents; rank-1 tensors read as a single row, scalars as 1 x 1.
    std::size_t rows() const noexcept {
        if (shape_.size() >= 2) return shape_[0];
        return 1;
    }
    std::size_t cols() const noexcept {
        if (shape_.size() >= 2) return data_.size() / (shape_[0] == 0 ? 1 : shape_[0]);
        if (shape_.size() == 1) return shape_[0];
        return 1;
    }

    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }
    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }
    std::vector<double>& storage() noexcept { return data_; }
    const std::vector<double>& storage() const noexcept { return data_; }

    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }

    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols() + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols() + c]; }

    std::span<double> row_span(std::size_t r) noexcept { return {data_.data() + r * cols(), cols()}; }
    std::span<const double> row_span(std::size_t r) const noexcept {
        return {data_.data() + r * cols(), cols()};
    }

    double item() const {
        if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape_));
        return data_[0];
    }

    Tensor reshaped(Shape s) const {
        if (shape_size(s) != data_.size())
            throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(s));
        return Tensor(std::move(s), data_);
    }

    bool all_finite() const noexcept {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

    void fill(double v) noexcept { std::fill(data_.begin(), data_.end(), v); }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    void validate_extents() const {
        for (auto e : shape_)
            if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_string(shape_));
    }

    Shape shape_;
    std::vector<double> data_;
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what_a, const char* what_b) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string("shape mismatch: ") + what_a + " " + shape_string(a.shape()) +
                         " vs " + what_b + " " + shape_string(b.shape()));
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "lhs", "rhs");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

constexpr double kCosineEpsilon = 1e-8;

/// a.b / (|a||b| + 1e-8), clamped to [-1, 1].
inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    if (a.empty() || b.empty())
        throw ShapeError("cosine_similarity on zero-length vector");
    if (a.size() != b.size())
        throw ShapeError("cosine_similarity: operand a has length " + std::to_string(a.size()) +
                         ", operand b has length " + std::to_string(b.size()));
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb) + kCosineEpsilon), -1.0, 1.0);
}

inline double cosine_similarity(const Tensor& a, const Tensor& b) {
    return cosine_similarity(a.values(), b.values());
}

/// Named parameters, each paired with a gradient slot of identical shape.
class ParamStore {
public:
    void add(const std::string& name, Tensor value) {
        if (values_.count(name)) throw ConfigError("duplicate parameter '" + name + "'");
        grads_.emplace(name, Tensor(value.shape()));
        values_.emplace(name, std::move(value));
    }

    bool contains(const std::string& name) const { return values_.count(name) != 0; }

    template <typename Map>
    static auto& lookup(Map& m, const std::string& name) {
        auto it = m.find(name);
        if (it == m.end()) throw ConfigError("unknown parameter '" + name + "'");
        return it->second;
    }

    const Tensor& value(const std::string& name) const { return lookup(values_, name); }
    Tensor& value(const std::string& name) { return lookup(values_, name); }
    const Tensor& grad(const std::string& name) const { return lookup(grads_, name); }
    Tensor& grad(const std::string& name) { return lookup(grads_, name); }

    void zero_grads() {
        for (auto& [_, g] : grads_) g.fill(0.0);
    }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        out.reserve(values_.size());
        for (const auto& [k, _] : values_) out.push_back(k);
        return out;
    }

    std::size_t size() const noexcept { return values_.size(); }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& [_, v] : values_) n += v.size();
        return n;
    }

    const std::map<std::string, Tensor>& all_values() const noexcept { return values_; }
    const std::map<std::string, Tensor>& all_grads() const noexcept { return grads_; }

    friend bool operator==(const ParamStore& a, const ParamStore& b) { return a.values_ == b.values_; }

private:
    std::map<std::string, Tensor> values_;
    std::map<std::string, Tensor> grads_;
};

} // namespace hemalign

#endif // HEMALIGN_TENSOR_HPP
