// Copyright (c) 2026, The hemalign Authors
// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode differentiation over an explicitly recorded computation graph.
//
// A Graph is a tape of nodes appended in evaluation order; each node owns its
// forward value and a backward closure that pushes its upstream gradient into
// its parents. All values are rank-2 (vectors are 1 x n rows, scalars 1 x 1).
//
// Stop-gradient nodes can be recorded and replayed: a finite-difference check
// evaluates the same expression with every stop-gradient output frozen at its
// value from the unperturbed pass, which is exactly the function whose
// derivative the backward pass computes.

#ifndef HEMALIGN_AUTODIFF_HPP
#define HEMALIGN_AUTODIFF_HPP

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "hemalign/error.hpp"
#include "hemalign/tensor.hpp"

namespace hemalign {

class Graph;

/// Handle to a node in a Graph. Cheap to copy; valid while the graph lives.
struct Var {
    Graph* graph = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
};

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

inline ConstMap cmap(const Tensor& t) { return ConstMap(t.data(), t.rows(), t.cols()); }
inline MutMap mmap(Tensor& t) { return MutMap(t.data(), t.rows(), t.cols()); }

inline Tensor as_matrix(Tensor t) {
    if (t.rank() == 2) return t;
    const std::size_t r = t.rows(), c = t.cols();
    return t.reshaped({r, c});
}

} // namespace detail

class Graph {
public:
    using BackwardFn = std::function<void(Graph&, std::size_t self, const Tensor& upstream)>;

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var constant(Tensor value) { return push(detail::as_matrix(std::move(value)), false, {}); }

    /// Differentiable leaf whose gradient is read back with grad().
    Var input(Tensor value) { return push(detail::as_matrix(std::move(value)), true, {}); }

    /// Leaf bound to a named parameter; backward() accumulates into the store's gradient slot.
    Var param(ParamStore& store, const std::string& name) {
        auto key = std::make_pair(&store, name);
        if (auto it = param_nodes_.find(key); it != param_nodes_.end()) return Var{this, it->second};
        Var v = push(detail::as_matrix(store.value(name)), true, {});
        nodes_[v.id].store = &store;
        nodes_[v.id].param_name = name;
        param_nodes_.emplace(std::move(key), v.id);
        return v;
    }

    /// Forward value unchanged; contributes no upstream gradient.
    Var stop_gradient(Var x) {
        check_owner(x);
        Tensor v = frozen_or(nodes_[x.id].value);
        return push(std::move(v), false, {});
    }

    /// Forward value is `quantized` exactly; the gradient reaches `h` with identity Jacobian.
    Var straight_through(Var h, const Tensor& quantized) {
        check_owner(h);
        Tensor q = detail::as_matrix(quantized);
        require_same_shape(nodes_[h.id].value, q, "straight_through input", "quantized");
        Tensor out;
        if (mode_ == Mode::replay) {
            // frozen offset (quantized - h) from the reference pass
            Tensor offset = next_frozen(q.shape());
            out = nodes_[h.id].value;
            for (std::size_t i = 0; i < out.size(); ++i) out[i] += offset[i];
        } else {
            if (mode_ == Mode::record) {
                Tensor offset = q;
                for (std::size_t i = 0; i < offset.size(); ++i) offset[i] -= nodes_[h.id].value[i];
                recorded_.push_back(std::move(offset));
            }
            out = std::move(q);
        }
        return push(std::move(out), needs(h), {h.id}, [h](Graph& g, std::size_t, const Tensor& up) {
            if (g.needs(h)) g.accumulate(h.id, up);
        });
    }

    const Tensor& value(Var v) const { return nodes_.at(v.id).value; }

    /// Gradient of the last backward() target with respect to `v` (zeros if unreached).
    Tensor grad(Var v) const {
        const Node& n = nodes_.at(v.id);
        if (n.has_grad) return n.grad;
        return Tensor(n.value.shape());
    }

    /// Runs the reverse sweep from a scalar node. Parameter gradients are added into their stores.
    double backward(Var loss) {
        check_owner(loss);
        const Tensor& lv = nodes_[loss.id].value;
        if (lv.size() != 1)
            throw ShapeError("backward target must be scalar, got " + shape_string(lv.shape()));
        for (auto& n : nodes_) {
            n.has_grad = false;
        }
        if (nodes_[loss.id].requires_grad) {
            Tensor seed(lv.shape(), 1.0);
            accumulate(loss.id, seed);
        }
        for (std::size_t i = loss.id + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.has_grad || !n.backward) continue;
            n.backward(*this, i, n.grad);
        }
        for (auto& n : nodes_) {
            if (n.store == nullptr || !n.has_grad) continue;
            Tensor& slot = n.store->grad(n.param_name);
            for (std::size_t k = 0; k < slot.size(); ++k) slot[k] += n.grad[k];
        }
        return lv[0];
    }

    std::size_t node_count() const noexcept { return nodes_.size(); }

    // --- stop-gradient record / replay -------------------------------------------------

    void record_frozen() {
        mode_ = Mode::record;
        recorded_.clear();
    }
    void replay_frozen(const std::vector<Tensor>* frozen) {
        mode_ = Mode::replay;
        replay_ = frozen;
        cursor_ = 0;
    }
    const std::vector<Tensor>& recorded_frozen() const noexcept { return recorded_; }

    // --- op plumbing --------------------------------------------------------------------

    bool needs(Var v) const { return nodes_[v.id].requires_grad; }

    /// Appends a node. `parents` documents the dependency; the closure does the routing.
    Var push(Tensor value, bool requires_grad, std::initializer_list<std::size_t> /*parents*/,
             BackwardFn fn = {}) {
        Node n;
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        if (requires_grad) n.backward = std::move(fn);
        nodes_.push_back(std::move(n));
        return Var{this, nodes_.size() - 1};
    }

    void accumulate(std::size_t id, const Tensor& g) {
        Node& n = nodes_[id];
        if (!n.requires_grad) return;
        if (!n.has_grad) {
            n.grad = g;
            n.has_grad = true;
            return;
        }
        for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
    }

    /// Mutable gradient slot for `id`, zero-initialized on first touch.
    Tensor& slot(std::size_t id) {
        Node& n = nodes_[id];
        if (!n.has_grad) {
            n.grad = Tensor(n.value.shape());
            n.has_grad = true;
        }
        return n.grad;
    }

    void check_owner(Var v) const {
        if (v.graph != this || v.id >= nodes_.size())
            throw ShapeError("variable does not belong to this graph");
    }

private:
    enum class Mode { normal, record, replay };

    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        bool has_grad = false;
        BackwardFn backward;
        ParamStore* store = nullptr;
        std::string param_name;
    };

    Tensor frozen_or(const Tensor& live) {
        if (mode_ == Mode::replay) return next_frozen(live.shape());
        if (mode_ == Mode::record) recorded_.push_back(live);
        return live;
    }

    Tensor next_frozen(const Shape& shape) {
        if (replay_ == nullptr || cursor_ >= replay_->size())
            throw ShapeError("stop-gradient replay exhausted: graph structure changed between passes");
        const Tensor& t = (*replay_)[cursor_++];
        if (t.shape() != shape)
            throw ShapeError("stop-gradient replay shape " + shape_string(t.shape()) + " vs live " +
                             shape_string(shape));
        return t;
    }

    std::vector<Node> nodes_;
    std::map<std::pair<ParamStore*, std::string>, std::size_t> param_nodes_;
    Mode mode_ = Mode::normal;
    std::vector<Tensor> recorded_;
    const std::vector<Tensor>* replay_ = nullptr;
    std::size_t cursor_ = 0;
};

inline const Tensor& Var::value() const { return graph->value(*this); }

// =============================================================================
// Differentiable operations
// =============================================================================

namespace detail {

inline Graph& owner(Var a, Var b) {
    a.graph->check_owner(a);
    a.graph->check_owner(b);
    return *a.graph;
}

inline void same_shape(const char* op, Var a, Var b) {
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    if (x.shape() != y.shape())
        throw ShapeError(std::string(op) + ": operand #" + std::to_string(a.id) + " " +
                         shape_string(x.shape()) + " vs operand #" + std::to_string(b.id) + " " +
                         shape_string(y.shape()));
}

} // namespace detail

inline Var stop_gradient(Var x) { return x.graph->stop_gradient(x); }

inline Var add(Var a, Var b) {
    Graph& g = detail::owner(a, b);
    detail::same_shape("add", a, b);
    Tensor out = a.value();
    const Tensor& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    return g.push(std::move(out), g.needs(a) || g.needs(b), {a.id, b.id}, [a, b](Graph& g, std::size_t, const Tensor& up) {
        g.accumulate(a.id, up);
        g.accumulate(b.id, up);
    });
}

inline Var sub(Var a, Var b) {
    Graph& g = detail::owner(a, b);
    detail::same_shape("sub", a, b);
    Tensor out = a.value();
    const Tensor& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
    return g.push(std::move(out), g.needs(a) || g.needs(b), {a.id, b.id}, [a, b](Graph& g, std::size_t, const Tensor& up) {
        g.accumulate(a.id, up);
        if (g.needs(b)) {
            Tensor& s = g.slot(b.id);
            for (std::size_t i = 0; i < s.size(); ++i) s[i] -= up[i];
        }
    });
}

/// Elementwise product.
inline Var mul(Var a, Var b) {
    Graph& g = detail::owner(a, b);
    detail::same_shape("mul", a, b);
    Tensor out = a.value();
    const Tensor& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    return g.push(std::move(out), g.needs(a) || g.needs(b), {a.id, b.id}, [a, b](Graph& g, std::size_t, const Tensor& up) {
        const Tensor& av = a.value();
        const Tensor& bv = b.value();
        if (g.needs(a)) {
            Tensor& s = g.slot(a.id);
            for (std::size_t i = 0; i < s.size(); ++i) s[i] += up[i] * bv[i];
        }
        if (g.needs(b)) {
            Tensor& s = g.slot(b.id);
            for (std::size_t i = 0; i < s.size(); ++i) s[i] += up[i] * av[i];
        }
    });
}

/// Elementwise product with a constant tensor of the same shape.
inline Var mul_const(Var a, const Tensor& c) {
    Graph& g = *a.graph;
    Tensor cm = detail::as_matrix(c);
    require_same_shape(a.value(), cm, "mul_const operand", "constant");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= cm[i];
    return g.push(std::move(out), g.needs(a), {a.id}, [a, cm = std::move(cm)](Graph& g, std::size_t, const Tensor& up) {
        Tensor& s = g.slot(a.id);
        for (std::size_t i = 0; i < s.size(); ++i) s[i] += up[i] * cm[i];
    });
}

inline Var scale(Var a, double c) {
    Graph& g = *a.graph;
    Tensor out = a.value();
    for (auto& v : out.storage()) v *= c;
    return g.push(std::move(out), g.needs(a), {a.id}, [a, c](Graph& g, std::size_t, const Tensor& up) {
        Tensor& s = g.slot(a.id);
        for (std::size_t i = 0; i < s.size(); ++i) s[i] += c * up[i];
    });
}

/// Multiplies every element of `a` by the 1 x 1 variable `s`.
inline Var scale_by(Var a, Var s) {
    Graph& g = detail::owner(a, s);
    if (s.value().size() != 1)
        throw ShapeError("scale_by: scalar operand #" + std::to_string(s.id) + " has shape " +
                         shape_string(s.value().shape()) + ", operand #" + std::to_string(a.id) +
                         " has shape " + shape_string(a.value().shape()));
    const double sv = s.value()[0];
    Tensor out = a.value();
    for (auto& v : out.storage()) v *= sv;
    return g.push(std::move(out), g.needs(a) || g.needs(s), {a.id, s.id}, [a, s](Graph& g, std::size_t, const Tensor& up) {
        const Tensor& av = a.value();
        const double sv = s.value()[0];
        if (g.needs(a)) {
            Tensor& sl = g.slot(a.id);
            for (std::size_t i = 0; i < sl.size(); ++i) sl[i] += sv * up[i];
        }
        if (g.needs(s)) {
            double acc = 0.0;
            for (std::size_t i = 0; i < av.size(); ++i) acc += av[i] * up[i];
            g.slot(s.id)[0] += acc;
        }
    });
}

/// Adds a 1 x n row to every row of an m x n matrix.
inline Var add_row(Var a, Var row) {
    Graph& g = detail::owner(a, row);
    const Tensor& av = a.value();
    const Tensor& rv = row.value();
    if (rv.rows() != 1 || rv.cols() != av.cols())
        throw ShapeError("add_row: operand #" + std::to_string(a.id) + " " + shape_string(av.shape()) +
                         " vs row operand #" + std::to_string(row.id) + " " + shape_string(rv.shape()));
    Tensor out = av;
    const std::size_t n = av.cols();
    for (std::size_t r = 0; r < av.rows(); ++r)
        for (std::size_t c = 0; c < n; ++c) out[r * n + c] += rv[c];
    return g.push(std::move(out), g.needs(a) || g.needs(row), {a.id, row.id}, [a, row](Graph& g, std::size_t, const Tensor& up) {
        g.accumulate(a.id, up);
        if (g.needs(row)) {
            Tensor& s = g.slot(row.id);
            const std::size_t n = s.size();
            for (std::size_t i = 0; i < up.size(); ++i) s[i % n] += up[i];
        }
    });
}

/// A (m x k) times B (k x n).
inline Var matmul(Var a, Var b) {
    Graph& g = detail::owner(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.cols() != bv.rows())
        throw ShapeError("matmul: operand #" + std::to_string(a.id) + " " + shape_string(av.shape()) +
                         " vs operand #" + std::to_string(b.id) + " " + shape_string(bv.shape()));
    Tensor out = Tensor::zeros(av.rows(), bv.cols());
    detail::mmap(out).noalias() = detail::cmap(av) * detail::cmap(bv);
    return g.push(std::move(out), g.needs(a) || g.needs(b), {a.id, b.id}, [a, b](Graph& g, std::size_t, const Tensor& up) {
        auto dc = detail::cmap(up);
        if (g.needs(a)) detail::mmap(g.slot(a.id)).noalias() += dc * detail::cmap(b.value()).transpose();
        if (g.needs(b)) detail::mmap(g.slot(b.id)).noalias() += detail::cmap(a.value()).transpose() * dc;
    });
}

/// A (m x k) times B^T where B is (n x k).
inline Var matmul_nt(Var a, Var b) {
    Graph& g = detail::owner(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.cols() != bv.cols())
        throw ShapeError("matmul_nt: operand #" + std::to_string(a.id) + " " + shape_string(av.shape()) +
                         " vs operand #" + std::to_string(b.id) + " " + shape_string(bv.shape()));
    Tensor out = Tensor::zeros(av.rows(), bv.rows());
    detail::mmap(out).noalias() = detail::cmap(av) * detail::cmap(bv).transpose();
    return g.push(std::move(out), g.needs(a) || g.needs(b), {a.id, b.id}, [a, b](Graph& g, std::size_t, const Tensor& up) {
        auto dc = detail::cmap(up);
        if (g.needs(a)) detail::mmap(g.slot(a.id)).noalias() += dc * detail::cmap(b.value());
        if (g.needs(b)) detail::mmap(g.slot(b.id)).noalias() += dc.transpose() * detail::cmap(a.value());
    });
}

inline Var tanh(Var a) {
    Graph& g = *a.graph;
    Tensor out = a.value();
    for (auto& v : out.storage()) v = std::tanh(v);
    return g.push(std::move(out), g.needs(a), {a.id}, [a](Graph& g, std::size_t self, const Tensor& up) {
        const Tensor& y = g.value(Var{&g, self});
        Tensor& s = g.slot(a.id);
        for (std::size_t i = 0; i < s.size(); ++i) s[i] += up[i] * (1.0 - y[i] * y[i]);
    });
}

inline Var square(Var a) {
    Graph& g = *a.graph;
    Tensor out = a.value();
    for (auto& v : out.storage()) v *= v;
    return g.push(std::move(out), g.needs(a), {a.id}, [a](Graph& g, std::size_t, const Tensor& up) {
        const Tensor& x = a.value();
        Tensor& s = g.slot(a.id);
        for (std::size_t i = 0; i < s.size(); ++i) s[i] += 2.0 * x[i] * up[i];
    });
}

inline Var exp(Var a) {
    Graph& g = *a.graph;
    Tensor out = a.value();
    for (auto& v : out.storage()) v = std::exp(v);
    return g.push(std::move(out), g.needs(a), {a.id}, [a](Graph& g, std::size_t self, const Tensor& up) {
        const Tensor& y = g.value(Var{&g, self});
        Tensor& s = g.slot(a.id);
        for (std::size_t i = 0; i < s.size(); ++i) s[i] += up[i] * y[i];
    });
}

/// Sum of all elements, as a 1 x 1 node.
inline Var sum(Var a) {
    Graph& g = *a.graph;
    double acc = 0.0;
    for (double v : a.value().values()) acc += v;
    return g.push(Tensor::filled(1, 1, acc), g.needs(a), {a.id}, [a](Graph& g, std::size_t, const Tensor& up) {
        Tensor& s = g.slot(a.id);
        for (auto& v : s.storage()) v += up[0];
    });
}

inline Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

/// Column sums: m x n -> 1 x n.
inline Var sum_rows(Var a) {
    Graph& g = *a.graph;
    const Tensor& x = a.value();
    Tensor out = Tensor::zeros(1, x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t c = 0; c < x.cols(); ++c) out[c] += x(r, c);
    return g.push(std::move(out), g.needs(a), {a.id}, [a](Graph& g, std::size_t, const Tensor& up) {
        Tensor& s = g.slot(a.id);
        const std::size_t n = up.size();
        for (std::size_t i = 0; i < s.size(); ++i) s[i] += up[i % n];
    });
}

/// Per-segment temporal mean: rows are stacked segments of `seg_len` timesteps.
/// (S * seg_len) x n -> S x n.
inline Var mean_segments(Var a, std::size_t seg_len) {
    Graph& g = *a.graph;
    const Tensor& x = a.value();
    if (seg_len == 0 || x.rows() % seg_len != 0)
        throw ShapeError("mean_segments: " + std::to_string(x.rows()) + " rows not divisible into segments of " +
                         std::to_string(seg_len));
    const std::size_t segs = x.rows() / seg_len, n = x.cols();
    const double inv = 1.0 / static_cast<double>(seg_len);
    Tensor out = Tensor::zeros(segs, n);
    for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t c = 0; c < n; ++c) out[(r / seg_len) * n + c] += x[r * n + c] * inv;
    return g.push(std::move(out), g.needs(a), {a.id}, [a, seg_len, inv](Graph& g, std::size_t, const Tensor& up) {
        Tensor& s = g.slot(a.id);
        const std::size_t n = s.cols();
        for (std::size_t r = 0; r < s.rows(); ++r)
            for (std::size_t c = 0; c < n; ++c) s[r * n + c] += up[(r / seg_len) * n + c] * inv;
    });
}

/// Row-wise softmax with max subtraction.
inline Var softmax_rows(Var a) {
    Graph& g = *a.graph;
    const Tensor& x = a.value();
    Tensor out = x;
    const std::size_t n = x.cols();
    for (std::size_t r = 0; r < x.rows(); ++r) {
        double* row = out.data() + r * n;
        const double m = *std::max_element(row, row + n);
        double z = 0.0;
        for (std::size_t c = 0; c < n; ++c) z += (row[c] = std::exp(row[c] - m));
        for (std::size_t c = 0; c < n; ++c) row[c] /= z;
    }
    return g.push(std::move(out), g.needs(a), {a.id}, [a](Graph& g, std::size_t self, const Tensor& up) {
        const Tensor& y = g.value(Var{&g, self});
        Tensor& s = g.slot(a.id);
        const std::size_t n = y.cols();
        for (std::size_t r = 0; r < y.rows(); ++r) {
            double dot = 0.0;
            for (std::size_t c = 0; c < n; ++c) dot += up[r * n + c] * y[r * n + c];
            for (std::size_t c = 0; c < n; ++c) s[r * n + c] += y[r * n + c] * (up[r * n + c] - dot);
        }
    });
}

/// Row-wise log-sum-exp: m x n -> m x 1.
inline Var logsumexp_rows(Var a) {
    Graph& g = *a.graph;
    const Tensor& x = a.value();
    const std::size_t n = x.cols();
    Tensor out = Tensor::zeros(x.rows(), 1);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const double* row = x.data() + r * n;
        const double m = *std::max_element(row, row + n);
        double z = 0.0;
        for (std::size_t c = 0; c < n; ++c) z += std::exp(row[c] - m);
        out[r] = m + std::log(z);
    }
    return g.push(std::move(out), g.needs(a), {a.id}, [a](Graph& g, std::size_t self, const Tensor& up) {
        const Tensor& x = a.value();
        const Tensor& y = g.value(Var{&g, self});
        Tensor& s = g.slot(a.id);
        const std::size_t n = x.cols();
        for (std::size_t r = 0; r < x.rows(); ++r)
            for (std::size_t c = 0; c < n; ++c) s[r * n + c] += up[r] * std::exp(x[r * n + c] - y[r]);
    });
}

/// Diagonal of a square matrix as an n x 1 column.
inline Var diag(Var a) {
    Graph& g = *a.graph;
    const Tensor& x = a.value();
    if (x.rows() != x.cols()) throw ShapeError("diag of non-square " + shape_string(x.shape()));
    Tensor out = Tensor::zeros(x.rows(), 1);
    for (std::size_t i = 0; i < x.rows(); ++i) out[i] = x(i, i);
    return g.push(std::move(out), g.needs(a), {a.id}, [a](Graph& g, std::size_t, const Tensor& up) {
        Tensor& s = g.slot(a.id);
        for (std::size_t i = 0; i < s.rows(); ++i) s(i, i) += up[i];
    });
}

/// Single element (r, c) as a 1 x 1 node.
inline Var element(Var a, std::size_t r, std::size_t c) {
    Graph& g = *a.graph;
    const Tensor& x = a.value();
    if (r >= x.rows() || c >= x.cols())
        throw IndexError("element (" + std::to_string(r) + ", " + std::to_string(c) + ") outside " +
                         shape_string(x.shape()));
    return g.push(Tensor::filled(1, 1, x(r, c)), g.needs(a), {a.id}, [a, r, c](Graph& g, std::size_t, const Tensor& up) {
        g.slot(a.id)(r, c) += up[0];
    });
}

/// Selects rows by index (repeats allowed).
inline Var gather_rows(Var a, std::vector<std::size_t> idx) {
    Graph& g = *a.graph;
    const Tensor& x = a.value();
    const std::size_t n = x.cols();
    if (idx.empty()) throw ShapeError("gather_rows with no indices");
    Tensor out = Tensor::zeros(idx.size(), n);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= x.rows())
            throw IndexError("gather_rows index " + std::to_string(idx[i]) + " outside " + shape_string(x.shape()));
        std::copy_n(x.data() + idx[i] * n, n, out.data() + i * n);
    }
    return g.push(std::move(out), g.needs(a), {a.id}, [a, idx = std::move(idx)](Graph& g, std::size_t, const Tensor& up) {
        Tensor& s = g.slot(a.id);
        const std::size_t n = s.cols();
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (std::size_t c = 0; c < n; ++c) s[idx[i] * n + c] += up[i * n + c];
    });
}

/// Stacks matrices with equal column counts vertically.
inline Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows with no operands");
    Graph& g = *parts.front().graph;
    const std::size_t n = parts.front().cols();
    std::size_t rows = 0;
    bool req = false;
    for (Var p : parts) {
        g.check_owner(p);
        if (p.cols() != n)
            throw ShapeError("concat_rows: operand #" + std::to_string(parts.front().id) + " " +
                             shape_string(parts.front().value().shape()) + " vs operand #" + std::to_string(p.id) +
                             " " + shape_string(p.value().shape()));
        rows += p.rows();
        req = req || g.needs(p);
    }
    Tensor out = Tensor::zeros(rows, n);
    std::size_t off = 0;
    for (Var p : parts) {
        std::copy_n(p.value().data(), p.value().size(), out.data() + off);
        off += p.value().size();
    }
    return g.push(std::move(out), req, {}, [parts](Graph& g, std::size_t, const Tensor& up) {
        std::size_t off = 0;
        for (Var p : parts) {
            const std::size_t len = p.value().size();
            if (g.needs(p)) {
                Tensor& s = g.slot(p.id);
                for (std::size_t i = 0; i < len; ++i) s[i] += up[off + i];
            }
            off += len;
        }
    });
}

/// Shifts each length-`seg_len` segment down by `shift` rows, zero-filling the head:
/// y[t] = x[t - shift] for t >= shift within every segment.
inline Var time_shift(Var a, std::size_t seg_len, std::size_t shift) {
    Graph& g = *a.graph;
    const Tensor& x = a.value();
    if (seg_len == 0 || x.rows() % seg_len != 0)
        throw ShapeError("time_shift: " + std::to_string(x.rows()) + " rows not divisible into segments of " +
                         std::to_string(seg_len));
    const std::size_t n = x.cols();
    Tensor out = Tensor::zeros(x.rows(), n);
    for (std::size_t r = 0; r < x.rows(); ++r) {
        if (r % seg_len < shift) continue;
        std::copy_n(x.data() + (r - shift) * n, n, out.data() + r * n);
    }
    return g.push(std::move(out), g.needs(a), {a.id}, [a, seg_len, shift](Graph& g, std::size_t, const Tensor& up) {
        Tensor& s = g.slot(a.id);
        const std::size_t n = s.cols();
        for (std::size_t r = 0; r < s.rows(); ++r) {
            if (r % seg_len < shift) continue;
            for (std::size_t c = 0; c < n; ++c) s[(r - shift) * n + c] += up[r * n + c];
        }
    });
}

/// Repeats a T x n block `reps` times vertically.
inline Var tile_rows(Var a, std::size_t reps) {
    Graph& g = *a.graph;
    const Tensor& x = a.value();
    if (reps == 0) throw ShapeError("tile_rows with zero repetitions");
    Tensor out = Tensor::zeros(x.rows() * reps, x.cols());
    for (std::size_t k = 0; k < reps; ++k) std::copy_n(x.data(), x.size(), out.data() + k * x.size());
    return g.push(std::move(out), g.needs(a), {a.id}, [a](Graph& g, std::size_t, const Tensor& up) {
        Tensor& s = g.slot(a.id);
        for (std::size_t i = 0; i < up.size(); ++i) s[i % s.size()] += up[i];
    });
}

/// Pairwise cosine similarity M[i][j] = a_i.b_j / (|a_i||b_j| + 1e-8), clamped to [-1, 1].
inline Var cosine_matrix(Var a, Var b) {
    Graph& g = detail::owner(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.cols() != bv.cols())
        throw ShapeError("cosine_matrix: operand #" + std::to_string(a.id) + " " + shape_string(av.shape()) +
                         " vs operand #" + std::to_string(b.id) + " " + shape_string(bv.shape()));
    const std::size_t m = av.rows(), p = bv.rows(), d = av.cols();
    auto norms = [d](const Tensor& t) {
        std::vector<double> out(t.rows());
        for (std::size_t i = 0; i < t.rows(); ++i) {
            double s = 0.0;
            for (std::size_t k = 0; k < d; ++k) s += t[i * d + k] * t[i * d + k];
            out[i] = std::sqrt(s);
        }
        return out;
    };
    auto na = std::make_shared<std::vector<double>>(norms(av));
    auto nb = std::make_shared<std::vector<double>>(norms(bv));
    Tensor dots = Tensor::zeros(m, p);
    detail::mmap(dots).noalias() = detail::cmap(av) * detail::cmap(bv).transpose();
    Tensor out = Tensor::zeros(m, p);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < p; ++j)
            out(i, j) = std::clamp(dots(i, j) / ((*na)[i] * (*nb)[j] + kCosineEpsilon), -1.0, 1.0);
    auto raw = std::make_shared<Tensor>(std::move(dots));
    return g.push(std::move(out), g.needs(a) || g.needs(b), {a.id, b.id},
                  [a, b, na, nb, raw](Graph& g, std::size_t, const Tensor& up) {
                      const Tensor& av = a.value();
                      const Tensor& bv = b.value();
                      const std::size_t m = av.rows(), p = bv.rows(), d = av.cols();
                      // dM/da_i = b_j / D - dot * |b_j| * (a_i / |a_i|) / D^2, D = |a_i||b_j| + eps
                      Tensor ca = Tensor::zeros(m, p);
                      Tensor sa = Tensor::zeros(m, 1), sb = Tensor::zeros(p, 1);
                      for (std::size_t i = 0; i < m; ++i)
                          for (std::size_t j = 0; j < p; ++j) {
                              const double D = (*na)[i] * (*nb)[j] + kCosineEpsilon;
                              const double dot = (*raw)(i, j);
                              const double val = dot / D;
                              if (val > 1.0 || val < -1.0) continue;
                              const double u = up(i, j);
                              ca(i, j) = u / D;
                              const double common = u * dot / (D * D);
                              if ((*na)[i] > 0.0) sa[i] += common * (*nb)[j] / (*na)[i];
                              if ((*nb)[j] > 0.0) sb[j] += common * (*na)[i] / (*nb)[j];
                          }
                      if (g.needs(a)) {
                          Tensor& s = g.slot(a.id);
                          detail::mmap(s).noalias() += detail::cmap(ca) * detail::cmap(bv);
                          for (std::size_t i = 0; i < m; ++i)
                              for (std::size_t k = 0; k < d; ++k) s[i * d + k] -= sa[i] * av[i * d + k];
                      }
                      if (g.needs(b)) {
                          Tensor& s = g.slot(b.id);
                          detail::mmap(s).noalias() += detail::cmap(ca).transpose() * detail::cmap(av);
                          for (std::size_t j = 0; j < p; ++j)
                              for (std::size_t k = 0; k < d; ++k) s[j * d + k] -= sb[j] * bv[j * d + k];
                      }
                  });
}

/// Attention probabilities for one head of one segment under a causal mask:
/// row t is softmax_j<=t(q_t . k_j / sqrt(d_head)). Returned as T x T (zeros above the diagonal).
inline Tensor causal_attention_weights(const Tensor& q, const Tensor& k, std::size_t seg, std::size_t seg_len,
                                       std::size_t head, std::size_t heads) {
    const std::size_t d = q.cols(), dh = d / heads, off = head * dh;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Tensor p = Tensor::zeros(seg_len, seg_len);
    for (std::size_t t = 0; t < seg_len; ++t) {
        const double* qt = q.data() + (seg * seg_len + t) * d + off;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j <= t; ++j) {
            const double* kj = k.data() + (seg * seg_len + j) * d + off;
            double s = 0.0;
            for (std::size_t c = 0; c < dh; ++c) s += qt[c] * kj[c];
            p(t, j) = s * scale;
            mx = std::max(mx, p(t, j));
        }
        double z = 0.0;
        for (std::size_t j = 0; j <= t; ++j) z += (p(t, j) = std::exp(p(t, j) - mx));
        for (std::size_t j = 0; j <= t; ++j) p(t, j) /= z;
    }
    return p;
}

/// Multi-head scaled dot-product attention with a causal mask, applied independently to
/// each stacked segment. q, k, v: (S * seg_len) x d, d divisible by `heads`.
inline Var causal_attention(Var q, Var k, Var v, std::size_t seg_len, std::size_t heads) {
    Graph& g = detail::owner(q, k);
    g.check_owner(v);
    detail::same_shape("causal_attention(q, k)", q, k);
    detail::same_shape("causal_attention(q, v)", q, v);
    const Tensor& qv = q.value();
    const std::size_t d = qv.cols();
    if (heads == 0 || d % heads != 0)
        throw ShapeError("causal_attention: width " + std::to_string(d) + " not divisible by " +
                         std::to_string(heads) + " heads");
    if (seg_len == 0 || qv.rows() % seg_len != 0)
        throw ShapeError("causal_attention: " + std::to_string(qv.rows()) + " rows not divisible into segments of " +
                         std::to_string(seg_len));
    const std::size_t segs = qv.rows() / seg_len, dh = d / heads;
    auto probs = std::make_shared<std::vector<Tensor>>();
    probs->reserve(segs * heads);
    Tensor out = Tensor::zeros(qv.rows(), d);
    const Tensor& vv = v.value();
    for (std::size_t s = 0; s < segs; ++s)
        for (std::size_t h = 0; h < heads; ++h) {
            Tensor p = causal_attention_weights(qv, k.value(), s, seg_len, h, heads);
            for (std::size_t t = 0; t < seg_len; ++t)
                for (std::size_t j = 0; j <= t; ++j) {
                    const double w = p(t, j);
                    const double* vj = vv.data() + (s * seg_len + j) * d + h * dh;
                    double* ot = out.data() + (s * seg_len + t) * d + h * dh;
                    for (std::size_t c = 0; c < dh; ++c) ot[c] += w * vj[c];
                }
            probs->push_back(std::move(p));
        }
    const bool req = g.needs(q) || g.needs(k) || g.needs(v);
    return g.push(std::move(out), req, {q.id, k.id, v.id},
                  [q, k, v, seg_len, heads, probs](Graph& g, std::size_t, const Tensor& up) {
                      const Tensor& qv = q.value();
                      const Tensor& kv = k.value();
                      const Tensor& vv = v.value();
                      const std::size_t d = qv.cols(), dh = d / heads, segs = qv.rows() / seg_len;
                      const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
                      Tensor dq(qv.shape()), dk(kv.shape()), dv(vv.shape());
                      std::vector<double> dp(seg_len);
                      for (std::size_t s = 0; s < segs; ++s)
                          for (std::size_t h = 0; h < heads; ++h) {
                              const Tensor& p = (*probs)[s * heads + h];
                              for (std::size_t t = 0; t < seg_len; ++t) {
                                  const std::size_t rt = (s * seg_len + t) * d + h * dh;
                                  double dot = 0.0;
                                  for (std::size_t j = 0; j <= t; ++j) {
                                      const std::size_t rj = (s * seg_len + j) * d + h * dh;
                                      double acc = 0.0;
                                      for (std::size_t c = 0; c < dh; ++c) {
                                          acc += up[rt + c] * vv[rj + c];
                                          dv[rj + c] += p(t, j) * up[rt + c];
                                      }
                                      dp[j] = acc;
                                      dot += acc * p(t, j);
                                  }
                                  for (std::size_t j = 0; j <= t; ++j) {
                                      const double ds = p(t, j) * (dp[j] - dot) * scale;
                                      const std::size_t rj = (s * seg_len + j) * d + h * dh;
                                      for (std::size_t c = 0; c < dh; ++c) {
                                          dq[rt + c] += ds * kv[rj + c];
                                          dk[rj + c] += ds * qv[rt + c];
                                      }
                                  }
                              }
                          }
                      g.accumulate(q.id, dq);
                      g.accumulate(k.id, dk);
                      g.accumulate(v.id, dv);
                  });
}

// =============================================================================
// Driver
// =============================================================================

/// Builds the expression with `build`, evaluates it, and writes d(loss)/d(param)
/// into every gradient slot of `params` (slots are zeroed first).
inline double forward_backward(ParamStore& params, const std::function<Var(Graph&)>& build) {
    params.zero_grads();
    Graph g;
    Var loss = build(g);
    const double v = g.backward(loss);
    return v;
}

} // namespace hemalign

#endif // HEMALIGN_AUTODIFF_HPP
