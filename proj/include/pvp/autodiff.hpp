#pragma once

// Tape-based reverse-mode differentiation over dense tensors.
//
// A Tape records every value produced during a forward pass together with a
// closure that pushes the upstream gradient into the node's parents. Nodes
// that do not depend on any parameter carry no closure and are skipped on the
// backward sweep, so frozen sub-graphs cost nothing beyond their forward pass.

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "pvp/tensor.hpp"

namespace pvp::ad {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
public:
    Var() = default;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    Tape& tape() const { return *tape_; }
    std::size_t id() const noexcept { return id_; }
    bool requires_grad() const;
    bool valid() const noexcept { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) noexcept : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

class Tape {
public:
    using Backward = std::function<void(Tape&, const Tensor& upstream)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value);
    Var parameter(Tensor value);

    /// Appends a derived node. `backward` is dropped when no parent requires a gradient.
    Var record(Tensor value, std::initializer_list<Var> parents, Backward backward);
    Var record(Tensor value, std::span<const Var> parents, Backward backward);

    const Tensor& value(const Var& v) const { return nodes_[v.id()].value; }
    bool requires_grad(const Var& v) const { return nodes_[v.id()].requires_grad; }

    /// Gradient accumulator of a node that requires a gradient; zero-initialised on first use.
    Tensor& grad_buffer(const Var& v);

    /// Reverse sweep from a one-element loss. Throws ContractError for non-scalar losses.
    void backward(const Var& loss);

    /// Gradient of the last backward() loss w.r.t. v (zeros if v was unreachable).
    Tensor grad(const Var& v) const;

    std::size_t size() const noexcept { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        bool has_grad = false;
        Backward backward;
    };
    std::deque<Node> nodes_;
};

// Linear algebra.
Var matmul(const Var& a, const Var& b);     // [m×k]·[k×n]
Var matmul_nt(const Var& a, const Var& b);  // [m×k]·[n×k]ᵀ
Var transpose(const Var& a);

// Element-wise.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var relu(const Var& a);
/// Σ_i weights[i]·terms[i] over equally-shaped terms.
Var linear_combination(std::span<const Var> terms, std::span<const double> weights);

/// A[m×n] + b broadcast over rows; b has n elements.
Var add_bias(const Var& a, const Var& b);
/// Each row divided by its L2 norm. All-zero rows map to zero rows.
Var normalize_rows(const Var& a);
Var softmax_rows(const Var& a);

// Structural.
Var concat_rows(std::span<const Var> parts);
Var slice_rows(const Var& a, std::size_t begin, std::size_t count);
/// Index i along axis 0, leading axis dropped.
Var select(const Var& a, std::size_t i);
Var reshape(const Var& a, Shape shape);
/// [H,W,C] image to [(H/p)·(W/p), p·p·C] patch rows, grid row-major, each patch (dy, dx, c).
Var patchify(const Var& image, std::size_t patch);

// Reductions.
Var sum(const Var& a);
Var mean(const Var& a);

}  // namespace pvp::ad
