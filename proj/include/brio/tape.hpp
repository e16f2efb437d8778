#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "brio/tensor.hpp"

namespace brio {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
struct Var {
    Tape* tape = nullptr;
    std::uint32_t id = 0;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
};

/// Append-only record of primitive operations for reverse-mode
/// differentiation. Nodes only reference earlier nodes. A tape built with
/// recording disabled evaluates values only, which is what inference uses.
/// One tape belongs to one thread.
class Tape {
public:
    explicit Tape(bool recording = true) : recording_(recording) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool recording() const { return recording_; }
    std::size_t size() const { return nodes_.size(); }

    /// Leaf referencing caller-owned storage (e.g. a model parameter), which
    /// must outlive the tape. Gradients are tracked.
    Var parameter(const Tensor& external);
    /// Leaf that owns its value; gradients are tracked.
    Var variable(Tensor value);
    /// Leaf without gradient tracking.
    Var constant(Tensor value);

    const Tensor& value(Var v) const;
    bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

    /// Gradient of the last backward() root w.r.t. v; zeros when v was not
    /// reached.
    Tensor grad(Var v) const;

    /// Runs reverse accumulation from a one-element root.
    void backward(Var root);

    // Used by op implementations.
    using BackwardFn =
        std::function<void(Tape&, const Tensor& out_value, const Tensor& out_grad)>;
    Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
    Var record(Tensor value, std::span<const Var> inputs, BackwardFn fn);
    /// Gradient accumulator of v, allocated on first use. Only valid inside backward.
    Tensor& grad_buffer(Var v);

private:
    struct Node {
        Tensor owned;
        const Tensor* external = nullptr;
        Tensor grad;
        BackwardFn backward;
        bool requires_grad = false;
        bool has_grad = false;
    };

    Var push(Node node);

    bool recording_;
    std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Primitive ops. Shape errors name both operand shapes.

/// a @ b for 2-D operands; with transpose_b, a @ b^T.
Var matmul(Var a, Var b, bool transpose_b = false);
/// Elementwise a + b. b may also be rank 1 matching the last extent of a
/// (row broadcast).
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Elementwise a * b with the same broadcast rule as add.
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var transpose(Var a);
Var reshape(Var a, Shape shape);
Var softmax(Var a, std::size_t axis);
/// Max-subtracted log-softmax.
Var log_softmax(Var a, std::size_t axis);
/// Normalises to zero mean, unit variance along `axis` (no affine part).
Var layer_norm(Var a, std::size_t axis, double eps = 1e-5);
/// Exact GELU, 0.5 x (1 + erf(x / sqrt 2)).
Var gelu(Var a);
Var relu(Var a);
/// Rows of a 2-D table selected by ids.
Var embedding_lookup(Var table, std::span<const std::uint32_t> ids);
/// Replaces entries where mask is true by `fill`; masked entries get no gradient.
Var masked_fill(Var a, const std::vector<bool>& mask, double fill);
/// Inverted dropout with a caller-supplied keep mask.
Var dropout(Var a, const std::vector<bool>& keep, double rate);

Var sum(Var a);
/// Σ a ⊙ w for a constant weight tensor of the same shape.
Var weighted_sum(Var a, const Tensor& w);
/// For a 2-D a: out[r] = a[r, index[r]].
Var pick(Var a, std::span<const std::uint32_t> index);
/// Element i of a flattened tensor, as a scalar.
Var element(Var a, std::size_t i);
/// Stacks scalars into a rank-1 tensor.
Var stack(std::span<const Var> scalars);
Var slice_cols(Var a, std::size_t start, std::size_t len);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);

}  // namespace brio
