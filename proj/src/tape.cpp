#include "brio/tape.hpp"

#include "brio/common.hpp"

namespace brio {

const Tensor& Var::value() const { return tape->value(*this); }

Var Tape::push(Node node) {
    nodes_.push_back(std::move(node));
    return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::parameter(const Tensor& external) {
    Node n;
    n.external = &external;
    n.requires_grad = recording_;
    return push(std::move(n));
}

Var Tape::variable(Tensor value) {
    Node n;
    n.owned = std::move(value);
    n.requires_grad = recording_;
    return push(std::move(n));
}

Var Tape::constant(Tensor value) {
    Node n;
    n.owned = std::move(value);
    return push(std::move(n));
}

const Tensor& Tape::value(Var v) const {
    const Node& n = nodes_[v.id];
    return n.external ? *n.external : n.owned;
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
    return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
}

Var Tape::record(Tensor value, std::span<const Var> inputs, BackwardFn fn) {
    Node n;
    n.owned = std::move(value);
    if (recording_) {
        for (const Var& in : inputs) {
            if (in.tape != this) {
                throw Error("op mixes vars from different tapes");
            }
            if (nodes_[in.id].requires_grad) {
                n.requires_grad = true;
                break;
            }
        }
        if (n.requires_grad) {
            n.backward = std::move(fn);
        }
    }
    return push(std::move(n));
}

Tensor& Tape::grad_buffer(Var v) {
    Node& n = nodes_[v.id];
    if (!n.has_grad) {
        n.grad = Tensor(value(v).shape());
        n.has_grad = true;
    }
    return n.grad;
}

Tensor Tape::grad(Var v) const {
    const Node& n = nodes_[v.id];
    if (n.has_grad) {
        return n.grad;
    }
    return Tensor(value(v).shape());
}

void Tape::backward(Var root) {
    if (value(root).numel() != 1) {
        throw Error("backward() needs a scalar root, got shape " + shape_str(value(root).shape()));
    }
    if (!recording_) {
        throw Error("backward() on a tape that does not record");
    }
    for (auto& n : nodes_) {
        n.has_grad = false;
        n.grad = Tensor();
    }
    grad_buffer(root).values()[0] = 1.0;
    for (std::size_t i = root.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.has_grad && n.backward) {
            n.backward(*this, n.external ? *n.external : n.owned, n.grad);
        }
    }
}

}  // namespace brio
