#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "facetouch/tensor.hpp"

namespace facetouch {

// Handle to a tensor slot on a Tape.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Reverse-mode differentiation record. Forward ops append value slots and
// backward closures; backward() replays the closures in exact reverse
// order of recording. With grad disabled the tape still stores values (so
// the same forward code serves inference) but records no closures.
template <class T>
class Tape {
public:
    // Invoked during backward() with the op's own output var; reads
    // grad(out) and accumulates into the grads of the op's inputs.
    using BackwardFn = std::function<void(Tape&, Var)>;

    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

    bool grad_enabled() const { return grad_enabled_; }

    Var leaf(Tensor<T> value) {
        slots_.push_back(Slot{std::move(value), Tensor<T>{}});
        return Var{static_cast<int>(slots_.size()) - 1};
    }

    // Record the result of an op.
    Var emit(Tensor<T> value, BackwardFn bwd) {
        Var v = leaf(std::move(value));
        if (grad_enabled_) nodes_.push_back(Node{v, std::move(bwd)});
        return v;
    }

    const Tensor<T>& value(Var v) const { return slots_[check(v)].value; }
    Tensor<T>& value_mut(Var v) { return slots_[check(v)].value; }

    // Gradient slot; allocated zero-filled on first touch during backward.
    Tensor<T>& grad(Var v) {
        Slot& s = slots_[check(v)];
        if (s.grad.data.empty()) s.grad = Tensor<T>(s.value.shape);
        return s.grad;
    }

    bool has_grad(Var v) const { return !slots_[check(v)].grad.data.empty(); }

    std::size_t num_ops() const { return nodes_.size(); }

    // Seeds d(loss)/d(loss) = 1 and replays all recorded ops in reverse.
    // Gradients of slots never touched by a closure stay empty and read
    // as zero through grad_or_zero().
    void backward(Var loss) {
        if (!grad_enabled_ || nodes_.empty())
            throw ContractViolation("backward on an empty tape");
        if (!value(loss).is_scalar())
            throw ContractViolation("backward requires a scalar loss, got shape " +
                                    value(loss).shape_str());
        grad(loss).data[0] = T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            if (has_grad(it->out)) it->fn(*this, it->out);
        }
    }

    Tensor<T> grad_or_zero(Var v) const {
        const Slot& s = slots_[check(v)];
        if (s.grad.data.empty()) return Tensor<T>(s.value.shape);
        return s.grad;
    }

private:
    struct Slot {
        Tensor<T> value;
        Tensor<T> grad;
    };
    struct Node {
        Var out;
        BackwardFn fn;
    };

    int check(Var v) const {
        if (!v.valid() || v.id >= static_cast<int>(slots_.size()))
            throw ContractViolation("dangling tape variable");
        return v.id;
    }

    std::vector<Slot> slots_;
    std::vector<Node> nodes_;
    bool grad_enabled_;
};

}  // namespace facetouch
