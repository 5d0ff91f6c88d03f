#pragma once

#include <map>
#include <string>
#include <vector>

#include "facetouch/tape.hpp"
#include "facetouch/tensor.hpp"

namespace facetouch {

template <class T>
using GradMap = std::map<std::string, Tensor<T>>;

// Named model parameters in stable insertion order. Iteration order, not
// name order, defines serialization and update order so that checkpoints
// and optimizer traces are reproducible.
template <class T>
class ParamSet {
public:
    struct Entry {
        std::string name;
        Tensor<T> value;
        bool trainable = true;
    };

    int add(const std::string& name, Tensor<T> value, bool trainable = true) {
        if (index_.count(name)) throw ContractViolation("duplicate parameter name: " + name);
        entries_.push_back(Entry{name, std::move(value), trainable});
        int id = static_cast<int>(entries_.size()) - 1;
        index_[name] = id;
        return id;
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    const Tensor<T>& value(const std::string& name) const { return at(name).value; }
    Tensor<T>& value(const std::string& name) { return at(name).value; }

    bool trainable(const std::string& name) const { return at(name).trainable; }
    void set_trainable(const std::string& name, bool t) { at(name).trainable = t; }

    // Flips the trainable flag on every parameter whose name starts with
    // `prefix`; returns how many matched.
    int set_trainable_prefix(const std::string& prefix, bool t) {
        int n = 0;
        for (auto& e : entries_)
            if (e.name.rfind(prefix, 0) == 0) {
                e.trainable = t;
                ++n;
            }
        return n;
    }

    std::size_t size() const { return entries_.size(); }
    const Entry& entry(std::size_t i) const { return entries_[i]; }
    Entry& entry(std::size_t i) { return entries_[i]; }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        out.reserve(entries_.size());
        for (const auto& e : entries_) out.push_back(e.name);
        return out;
    }

    std::size_t total_elements() const {
        std::size_t n = 0;
        for (const auto& e : entries_) n += e.value.numel();
        return n;
    }

private:
    const Entry& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ContractViolation("unknown parameter: " + name);
        return entries_[it->second];
    }
    Entry& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw ContractViolation("unknown parameter: " + name);
        return entries_[it->second];
    }

    std::vector<Entry> entries_;
    std::map<std::string, int> index_;
};

// Parameters mounted on a tape as leaf variables, keyed by name.
template <class T>
struct BoundParams {
    std::map<std::string, Var> vars;

    Var at(const std::string& name) const {
        auto it = vars.find(name);
        if (it == vars.end()) throw ContractViolation("parameter not bound: " + name);
        return it->second;
    }
};

template <class T>
BoundParams<T> bind_params(Tape<T>& tape, const ParamSet<T>& params) {
    BoundParams<T> b;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& e = params.entry(i);
        b.vars[e.name] = tape.leaf(e.value);
    }
    return b;
}

// Gradients for every parameter after backward(). Parameters that took no
// part in the forward pass get explicit zero tensors.
template <class T>
GradMap<T> collect_grads(const Tape<T>& tape, const BoundParams<T>& bound,
                         const ParamSet<T>& params) {
    GradMap<T> g;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& e = params.entry(i);
        g[e.name] = tape.grad_or_zero(bound.at(e.name));
    }
    return g;
}

}  // namespace facetouch
