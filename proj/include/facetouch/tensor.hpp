#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "facetouch/errors.hpp"

namespace facetouch {

// Dense row-major tensor of real scalars. T is float or double; training
// may run in 32-bit, tests and gradient checks use 64-bit.
template <class T>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> data;

    Tensor() = default;

    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        data.assign(static_cast<std::size_t>(count(shape)), T(0));
    }

    Tensor(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (static_cast<std::int64_t>(data.size()) != count(shape))
            throw ContractViolation("tensor data length " + std::to_string(data.size()) +
                                    " does not match shape " + shape_str(shape));
    }

    static std::int64_t count(const std::vector<int>& s) {
        std::int64_t n = 1;
        for (int e : s) {
            if (e <= 0) throw ContractViolation("tensor extents must be positive, got " + shape_str(s));
            n *= e;
        }
        return n;
    }

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

    T& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
    const T& operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool is_scalar() const { return numel() == 1; }
    T scalar() const {
        if (!is_scalar()) throw ContractViolation("expected scalar tensor, shape " + shape_str(shape));
        return data[0];
    }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    Tensor reshaped(std::vector<int> s) const {
        if (count(s) != numel())
            throw ContractViolation("reshape " + shape_str(shape) + " -> " + shape_str(s) +
                                    " changes element count");
        return Tensor(std::move(s), data);
    }

    static Tensor full(std::vector<int> s, T v) {
        Tensor t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }

    static std::string shape_str(const std::vector<int>& s) {
        std::ostringstream os;
        os << '[';
        for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
        os << ']';
        return os.str();
    }

    std::string shape_str() const { return shape_str(shape); }
};

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

}  // namespace facetouch
