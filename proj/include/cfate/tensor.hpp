#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "cfate/errors.hpp"

namespace cfate {

// Dense n-dimensional array, row-major. Shape entries must be positive.
template <typename T>
struct TensorT {
    std::vector<int> shape;
    std::vector<T> values;

    TensorT() = default;
    explicit TensorT(std::vector<int> s) : shape(std::move(s)) {
        values.assign(static_cast<size_t>(numel_of(shape)), T{0});
    }
    TensorT(std::vector<int> s, std::vector<T> v) : shape(std::move(s)), values(std::move(v)) {
        if (static_cast<int64_t>(values.size()) != numel_of(shape))
            throw config_error("tensor shape/value size mismatch");
    }

    static int64_t numel_of(const std::vector<int>& s) {
        int64_t n = 1;
        for (int d : s) {
            if (d <= 0) throw config_error("tensor dimensions must be positive");
            n *= d;
        }
        return n;
    }

    int64_t numel() const { return static_cast<int64_t>(values.size()); }
    T* data() { return values.data(); }
    const T* data() const { return values.data(); }
    T& operator[](int64_t i) { return values[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return values[static_cast<size_t>(i)]; }

    bool same_shape(const TensorT& other) const { return shape == other.shape; }

    bool all_finite() const {
        for (const T& v : values)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << "[";
        for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
        os << "]";
        return os.str();
    }

    template <typename U>
    TensorT<U> cast() const {
        TensorT<U> out;
        out.shape = shape;
        out.values.resize(values.size());
        for (size_t i = 0; i < values.size(); ++i) out.values[i] = static_cast<U>(values[i]);
        return out;
    }
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

template <typename T>
void check_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* what) {
    if (!a.same_shape(b))
        throw config_error(std::string(what) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

}  // namespace cfate
