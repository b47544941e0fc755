#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "typlab/common.hpp"

namespace typlab {

/// Dense row-major tensor of up to 4 dimensions. The scalar type is a
/// template parameter so the same network code can run in float for
/// production and double for finite-difference tests.
template <typename T>
struct Tensor {
    std::vector<int> shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(numel_of(shape), T(0)) {}

    static std::size_t numel_of(const std::vector<int>& s) {
        std::size_t n = 1;
        for (int d : s) n *= static_cast<std::size_t>(d);
        return n;
    }

    std::size_t numel() const { return data.size(); }
    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

    T& operator[](std::size_t i) { return data[i]; }
    const T& operator[](std::size_t i) const { return data[i]; }

    // 3-d accessors (c, h, w) for feature maps
    T& at(int c, int h, int w) {
        return data[(static_cast<std::size_t>(c) * shape[1] + h) * shape[2] + w];
    }
    const T& at(int c, int h, int w) const {
        return data[(static_cast<std::size_t>(c) * shape[1] + h) * shape[2] + w];
    }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }
    void zero() { fill(T(0)); }

    Tensor& operator+=(const Tensor& o) {
        require_same_shape(o);
        for (std::size_t i = 0; i < data.size(); ++i) data[i] += o.data[i];
        return *this;
    }
    Tensor& operator-=(const Tensor& o) {
        require_same_shape(o);
        for (std::size_t i = 0; i < data.size(); ++i) data[i] -= o.data[i];
        return *this;
    }
    Tensor& operator*=(T s) {
        for (auto& v : data) v *= s;
        return *this;
    }

    void require_same_shape(const Tensor& o) const {
        if (shape != o.shape) throw ShapeError("tensor shape mismatch");
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(shape);
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }

    static Tensor randn(std::vector<int> s, Rng& rng, T scale = T(1)) {
        Tensor t(std::move(s));
        for (auto& v : t.data) v = static_cast<T>(rng.normal()) * scale;
        return t;
    }
};

template <typename T>
std::string shape_str(const Tensor<T>& t) {
    std::string s = "(";
    for (std::size_t i = 0; i < t.shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(t.shape[i]);
    }
    return s + ")";
}

}  // namespace typlab
