#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace prunekit {

inline long long numel_of(const std::vector<int>& shape) {
    long long n = 1;
    for (int e : shape) {
        if (e <= 0) {
            throw std::invalid_argument("tensor extent must be positive, got " + std::to_string(e));
        }
        n *= e;
    }
    return n;
}

/// Dense row-major tensor. Feature maps are stored channel-last (N x H x W x C),
/// conv kernels as R x S x Cin x Cout.
template <typename T>
struct TensorT {
    std::vector<int> shape;
    std::vector<T> data;

    TensorT() = default;
    explicit TensorT(std::vector<int> s)
        : shape(std::move(s)), data(static_cast<size_t>(numel_of(shape)), T(0)) {}
    TensorT(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (static_cast<long long>(data.size()) != numel_of(shape)) {
            throw std::invalid_argument("tensor data length does not match shape");
        }
    }

    int rank() const { return static_cast<int>(shape.size()); }
    long long numel() const { return static_cast<long long>(data.size()); }
    int dim(int i) const { return shape.at(static_cast<size_t>(i)); }

    T& operator[](size_t i) { return data[i]; }
    const T& operator[](size_t i) const { return data[i]; }

    T& at(int i) { return data[static_cast<size_t>(i)]; }
    const T& at(int i) const { return data[static_cast<size_t>(i)]; }

    T& at(int i, int j) { return data[static_cast<size_t>(i) * dim(1) + j]; }
    const T& at(int i, int j) const { return data[static_cast<size_t>(i) * dim(1) + j]; }

    T& at(int h, int w, int c) {
        return data[(static_cast<size_t>(h) * dim(1) + w) * dim(2) + c];
    }
    const T& at(int h, int w, int c) const {
        return data[(static_cast<size_t>(h) * dim(1) + w) * dim(2) + c];
    }

    T& at(int n, int h, int w, int c) {
        return data[((static_cast<size_t>(n) * dim(1) + h) * dim(2) + w) * dim(3) + c];
    }
    const T& at(int n, int h, int w, int c) const {
        return data[((static_cast<size_t>(n) * dim(1) + h) * dim(2) + w) * dim(3) + c];
    }

    bool same_shape(const TensorT& other) const { return shape == other.shape; }

    bool all_finite() const {
        for (T v : data) {
            if (!std::isfinite(static_cast<double>(v))) return false;
        }
        return true;
    }
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

template <typename T>
void require_shape(const TensorT<T>& t, const std::vector<int>& shape, const char* what) {
    if (t.shape != shape) {
        throw std::invalid_argument(std::string(what) + ": unexpected tensor shape");
    }
}

}  // namespace prunekit
