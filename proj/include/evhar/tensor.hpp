#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "evhar/common.hpp"

namespace evhar {

// Dense row-major tensor. The template parameter selects the precision:
// float for training, double for gradient checks.
template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int64_t> shape) : shape_(std::move(shape)) {
        data_.assign(static_cast<size_t>(count(shape_)), T(0));
    }

    Tensor(std::vector<int64_t> shape, T fill_value) : shape_(std::move(shape)) {
        data_.assign(static_cast<size_t>(count(shape_)), fill_value);
    }

    const std::vector<int64_t>& shape() const { return shape_; }
    size_t rank() const { return shape_.size(); }
    int64_t dim(size_t i) const { return shape_[i]; }
    int64_t size() const { return static_cast<int64_t>(data_.size()); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    bool all_finite() const {
        for (T v : data_)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    static int64_t count(const std::vector<int64_t>& shape) {
        int64_t n = 1;
        for (int64_t d : shape) {
            assert(d > 0);
            n *= d;
        }
        return n;
    }

private:
    std::vector<int64_t> shape_;
    std::vector<T> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

#ifndef NDEBUG
#define EVHAR_CHECK_FINITE(t) assert((t).all_finite())
#else
#define EVHAR_CHECK_FINITE(t) ((void)0)
#endif

}  // namespace evhar
