#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "mlc/common.hpp"
#include "mlc/rng.hpp"

namespace mlc {

// Shape of a dense 4-D feature map (batch, channels, rows, cols).
struct Shape {
    int b = 0, c = 0, h = 0, w = 0;

    std::size_t size() const {
        return static_cast<std::size_t>(b) * static_cast<std::size_t>(c) *
               static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
    }
    bool operator==(const Shape& o) const = default;

    std::string str() const {
        return detail::format_msg("(", b, ",", c, ",", h, ",", w, ")");
    }
};

// Dense 4-D tensor, row-major (B, C, H, W). Vectors (B, F) are represented as
// (B, F, 1, 1).
template <typename T>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape s) : shape_(s), data_(s.size(), T(0)) {}
    Tensor(int b, int c, int h, int w) : Tensor(Shape{b, c, h, w}) {}
    Tensor(Shape s, std::vector<T> data) : shape_(s), data_(std::move(data)) {
        if (data_.size() != shape_.size())
            throw std::invalid_argument(detail::format_msg(
                "tensor data length ", data_.size(), " does not match shape ", shape_.str()));
    }

    const Shape& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T& at(int b, int c, int h, int w) { return data_[index(b, c, h, w)]; }
    const T& at(int b, int c, int h, int w) const { return data_[index(b, c, h, w)]; }

    // Pointer to the (b, c) spatial plane.
    T* plane(int b, int c) { return data_.data() + index(b, c, 0, 0); }
    const T* plane(int b, int c) const { return data_.data() + index(b, c, 0, 0); }

    std::size_t index(int b, int c, int h, int w) const {
        return ((static_cast<std::size_t>(b) * shape_.c + c) * shape_.h + h) * shape_.w + w;
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    void fill_uniform(Rng& rng, T lo, T hi) {
        for (auto& v : data_) v = static_cast<T>(rng.uniform(lo, hi));
    }
    void fill_normal(Rng& rng, T mean, T stddev) {
        for (auto& v : data_) v = static_cast<T>(rng.normal(mean, stddev));
    }
    void fill_trunc_normal(Rng& rng, T stddev) {
        for (auto& v : data_) v = static_cast<T>(rng.trunc_normal(stddev));
    }

    bool all_finite() const {
        for (const T& v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(shape_);
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        return out;
    }

private:
    Shape shape_{};
    std::vector<T> data_;
};

// Kernel-exit check, active when runtime_checks::finite_checks is set.
template <typename T>
inline void check_finite(const Tensor<T>& t, const char* where) {
    if (runtime_checks::finite_checks && !t.all_finite())
        throw numeric_error(detail::format_msg("non-finite value produced by ", where));
}

} // namespace mlc
