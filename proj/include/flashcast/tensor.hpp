#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "flashcast/error.hpp"

namespace flashcast {

struct Shape4 {
    std::size_t n = 0;
    std::size_t c = 0;
    std::size_t h = 0;
    std::size_t w = 0;

    constexpr std::size_t size() const noexcept { return n * c * h * w; }
    constexpr std::size_t plane() const noexcept { return h * w; }
    constexpr std::array<std::size_t, 4> dims() const noexcept { return {n, c, h, w}; }

    friend constexpr bool operator==(const Shape4&, const Shape4&) = default;

    std::string str() const {
        return "(" + std::to_string(n) + ", " + std::to_string(c) + ", " + std::to_string(h) +
               ", " + std::to_string(w) + ")";
    }
};

// Dense (batch, channel, height, width) array, row-major.
template <typename T>
class Tensor4 {
public:
    using value_type = T;

    Tensor4() = default;
    explicit Tensor4(Shape4 shape, T fill = T(0)) : shape_(shape), data_(shape.size(), fill) {}
    Tensor4(Shape4 shape, std::vector<T> values) : shape_(shape), data_(std::move(values)) {
        if (data_.size() != shape_.size()) {
            throw DimensionError("size", "value count " + std::to_string(data_.size()) +
                                             " does not match shape " + shape_.str());
        }
    }

    static Tensor4 zeros_like(const Tensor4& other) { return Tensor4(other.shape_); }

    const Shape4& shape() const noexcept { return shape_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    T* data() noexcept { return data_.data(); }
    const T* data() const noexcept { return data_.data(); }
    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }
    std::vector<T>& storage() noexcept { return data_; }
    const std::vector<T>& storage() const noexcept { return data_; }

    std::size_t index(std::size_t b, std::size_t ch, std::size_t y, std::size_t x) const noexcept {
        return ((b * shape_.c + ch) * shape_.h + y) * shape_.w + x;
    }
    T& operator()(std::size_t b, std::size_t ch, std::size_t y, std::size_t x) noexcept {
        return data_[index(b, ch, y, x)];
    }
    T operator()(std::size_t b, std::size_t ch, std::size_t y, std::size_t x) const noexcept {
        return data_[index(b, ch, y, x)];
    }
    T& operator[](std::size_t i) noexcept { return data_[i]; }
    T operator[](std::size_t i) const noexcept { return data_[i]; }

    // (b, ch) plane of h*w contiguous values.
    T* plane(std::size_t b, std::size_t ch) noexcept { return data_.data() + (b * shape_.c + ch) * shape_.plane(); }
    const T* plane(std::size_t b, std::size_t ch) const noexcept {
        return data_.data() + (b * shape_.c + ch) * shape_.plane();
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const noexcept {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    template <typename U>
    Tensor4<U> cast() const {
        Tensor4<U> out(shape_);
        std::transform(data_.begin(), data_.end(), out.data(), [](T v) { return static_cast<U>(v); });
        return out;
    }

private:
    Shape4 shape_{};
    std::vector<T> data_;
};

inline void require_same_shape(const Shape4& a, const Shape4& b, const char* what) {
    if (a == b) return;
    const char* axis = a.n != b.n ? "batch" : a.c != b.c ? "channels" : a.h != b.h ? "height" : "width";
    throw DimensionError(axis, std::string(what) + ": " + a.str() + " vs " + b.str());
}

}  // namespace flashcast
