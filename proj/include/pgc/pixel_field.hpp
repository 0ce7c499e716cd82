#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"

namespace pgc {

enum class FieldRole { Generic, Image };

/// H x W grid of C-channel vectors, row-major with channels innermost.
///
/// Holds rendered images, residuals and per-pixel gradients. The scalar
/// type is a storage choice only; every operator in this library computes
/// in double regardless of T.
template <typename T>
class BasicPixelField {
public:
    using value_type = T;

    BasicPixelField() = default;

    BasicPixelField(std::size_t height, std::size_t width, std::size_t channels, T fill = T(0),
                    FieldRole role = FieldRole::Generic)
        : height_(height), width_(width), channels_(channels), role_(role) {
        check_dims();
        data_.assign(height * width * channels, fill);
        check_role();
    }

    BasicPixelField(std::size_t height, std::size_t width, std::size_t channels, std::vector<T> data,
                    FieldRole role = FieldRole::Generic)
        : height_(height), width_(width), channels_(channels), role_(role), data_(std::move(data)) {
        check_dims();
        if (data_.size() != height * width * channels)
            throw ValidationError("pixel field data length " + std::to_string(data_.size()) +
                                  " does not match " + std::to_string(height) + "x" + std::to_string(width) +
                                  "x" + std::to_string(channels));
        check_role();
    }

    std::size_t height() const noexcept { return height_; }
    std::size_t width() const noexcept { return width_; }
    std::size_t channels() const noexcept { return channels_; }
    std::size_t pixel_count() const noexcept { return height_ * width_; }
    std::size_t size() const noexcept { return data_.size(); }
    FieldRole role() const noexcept { return role_; }

    std::span<T> data() noexcept { return data_; }
    std::span<const T> data() const noexcept { return data_; }
    std::vector<T>& storage() noexcept { return data_; }
    const std::vector<T>& storage() const noexcept { return data_; }

    std::span<T> pixel(std::size_t p) noexcept { return {data_.data() + p * channels_, channels_}; }
    std::span<const T> pixel(std::size_t p) const noexcept { return {data_.data() + p * channels_, channels_}; }

    T& at(std::size_t row, std::size_t col, std::size_t ch) noexcept {
        return data_[(row * width_ + col) * channels_ + ch];
    }
    const T& at(std::size_t row, std::size_t col, std::size_t ch) const noexcept {
        return data_[(row * width_ + col) * channels_ + ch];
    }

    bool same_shape(const BasicPixelField& other) const noexcept {
        return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
    }

    /// Returns a copy tagged as an image; throws unless every entry is in [0,1].
    BasicPixelField as_image() const {
        BasicPixelField out = *this;
        out.role_ = FieldRole::Image;
        out.check_role();
        return out;
    }

    BasicPixelField as_generic() const {
        BasicPixelField out = *this;
        out.role_ = FieldRole::Generic;
        return out;
    }

    template <typename U>
    BasicPixelField<U> cast() const {
        std::vector<U> out(data_.begin(), data_.end());
        return BasicPixelField<U>(height_, width_, channels_, std::move(out), role_);
    }

    friend bool operator==(const BasicPixelField&, const BasicPixelField&) = default;

private:
    void check_dims() const {
        if (height_ == 0 || width_ == 0 || channels_ == 0)
            throw ValidationError("pixel field dimensions must be positive");
    }

    void check_role() const {
        if (role_ != FieldRole::Image) return;
        for (std::size_t i = 0; i < data_.size(); ++i) {
            if (!(data_[i] >= T(0) && data_[i] <= T(1)))
                throw ValidationError("image entry " + std::to_string(i) + " outside [0,1]");
        }
    }

    std::size_t height_ = 0;
    std::size_t width_ = 0;
    std::size_t channels_ = 0;
    FieldRole role_ = FieldRole::Generic;
    std::vector<T> data_;
};

using PixelField = BasicPixelField<double>;
using PixelField32 = BasicPixelField<float>;

/// Throws a ValidationError naming the first pixel holding a NaN or Inf.
template <typename T>
void require_finite(const BasicPixelField<T>& field, const char* what = "field") {
    const std::size_t c = field.channels();
    auto data = field.data();
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (!std::isfinite(static_cast<double>(data[i])))
            throw ValidationError(std::string(what) + ": non-finite value at pixel " + std::to_string(i / c) +
                                  " channel " + std::to_string(i % c));
    }
}

template <typename T>
void require_channels(const BasicPixelField<T>& field, std::size_t channels, const char* what) {
    if (field.channels() != channels)
        throw ValidationError(std::string(what) + ": expected " + std::to_string(channels) + " channels, got " +
                              std::to_string(field.channels()));
}

template <typename T>
void require_same_shape(const BasicPixelField<T>& a, const BasicPixelField<T>& b, const char* what) {
    if (!a.same_shape(b))
        throw ValidationError(std::string(what) + ": shape mismatch " + std::to_string(a.height()) + "x" +
                              std::to_string(a.width()) + "x" + std::to_string(a.channels()) + " vs " +
                              std::to_string(b.height()) + "x" + std::to_string(b.width()) + "x" +
                              std::to_string(b.channels()));
}

/// L2 norm of one pixel's channel vector, accumulated in double.
template <typename T>
double pixel_norm(std::span<T> v) noexcept {
    double sq = 0.0;
    for (const auto x : v) sq += static_cast<double>(x) * static_cast<double>(x);
    return std::sqrt(sq);
}

} // namespace pgc
