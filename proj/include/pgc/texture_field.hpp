#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "errors.hpp"

namespace pgc {

/// Trainable per-texel parameters; rendering squashes them into an image.
struct TextureField {
    std::size_t height = 0;
    std::size_t width = 0;
    static constexpr std::size_t channels = 3;
    std::vector<double> params;

    TextureField() = default;
    TextureField(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), params(h * w * 3, fill) {
        if (h == 0 || w == 0) throw ValidationError("texture dimensions must be positive");
    }

    std::size_t size() const noexcept { return params.size(); }

    bool all_finite() const noexcept {
        for (double v : params)
            if (!std::isfinite(v)) return false;
        return true;
    }

    friend bool operator==(const TextureField&, const TextureField&) = default;
};

} // namespace pgc
