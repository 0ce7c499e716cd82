#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <string_view>

#include "errors.hpp"
#include "pixel_field.hpp"

namespace pgc {

/// Regulation applied to a gradient field before it reaches the parameters.
enum class RegMode { None, PGC_N, PGC_V, PNGD, ParamClip, ParamNGD };

/// Norms below this are treated as exactly zero by the norm-based operators.
inline constexpr double kZeroNorm = 1e-12;

/// Default threshold used throughout the texture experiments.
inline constexpr double kDefaultThreshold = 0.1;

struct RegConfig {
    RegMode mode = RegMode::PGC_N;
    double threshold = kDefaultThreshold;

    void validate() const {
        if (!(threshold > 0.0) || !std::isfinite(threshold))
            throw ValidationError("regulation threshold must be a positive finite number");
    }
};

inline std::string_view to_string(RegMode mode) {
    switch (mode) {
    case RegMode::None: return "none";
    case RegMode::PGC_N: return "pgc-n";
    case RegMode::PGC_V: return "pgc-v";
    case RegMode::PNGD: return "pngd";
    case RegMode::ParamClip: return "param-clip";
    case RegMode::ParamNGD: return "param-ngd";
    }
    return "none";
}

inline RegMode parse_reg_mode(std::string_view text) {
    for (RegMode m : {RegMode::None, RegMode::PGC_N, RegMode::PGC_V, RegMode::PNGD, RegMode::ParamClip,
                      RegMode::ParamNGD}) {
        if (text == to_string(m)) return m;
    }
    throw ValidationError("unknown regulation mode '" + std::string(text) +
                          "' (expected none, pgc-n, pgc-v, pngd, param-clip, param-ngd)");
}

namespace detail {

inline void require_threshold(double c) {
    if (!(c > 0.0) || !std::isfinite(c)) throw ValidationError("threshold c must be positive and finite");
}

/// min(n, c) / n, with 0 for (near-)zero vectors and exactly 1 at or below c.
inline double clip_scale(double norm, double c) noexcept {
    if (norm < kZeroNorm) return 0.0;
    if (norm <= c) return 1.0;
    return c / norm;
}

inline double ngd_scale(double norm, double c) noexcept {
    if (norm < kZeroNorm) return 0.0;
    return c / (norm + c);
}

template <typename T, typename ScaleFn>
BasicPixelField<T> scale_each_pixel(const BasicPixelField<T>& grad, double c, ScaleFn scale_of) {
    detail::require_threshold(c);
    require_finite(grad, "gradient");
    BasicPixelField<T> out = grad.as_generic();
    for (std::size_t p = 0; p < grad.pixel_count(); ++p) {
        auto src = grad.pixel(p);
        auto dst = out.pixel(p);
        const double s = scale_of(pixel_norm(src), c);
        if (s == 1.0) continue;
        for (std::size_t k = 0; k < src.size(); ++k) dst[k] = static_cast<T>(s * static_cast<double>(src[k]));
    }
    return out;
}

template <typename T, typename ScaleFn>
BasicPixelField<T> scale_whole_field(const BasicPixelField<T>& grad, double c, ScaleFn scale_of) {
    detail::require_threshold(c);
    require_finite(grad, "gradient");
    BasicPixelField<T> out = grad.as_generic();
    const double s = scale_of(pixel_norm(grad.data()), c);
    if (s == 1.0) return out;
    for (auto& x : out.data()) x = static_cast<T>(s * static_cast<double>(x));
    return out;
}

} // namespace detail

/// Pixel-wise clip-by-norm (PGC-N): each pixel vector g becomes min(|g|, c) g/|g|.
template <typename T>
BasicPixelField<T> clip_pixelwise_norm(const BasicPixelField<T>& grad, double c) {
    return detail::scale_each_pixel(grad, c, detail::clip_scale);
}

/// Pixel-wise clip-by-value (PGC-V): every component clamped to [-c, c].
template <typename T>
BasicPixelField<T> clip_pixelwise_value(const BasicPixelField<T>& grad, double c) {
    detail::require_threshold(c);
    require_finite(grad, "gradient");
    BasicPixelField<T> out = grad.as_generic();
    for (auto& x : out.data()) x = static_cast<T>(std::clamp(static_cast<double>(x), -c, c));
    return out;
}

/// Pixel-wise normalized gradient (PNGD): g becomes c g / (|g| + c).
template <typename T>
BasicPixelField<T> pngd_pixelwise(const BasicPixelField<T>& grad, double c) {
    return detail::scale_each_pixel(grad, c, detail::ngd_scale);
}

/// Classic clip-by-norm over the whole field flattened into one vector.
template <typename T>
BasicPixelField<T> clip_paramwise_norm(const BasicPixelField<T>& grad, double c) {
    return detail::scale_whole_field(grad, c, detail::clip_scale);
}

/// Classic normalized gradient over the whole field flattened into one vector.
template <typename T>
BasicPixelField<T> ngd_paramwise(const BasicPixelField<T>& grad, double c) {
    return detail::scale_whole_field(grad, c, detail::ngd_scale);
}

template <typename T>
BasicPixelField<T> apply_regulation(const BasicPixelField<T>& grad, const RegConfig& cfg) {
    cfg.validate();
    switch (cfg.mode) {
    case RegMode::None: return grad;
    case RegMode::PGC_N: return clip_pixelwise_norm(grad, cfg.threshold);
    case RegMode::PGC_V: return clip_pixelwise_value(grad, cfg.threshold);
    case RegMode::PNGD: return pngd_pixelwise(grad, cfg.threshold);
    case RegMode::ParamClip: return clip_paramwise_norm(grad, cfg.threshold);
    case RegMode::ParamNGD: return ngd_paramwise(grad, cfg.threshold);
    }
    return grad;
}

} // namespace pgc
