#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"
#include "grad_reg.hpp"
#include "pixel_field.hpp"
#include "rng.hpp"
#include "texture_field.hpp"

namespace pgc {

// ---------------------------------------------------------------------------
// Image quality

/// Mean squared error over every scalar entry.
inline double mean_squared_error(const PixelField& a, const PixelField& b) {
    require_same_shape(a, b, "mse");
    long double acc = 0.0L;
    auto x = a.data();
    auto y = b.data();
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - y[i];
        acc += static_cast<long double>(d) * d;
    }
    return static_cast<double>(acc / static_cast<long double>(x.size()));
}

/// 10 log10(1 / MSE) for unit-range images; +infinity when the images are identical.
inline double compute_psnr(const PixelField& a, const PixelField& b) {
    require_same_shape(a, b, "psnr");
    for (const PixelField* f : {&a, &b}) {
        for (double v : f->data())
            if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("psnr: image values must lie in [0,1]");
    }
    const double mse = mean_squared_error(a, b);
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return -10.0 * std::log10(mse);
}

// ---------------------------------------------------------------------------
// Gradient statistics

inline constexpr std::size_t kHistogramBins = 32;
inline constexpr double kHistogramLo = 1e-6;
inline constexpr double kHistogramHi = 1e2;

struct GradStats {
    /// Log-spaced over [1e-6, 1e2]; out-of-range norms (including zero) land in the edge bins.
    std::array<std::uint64_t, kHistogramBins> histogram{};
    double mean_norm = 0.0;
    double max_norm = 0.0;
    double fraction_exceeding = 0.0; ///< norm > c: exactly the pixels PGC-N rescales
    double fraction_zero = 0.0;
    std::size_t pixel_count = 0;
};

/// Lower edge of histogram bin `i` (i in [0, kHistogramBins]).
inline double histogram_edge(std::size_t i) {
    const double lo = std::log10(kHistogramLo), hi = std::log10(kHistogramHi);
    return std::pow(10.0, lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(kHistogramBins));
}

inline std::size_t histogram_bin(double norm) {
    if (!(norm > kHistogramLo)) return 0;
    const double lo = std::log10(kHistogramLo), hi = std::log10(kHistogramHi);
    const double t = (std::log10(norm) - lo) / (hi - lo) * static_cast<double>(kHistogramBins);
    return std::min<std::size_t>(kHistogramBins - 1, static_cast<std::size_t>(std::max(0.0, t)));
}

inline GradStats grad_stats(const PixelField& grad, double c) {
    require_finite(grad, "grad_stats");
    GradStats s;
    s.pixel_count = grad.pixel_count();
    std::size_t exceeding = 0, zero = 0;
    long double sum = 0.0L;
    for (std::size_t p = 0; p < grad.pixel_count(); ++p) {
        const double n = pixel_norm(grad.pixel(p));
        sum += n;
        s.max_norm = std::max(s.max_norm, n);
        // Same predicate as the PGC-N scale factor.
        const double scale = detail::clip_scale(n, c);
        if (scale != 1.0 && n >= kZeroNorm) ++exceeding;
        if (n == 0.0) ++zero;
        ++s.histogram[histogram_bin(n)];
    }
    const auto count = static_cast<double>(s.pixel_count);
    s.mean_norm = static_cast<double>(sum / static_cast<long double>(s.pixel_count));
    s.fraction_exceeding = static_cast<double>(exceeding) / count;
    s.fraction_zero = static_cast<double>(zero) / count;
    return s;
}

// ---------------------------------------------------------------------------
// Jensen bound for clipped mean residuals

struct JensenReport {
    std::size_t pixels = 0;
    std::size_t samples = 0;
    double bound = 0.0;          ///< min(sigma, c)
    double max_clipped_norm = 0.0;
    double min_slack = 0.0;      ///< smallest bound - min(|mean|, c) over pixels
    double max_slack = 0.0;
    std::size_t violations = 0;

    bool holds() const noexcept { return violations == 0; }
};

/// Checks min(|E r|, c) <= min(sigma, c) pixel by pixel over an ensemble of
/// residual fields. Every sample must satisfy |r_p| <= sigma; residuals in the
/// ensemble must share one shape.
inline JensenReport verify_jensen_bound(std::span<const PixelField> samples, double c, double sigma) {
    if (!(c > 0.0) || !(sigma > 0.0)) throw ValidationError("jensen: c and sigma must be positive");
    if (samples.empty()) throw ValidationError("jensen: no samples");
    const PixelField& first = samples.front();
    // Allows for the rounding of a norm computed on a vector scaled to exactly sigma.
    const double admit = sigma * (1.0 + 1e-12);
    for (std::size_t s = 0; s < samples.size(); ++s) {
        require_same_shape(first, samples[s], "jensen");
        require_finite(samples[s], "jensen sample");
        for (std::size_t p = 0; p < samples[s].pixel_count(); ++p) {
            if (pixel_norm(samples[s].pixel(p)) > admit)
                throw ValidationError("jensen: sample " + std::to_string(s) + " pixel " + std::to_string(p) +
                                      " exceeds the residual bound sigma");
        }
    }

    JensenReport r;
    r.pixels = first.pixel_count();
    r.samples = samples.size();
    r.bound = std::min(sigma, c);
    r.min_slack = std::numeric_limits<double>::infinity();
    r.max_slack = -std::numeric_limits<double>::infinity();
    const std::size_t ch = first.channels();
    std::vector<double> mean(ch);
    for (std::size_t p = 0; p < r.pixels; ++p) {
        std::fill(mean.begin(), mean.end(), 0.0);
        for (const auto& f : samples) {
            auto v = f.pixel(p);
            for (std::size_t k = 0; k < ch; ++k) mean[k] += v[k];
        }
        for (double& m : mean) m /= static_cast<double>(samples.size());
        const double clipped = std::min(pixel_norm(std::span<const double>(mean)), c);
        const double slack = r.bound - clipped;
        r.max_clipped_norm = std::max(r.max_clipped_norm, clipped);
        r.min_slack = std::min(r.min_slack, slack);
        r.max_slack = std::max(r.max_slack, slack);
        // The averaged vector can overshoot sigma by rounding only.
        if (clipped > r.bound * (1.0 + 1e-12)) ++r.violations;
    }
    return r;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check

/// Long double lets an objective keep its accumulator precision through the difference quotient.
using ScalarFn = std::function<long double(std::span<const double>)>;
using GradientFn = std::function<std::vector<double>(std::span<const double>)>;

inline constexpr double kRelErrorFloor = 1e-8;
inline constexpr std::size_t kMinCheckedCoords = 100;

struct CoordCheck {
    std::size_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_error = 0.0;
};

struct FiniteDiffReport {
    std::vector<CoordCheck> coords;
    double max_rel_error = 0.0;
};

/// Compares `grad(point)` with central differences (f(x+h e_i) - f(x-h e_i)) / 2h
/// on a random subset of at least 100 coordinates (all of them if fewer exist).
/// Relative error uses max(|analytic|, |numeric|, 1e-8) as denominator.
inline FiniteDiffReport finite_diff_check(const ScalarFn& f, const GradientFn& grad, std::span<const double> point,
                                          double h, std::uint64_t seed = 0,
                                          std::size_t coords = kMinCheckedCoords) {
    if (!(h > 0.0) || !std::isfinite(h)) throw ValidationError("finite_diff_check: step h must be positive");
    if (point.empty()) throw ValidationError("finite_diff_check: empty point");
    const std::vector<double> analytic = grad(point);
    if (analytic.size() != point.size()) throw ValidationError("finite_diff_check: gradient has wrong length");

    std::vector<std::size_t> order(point.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::size_t take = std::min(point.size(), std::max(coords, kMinCheckedCoords));
    Rng rng(seed);
    for (std::size_t i = 0; i < take; ++i) std::swap(order[i], order[i + rng.below(order.size() - i)]);
    order.resize(take);
    std::sort(order.begin(), order.end());

    FiniteDiffReport report;
    std::vector<double> probe(point.begin(), point.end());
    for (std::size_t i : order) {
        const double x0 = probe[i];
        probe[i] = x0 + h;
        const long double up = f(probe);
        probe[i] = x0 - h;
        const long double down = f(probe);
        probe[i] = x0;
        if (!std::isfinite(up) || !std::isfinite(down) || !std::isfinite(analytic[i]))
            throw ValidationError("finite_diff_check: non-finite evaluation at coordinate " + std::to_string(i));
        const double numeric = static_cast<double>((up - down) / (2.0L * static_cast<long double>(h)));
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), kRelErrorFloor});
        CoordCheck cc{i, analytic[i], numeric, std::abs(analytic[i] - numeric) / denom};
        report.max_rel_error = std::max(report.max_rel_error, cc.rel_error);
        report.coords.push_back(cc);
    }
    return report;
}

inline FiniteDiffReport finite_diff_check(const ScalarFn& f, const GradientFn& grad, const TextureField& point,
                                          double h, std::uint64_t seed = 0) {
    return finite_diff_check(f, grad, std::span<const double>(point.params), h, seed);
}

} // namespace pgc
