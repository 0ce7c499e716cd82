#pragma once

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "analysis.hpp"
#include "errors.hpp"
#include "grad_reg.hpp"
#include "linear_codec.hpp"
#include "pixel_field.hpp"
#include "rng.hpp"
#include "texture_field.hpp"

namespace pgc {

// ---------------------------------------------------------------------------
// Rendering surrogate: x = sigmoid(theta), texel by texel.

inline double sigmoid(double t) noexcept {
    if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
    const double e = std::exp(t);
    return e / (1.0 + e);
}

inline PixelField render(const TextureField& texture) {
    if (!texture.all_finite()) throw ValidationError("render: texture has non-finite parameters");
    PixelField image(texture.height, texture.width, 3);
    auto out = image.data();
    for (std::size_t i = 0; i < texture.size(); ++i) out[i] = sigmoid(texture.params[i]);
    return image;
}

/// Diagonal of d render / d theta.
inline std::vector<double> render_jacobian(const TextureField& texture) {
    std::vector<double> diag(texture.size());
    for (std::size_t i = 0; i < diag.size(); ++i) {
        const double s = sigmoid(texture.params[i]);
        diag[i] = s * (1.0 - s);
    }
    return diag;
}

// ---------------------------------------------------------------------------
// Losses and their pixel gradients

/// 2 (rendered - teacher): gradient of the summed squared pixel residual.
inline PixelField residual_grad(const PixelField& rendered, const PixelField& teacher) {
    require_same_shape(rendered, teacher, "residual_grad");
    PixelField g(rendered.height(), rendered.width(), rendered.channels());
    auto x = rendered.data();
    auto t = teacher.data();
    auto out = g.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 2.0 * (x[i] - t[i]);
    return g;
}

/// Objective whose theta-gradient the simulator follows (before noise and
/// regulation): sum_p |x_p - t_p|^2, or sum_p |A (x_p - t_p)|^2 through the codec.
/// Returned at the accumulator's extended precision.
inline long double pixel_objective_ext(const PixelField& rendered, const PixelField& teacher,
                                       const LinearCodec* codec) {
    require_same_shape(rendered, teacher, "objective");
    long double acc = 0.0L;
    for (std::size_t p = 0; p < rendered.pixel_count(); ++p) {
        auto x = rendered.pixel(p);
        auto t = teacher.pixel(p);
        PixelVec r(x[0] - t[0], x[1] - t[1], x[2] - t[2]);
        if (codec) {
            const LatentVec z = codec->enc_matrix * r;
            acc += static_cast<long double>(z.squaredNorm());
        } else {
            acc += static_cast<long double>(r.squaredNorm());
        }
    }
    return acc;
}

inline double pixel_objective(const PixelField& rendered, const PixelField& teacher, const LinearCodec* codec) {
    return static_cast<double>(pixel_objective_ext(rendered, teacher, codec));
}

/// Pixel gradient of `pixel_objective`: 2 r, or A^T (2 A r) when routed through the codec.
inline PixelField objective_pixel_grad(const PixelField& rendered, const PixelField& teacher,
                                       const LinearCodec* codec) {
    PixelField grad = residual_grad(rendered, teacher);
    if (!codec) return grad;
    // Latent residual encode(x) - encode(t) = A (x - t); the bias cancels.
    PixelField latent_grad(grad.height(), grad.width(), 4);
    for (std::size_t p = 0; p < grad.pixel_count(); ++p) {
        Eigen::Map<const PixelVec> g(grad.pixel(p).data());
        Eigen::Map<LatentVec>(latent_grad.pixel(p).data()).noalias() = codec->enc_matrix * g;
    }
    return backprop_latent_grad(*codec, latent_grad);
}

// ---------------------------------------------------------------------------
// Stochastic residual noise

/// Bounded residual noise plus sparse impulses.
///
/// Every pixel receives a perturbation drawn uniformly from the ball of
/// radius sigma. Independently with probability impulse_prob a pixel also
/// receives an impulse of norm impulse_mag in a uniformly random direction.
/// sigma = 0 together with impulse_prob = 0 switches noise off.
struct NoiseModel {
    double sigma = 0.1;
    double impulse_prob = 0.01;
    double impulse_mag = 10.0;
    std::uint64_t seed = 0;

    static NoiseModel off() { return NoiseModel{0.0, 0.0, 1.0, 0}; }

    bool enabled() const noexcept { return sigma > 0.0 || impulse_prob > 0.0; }

    void validate() const {
        if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ValidationError("noise sigma must be >= 0");
        if (!(impulse_prob >= 0.0 && impulse_prob <= 1.0)) throw ValidationError("impulse_prob must lie in [0,1]");
        if (!(impulse_mag > 0.0) || !std::isfinite(impulse_mag))
            throw ValidationError("impulse_mag must be positive");
    }
};

struct NoiseDraw {
    PixelField field;
    std::vector<bool> impulse; ///< per-pixel impulse mask
    std::size_t impulse_count = 0;
};

namespace detail {

/// Uniform point in the unit ball by rejection from the enclosing cube.
/// Returns its squared norm; tiny points are rejected so they can be normalized.
inline double ball_point(Rng& rng, std::span<double> v) {
    for (;;) {
        double n2 = 0.0;
        for (double& d : v) {
            d = 2.0 * rng.uniform() - 1.0;
            n2 += d * d;
        }
        if (n2 <= 1.0 && n2 > 1e-24) return n2;
    }
}

} // namespace detail

/// Adds noise to `grad`; identical (seed, step) pairs give bit-identical output.
inline NoiseDraw inject_noise_detailed(const PixelField& grad, const NoiseModel& noise, std::uint64_t step) {
    noise.validate();
    NoiseDraw draw{grad.as_generic(), std::vector<bool>(grad.pixel_count(), false), 0};
    if (!noise.enabled()) return draw;
    Rng rng = Rng::derive(noise.seed, step);
    const std::size_t ch = grad.channels();
    std::vector<double> v(ch);
    for (std::size_t p = 0; p < grad.pixel_count(); ++p) {
        auto px = draw.field.pixel(p);
        detail::ball_point(rng, v);
        for (std::size_t k = 0; k < ch; ++k) px[k] += noise.sigma * v[k];
        if (rng.uniform() < noise.impulse_prob) {
            const double scale = noise.impulse_mag / std::sqrt(detail::ball_point(rng, v));
            for (std::size_t k = 0; k < ch; ++k) px[k] += scale * v[k];
            draw.impulse[p] = true;
            ++draw.impulse_count;
        }
    }
    return draw;
}

inline PixelField inject_noise(const PixelField& grad, const NoiseModel& noise, std::uint64_t step) {
    return inject_noise_detailed(grad, noise, step).field;
}

// ---------------------------------------------------------------------------
// Optimizers

enum class OptimizerKind { SGD, Adam };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::Adam;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct OptimizerState {
    std::vector<double> m;
    std::vector<double> v;
    std::uint64_t t = 0;
};

inline void optimizer_update(std::vector<double>& params, const std::vector<double>& grad, double lr,
                             const OptimizerConfig& opt, OptimizerState& state) {
    if (opt.kind == OptimizerKind::SGD) {
        for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grad[i];
        ++state.t;
        return;
    }
    if (state.m.size() != params.size()) {
        state.m.assign(params.size(), 0.0);
        state.v.assign(params.size(), 0.0);
        state.t = 0;
    }
    ++state.t;
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.m[i] = opt.beta1 * state.m[i] + (1.0 - opt.beta1) * grad[i];
        state.v[i] = opt.beta2 * state.v[i] + (1.0 - opt.beta2) * grad[i] * grad[i];
        const double m_hat = state.m[i] / bc1;
        const double v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (std::sqrt(v_hat) + opt.epsilon);
    }
}

// ---------------------------------------------------------------------------
// Simulation

inline constexpr std::size_t kDefaultIterations = 1200;
inline constexpr double kDefaultLearningRate = 1e-3;

struct SimConfig {
    PixelField teacher;
    RegConfig reg;
    NoiseModel noise;
    std::size_t iterations = kDefaultIterations;
    double learning_rate = kDefaultLearningRate;
    OptimizerConfig optimizer;
    bool use_codec = false;
    LinearCodec codec = builtin_codec();

    void validate() const {
        if (teacher.size() == 0) throw ValidationError("simulation: teacher image is empty");
        require_channels(teacher, 3, "teacher");
        (void)teacher.as_image();
        reg.validate();
        noise.validate();
        if (iterations < 1) throw ValidationError("iterations must be >= 1");
        if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
            throw ValidationError("learning rate must be positive");
        if (optimizer.kind == OptimizerKind::Adam &&
            (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0) ||
             !(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0) || !(optimizer.epsilon > 0.0)))
            throw ValidationError("invalid Adam hyperparameters");
        if (use_codec) codec.validate();
    }
};

/// Metrics of one step, measured on the image rendered at the start of the step.
/// Gradient statistics describe the noisy pixel gradient before regulation.
struct StepRecord {
    std::size_t iteration = 0;
    double loss = 0.0; ///< mean squared pixel error
    double psnr = 0.0;
    double mean_grad_norm = 0.0;
    double max_grad_norm = 0.0;
    double clipped_fraction = 0.0;
    double wall_seconds = 0.0;
};

struct RunStats {
    std::vector<StepRecord> records;
    double final_loss = 0.0;
    double final_psnr = 0.0;
};

/// Thrown when theta leaves the finite domain; carries the offending step.
class SimulationAbort : public RuntimeAbort {
public:
    SimulationAbort(const std::string& what, StepRecord record) : RuntimeAbort(what), record_(record) {}
    const StepRecord& record() const noexcept { return record_; }

private:
    StepRecord record_;
};

/// Pixel gradient after noise and regulation, i.e. what is chained into theta.
struct StepGradients {
    PixelField clean;     ///< exact objective gradient
    PixelField noisy;
    PixelField regulated;
};

inline StepGradients step_gradients(const PixelField& rendered, const SimConfig& cfg, std::uint64_t step) {
    StepGradients g;
    g.clean = objective_pixel_grad(rendered, cfg.teacher, cfg.use_codec ? &cfg.codec : nullptr);
    g.noisy = inject_noise(g.clean, cfg.noise, step);
    g.regulated = apply_regulation(g.noisy, cfg.reg);
    return g;
}

/// One surrogate score-distillation step:
/// render, residual gradient (optionally via the codec), noise, regulation,
/// chain through the render Jacobian, optimizer update.
inline std::pair<TextureField, StepRecord> sds_step(const TextureField& texture, const SimConfig& cfg,
                                                    OptimizerState& state, std::uint64_t step) {
    const auto start = std::chrono::steady_clock::now();
    const PixelField rendered = render(texture);
    const StepGradients g = step_gradients(rendered, cfg, step);

    StepRecord rec;
    rec.iteration = static_cast<std::size_t>(step);
    rec.loss = mean_squared_error(rendered, cfg.teacher);
    rec.psnr = compute_psnr(rendered, cfg.teacher);
    const GradStats gs = grad_stats(g.noisy, cfg.reg.threshold);
    rec.mean_grad_norm = gs.mean_norm;
    rec.max_grad_norm = gs.max_norm;
    rec.clipped_fraction = gs.fraction_exceeding;

    const std::vector<double> jac = render_jacobian(texture);
    std::vector<double> theta_grad(jac.size());
    auto reg = g.regulated.data();
    for (std::size_t i = 0; i < jac.size(); ++i) theta_grad[i] = reg[i] * jac[i];

    TextureField next = texture;
    optimizer_update(next.params, theta_grad, cfg.learning_rate, cfg.optimizer, state);
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!next.all_finite())
        throw SimulationAbort("simulation diverged: non-finite parameters after step " + std::to_string(step), rec);
    return {std::move(next), rec};
}

/// Runs cfg.iterations steps from theta = 0 (a mid-gray render).
inline std::pair<TextureField, RunStats> run_simulation(const SimConfig& cfg) {
    cfg.validate();
    TextureField texture(cfg.teacher.height(), cfg.teacher.width(), 0.0);
    OptimizerState state;
    RunStats stats;
    stats.records.reserve(cfg.iterations);
    for (std::size_t k = 0; k < cfg.iterations; ++k) {
        auto [next, rec] = sds_step(texture, cfg, state, k);
        texture = std::move(next);
        stats.records.push_back(rec);
    }
    const PixelField final_image = render(texture);
    stats.final_loss = mean_squared_error(final_image, cfg.teacher);
    stats.final_psnr = compute_psnr(final_image, cfg.teacher);
    return {std::move(texture), std::move(stats)};
}

inline constexpr double kTeacherAmplitude = 0.2;

/// Smooth colour teacher in [0.3, 0.7]: low-frequency ramps and waves that the
/// sigmoid render reaches well within 2000 Adam steps at lr 1e-3.
inline PixelField standard_teacher(std::size_t height = 64, std::size_t width = 64) {
    PixelField img(height, width, 3);
    const double pi = std::numbers::pi;
    const double a = kTeacherAmplitude;
    for (std::size_t r = 0; r < height; ++r) {
        for (std::size_t c = 0; c < width; ++c) {
            const double u = (static_cast<double>(c) + 0.5) / static_cast<double>(width);
            const double v = (static_cast<double>(r) + 0.5) / static_cast<double>(height);
            img.at(r, c, 0) = 0.5 + a * std::sin(2.0 * pi * u) * std::cos(pi * v);
            img.at(r, c, 1) = 0.5 + a * (u - v);
            img.at(r, c, 2) = 0.5 + a * std::cos(pi * (u + v));
        }
    }
    return img.as_image();
}

} // namespace pgc
