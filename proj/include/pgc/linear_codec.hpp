#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "errors.hpp"
#include "pixel_field.hpp"

namespace pgc {

inline constexpr std::size_t kPixelChannels = 3;
inline constexpr std::size_t kLatentChannels = 4;

using PixelVec = Eigen::Vector3d;
using LatentVec = Eigen::Vector4d;
using EncMatrix = Eigen::Matrix<double, 4, 3, Eigen::RowMajor>;
using DecMatrix = Eigen::Matrix<double, 3, 4, Eigen::RowMajor>;

/// Affine per-pixel stand-in for a latent-diffusion VAE.
///
/// Encoding maps an RGB vector x to a 4-channel latent z = enc_matrix x + enc_bias,
/// decoding maps back with x = dec_matrix z + dec_bias. The grids are kept at full
/// resolution; there is no spatial downsampling.
struct LinearCodec {
    EncMatrix enc_matrix = EncMatrix::Zero();
    LatentVec enc_bias = LatentVec::Zero();
    DecMatrix dec_matrix = DecMatrix::Zero();
    PixelVec dec_bias = PixelVec::Zero();

    void validate() const {
        if (!enc_matrix.allFinite() || !enc_bias.allFinite() || !dec_matrix.allFinite() || !dec_bias.allFinite())
            throw ValidationError("codec contains non-finite entries");
    }

    friend bool operator==(const LinearCodec& a, const LinearCodec& b) {
        return a.enc_matrix == b.enc_matrix && a.enc_bias == b.enc_bias && a.dec_matrix == b.dec_matrix &&
               a.dec_bias == b.dec_bias;
    }
};

/// RGB <-> latent fit published for the Stable Diffusion VAE.
///
/// The source names the pixel-from-latent map A0 yet prints A0 as 4x3 and A1
/// as 3x4, so the shapes decide: the 4x3 block (with the 4-vector bias)
/// encodes, the 3x4 block (with the 3-vector bias) decodes.
inline LinearCodec builtin_codec() {
    LinearCodec codec;
    codec.enc_matrix << -0.5537, 1.8844, 2.1757,
                        -3.4900, 1.7472, 1.6805,
                         0.6894, 3.2756, -3.4658,
                        -2.4909, 1.3309, -0.1115;
    codec.enc_bias << -1.6590, 0.3810, -0.3939, 0.7896;
    codec.dec_matrix << 0.1956, -0.0910, 0.0462, -0.1521,
                        0.2125, -0.0206, 0.0401, -0.1215,
                        0.2208, 0.0047, -0.0028, -0.1083;
    codec.dec_bias << 0.5573, 0.5105, 0.4635;
    return codec;
}

namespace detail {

template <int Out, int In, typename Mat, typename Vec>
PixelField affine_map(const PixelField& in, const Mat& matrix, const Vec* bias, const char* what) {
    require_channels(in, In, what);
    require_finite(in, what);
    PixelField out(in.height(), in.width(), Out);
    for (std::size_t p = 0; p < in.pixel_count(); ++p) {
        Eigen::Map<const Eigen::Matrix<double, In, 1>> x(in.pixel(p).data());
        Eigen::Map<Eigen::Matrix<double, Out, 1>> y(out.pixel(p).data());
        if (bias)
            y.noalias() = matrix * x + *bias;
        else
            y.noalias() = matrix * x;
    }
    return out;
}

} // namespace detail

inline PixelField encode(const LinearCodec& codec, const PixelField& image) {
    return detail::affine_map<4, 3>(image, codec.enc_matrix, &codec.enc_bias, "encode");
}

/// Output is not clamped to [0,1].
inline PixelField decode(const LinearCodec& codec, const PixelField& latent) {
    return detail::affine_map<3, 4>(latent, codec.dec_matrix, &codec.dec_bias, "decode");
}

/// Pulls a latent-space gradient back to pixel space through enc_matrix^T,
/// the linear substitute for dz/dx.
inline PixelField backprop_latent_grad(const LinearCodec& codec, const PixelField& latent_grad) {
    const Eigen::Matrix<double, 3, 4> transposed = codec.enc_matrix.transpose();
    return detail::affine_map<3, 4>(latent_grad, transposed, static_cast<const PixelVec*>(nullptr),
                                    "backprop_latent_grad");
}

struct RidgeFitConfig {
    double lambda = 0.0;

    void validate() const {
        if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ValidationError("ridge lambda must be >= 0");
    }
};

struct CodecSample {
    PixelVec pixel;
    LatentVec latent;
};

namespace detail {

/// Solves min |X w + b - y|^2 + lambda |w|^2 for every output column at once.
/// Returns [W | b] as an (outputs x (inputs+1)) matrix.
///
/// At lambda = 0 a singular normal matrix either throws (strict) or falls back
/// to the minimum-norm least-squares solution.
inline Eigen::MatrixXd ridge_solve(const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets, double lambda,
                                   bool strict, const char* direction) {
    const Eigen::Index n = inputs.rows();
    const Eigen::Index d = inputs.cols();
    Eigen::MatrixXd design(n, d + 1);
    design.leftCols(d) = inputs;
    design.col(d).setOnes();

    Eigen::MatrixXd normal = design.transpose() * design;
    normal.diagonal().head(d).array() += lambda;
    const Eigen::MatrixXd rhs = design.transpose() * targets;

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(normal, Eigen::EigenvaluesOnly);
    const double largest = eig.eigenvalues().maxCoeff();
    const double smallest = eig.eigenvalues().minCoeff();
    const bool singular = !(largest > 0.0) || smallest <= largest * 1e-12;

    Eigen::MatrixXd weights;
    if (!singular) {
        weights = normal.ldlt().solve(rhs);
    } else if (lambda == 0.0 && !strict) {
        weights = design.completeOrthogonalDecomposition().solve(targets);
    } else {
        throw RankDeficientError(std::string(direction) +
                                 ": normal matrix is singular; samples are not affinely independent, use lambda > 0");
    }
    return weights.transpose();
}

} // namespace detail

/// Fits both directions of a codec by ridge regression over (pixel, latent) pairs.
///
/// The bias column is not penalized. The pixel->latent direction must be
/// identifiable at lambda = 0; the latent->pixel direction falls back to the
/// minimum-norm solution when the latents span less than R^4 (as they do when
/// produced by an affine encoder).
inline LinearCodec fit_codec(const std::vector<CodecSample>& pairs, const RidgeFitConfig& cfg) {
    cfg.validate();
    if (pairs.empty()) throw ValidationError("fit_codec: no samples");
    const auto n = static_cast<Eigen::Index>(pairs.size());
    Eigen::MatrixXd pixels(n, 3), latents(n, 4);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& s = pairs[static_cast<std::size_t>(i)];
        if (!s.pixel.allFinite() || !s.latent.allFinite())
            throw ValidationError("fit_codec: non-finite sample " + std::to_string(i));
        pixels.row(i) = s.pixel.transpose();
        latents.row(i) = s.latent.transpose();
    }

    LinearCodec codec;
    const Eigen::MatrixXd enc = detail::ridge_solve(pixels, latents, cfg.lambda, true, "pixel->latent");
    codec.enc_matrix = enc.leftCols(3);
    codec.enc_bias = enc.col(3);
    const Eigen::MatrixXd dec = detail::ridge_solve(latents, pixels, cfg.lambda, false, "latent->pixel");
    codec.dec_matrix = dec.leftCols(4);
    codec.dec_bias = dec.col(4);
    codec.validate();
    return codec;
}

/// Pairs every pixel of a 3-channel field with the same pixel of a 4-channel field.
inline std::vector<CodecSample> make_codec_samples(const PixelField& pixels, const PixelField& latents) {
    require_channels(pixels, 3, "fit pixels");
    require_channels(latents, 4, "fit latents");
    if (pixels.pixel_count() != latents.pixel_count())
        throw ValidationError("fit: pixel and latent tensors hold different pixel counts");
    std::vector<CodecSample> out(pixels.pixel_count());
    for (std::size_t p = 0; p < out.size(); ++p) {
        auto x = pixels.pixel(p);
        auto z = latents.pixel(p);
        out[p].pixel = PixelVec(x[0], x[1], x[2]);
        out[p].latent = LatentVec(z[0], z[1], z[2], z[3]);
    }
    return out;
}

/// Largest absolute error of the codec's encoder over the samples.
inline double encode_residual(const LinearCodec& codec, const std::vector<CodecSample>& pairs) {
    double worst = 0.0;
    for (const auto& s : pairs)
        worst = std::max(worst, (codec.enc_matrix * s.pixel + codec.enc_bias - s.latent).cwiseAbs().maxCoeff());
    return worst;
}

} // namespace pgc
