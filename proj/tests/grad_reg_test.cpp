#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "pgc/grad_reg.hpp"
#include "test_util.hpp"

using namespace pgc;
using pgc::test::cosine;
using pgc::test::one_pixel;
using pgc::test::random_field;

namespace {

void expect_pixel(const PixelField& f, std::size_t p, std::vector<double> expected, double tol = 1e-15) {
    auto px = f.pixel(p);
    ASSERT_EQ(px.size(), expected.size());
    for (std::size_t k = 0; k < expected.size(); ++k) EXPECT_NEAR(px[k], expected[k], tol) << "component " << k;
}

} // namespace

TEST(ClipPixelwiseNorm, ScalesOverThresholdPixel) {
    expect_pixel(clip_pixelwise_norm(one_pixel({0.6, 0.8, 0.0}), 0.1), 0, {0.06, 0.08, 0.0});
}

TEST(ClipPixelwiseNorm, BoundaryPixelUnchanged) {
    expect_pixel(clip_pixelwise_norm(one_pixel({0.06, 0.08, 0.0}), 0.1), 0, {0.06, 0.08, 0.0});
}

TEST(ClipPixelwiseNorm, ZeroAndDenormalPixelsMapToZero) {
    for (double c : {1e-3, 0.1, 10.0}) expect_pixel(clip_pixelwise_norm(one_pixel({0, 0, 0}), c), 0, {0, 0, 0}, 0.0);
    expect_pixel(clip_pixelwise_norm(one_pixel({1e-13, 0, 0}), 0.1), 0, {0, 0, 0}, 0.0);
}

TEST(ClipPixelwiseNorm, PixelsAreIndependent) {
    PixelField f(1, 2, 3, std::vector<double>{3, 0, 0, 0, 0.01, 0});
    const PixelField out = clip_pixelwise_norm(f, 0.1);
    expect_pixel(out, 0, {0.1, 0, 0});
    expect_pixel(out, 1, {0, 0.01, 0});
}

TEST(ClipPixelwiseNorm, RejectsNonFiniteNamingPixel) {
    PixelField f(2, 2, 3, 0.1);
    f.at(1, 0, 2) = std::numeric_limits<double>::quiet_NaN();
    try {
        (void)clip_pixelwise_norm(f, 0.1);
        FAIL() << "expected ValidationError";
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("pixel 2"), std::string::npos) << e.what();
    }
    f.at(1, 0, 2) = std::numeric_limits<double>::infinity();
    EXPECT_THROW((void)pngd_pixelwise(f, 0.1), ValidationError);
    EXPECT_THROW((void)clip_pixelwise_value(f, 0.1), ValidationError);
    EXPECT_THROW((void)clip_paramwise_norm(f, 0.1), ValidationError);
    EXPECT_THROW((void)ngd_paramwise(f, 0.1), ValidationError);
}

TEST(ClipPixelwiseNorm, RejectsNonPositiveThreshold) {
    const PixelField f = one_pixel({1, 2, 3});
    EXPECT_THROW((void)clip_pixelwise_norm(f, 0.0), ValidationError);
    EXPECT_THROW((void)clip_pixelwise_norm(f, -1.0), ValidationError);
    EXPECT_THROW((void)clip_pixelwise_norm(f, std::numeric_limits<double>::quiet_NaN()), ValidationError);
}

TEST(ClipPixelwiseValue, ClampsComponents) {
    expect_pixel(clip_pixelwise_value(one_pixel({0.25, -0.05, 0.3}), 0.1), 0, {0.1, -0.05, 0.1});
    expect_pixel(clip_pixelwise_value(one_pixel({0.05, 0.05, 0.05}), 0.1), 0, {0.05, 0.05, 0.05});
    expect_pixel(clip_pixelwise_value(one_pixel({0.1, -0.1, -0.5}), 0.1), 0, {0.1, -0.1, -0.1});
}

TEST(ClipPixelwiseValue, ChangesDirectionOfAnisotropicPixel) {
    const PixelField in = one_pixel({0.25, -0.05, 0.3});
    const PixelField out = clip_pixelwise_value(in, 0.1);
    EXPECT_LT(cosine(out.pixel(0), in.pixel(0)), 1.0 - 1e-6);
}

TEST(PngdPixelwise, Examples) {
    expect_pixel(pngd_pixelwise(one_pixel({0.1, 0, 0}), 0.1), 0, {0.05, 0, 0});
    expect_pixel(pngd_pixelwise(one_pixel({9.9, 0, 0}), 0.1), 0, {0.099, 0, 0});
    expect_pixel(pngd_pixelwise(one_pixel({0, 0, 0}), 0.1), 0, {0, 0, 0}, 0.0);
}

TEST(ClipParamwiseNorm, UsesGlobalNorm) {
    PixelField f(1, 2, 3, std::vector<double>{3, 0, 0, 0, 4, 0});
    const PixelField out = clip_paramwise_norm(f, 0.1);
    expect_pixel(out, 0, {0.06, 0, 0});
    expect_pixel(out, 1, {0, 0.08, 0});

    PixelField small(1, 2, 3, std::vector<double>{0.03, 0, 0, 0, 0.04, 0});
    EXPECT_EQ(clip_paramwise_norm(small, 0.1), small);
    PixelField zero(3, 3, 3, 0.0);
    EXPECT_EQ(clip_paramwise_norm(zero, 0.1), zero);
}

TEST(NgdParamwise, Examples) {
    expect_pixel(ngd_paramwise(one_pixel({0.1, 0, 0}), 0.1), 0, {0.05, 0, 0});
    PixelField zero(2, 2, 4, 0.0);
    EXPECT_EQ(ngd_paramwise(zero, 0.1), zero);

    // |G| = 1000 c: output norm within 0.1% of c.
    PixelField big(1, 2, 3, std::vector<double>{60, 0, 0, 0, 80, 0});
    const PixelField out = ngd_paramwise(big, 0.1);
    EXPECT_NEAR(pixel_norm(out.data()), 0.1, 0.1 * 1e-3);
    EXPECT_LT(pixel_norm(out.data()), 0.1);
}

TEST(ApplyRegulation, Dispatch) {
    std::mt19937_64 gen(7);
    const PixelField f = random_field(gen, 4, 5, 3, 1.0);
    EXPECT_EQ(apply_regulation(f, {RegMode::None, 0.1}), f);
    expect_pixel(apply_regulation(one_pixel({0.6, 0.8, 0}), {RegMode::PGC_N, 0.1}), 0, {0.06, 0.08, 0});
    expect_pixel(apply_regulation(one_pixel({0.25, -0.05, 0.3}), {RegMode::PGC_V, 0.1}), 0, {0.1, -0.05, 0.1});
    EXPECT_EQ(apply_regulation(f, {RegMode::PNGD, 0.3}), pngd_pixelwise(f, 0.3));
    EXPECT_EQ(apply_regulation(f, {RegMode::ParamClip, 0.3}), clip_paramwise_norm(f, 0.3));
    EXPECT_EQ(apply_regulation(f, {RegMode::ParamNGD, 0.3}), ngd_paramwise(f, 0.3));
    EXPECT_THROW((void)apply_regulation(f, {RegMode::PGC_N, 0.0}), ValidationError);
}

TEST(RegMode, StringRoundTrip) {
    for (RegMode m : {RegMode::None, RegMode::PGC_N, RegMode::PGC_V, RegMode::PNGD, RegMode::ParamClip,
                      RegMode::ParamNGD})
        EXPECT_EQ(parse_reg_mode(to_string(m)), m);
    EXPECT_THROW((void)parse_reg_mode("pgc"), ValidationError);
}

TEST(Float32Storage, ComputesInDouble) {
    PixelField32 f(1, 1, 3, std::vector<float>{0.6f, 0.8f, 0.0f});
    const PixelField32 out = clip_pixelwise_norm(f, 0.1);
    EXPECT_FLOAT_EQ(out.pixel(0)[0], static_cast<float>(0.1 * 0.6f / pixel_norm(f.pixel(0))));
    const PixelField32 again = clip_pixelwise_norm(out, 0.1);
    for (std::size_t k = 0; k < 3; ++k) EXPECT_FLOAT_EQ(again.pixel(0)[k], out.pixel(0)[k]);
}

// ---------------------------------------------------------------------------
// Properties over random fields

class RegProperties : public ::testing::TestWithParam<std::uint64_t> {
protected:
    std::mt19937_64 gen{GetParam()};
};

TEST_P(RegProperties, PgcNBoundAndDirection) {
    for (double scale : {1e-3, 0.05, 1.0, 100.0}) {
        const PixelField g = random_field(gen, 8, 8, 3, scale);
        for (double c : {0.01, 0.1, 1.0}) {
            const PixelField out = clip_pixelwise_norm(g, c);
            for (std::size_t p = 0; p < g.pixel_count(); ++p) {
                const double n_in = pixel_norm(g.pixel(p));
                const double n_out = pixel_norm(out.pixel(p));
                EXPECT_LE(n_out, std::min(n_in, c) + 1e-15);
                EXPECT_NEAR(cosine(out.pixel(p), g.pixel(p)), 1.0, 1e-9);
            }
        }
    }
}

TEST_P(RegProperties, NormNonIncreasingForPixelModes) {
    const PixelField g = random_field(gen, 8, 8, 4, 0.3);
    for (const PixelField& out : {clip_pixelwise_norm(g, 0.1), clip_pixelwise_value(g, 0.1), pngd_pixelwise(g, 0.1)})
        for (std::size_t p = 0; p < g.pixel_count(); ++p)
            EXPECT_LE(pixel_norm(out.pixel(p)), pixel_norm(g.pixel(p)) + 1e-15);
}

TEST_P(RegProperties, PngdCeilingAndMonotone) {
    const double c = 0.1;
    std::uniform_real_distribution<double> mag(0.0, 1e4);
    std::vector<double> norms;
    for (int i = 0; i < 200; ++i) norms.push_back(mag(gen));
    std::sort(norms.begin(), norms.end());
    double prev = -1.0;
    for (double n : norms) {
        const double out = pixel_norm(pngd_pixelwise(one_pixel({n, 0, 0}), c).pixel(0));
        EXPECT_LT(out, c);
        EXPECT_GE(out, prev);
        prev = out;
    }
}

TEST_P(RegProperties, SinglePixelParamwiseMatchesPixelwise) {
    std::normal_distribution<double> n(0.0, 0.2);
    for (int i = 0; i < 50; ++i) {
        const PixelField g = one_pixel({n(gen), n(gen), n(gen), n(gen)});
        EXPECT_EQ(clip_paramwise_norm(g, 0.1), clip_pixelwise_norm(g, 0.1));
        EXPECT_EQ(ngd_paramwise(g, 0.1), pngd_pixelwise(g, 0.1));
    }
}

TEST_P(RegProperties, ScaleCovarianceBelowThreshold) {
    const double c = 0.1;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 100; ++i) {
        const PixelField g = one_pixel({u(gen) * 0.05, -u(gen) * 0.05, u(gen) * 0.05});
        const double n = pixel_norm(g.pixel(0));
        const double s = std::max(1e-6, u(gen) * c / n);
        PixelField sg = g;
        for (double& v : sg.data()) v *= s;
        const PixelField lhs = clip_pixelwise_norm(sg, c);
        const PixelField rhs = clip_pixelwise_norm(g, c);
        for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(lhs.pixel(0)[k], s * rhs.pixel(0)[k], 1e-15);
    }
}

TEST_P(RegProperties, ClipsAreIdempotent) {
    const PixelField g = random_field(gen, 8, 8, 3, 0.5);
    const PixelField once_n = clip_pixelwise_norm(g, 0.1);
    const PixelField once_v = clip_pixelwise_value(g, 0.1);
    const PixelField twice_n = clip_pixelwise_norm(once_n, 0.1);
    const PixelField twice_v = clip_pixelwise_value(once_v, 0.1);
    for (std::size_t i = 0; i < g.size(); ++i) {
        EXPECT_NEAR(twice_n.data()[i], once_n.data()[i], 1e-12);
        EXPECT_NEAR(twice_v.data()[i], once_v.data()[i], 1e-12);
    }
}

INSTANTIATE_TEST_SUITE_P(Seeds, RegProperties, ::testing::Values(1u, 2u, 3u, 42u));
