#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "echosynth/engine/rng.hpp"
#include "echosynth/postproc/cone.hpp"
#include "echosynth/postproc/wavelet.hpp"
#include "echosynth/volume.hpp"

using namespace echosynth;
using postproc::ConeSpec;
using postproc::ThresholdRule;
using postproc::WaveletFamily;
using postproc::WaveletSpec;

namespace {

Volume random_volume(Dims3 dims, std::uint64_t seed, float lo = 0.0f, float hi = 1.0f) {
    Volume vol(dims, {1.0f, 1.0f, 1.0f});
    engine::Rng rng(seed);
    for (auto& v : vol.data) v = static_cast<float>(rng.uniform(lo, hi));
    return vol;
}

float volume_range(const Volume& vol) {
    auto [lo, hi] = std::minmax_element(vol.data.begin(), vol.data.end());
    return *hi - *lo;
}

float max_abs_diff(const Volume& a, const Volume& b) {
    float m = 0.0f;
    for (std::size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::fabs(a.data[i] - b.data[i]));
    return m;
}

double total_energy(const std::vector<float>& v) {
    double e = 0.0;
    for (float x : v) e += double(x) * x;
    return e;
}

}  // namespace

TEST_CASE("filter banks satisfy the orthonormal wavelet identities") {
    for (auto family : {WaveletFamily::haar, WaveletFamily::sym4}) {
        const auto& h = postproc::detail::lowpass_taps(family);
        const auto g = postproc::detail::highpass_taps(family);
        double sum = 0.0, energy = 0.0;
        for (double c : h) { sum += c; energy += c * c; }
        CHECK(sum == Catch::Approx(std::sqrt(2.0)).epsilon(1e-9));
        CHECK(energy == Catch::Approx(1.0).epsilon(1e-9));
        for (std::size_t lag = 2; lag < h.size(); lag += 2) {
            double auto_h = 0.0, cross = 0.0;
            for (std::size_t k = 0; k + lag < h.size(); ++k) {
                auto_h += h[k] * h[k + lag];
                cross += h[k] * g[k + lag];
            }
            CHECK(std::fabs(auto_h) < 1e-9);
            CHECK(std::fabs(cross) < 1e-9);
        }
    }
}

TEST_CASE("haar analysis of a two-sample line gives sum and difference over sqrt 2") {
    const float a = 3.0f, b = 1.0f;
    const float line[2] = {a, b};
    float out[2] = {0, 0};
    const auto& h = postproc::detail::lowpass_taps(WaveletFamily::haar);
    const auto g = postproc::detail::highpass_taps(WaveletFamily::haar);
    postproc::detail::analyze_line(line, 1, 2, h, g, out, 1);
    const float inv_sqrt2 = 1.0f / std::sqrt(2.0f);
    CHECK(out[0] == Catch::Approx((a + b) * inv_sqrt2));
    CHECK(out[1] == Catch::Approx((a - b) * inv_sqrt2));

    // In 3D the two singleton axes are replicate-padded to length 2, and each
    // contributes another low-pass factor of sqrt(2) to the separable result.
    Volume vol({2, 1, 1}, {1, 1, 1});
    vol.data = {a, b};
    WaveletSpec spec{WaveletFamily::haar, 1, ThresholdRule::none, -1.0f, true};
    auto pyr = postproc::dwt3d(vol, spec);
    CHECK(pyr.approx()[0] == Catch::Approx((a + b) * std::sqrt(2.0f)));
    CHECK(pyr.level_data[0].bands[1][0] == Catch::Approx((a - b) * std::sqrt(2.0f)));
    // bands with a high-pass factor along a padded axis see identical samples
    CHECK(pyr.level_data[0].bands[2][0] == Catch::Approx(0.0f).margin(1e-7));
    CHECK(pyr.level_data[0].bands[4][0] == Catch::Approx(0.0f).margin(1e-7));
}

TEST_CASE("constant volume has zero detail coefficients at every level") {
    Volume vol({16, 8, 8}, {1, 1, 1});
    std::fill(vol.data.begin(), vol.data.end(), 0.75f);
    for (auto family : {WaveletFamily::haar, WaveletFamily::sym4}) {
        WaveletSpec spec{family, 3, ThresholdRule::none, -1.0f, true};
        auto pyr = postproc::dwt3d(vol, spec);
        for (const auto& lvl : pyr.level_data) {
            for (int mask = 1; mask < 8; ++mask) {
                for (float c : lvl.bands[mask]) CHECK(std::fabs(c) < 1e-5f);
            }
        }
    }
}

TEST_CASE("transform conserves energy on divisible extents") {
    Volume vol = random_volume({32, 32, 32}, 42, -1.0f, 2.0f);
    const double vol_energy = total_energy(vol.data);
    for (auto family : {WaveletFamily::haar, WaveletFamily::sym4}) {
        WaveletSpec spec{family, 2, ThresholdRule::none, -1.0f, true};
        auto pyr = postproc::dwt3d(vol, spec);
        double coeff_energy = total_energy(pyr.approx());
        for (const auto& lvl : pyr.level_data) {
            for (int mask = 1; mask < 8; ++mask) coeff_energy += total_energy(lvl.bands[mask]);
        }
        CHECK(coeff_energy == Catch::Approx(vol_energy).epsilon(1e-4));
    }
}

TEST_CASE("round trip is exact within 1e-5 of the value range") {
    for (auto family : {WaveletFamily::haar, WaveletFamily::sym4}) {
        for (int levels = 1; levels <= 3; ++levels) {
            Volume vol = random_volume({32, 32, 32}, 7 + levels, -0.5f, 1.5f);
            WaveletSpec spec{family, levels, ThresholdRule::none, -1.0f, true};
            Volume back = postproc::idwt3d(postproc::dwt3d(vol, spec), spec);
            REQUIRE(back.dims == vol.dims);
            CHECK(max_abs_diff(vol, back) <= 1e-5f * volume_range(vol));
        }
    }
}

TEST_CASE("round trip survives odd extents through periodic extension") {
    Volume vol = random_volume({10, 6, 5}, 3);
    WaveletSpec spec{WaveletFamily::sym4, 2, ThresholdRule::none, -1.0f, true};
    Volume back = postproc::idwt3d(postproc::dwt3d(vol, spec), spec);
    REQUIRE(back.dims == vol.dims);
    CHECK(max_abs_diff(vol, back) <= 1e-5f * volume_range(vol));

    WaveletSpec strict = spec;
    strict.periodic_extension = false;
    CHECK_THROWS_WITH(postproc::dwt3d(vol, strict), Catch::Matchers::ContainsSubstring("axis 2"));
}

TEST_CASE("spec mismatch on reconstruction is rejected") {
    Volume vol = random_volume({8, 8, 8}, 5);
    WaveletSpec spec{WaveletFamily::haar, 2, ThresholdRule::none, -1.0f, true};
    auto pyr = postproc::dwt3d(vol, spec);
    WaveletSpec other = spec;
    other.family = WaveletFamily::sym4;
    CHECK_THROWS_WITH(postproc::idwt3d(pyr, other), Catch::Matchers::ContainsSubstring("mismatch"));
    other = spec;
    other.levels = 1;
    CHECK_THROWS_AS(postproc::idwt3d(pyr, other), std::invalid_argument);
}

TEST_CASE("all-zero pyramid reconstructs to a zero volume") {
    Volume vol = random_volume({8, 8, 8}, 11);
    WaveletSpec spec{WaveletFamily::sym4, 2, ThresholdRule::none, -1.0f, true};
    auto pyr = postproc::dwt3d(vol, spec);
    std::fill(pyr.approx().begin(), pyr.approx().end(), 0.0f);
    for (auto& lvl : pyr.level_data) {
        for (int mask = 1; mask < 8; ++mask) std::fill(lvl.bands[mask].begin(), lvl.bands[mask].end(), 0.0f);
    }
    Volume back = postproc::idwt3d(pyr, spec);
    for (float v : back.data) CHECK(v == 0.0f);
}

TEST_CASE("denoise with rule none reproduces the input") {
    Volume vol = random_volume({16, 16, 8}, 13);
    WaveletSpec spec{WaveletFamily::sym4, 2, ThresholdRule::none, -1.0f, true};
    Volume out = postproc::wavelet_denoise(vol, spec);
    CHECK(max_abs_diff(vol, out) <= 1e-5f * volume_range(vol));
}

TEST_CASE("soft threshold above the largest detail leaves only the approximation") {
    Volume vol = random_volume({16, 16, 8}, 17);
    WaveletSpec analysis{WaveletFamily::haar, 2, ThresholdRule::none, -1.0f, true};
    auto pyr = postproc::dwt3d(vol, analysis);
    float max_detail = 0.0f;
    for (const auto& lvl : pyr.level_data) {
        for (int mask = 1; mask < 8; ++mask) {
            for (float c : lvl.bands[mask]) max_detail = std::max(max_detail, std::fabs(c));
        }
    }
    for (auto& lvl : pyr.level_data) {
        for (int mask = 1; mask < 8; ++mask) std::fill(lvl.bands[mask].begin(), lvl.bands[mask].end(), 0.0f);
    }
    Volume approx_only = postproc::idwt3d(pyr, analysis);
    const auto [lo, hi] = std::minmax_element(vol.data.begin(), vol.data.end());
    for (float& v : approx_only.data) v = std::clamp(v, *lo, *hi);

    WaveletSpec denoise{WaveletFamily::haar, 2, ThresholdRule::soft, max_detail * 1.01f, true};
    Volume out = postproc::wavelet_denoise(vol, denoise);
    CHECK(max_abs_diff(out, approx_only) <= 1e-5f * volume_range(vol));
}

TEST_CASE("hard thresholding twice changes nothing") {
    // Haar atoms have disjoint supports, so a volume can be synthesized whose
    // extreme voxels sit in blocks untouched by the sub-threshold details.
    // The range clamp then never fires and the second pass must reproduce the
    // first exactly: it re-reads the kept coefficients and re-zeroes nothing.
    const WaveletSpec spec{WaveletFamily::haar, 2, ThresholdRule::hard, 0.02f, true};
    Volume zero({16, 16, 16}, {1, 1, 1});
    auto pyr = postproc::dwt3d(zero, spec);
    std::fill(pyr.approx().begin(), pyr.approx().end(), 10.0f);
    // large coarse details confined to the two corner 4x4x4 blocks
    auto& coarse = pyr.level_data[1].bands[7];
    coarse[0] = 3.0f;
    coarse[postproc::detail::block_index(pyr.level_data[1].band_dims, 3, 3, 3)] = -3.0f;
    // sub-threshold fine details confined to the volume interior
    auto& fine = pyr.level_data[0];
    for (int mask = 1; mask < 8; ++mask) {
        for (int z = 2; z <= 5; ++z)
            for (int y = 2; y <= 5; ++y)
                for (int x = 2; x <= 5; ++x)
                    fine.bands[mask][postproc::detail::block_index(fine.band_dims, x, y, z)] = 0.005f;
    }
    Volume vol = postproc::idwt3d(pyr, spec);

    Volume once = postproc::wavelet_denoise(vol, spec);
    REQUIRE(max_abs_diff(vol, once) > 1e-4f);  // the first pass really zeroes details
    Volume twice = postproc::wavelet_denoise(once, spec);
    CHECK(max_abs_diff(once, twice) <= 1e-6f * volume_range(vol));
}

TEST_CASE("universal threshold denoising pulls a noisy constant toward the constant") {
    Volume clean({16, 16, 16}, {1, 1, 1});
    std::fill(clean.data.begin(), clean.data.end(), 0.5f);
    Volume noisy = clean;
    engine::Rng rng(23);
    for (auto& v : noisy.data) v += 0.08f * static_cast<float>(rng.normal());

    WaveletSpec spec;  // sym4, 2 levels, soft, universal threshold
    Volume out = postproc::wavelet_denoise(noisy, spec);

    double mse_before = 0.0, mse_after = 0.0;
    for (std::size_t i = 0; i < clean.data.size(); ++i) {
        mse_before += std::pow(double(noisy.data[i]) - 0.5, 2);
        mse_after += std::pow(double(out.data[i]) - 0.5, 2);
    }
    CHECK(mse_after < 0.35 * mse_before);
}

TEST_CASE("denoise output stays inside the input value range") {
    Volume vol = random_volume({16, 8, 8}, 29, 0.2f, 0.8f);
    WaveletSpec spec{WaveletFamily::sym4, 2, ThresholdRule::soft, 0.3f, true};
    Volume out = postproc::wavelet_denoise(vol, spec);
    const auto [lo, hi] = std::minmax_element(vol.data.begin(), vol.data.end());
    for (float v : out.data) {
        CHECK(v >= *lo);
        CHECK(v <= *hi);
    }
}

TEST_CASE("cone mask hits 1 on the axis and 0 perpendicular to it") {
    Dims3 dims{64, 64, 16};
    Spacing3 spacing{2.0f, 2.0f, 6.0f};
    ConeSpec spec = postproc::default_cone_for(dims, spacing);
    Volume mask = postproc::make_cone_mask(dims, spacing, spec);
    CHECK(mask.at(32, 32, 8) == 1.0f);

    ConeSpec narrow;
    narrow.apex = {32.0f, 32.0f, 8.0f};
    narrow.half_angle_lateral = 0.5236f;  // 30 degrees
    narrow.half_angle_elevation = 0.5236f;
    narrow.depth_min = 1.0f;
    narrow.depth_max = 40.0f;
    Volume m2 = postproc::make_cone_mask(dims, spacing, narrow);
    // voxels at the apex depth sit 90 degrees off-axis
    CHECK(m2.at(60, 32, 8) == 0.0f);
    CHECK(m2.at(5, 32, 8) == 0.0f);
}

TEST_CASE("default cone on 64x64x16 covers a frozen interior fraction") {
    Dims3 dims{64, 64, 16};
    Spacing3 spacing{2.0f, 2.0f, 6.0f};
    Volume mask = postproc::make_cone_mask(dims, spacing, postproc::default_cone_for(dims, spacing));
    double sum = 0.0;
    for (float v : mask.data) {
        REQUIRE(v >= 0.0f);
        REQUIRE(v <= 1.0f);
        sum += v;
    }
    const double fraction = sum / double(mask.numel());
    CHECK(fraction > 0.30);
    CHECK(fraction < 0.46);
}

TEST_CASE("cone mask grows monotonically with the half angles") {
    Dims3 dims{32, 32, 16};
    Spacing3 spacing{4.0f, 4.0f, 6.0f};
    ConeSpec small = postproc::default_cone_for(dims, spacing);
    small.half_angle_lateral = 0.45f;
    small.half_angle_elevation = 0.55f;
    ConeSpec big = small;
    big.half_angle_lateral = 0.65f;
    big.half_angle_elevation = 0.75f;
    Volume ms = postproc::make_cone_mask(dims, spacing, small);
    Volume mb = postproc::make_cone_mask(dims, spacing, big);
    for (std::size_t i = 0; i < ms.data.size(); ++i) CHECK(mb.data[i] >= ms.data[i] - 1e-7f);
}

TEST_CASE("hard-edged cone produces a binary mask") {
    Dims3 dims{32, 32, 16};
    Spacing3 spacing{4.0f, 4.0f, 6.0f};
    ConeSpec spec = postproc::default_cone_for(dims, spacing);
    spec.edge_softness = 0.0f;
    Volume mask = postproc::make_cone_mask(dims, spacing, spec);
    std::size_t inside = 0;
    for (float v : mask.data) {
        REQUIRE((v == 0.0f || v == 1.0f));
        inside += v == 1.0f;
    }
    CHECK(inside > 0);
    CHECK(inside < mask.numel());

    Volume vol = random_volume(dims, 31);
    Volume out = postproc::apply_cone(vol, mask, 0.25f);
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        if (mask.data[i] == 1.0f) {
            CHECK(out.data[i] == vol.data[i]);
        } else {
            CHECK(out.data[i] == 0.25f);
        }
    }
}

TEST_CASE("apply_cone blends toward the fill value") {
    Dims3 dims{4, 4, 2};
    Volume vol(dims, {1, 1, 1});
    std::fill(vol.data.begin(), vol.data.end(), 0.8f);

    Volume ones(dims, {1, 1, 1});
    std::fill(ones.data.begin(), ones.data.end(), 1.0f);
    Volume same = postproc::apply_cone(vol, ones, 0.0f);
    CHECK(max_abs_diff(vol, same) == 0.0f);

    Volume zeros(dims, {1, 1, 1});
    Volume blank = postproc::apply_cone(vol, zeros, 0.0f);
    for (float v : blank.data) CHECK(v == 0.0f);

    Volume wrong({4, 4, 3}, {1, 1, 1});
    CHECK_THROWS_AS(postproc::apply_cone(vol, wrong, 0.0f), std::invalid_argument);
    CHECK_THROWS_AS(postproc::apply_cone(vol, ones, 1.5f), std::invalid_argument);
}

TEST_CASE("cone spec validation rejects degenerate geometry") {
    Dims3 dims{16, 16, 8};
    Spacing3 spacing{1, 1, 1};
    ConeSpec spec = postproc::default_cone_for(dims, spacing);

    ConeSpec bad = spec;
    bad.axis = {0, 0, 0};
    CHECK_THROWS_WITH(postproc::make_cone_mask(dims, spacing, bad), Catch::Matchers::ContainsSubstring("axis"));

    bad = spec;
    bad.half_angle_lateral = 1.6f;
    CHECK_THROWS_AS(postproc::make_cone_mask(dims, spacing, bad), std::invalid_argument);

    bad = spec;
    bad.depth_min = 5.0f;
    bad.depth_max = 5.0f;
    CHECK_THROWS_AS(postproc::make_cone_mask(dims, spacing, bad), std::invalid_argument);

    bad = spec;
    bad.apex = {-1.0f, 8.0f, 0.0f};
    CHECK_THROWS_WITH(postproc::make_cone_mask(dims, spacing, bad), Catch::Matchers::ContainsSubstring("apex"));

    bad = spec;
    bad.edge_softness = -0.5f;
    CHECK_THROWS_AS(postproc::make_cone_mask(dims, spacing, bad), std::invalid_argument);
}
