#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "echosynth/volume.hpp"

// Separable 3D discrete wavelet transform with periodized orthonormal filter
// banks, plus coefficient-threshold denoising. Analysis uses
// a[i] = sum_k h[k] x[(2i+k) mod N]; synthesis is the exact adjoint, which
// inverts the transform for any even N because all even-lag filter
// autocorrelations vanish.

namespace echosynth::postproc {

enum class WaveletFamily { haar, sym4 };
enum class ThresholdRule { none, soft, hard };

struct WaveletSpec {
    WaveletFamily family = WaveletFamily::sym4;
    int levels = 2;
    ThresholdRule threshold_rule = ThresholdRule::soft;
    float threshold = -1.0f;         // < 0 selects the universal threshold
    bool periodic_extension = true;  // replicate-pad odd extents per level
};

inline const char* wavelet_family_name(WaveletFamily f) {
    return f == WaveletFamily::haar ? "haar" : "sym4";
}

namespace detail {

inline const std::vector<double>& lowpass_taps(WaveletFamily family) {
    static const std::vector<double> haar = {0.7071067811865476, 0.7071067811865476};
    static const std::vector<double> sym4 = {
        -0.07576571478927333,  -0.02963552764599851, 0.49761866763201545, 0.8037387518059161,
        0.29785779560527736,   -0.09921954357684722, -0.012603967262037833, 0.0322231006040427};
    return family == WaveletFamily::haar ? haar : sym4;
}

inline std::vector<double> highpass_taps(WaveletFamily family) {
    const auto& h = lowpass_taps(family);
    const std::size_t L = h.size();
    std::vector<double> g(L);
    for (std::size_t k = 0; k < L; ++k) {
        double v = h[L - 1 - k];
        g[k] = (k % 2 == 0) ? v : -v;
    }
    return g;
}

// One periodized analysis step along a strided line of even length n.
// Writes n/2 approximation samples followed by n/2 detail samples.
inline void analyze_line(const float* src, std::size_t stride, int n, const std::vector<double>& h,
                         const std::vector<double>& g, float* dst, std::size_t dst_stride) {
    const int half = n / 2;
    const int L = static_cast<int>(h.size());
    for (int i = 0; i < half; ++i) {
        double a = 0.0, d = 0.0;
        for (int k = 0; k < L; ++k) {
            const float x = src[static_cast<std::size_t>((2 * i + k) % n) * stride];
            a += h[k] * x;
            d += g[k] * x;
        }
        dst[static_cast<std::size_t>(i) * dst_stride] = static_cast<float>(a);
        dst[static_cast<std::size_t>(half + i) * dst_stride] = static_cast<float>(d);
    }
}

// Adjoint of analyze_line: scatters approx/detail halves back to n samples.
inline void synthesize_line(const float* src, std::size_t stride, int n, const std::vector<double>& h,
                            const std::vector<double>& g, float* dst, std::size_t dst_stride) {
    const int half = n / 2;
    const int L = static_cast<int>(h.size());
    std::vector<double> acc(static_cast<std::size_t>(n), 0.0);
    for (int i = 0; i < half; ++i) {
        const double a = src[static_cast<std::size_t>(i) * stride];
        const double d = src[static_cast<std::size_t>(half + i) * stride];
        for (int k = 0; k < L; ++k) {
            acc[static_cast<std::size_t>((2 * i + k) % n)] += h[k] * a + g[k] * d;
        }
    }
    for (int i = 0; i < n; ++i) dst[static_cast<std::size_t>(i) * dst_stride] = static_cast<float>(acc[i]);
}

// Applies fn to every line of a block along the given axis.
template <typename Fn>
void for_each_line(const Dims3& dims, int axis, Fn&& fn) {
    const std::size_t strides[3] = {1, static_cast<std::size_t>(dims[0]),
                                    static_cast<std::size_t>(dims[0]) * dims[1]};
    const int a1 = axis == 0 ? 1 : 0;
    const int a2 = axis == 2 ? 1 : 2;
    for (int j2 = 0; j2 < dims[a2]; ++j2) {
        for (int j1 = 0; j1 < dims[a1]; ++j1) {
            const std::size_t base = strides[a1] * static_cast<std::size_t>(j1) +
                                     strides[a2] * static_cast<std::size_t>(j2);
            fn(base, strides[axis]);
        }
    }
}

inline std::size_t block_index(const Dims3& dims, int x, int y, int z) {
    return (static_cast<std::size_t>(z) * dims[1] + y) * dims[0] + x;
}

}  // namespace detail

// Detail bands are indexed by a 3-bit mask: bit 0 = high-pass along x,
// bit 1 = y, bit 2 = z. Mask 0 (all low-pass) is the recursed approximation.
struct WaveletLevel {
    Dims3 in_dims{};      // extents entering this level
    Dims3 padded_dims{};  // even extents actually transformed
    Dims3 band_dims{};    // extents of each coefficient band
    std::array<std::vector<float>, 8> bands;  // bands[0] left empty except at the coarsest level
};

struct WaveletPyramid {
    WaveletFamily family = WaveletFamily::haar;
    int levels = 0;
    Dims3 dims{};  // original volume extents
    Spacing3 spacing{};
    std::vector<WaveletLevel> level_data;  // [0] = finest
    std::vector<float>& approx() { return level_data.back().bands[0]; }
    const std::vector<float>& approx() const { return level_data.back().bands[0]; }
};

inline WaveletPyramid dwt3d(const Volume& vol, const WaveletSpec& spec) {
    if (spec.levels < 1) throw std::invalid_argument("wavelet levels must be >= 1");
    WaveletPyramid pyr;
    pyr.family = spec.family;
    pyr.levels = spec.levels;
    pyr.dims = vol.dims;
    pyr.spacing = vol.spacing;

    const auto& h = detail::lowpass_taps(spec.family);
    const auto g = detail::highpass_taps(spec.family);

    std::vector<float> cur = vol.data;
    Dims3 cur_dims = vol.dims;
    for (int level = 0; level < spec.levels; ++level) {
        WaveletLevel lvl;
        lvl.in_dims = cur_dims;
        lvl.padded_dims = cur_dims;
        for (int axis = 0; axis < 3; ++axis) {
            if (lvl.padded_dims[axis] % 2 != 0) {
                if (!spec.periodic_extension) {
                    throw std::invalid_argument(std::string("extent ") + std::to_string(lvl.padded_dims[axis]) +
                                                " on axis " + std::to_string(axis) + " at level " +
                                                std::to_string(level) + " is odd and periodic extension is disabled");
                }
                lvl.padded_dims[axis] += 1;
            }
        }
        if (lvl.padded_dims != cur_dims) {
            // Replicate the last sample along each odd axis; the padded block
            // reconstructs exactly and the original is its prefix.
            std::vector<float> padded(dims_numel(lvl.padded_dims));
            for (int z = 0; z < lvl.padded_dims[2]; ++z) {
                const int sz = std::min(z, cur_dims[2] - 1);
                for (int y = 0; y < lvl.padded_dims[1]; ++y) {
                    const int sy = std::min(y, cur_dims[1] - 1);
                    for (int x = 0; x < lvl.padded_dims[0]; ++x) {
                        const int sx = std::min(x, cur_dims[0] - 1);
                        padded[detail::block_index(lvl.padded_dims, x, y, z)] =
                            cur[detail::block_index(cur_dims, sx, sy, sz)];
                    }
                }
            }
            cur = std::move(padded);
        }

        std::vector<float> work(cur.size());
        for (int axis = 0; axis < 3; ++axis) {
            detail::for_each_line(lvl.padded_dims, axis, [&](std::size_t base, std::size_t stride) {
                detail::analyze_line(cur.data() + base, stride, lvl.padded_dims[axis], h, g, work.data() + base,
                                     stride);
            });
            std::swap(cur, work);
        }

        lvl.band_dims = {lvl.padded_dims[0] / 2, lvl.padded_dims[1] / 2, lvl.padded_dims[2] / 2};
        const std::size_t band_numel = dims_numel(lvl.band_dims);
        std::vector<float> next(band_numel);
        for (int mask = 0; mask < 8; ++mask) {
            std::vector<float> band(band_numel);
            const int ox = (mask & 1) ? lvl.band_dims[0] : 0;
            const int oy = (mask & 2) ? lvl.band_dims[1] : 0;
            const int oz = (mask & 4) ? lvl.band_dims[2] : 0;
            for (int z = 0; z < lvl.band_dims[2]; ++z) {
                for (int y = 0; y < lvl.band_dims[1]; ++y) {
                    for (int x = 0; x < lvl.band_dims[0]; ++x) {
                        band[detail::block_index(lvl.band_dims, x, y, z)] =
                            cur[detail::block_index(lvl.padded_dims, ox + x, oy + y, oz + z)];
                    }
                }
            }
            if (mask == 0) {
                next = std::move(band);
            } else {
                lvl.bands[mask] = std::move(band);
            }
        }
        cur_dims = lvl.band_dims;
        cur = std::move(next);
        const bool coarsest = (level == spec.levels - 1);
        if (coarsest) lvl.bands[0] = cur;
        pyr.level_data.push_back(std::move(lvl));
    }
    return pyr;
}

inline Volume idwt3d(const WaveletPyramid& pyr, const WaveletSpec& spec) {
    if (spec.family != pyr.family || spec.levels != pyr.levels) {
        throw std::invalid_argument(std::string("wavelet spec mismatch: pyramid is ") +
                                    wavelet_family_name(pyr.family) + "/" + std::to_string(pyr.levels) +
                                    " levels, spec asks " + wavelet_family_name(spec.family) + "/" +
                                    std::to_string(spec.levels));
    }
    const auto& h = detail::lowpass_taps(spec.family);
    const auto g = detail::highpass_taps(spec.family);

    std::vector<float> cur = pyr.approx();
    for (int level = spec.levels - 1; level >= 0; --level) {
        const WaveletLevel& lvl = pyr.level_data[static_cast<std::size_t>(level)];
        std::vector<float> block(dims_numel(lvl.padded_dims));
        for (int mask = 0; mask < 8; ++mask) {
            const std::vector<float>& band = (mask == 0) ? cur : lvl.bands[mask];
            if (band.size() != dims_numel(lvl.band_dims)) {
                throw std::invalid_argument("wavelet pyramid band " + std::to_string(mask) + " at level " +
                                            std::to_string(level) + " has wrong size");
            }
            const int ox = (mask & 1) ? lvl.band_dims[0] : 0;
            const int oy = (mask & 2) ? lvl.band_dims[1] : 0;
            const int oz = (mask & 4) ? lvl.band_dims[2] : 0;
            for (int z = 0; z < lvl.band_dims[2]; ++z) {
                for (int y = 0; y < lvl.band_dims[1]; ++y) {
                    for (int x = 0; x < lvl.band_dims[0]; ++x) {
                        block[detail::block_index(lvl.padded_dims, ox + x, oy + y, oz + z)] =
                            band[detail::block_index(lvl.band_dims, x, y, z)];
                    }
                }
            }
        }

        std::vector<float> work(block.size());
        for (int axis = 2; axis >= 0; --axis) {
            detail::for_each_line(lvl.padded_dims, axis, [&](std::size_t base, std::size_t stride) {
                detail::synthesize_line(block.data() + base, stride, lvl.padded_dims[axis], h, g, work.data() + base,
                                        stride);
            });
            std::swap(block, work);
        }

        if (lvl.padded_dims != lvl.in_dims) {
            std::vector<float> cropped(dims_numel(lvl.in_dims));
            for (int z = 0; z < lvl.in_dims[2]; ++z) {
                for (int y = 0; y < lvl.in_dims[1]; ++y) {
                    for (int x = 0; x < lvl.in_dims[0]; ++x) {
                        cropped[detail::block_index(lvl.in_dims, x, y, z)] =
                            block[detail::block_index(lvl.padded_dims, x, y, z)];
                    }
                }
            }
            block = std::move(cropped);
        }
        cur = std::move(block);
    }

    Volume out(pyr.dims, pyr.spacing);
    out.data = std::move(cur);
    return out;
}

// Donoho-Johnstone universal threshold: sigma estimated from the median
// absolute deviation of the finest-level detail coefficients.
inline float universal_threshold(const WaveletPyramid& pyr) {
    std::vector<float> mags;
    const WaveletLevel& finest = pyr.level_data.front();
    for (int mask = 1; mask < 8; ++mask) {
        for (float c : finest.bands[mask]) mags.push_back(std::fabs(c));
    }
    if (mags.empty()) return 0.0f;
    auto mid = mags.begin() + static_cast<std::ptrdiff_t>(mags.size() / 2);
    std::nth_element(mags.begin(), mid, mags.end());
    const double sigma = static_cast<double>(*mid) / 0.6745;
    const double n = static_cast<double>(dims_numel(pyr.dims));
    return static_cast<float>(sigma * std::sqrt(2.0 * std::log(std::max(n, 2.0))));
}

inline Volume wavelet_denoise(const Volume& vol, const WaveletSpec& spec) {
    WaveletPyramid pyr = dwt3d(vol, spec);
    if (spec.threshold_rule != ThresholdRule::none) {
        const float t = spec.threshold >= 0.0f ? spec.threshold : universal_threshold(pyr);
        for (WaveletLevel& lvl : pyr.level_data) {
            for (int mask = 1; mask < 8; ++mask) {
                for (float& c : lvl.bands[mask]) {
                    if (spec.threshold_rule == ThresholdRule::soft) {
                        const float mag = std::fabs(c) - t;
                        c = mag > 0.0f ? std::copysign(mag, c) : 0.0f;
                    } else {
                        if (std::fabs(c) <= t) c = 0.0f;
                    }
                }
            }
        }
    }
    Volume out = idwt3d(pyr, spec);
    const auto [lo, hi] = std::minmax_element(vol.data.begin(), vol.data.end());
    for (float& v : out.data) v = std::clamp(v, *lo, *hi);
    return out;
}

}  // namespace echosynth::postproc
