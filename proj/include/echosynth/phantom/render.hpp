#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "echosynth/engine/rng.hpp"
#include "echosynth/postproc/cone.hpp"
#include "echosynth/volume.hpp"

// Deterministic pseudo-ultrasound renderer. It is a lookalike generator, not
// a physics simulator: per-class base intensity, multiplicative lognormal
// speckle with a configurable correlation length, exponential depth
// attenuation, and the sector cone mask.

namespace echosynth::phantom {

struct RenderParams {
    float mean_background = 0.35f;
    float mean_blood = 0.15f;  // LV and LA cavities
    float mean_myo = 0.70f;
    float speckle_sigma = 0.4f;        // lognormal sigma
    float speckle_corr_voxels = 2.0f;  // Gaussian correlation length
    float attenuation_per_mm = 0.004f;
};

namespace detail {

// Separable Gaussian blur with clamp-to-edge sampling, followed by a global
// rescale so the interior of the field keeps unit variance.
inline void correlate_field(std::vector<float>& field, const Dims3& dims, float corr_voxels) {
    if (corr_voxels <= 0.0f) return;
    const double sigma = 0.5 * corr_voxels;
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> w(static_cast<std::size_t>(2 * radius + 1));
    double wsum = 0.0;
    for (int k = -radius; k <= radius; ++k) {
        w[static_cast<std::size_t>(k + radius)] = std::exp(-0.5 * (k / sigma) * (k / sigma));
        wsum += w[static_cast<std::size_t>(k + radius)];
    }
    double w2sum = 0.0;
    for (auto& v : w) {
        v /= wsum;
        w2sum += v * v;
    }

    std::vector<float> tmp(field.size());
    const std::size_t strides[3] = {1, static_cast<std::size_t>(dims[0]),
                                    static_cast<std::size_t>(dims[0]) * dims[1]};
    for (int axis = 0; axis < 3; ++axis) {
        const int n = dims[axis];
        const int a1 = axis == 0 ? 1 : 0;
        const int a2 = axis == 2 ? 1 : 2;
        for (int j2 = 0; j2 < dims[a2]; ++j2) {
            for (int j1 = 0; j1 < dims[a1]; ++j1) {
                const std::size_t base = strides[a1] * static_cast<std::size_t>(j1) +
                                         strides[a2] * static_cast<std::size_t>(j2);
                for (int i = 0; i < n; ++i) {
                    double acc = 0.0;
                    for (int k = -radius; k <= radius; ++k) {
                        const int src = std::clamp(i + k, 0, n - 1);
                        acc += w[static_cast<std::size_t>(k + radius)] *
                               field[base + strides[axis] * static_cast<std::size_t>(src)];
                    }
                    tmp[base + strides[axis] * static_cast<std::size_t>(i)] = static_cast<float>(acc);
                }
            }
        }
        std::swap(field, tmp);
    }
    const float rescale = static_cast<float>(1.0 / std::sqrt(w2sum * w2sum * w2sum));
    for (float& v : field) v *= rescale;
}

}  // namespace detail

inline Volume render_pseudo_ultrasound(const LabelVolume& labels, const postproc::ConeSpec& cone,
                                       const RenderParams& params, std::uint64_t seed) {
    const Volume mask = postproc::make_cone_mask(labels.dims, labels.spacing, cone);
    const postproc::detail::ConeFrame frame = postproc::detail::make_frame(cone, labels.spacing);

    std::vector<float> field(labels.numel());
    engine::Rng rng(engine::hash_combine(seed, 0x72656e646572ULL));
    for (float& v : field) v = static_cast<float>(rng.normal());
    detail::correlate_field(field, labels.dims, params.speckle_corr_voxels);

    const float class_mean[4] = {params.mean_background, params.mean_blood, params.mean_blood, params.mean_myo};
    const float half_sigma2 = 0.5f * params.speckle_sigma * params.speckle_sigma;

    Volume out(labels.dims, labels.spacing);
    std::size_t i = 0;
    for (int z = 0; z < labels.dims[2]; ++z) {
        for (int y = 0; y < labels.dims[1]; ++y) {
            for (int x = 0; x < labels.dims[0]; ++x, ++i) {
                const double px = (x + 0.5) * labels.spacing[0] - frame.apex_mm[0];
                const double py = (y + 0.5) * labels.spacing[1] - frame.apex_mm[1];
                const double pz = (z + 0.5) * labels.spacing[2] - frame.apex_mm[2];
                const double depth = std::max(0.0, px * frame.axis[0] + py * frame.axis[1] + pz * frame.axis[2]);

                const float speckle = std::exp(params.speckle_sigma * field[i] - half_sigma2);
                const float attenuation = std::exp(-params.attenuation_per_mm * static_cast<float>(depth));
                const float value = class_mean[labels.classes[i]] * speckle * attenuation * mask.data[i];
                out.data[i] = std::clamp(value, 0.0f, 1.0f);
            }
        }
    }
    return out;
}

}  // namespace echosynth::phantom
