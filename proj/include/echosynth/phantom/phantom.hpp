#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

#include "echosynth/engine/rng.hpp"
#include "echosynth/volume.hpp"

// Parametric heart phantom: an LV ellipsoid wrapped by a myocardial shell,
// with the LA as a second ellipsoid past the base plane at the top of the LV
// long axis. All geometry lives in a local frame whose z axis is the long
// axis; a pose (Euler rotation + translation) places it in the volume.

namespace echosynth::phantom {

struct Pose {
    std::array<float, 3> rotation{0.0f, 0.0f, 0.0f};     // radians, applied Rz*Ry*Rx
    std::array<float, 3> translation{0.0f, 0.0f, 0.0f};  // mm
};

struct HeartPhantomParams {
    std::array<float, 3> lv_semi_axes{22.0f, 22.0f, 28.0f};  // mm
    float myo_thickness = 8.0f;                              // mm
    std::array<float, 3> la_semi_axes{17.0f, 17.0f, 12.0f};  // mm
    std::array<float, 3> la_offset{0.0f, 0.0f, 0.0f};        // mm, from the long axis
    Pose pose;
    std::uint64_t seed = 0;
};

namespace detail {

using Mat3 = std::array<std::array<double, 3>, 3>;

// Trig carried out on |angle| with the sign reapplied keeps the matrix for a
// negated angle an exact sign-flip of the original, which mirror-symmetry
// tests rely on.
inline Mat3 rotation_matrix(const std::array<float, 3>& euler) {
    const double cx = std::cos(std::fabs(double(euler[0])));
    const double sx = std::copysign(std::sin(std::fabs(double(euler[0]))), double(euler[0]));
    const double cy = std::cos(std::fabs(double(euler[1])));
    const double sy = std::copysign(std::sin(std::fabs(double(euler[1]))), double(euler[1]));
    const double cz = std::cos(std::fabs(double(euler[2])));
    const double sz = std::copysign(std::sin(std::fabs(double(euler[2]))), double(euler[2]));
    const Mat3 rx{{{1, 0, 0}, {0, cx, -sx}, {0, sx, cx}}};
    const Mat3 ry{{{cy, 0, sy}, {0, 1, 0}, {-sy, 0, cy}}};
    const Mat3 rz{{{cz, -sz, 0}, {sz, cz, 0}, {0, 0, 1}}};
    auto mul = [](const Mat3& a, const Mat3& b) {
        Mat3 m{};
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                for (int k = 0; k < 3; ++k) m[i][j] += a[i][k] * b[k][j];
        return m;
    };
    return mul(rz, mul(ry, rx));
}

inline double ellipsoid_metric(const std::array<double, 3>& p, const std::array<float, 3>& semi) {
    const double u = p[0] / semi[0], v = p[1] / semi[1], w = p[2] / semi[2];
    return u * u + v * v + w * w;
}

struct PhantomFrame {
    Mat3 rot;                        // local -> volume directions
    std::array<double, 3> center;    // mm, volume coordinates
    std::array<float, 3> la_center;  // mm, local coordinates
    float z_base;                    // mm, local junction plane
};

// The LA center sits past the LV top so the two ellipsoids cannot intersect;
// the junction plane is the LV top itself.
inline PhantomFrame make_frame(const HeartPhantomParams& params, const Dims3& dims, const Spacing3& spacing) {
    PhantomFrame f;
    f.rot = rotation_matrix(params.pose.rotation);
    f.center = {0.5 * dims[0] * spacing[0] + params.pose.translation[0],
                0.5 * dims[1] * spacing[1] + params.pose.translation[1],
                0.44 * dims[2] * spacing[2] + params.pose.translation[2]};
    f.z_base = params.lv_semi_axes[2];
    f.la_center = {params.la_offset[0], params.la_offset[1],
                   params.lv_semi_axes[2] + 0.4f * params.la_semi_axes[2] + params.la_offset[2]};
    return f;
}

// Conservative axis-aligned bounds of a posed ellipsoid: half-extent along
// world axis i is sqrt(sum_j (R_ij * semi_j)^2).
inline void check_structure_bounds(const char* name, const PhantomFrame& f, const std::array<float, 3>& local_center,
                                   const std::array<float, 3>& semi, const Dims3& dims, const Spacing3& spacing) {
    std::array<double, 3> center;
    for (int i = 0; i < 3; ++i) {
        center[i] = f.center[i] + f.rot[i][0] * local_center[0] + f.rot[i][1] * local_center[1] +
                    f.rot[i][2] * local_center[2];
    }
    for (int i = 0; i < 3; ++i) {
        double half = 0.0;
        for (int j = 0; j < 3; ++j) half += (f.rot[i][j] * semi[j]) * (f.rot[i][j] * semi[j]);
        half = std::sqrt(half);
        const double extent = dims[i] * spacing[i];
        if (center[i] - half < 0.0 || center[i] + half > extent) {
            throw std::invalid_argument(std::string(name) + " exceeds the volume bounds along axis " +
                                        std::to_string(i) + " (needs [" + std::to_string(center[i] - half) + ", " +
                                        std::to_string(center[i] + half) + "] mm of " + std::to_string(extent) +
                                        " mm)");
        }
    }
}

inline void validate_params(const HeartPhantomParams& params, const Spacing3& spacing) {
    for (float s : params.lv_semi_axes)
        if (!(s > 0.0f)) throw std::invalid_argument("LV semi axes must be positive");
    for (float s : params.la_semi_axes)
        if (!(s > 0.0f)) throw std::invalid_argument("LA semi axes must be positive");
    const float voxel = std::max({spacing[0], spacing[1], spacing[2]});
    if (!(params.myo_thickness >= voxel)) {
        throw std::invalid_argument("myo_thickness " + std::to_string(params.myo_thickness) +
                                    " mm is thinner than one voxel (" + std::to_string(voxel) +
                                    " mm at this spacing)");
    }
}

}  // namespace detail

inline LabelVolume generate_phantom_labels(const HeartPhantomParams& params, const Dims3& dims,
                                           const Spacing3& spacing) {
    detail::validate_params(params, spacing);
    const detail::PhantomFrame f = detail::make_frame(params, dims, spacing);

    const std::array<float, 3> shell_semi = {params.lv_semi_axes[0] + params.myo_thickness,
                                             params.lv_semi_axes[1] + params.myo_thickness,
                                             params.lv_semi_axes[2] + params.myo_thickness};
    detail::check_structure_bounds("LV", f, {0, 0, 0}, params.lv_semi_axes, dims, spacing);
    detail::check_structure_bounds("MYO", f, {0, 0, 0}, shell_semi, dims, spacing);
    detail::check_structure_bounds("LA", f, f.la_center, params.la_semi_axes, dims, spacing);

    LabelVolume labels(dims, spacing);
    for (int z = 0; z < dims[2]; ++z) {
        for (int y = 0; y < dims[1]; ++y) {
            for (int x = 0; x < dims[0]; ++x) {
                const std::array<double, 3> d = {(x + 0.5) * spacing[0] - f.center[0],
                                                 (y + 0.5) * spacing[1] - f.center[1],
                                                 (z + 0.5) * spacing[2] - f.center[2]};
                // rows of R transpose map volume offsets into the local frame
                const std::array<double, 3> p = {
                    f.rot[0][0] * d[0] + f.rot[1][0] * d[1] + f.rot[2][0] * d[2],
                    f.rot[0][1] * d[0] + f.rot[1][1] * d[1] + f.rot[2][1] * d[2],
                    f.rot[0][2] * d[0] + f.rot[1][2] * d[1] + f.rot[2][2] * d[2]};

                std::uint8_t id = kBackground;
                if (detail::ellipsoid_metric(p, params.lv_semi_axes) <= 1.0) {
                    id = kLV;
                } else if (p[2] >= f.z_base &&
                           detail::ellipsoid_metric({p[0] - f.la_center[0], p[1] - f.la_center[1],
                                                     p[2] - f.la_center[2]},
                                                    params.la_semi_axes) <= 1.0) {
                    id = kLA;
                } else if (p[2] < f.z_base && detail::ellipsoid_metric(p, shell_semi) <= 1.0) {
                    id = kMYO;
                }
                labels.at(x, y, z) = id;
            }
        }
    }
    return labels;
}

// Draws anatomy and pose variation around the defaults. The ranges are sized
// so every draw stays inside the default 128 x 128 x 96 mm field of view.
inline HeartPhantomParams randomized_params(std::uint64_t seed) {
    engine::Rng rng(engine::hash_combine(seed, 0x70686e746dULL));
    HeartPhantomParams p;
    p.seed = seed;
    p.lv_semi_axes = {float(rng.uniform(18.0, 25.0)), float(rng.uniform(18.0, 25.0)), float(rng.uniform(24.0, 30.0))};
    p.myo_thickness = float(rng.uniform(6.5, 9.0));
    const float la_lat = float(rng.uniform(14.0, 19.0));
    p.la_semi_axes = {la_lat, la_lat * float(rng.uniform(0.9, 1.1)), float(rng.uniform(10.0, 13.0))};
    p.la_offset = {float(rng.uniform(-3.0, 3.0)), float(rng.uniform(-3.0, 3.0)), float(rng.uniform(-2.0, 1.0))};
    p.pose.rotation = {float(rng.uniform(-0.12, 0.12)), float(rng.uniform(-0.12, 0.12)),
                       float(rng.uniform(-0.4, 0.4))};
    p.pose.translation = {float(rng.uniform(-5.0, 5.0)), float(rng.uniform(-5.0, 5.0)),
                          float(rng.uniform(-1.0, 1.0))};
    return p;
}

}  // namespace echosynth::phantom
