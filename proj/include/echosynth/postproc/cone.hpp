#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

#include "echosynth/volume.hpp"

// Ultrasound sector geometry: a pyramidal cone defined by an apex, a beam
// axis, two angular half-apertures (lateral and elevation) and a depth range.
// make_cone_mask rasterizes it as a soft-edged [0,1] mask.

namespace echosynth::postproc {

struct ConeSpec {
    std::array<float, 3> apex{0.0f, 0.0f, 0.0f};  // voxel coordinates
    std::array<float, 3> axis{0.0f, 0.0f, 1.0f};  // normalized internally
    float half_angle_lateral = 0.69813170f;       // 40 degrees
    float half_angle_elevation = 0.69813170f;
    float depth_min = 4.0f;   // mm
    float depth_max = 92.0f;  // mm
    float edge_softness = 1.5f;  // ramp width in voxels
};

// Apex centered on the top face, beam pointing down the z axis, depth range
// covering most of the volume.
inline ConeSpec default_cone_for(const Dims3& dims, const Spacing3& spacing) {
    ConeSpec spec;
    spec.apex = {0.5f * dims[0], 0.5f * dims[1], 0.0f};
    const float z_extent = dims[2] * spacing[2];
    spec.depth_min = 0.04f * z_extent;
    spec.depth_max = 0.96f * z_extent;
    return spec;
}

namespace detail {

struct ConeFrame {
    std::array<double, 3> apex_mm;
    std::array<double, 3> axis;  // unit
    std::array<double, 3> u1;    // lateral
    std::array<double, 3> u2;    // elevation
};

inline std::array<double, 3> cross3(const std::array<double, 3>& a, const std::array<double, 3>& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

inline double dot3(const std::array<double, 3>& a, const std::array<double, 3>& b) {
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

inline ConeFrame make_frame(const ConeSpec& spec, const Spacing3& spacing) {
    std::array<double, 3> axis = {spec.axis[0], spec.axis[1], spec.axis[2]};
    const double norm = std::sqrt(dot3(axis, axis));
    if (norm < 1e-9) throw std::invalid_argument("cone axis is a zero vector");
    for (double& c : axis) c /= norm;

    // Any helper not parallel to the axis fixes the lateral direction.
    std::array<double, 3> helper = std::fabs(axis[2]) < 0.999 ? std::array<double, 3>{0, 0, 1}
                                                              : std::array<double, 3>{0, 1, 0};
    std::array<double, 3> u1 = cross3(helper, axis);
    const double n1 = std::sqrt(dot3(u1, u1));
    for (double& c : u1) c /= n1;
    std::array<double, 3> u2 = cross3(axis, u1);

    ConeFrame f;
    f.apex_mm = {spec.apex[0] * spacing[0], spec.apex[1] * spacing[1], spec.apex[2] * spacing[2]};
    f.axis = axis;
    f.u1 = u1;
    f.u2 = u2;
    return f;
}

inline void validate_cone(const ConeSpec& spec, const Dims3& dims) {
    constexpr double half_pi = 1.5707963267948966;
    if (!(spec.half_angle_lateral > 0.0f) || spec.half_angle_lateral >= half_pi ||
        !(spec.half_angle_elevation > 0.0f) || spec.half_angle_elevation >= half_pi) {
        throw std::invalid_argument("cone half angles must lie in (0, pi/2)");
    }
    if (!(spec.depth_min < spec.depth_max)) {
        throw std::invalid_argument("cone depth_min must be smaller than depth_max");
    }
    if (spec.edge_softness < 0.0f) throw std::invalid_argument("cone edge_softness must be >= 0");
    for (int i = 0; i < 3; ++i) {
        if (spec.apex[i] < 0.0f || spec.apex[i] > static_cast<float>(dims[i])) {
            throw std::invalid_argument("cone apex lies outside the volume on axis " + std::to_string(i));
        }
    }
}

}  // namespace detail

inline Volume make_cone_mask(const Dims3& dims, const Spacing3& spacing, const ConeSpec& spec) {
    detail::validate_cone(spec, dims);
    const detail::ConeFrame f = detail::make_frame(spec, spacing);

    const float min_spacing = std::min({spacing[0], spacing[1], spacing[2]});
    const double ramp_mm = static_cast<double>(spec.edge_softness) * min_spacing;

    Volume mask(dims, spacing);
    for (int z = 0; z < dims[2]; ++z) {
        for (int y = 0; y < dims[1]; ++y) {
            for (int x = 0; x < dims[0]; ++x) {
                const std::array<double, 3> p = {(x + 0.5) * spacing[0] - f.apex_mm[0],
                                                 (y + 0.5) * spacing[1] - f.apex_mm[1],
                                                 (z + 0.5) * spacing[2] - f.apex_mm[2]};
                const double depth = detail::dot3(p, f.axis);
                const double t1 = detail::dot3(p, f.u1);
                const double t2 = detail::dot3(p, f.u2);

                // Signed mm distances to the four cone faces, positive inside.
                // The angular faces use arc length at the voxel's radius.
                const double s_near = depth - spec.depth_min;
                const double s_far = spec.depth_max - depth;
                const double a1 = std::atan2(std::fabs(t1), depth);
                const double a2 = std::atan2(std::fabs(t2), depth);
                const double s_lat = (spec.half_angle_lateral - a1) * std::hypot(depth, t1);
                const double s_elev = (spec.half_angle_elevation - a2) * std::hypot(depth, t2);
                const double signed_dist = std::min(std::min(s_near, s_far), std::min(s_lat, s_elev));

                float value;
                if (spec.edge_softness == 0.0f) {
                    value = signed_dist >= 0.0 ? 1.0f : 0.0f;
                } else {
                    value = static_cast<float>(std::clamp(signed_dist / ramp_mm, 0.0, 1.0));
                }
                mask.at(x, y, z) = value;
            }
        }
    }
    return mask;
}

inline Volume apply_cone(const Volume& vol, const Volume& mask, float fill) {
    check_same_grid(vol.dims, mask.dims, "apply_cone");
    if (!(fill >= 0.0f && fill <= 1.0f)) {
        throw std::invalid_argument("apply_cone fill must lie in [0,1], got " + std::to_string(fill));
    }
    Volume out(vol.dims, vol.spacing);
    for (std::size_t i = 0; i < vol.data.size(); ++i) {
        const float m = mask.data[i];
        out.data[i] = m * vol.data[i] + (1.0f - m) * fill;
    }
    return out;
}

}  // namespace echosynth::postproc
