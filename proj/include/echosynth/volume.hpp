#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "echosynth/engine/tensor.hpp"

namespace echosynth {

// Voxel class ids shared by the whole pipeline.
inline constexpr std::uint8_t kBackground = 0;
inline constexpr std::uint8_t kLV = 1;
inline constexpr std::uint8_t kLA = 2;
inline constexpr std::uint8_t kMYO = 3;
inline constexpr int kNumClasses = 4;

inline const char* class_name(std::uint8_t id) {
    switch (id) {
        case kBackground: return "background";
        case kLV: return "LV";
        case kLA: return "LA";
        case kMYO: return "MYO";
        default: return "invalid";
    }
}

using Dims3 = std::array<int, 3>;     // x, y, z extents
using Spacing3 = std::array<float, 3>;  // mm per voxel along x, y, z

inline std::size_t dims_numel(const Dims3& d) {
    if (d[0] <= 0 || d[1] <= 0 || d[2] <= 0) {
        throw std::invalid_argument("volume dims must be positive, got " + std::to_string(d[0]) + "x" +
                                    std::to_string(d[1]) + "x" + std::to_string(d[2]));
    }
    return static_cast<std::size_t>(d[0]) * static_cast<std::size_t>(d[1]) * static_cast<std::size_t>(d[2]);
}

// Scalar intensity volume. Data is stored x-fastest: index = (z*ny + y)*nx + x.
struct Volume {
    Dims3 dims{0, 0, 0};
    Spacing3 spacing{1.0f, 1.0f, 1.0f};
    std::vector<float> data;

    Volume() = default;
    Volume(Dims3 d, Spacing3 s) : dims(d), spacing(s), data(dims_numel(d), 0.0f) {}

    std::size_t numel() const { return data.size(); }

    std::size_t index(int x, int y, int z) const {
        return (static_cast<std::size_t>(z) * dims[1] + y) * dims[0] + x;
    }
    float& at(int x, int y, int z) { return data[index(x, y, z)]; }
    float at(int x, int y, int z) const { return data[index(x, y, z)]; }

    bool in_bounds(int x, int y, int z) const {
        return x >= 0 && x < dims[0] && y >= 0 && y < dims[1] && z >= 0 && z < dims[2];
    }
};

// Per-voxel class id volume, same layout as Volume.
struct LabelVolume {
    Dims3 dims{0, 0, 0};
    Spacing3 spacing{1.0f, 1.0f, 1.0f};
    std::vector<std::uint8_t> classes;

    LabelVolume() = default;
    LabelVolume(Dims3 d, Spacing3 s) : dims(d), spacing(s), classes(dims_numel(d), kBackground) {}

    std::size_t numel() const { return classes.size(); }

    std::size_t index(int x, int y, int z) const {
        return (static_cast<std::size_t>(z) * dims[1] + y) * dims[0] + x;
    }
    std::uint8_t& at(int x, int y, int z) { return classes[index(x, y, z)]; }
    std::uint8_t at(int x, int y, int z) const { return classes[index(x, y, z)]; }

    bool in_bounds(int x, int y, int z) const {
        return x >= 0 && x < dims[0] && y >= 0 && y < dims[1] && z >= 0 && z < dims[2];
    }
};

inline void validate_labels(const LabelVolume& labels) {
    for (std::size_t i = 0; i < labels.classes.size(); ++i) {
        if (labels.classes[i] >= kNumClasses) {
            throw std::runtime_error("label volume holds class id " + std::to_string(int(labels.classes[i])) +
                                     " at linear index " + std::to_string(i) + "; valid ids are 0..3");
        }
    }
}

inline void check_same_grid(const Dims3& a, const Dims3& b, const char* what) {
    if (a != b) {
        throw std::invalid_argument(std::string(what) + ": volume extents disagree, " + std::to_string(a[0]) + "x" +
                                    std::to_string(a[1]) + "x" + std::to_string(a[2]) + " vs " + std::to_string(b[0]) +
                                    "x" + std::to_string(b[1]) + "x" + std::to_string(b[2]));
    }
}

// Network tensors use [N, C, D, H, W] with D = z, H = y, W = x, so the
// flattened memory order matches Volume exactly.
inline engine::Tensor volume_to_tensor(const Volume& vol) {
    engine::Tensor t = engine::Tensor::zeros({1, 1, vol.dims[2], vol.dims[1], vol.dims[0]});
    std::copy(vol.data.begin(), vol.data.end(), t.data());
    return t;
}

inline Volume tensor_to_volume(const engine::Tensor& t, Spacing3 spacing) {
    if (t.ndim() != 5 || t.dim(0) != 1 || t.dim(1) != 1) {
        throw std::invalid_argument("tensor_to_volume expects shape [1,1,D,H,W], got " +
                                    engine::shape_str(t.shape()));
    }
    Volume vol({t.dim(4), t.dim(3), t.dim(2)}, spacing);
    const float* src = t.data();
    std::copy(src, src + vol.numel(), vol.data.begin());
    return vol;
}

// Generator input encoding: class ids mapped to evenly spaced intensities
// {0, 1/3, 2/3, 1}.
inline Volume labels_to_intensity(const LabelVolume& labels) {
    Volume vol(labels.dims, labels.spacing);
    for (std::size_t i = 0; i < labels.classes.size(); ++i) {
        vol.data[i] = static_cast<float>(labels.classes[i]) / 3.0f;
    }
    return vol;
}

inline std::size_t count_class(const LabelVolume& labels, std::uint8_t id) {
    std::size_t n = 0;
    for (std::uint8_t c : labels.classes) n += (c == id);
    return n;
}

}  // namespace echosynth
