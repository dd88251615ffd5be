#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "echosynth/volume.hpp"

// Binary PGM (P5) export of single slices, for eyeballing volumes without a
// medical image viewer.

namespace echosynth::pipeline {

inline void save_pgm(const std::string& path, const std::vector<std::uint8_t>& pixels, int width, int height) {
    if (width <= 0 || height <= 0 || pixels.size() != static_cast<std::size_t>(width) * height) {
        throw std::invalid_argument("save_pgm: pixel buffer does not match " + std::to_string(width) + "x" +
                                    std::to_string(height));
    }
    std::filesystem::path p(path);
    if (p.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(p.parent_path(), ec);
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("save_pgm: cannot open " + path);
    f << "P5\n" << width << " " << height << "\n255\n";
    f.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
    if (!f) throw std::runtime_error("save_pgm: short write to " + path);
}

// Extracts the z slice (intensities clamped to [0,1] then scaled to 0..255).
inline void save_slice_pgm(const Volume& vol, int z, const std::string& path) {
    if (z < 0 || z >= vol.dims[2]) {
        throw std::invalid_argument("save_slice_pgm: slice " + std::to_string(z) + " outside 0.." +
                                    std::to_string(vol.dims[2] - 1));
    }
    std::vector<std::uint8_t> pixels(static_cast<std::size_t>(vol.dims[0]) * vol.dims[1]);
    for (int y = 0; y < vol.dims[1]; ++y) {
        for (int x = 0; x < vol.dims[0]; ++x) {
            float v = std::clamp(vol.at(x, y, z), 0.0f, 1.0f);
            pixels[static_cast<std::size_t>(y) * vol.dims[0] + x] = static_cast<std::uint8_t>(v * 255.0f + 0.5f);
        }
    }
    save_pgm(path, pixels, vol.dims[0], vol.dims[1]);
}

// Class ids spread over the gray range so all four are distinguishable.
inline void save_slice_pgm(const LabelVolume& labels, int z, const std::string& path) {
    if (z < 0 || z >= labels.dims[2]) {
        throw std::invalid_argument("save_slice_pgm: slice " + std::to_string(z) + " outside 0.." +
                                    std::to_string(labels.dims[2] - 1));
    }
    std::vector<std::uint8_t> pixels(static_cast<std::size_t>(labels.dims[0]) * labels.dims[1]);
    for (int y = 0; y < labels.dims[1]; ++y) {
        for (int x = 0; x < labels.dims[0]; ++x) {
            pixels[static_cast<std::size_t>(y) * labels.dims[0] + x] =
                static_cast<std::uint8_t>(labels.at(x, y, z) * 85);
        }
    }
    save_pgm(path, pixels, labels.dims[0], labels.dims[1]);
}

inline void save_mid_slice_pgm(const Volume& vol, const std::string& path) {
    save_slice_pgm(vol, vol.dims[2] / 2, path);
}

inline void save_mid_slice_pgm(const LabelVolume& labels, const std::string& path) {
    save_slice_pgm(labels, labels.dims[2] / 2, path);
}

}  // namespace echosynth::pipeline
