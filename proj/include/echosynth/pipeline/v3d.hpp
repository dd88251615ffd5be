#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "echosynth/volume.hpp"

// V3D volume container.
//
// Header, 29 bytes total:
//   bytes 0..3   magic "V3D1"
//   byte  4      dtype code, u8: 0 = f32, 1 = u8
//   bytes 5..16  dims, 3 x u32 little-endian (x, y, z)
//   bytes 17..28 spacing, 3 x f32 little-endian (mm per voxel)
// Payload: dx*dy*dz elements, x-fastest order, little-endian.

namespace echosynth::pipeline {

enum class V3dErrorKind {
    io_failure,     // file unreadable or unwritable
    bad_magic,      // first four bytes are not "V3D1"
    unknown_dtype,  // dtype code outside {0, 1}
    truncated,      // file shorter than header + declared payload
    size_mismatch,  // file longer than header + declared payload
    wrong_dtype,    // caller asked for the other element type
};

inline const char* v3d_error_kind_name(V3dErrorKind k) {
    switch (k) {
        case V3dErrorKind::io_failure: return "io_failure";
        case V3dErrorKind::bad_magic: return "bad_magic";
        case V3dErrorKind::unknown_dtype: return "unknown_dtype";
        case V3dErrorKind::truncated: return "truncated";
        case V3dErrorKind::size_mismatch: return "size_mismatch";
        case V3dErrorKind::wrong_dtype: return "wrong_dtype";
    }
    return "unknown";
}

class V3dError : public std::runtime_error {
  public:
    V3dError(V3dErrorKind kind, const std::string& msg)
        : std::runtime_error(std::string(v3d_error_kind_name(kind)) + ": " + msg), kind_(kind) {}
    V3dErrorKind kind() const { return kind_; }

  private:
    V3dErrorKind kind_;
};

enum class V3dDtype : std::uint8_t { f32 = 0, u8 = 1 };

inline constexpr std::size_t kV3dHeaderBytes = 29;
inline constexpr char kV3dMagic[4] = {'V', '3', 'D', '1'};

namespace detail {

inline void put_u32le(std::string& out, std::uint32_t v) {
    out.push_back(char(v & 0xff));
    out.push_back(char((v >> 8) & 0xff));
    out.push_back(char((v >> 16) & 0xff));
    out.push_back(char((v >> 24) & 0xff));
}

inline void put_f32le(std::string& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32le(out, bits);
}

inline std::uint32_t get_u32le(const unsigned char* p) {
    return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
           (std::uint32_t(p[3]) << 24);
}

inline float get_f32le(const unsigned char* p) {
    std::uint32_t bits = get_u32le(p);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

inline std::string make_header(V3dDtype dtype, const Dims3& dims, const Spacing3& spacing) {
    std::string out;
    out.reserve(kV3dHeaderBytes);
    out.append(kV3dMagic, 4);
    out.push_back(char(static_cast<std::uint8_t>(dtype)));
    for (int d : dims) put_u32le(out, static_cast<std::uint32_t>(d));
    for (float s : spacing) put_f32le(out, s);
    return out;
}

inline void write_file(const std::string& path, const std::string& bytes) {
    std::filesystem::path p(path);
    if (p.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(p.parent_path(), ec);
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw V3dError(V3dErrorKind::io_failure, "cannot open " + path + " for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw V3dError(V3dErrorKind::io_failure, "short write to " + path);
}

inline std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw V3dError(V3dErrorKind::io_failure, "cannot open " + path + " for reading");
    std::streamsize size = f.tellg();
    f.seekg(0);
    std::vector<unsigned char> bytes(static_cast<std::size_t>(size));
    if (size > 0) f.read(reinterpret_cast<char*>(bytes.data()), size);
    if (!f) throw V3dError(V3dErrorKind::io_failure, "short read from " + path);
    return bytes;
}

struct ParsedHeader {
    V3dDtype dtype;
    Dims3 dims;
    Spacing3 spacing;
    std::size_t payload_bytes;
};

inline ParsedHeader parse_header(const std::vector<unsigned char>& bytes, const std::string& path) {
    if (bytes.size() < kV3dHeaderBytes) {
        throw V3dError(V3dErrorKind::truncated, path + " is " + std::to_string(bytes.size()) +
                                                    " bytes, shorter than the 29-byte header");
    }
    if (std::memcmp(bytes.data(), kV3dMagic, 4) != 0) {
        throw V3dError(V3dErrorKind::bad_magic, path + " does not start with \"V3D1\"");
    }
    const std::uint8_t code = bytes[4];
    if (code > 1) {
        throw V3dError(V3dErrorKind::unknown_dtype, path + " declares dtype code " + std::to_string(int(code)));
    }
    ParsedHeader h;
    h.dtype = static_cast<V3dDtype>(code);
    for (int i = 0; i < 3; ++i) {
        std::uint32_t e = get_u32le(bytes.data() + 5 + 4 * i);
        if (e == 0 || e > (1u << 24)) {
            throw V3dError(V3dErrorKind::size_mismatch,
                           path + " declares unusable extent " + std::to_string(e) + " on axis " + std::to_string(i));
        }
        h.dims[i] = static_cast<int>(e);
    }
    for (int i = 0; i < 3; ++i) h.spacing[i] = get_f32le(bytes.data() + 17 + 4 * i);
    const std::size_t elem = h.dtype == V3dDtype::f32 ? 4 : 1;
    h.payload_bytes = dims_numel(h.dims) * elem;
    const std::size_t expected = kV3dHeaderBytes + h.payload_bytes;
    if (bytes.size() < expected) {
        throw V3dError(V3dErrorKind::truncated, path + " holds " + std::to_string(bytes.size()) + " bytes but dims " +
                                                    std::to_string(h.dims[0]) + "x" + std::to_string(h.dims[1]) + "x" +
                                                    std::to_string(h.dims[2]) + " require " + std::to_string(expected));
    }
    if (bytes.size() > expected) {
        throw V3dError(V3dErrorKind::size_mismatch, path + " holds " + std::to_string(bytes.size()) +
                                                        " bytes but dims declare exactly " + std::to_string(expected));
    }
    return h;
}

}  // namespace detail

inline void save_volume(const Volume& vol, const std::string& path) {
    std::string bytes = detail::make_header(V3dDtype::f32, vol.dims, vol.spacing);
    bytes.resize(kV3dHeaderBytes + vol.data.size() * 4);
    std::memcpy(bytes.data() + kV3dHeaderBytes, vol.data.data(), vol.data.size() * 4);
    detail::write_file(path, bytes);
}

inline void save_labels(const LabelVolume& labels, const std::string& path) {
    std::string bytes = detail::make_header(V3dDtype::u8, labels.dims, labels.spacing);
    bytes.append(reinterpret_cast<const char*>(labels.classes.data()), labels.classes.size());
    detail::write_file(path, bytes);
}

inline V3dDtype peek_dtype(const std::string& path) {
    auto bytes = detail::read_file(path);
    return detail::parse_header(bytes, path).dtype;
}

inline Volume load_volume(const std::string& path) {
    auto bytes = detail::read_file(path);
    auto h = detail::parse_header(bytes, path);
    if (h.dtype != V3dDtype::f32) {
        throw V3dError(V3dErrorKind::wrong_dtype, path + " stores u8 labels, not an f32 intensity volume");
    }
    Volume vol(h.dims, h.spacing);
    std::memcpy(vol.data.data(), bytes.data() + kV3dHeaderBytes, h.payload_bytes);
    return vol;
}

inline LabelVolume load_labels(const std::string& path) {
    auto bytes = detail::read_file(path);
    auto h = detail::parse_header(bytes, path);
    if (h.dtype != V3dDtype::u8) {
        throw V3dError(V3dErrorKind::wrong_dtype, path + " stores an f32 intensity volume, not u8 labels");
    }
    LabelVolume labels(h.dims, h.spacing);
    std::memcpy(labels.classes.data(), bytes.data() + kV3dHeaderBytes, h.payload_bytes);
    validate_labels(labels);
    return labels;
}

}  // namespace echosynth::pipeline
