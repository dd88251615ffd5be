#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "echosynth/engine/rng.hpp"
#include "echosynth/engine/tensor.hpp"
#include "echosynth/nets/patchgan.hpp"
#include "echosynth/nets/unet3d.hpp"

// CKP1 network checkpoint container.
//
// Layout, little-endian throughout:
//   bytes 0..3  magic "CKP1"
//   byte  4     payload kind, u8: 0 = one u-net, 1 = generator + discriminator
//   then one network block per net, in that order.
//
// U-net block:
//   u8 tag = 0, i32 levels, i32 base_channels, u8 upsample (0 = transposed,
//   1 = trilinear), i32 in_channels, i32 out_channels, u8 tanh_output
// Discriminator block:
//   u8 tag = 1, i32 layers, i32 base_channels, i32 in_channels
// Either block continues with:
//   u32 parameter count, then per parameter: u32 name length, name bytes,
//   u8 ndim, u32 extents, f32 values
//
// Loading rebuilds the net from its recorded config and requires the stored
// parameters to match the rebuilt net name-for-name and shape-for-shape, so
// a checkpoint from a different architecture is rejected rather than
// partially applied.

namespace echosynth::pipeline {

namespace detail {

inline void ck_put_u8(std::string& out, std::uint8_t v) { out.push_back(char(v)); }

inline void ck_put_u32(std::string& out, std::uint32_t v) {
    out.push_back(char(v & 0xff));
    out.push_back(char((v >> 8) & 0xff));
    out.push_back(char((v >> 16) & 0xff));
    out.push_back(char((v >> 24) & 0xff));
}

inline void ck_put_i32(std::string& out, std::int32_t v) { ck_put_u32(out, static_cast<std::uint32_t>(v)); }

inline void ck_put_f32(std::string& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    ck_put_u32(out, bits);
}

class CkReader {
  public:
    CkReader(std::vector<unsigned char> bytes, std::string path)
        : bytes_(std::move(bytes)), path_(std::move(path)) {}

    std::uint8_t u8() {
        need(1);
        return bytes_[pos_++];
    }

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = std::uint32_t(bytes_[pos_]) | (std::uint32_t(bytes_[pos_ + 1]) << 8) |
                          (std::uint32_t(bytes_[pos_ + 2]) << 16) | (std::uint32_t(bytes_[pos_ + 3]) << 24);
        pos_ += 4;
        return v;
    }

    std::int32_t i32() { return static_cast<std::int32_t>(u32()); }

    float f32() {
        const std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }

    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    void f32_block(float* dst, std::size_t count) {
        need(count * 4);
        for (std::size_t i = 0; i < count; ++i) {
            std::uint32_t bits = std::uint32_t(bytes_[pos_]) | (std::uint32_t(bytes_[pos_ + 1]) << 8) |
                                 (std::uint32_t(bytes_[pos_ + 2]) << 16) | (std::uint32_t(bytes_[pos_ + 3]) << 24);
            std::memcpy(dst + i, &bits, 4);
            pos_ += 4;
        }
    }

    bool at_end() const { return pos_ == bytes_.size(); }

    void expect_end() const {
        if (!at_end()) throw std::runtime_error("checkpoint has trailing bytes: " + path_);
    }

  private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw std::runtime_error("checkpoint is truncated: " + path_);
    }

    std::vector<unsigned char> bytes_;
    std::string path_;
    std::size_t pos_ = 0;
};

inline void ck_write_params(std::string& out, const std::vector<std::pair<std::string, engine::Tensor>>& params) {
    ck_put_u32(out, static_cast<std::uint32_t>(params.size()));
    for (const auto& [name, t] : params) {
        ck_put_u32(out, static_cast<std::uint32_t>(name.size()));
        out.append(name);
        ck_put_u8(out, static_cast<std::uint8_t>(t.ndim()));
        for (int i = 0; i < t.ndim(); ++i) ck_put_u32(out, static_cast<std::uint32_t>(t.dim(i)));
        const float* v = t.data();
        for (std::int64_t i = 0; i < t.numel(); ++i) ck_put_f32(out, v[i]);
    }
}

// Copies stored values into the freshly built net's parameter tensors, which
// alias its internal storage.
inline void ck_read_params(CkReader& r, std::vector<std::pair<std::string, engine::Tensor>> params) {
    const std::uint32_t n = r.u32();
    if (n != params.size()) {
        throw std::runtime_error("checkpoint parameter count " + std::to_string(n) + " does not match the " +
                                 std::to_string(params.size()) + " parameters of the rebuilt net");
    }
    for (auto& [name, t] : params) {
        const std::string stored = r.str(r.u32());
        if (stored != name) {
            throw std::runtime_error("checkpoint parameter '" + stored + "' does not match expected '" + name + "'");
        }
        const int ndim = r.u8();
        engine::Shape shape(static_cast<std::size_t>(ndim));
        for (int i = 0; i < ndim; ++i) shape[static_cast<std::size_t>(i)] = static_cast<int>(r.u32());
        if (shape != t.shape()) {
            throw std::runtime_error("checkpoint parameter '" + name + "' has a mismatched shape");
        }
        r.f32_block(t.data(), static_cast<std::size_t>(t.numel()));
    }
}

inline void ck_write_unet(std::string& out, const nets::UNet3d& net) {
    const nets::GeneratorConfig& c = net.config();
    ck_put_u8(out, 0);
    ck_put_i32(out, c.levels);
    ck_put_i32(out, c.base_channels);
    ck_put_u8(out, c.upsample_mode == nets::UpsampleMode::trilinear ? 1 : 0);
    ck_put_i32(out, c.in_channels);
    ck_put_i32(out, c.out_channels);
    ck_put_u8(out, c.tanh_output ? 1 : 0);
    ck_write_params(out, net.params());
}

inline nets::UNet3d ck_read_unet(CkReader& r) {
    if (r.u8() != 0) throw std::runtime_error("checkpoint block is not a u-net");
    nets::GeneratorConfig c;
    c.levels = r.i32();
    c.base_channels = r.i32();
    const std::uint8_t up = r.u8();
    if (up > 1) throw std::runtime_error("checkpoint has an unknown upsample mode code");
    c.upsample_mode = up == 1 ? nets::UpsampleMode::trilinear : nets::UpsampleMode::transposed;
    c.in_channels = r.i32();
    c.out_channels = r.i32();
    c.tanh_output = r.u8() != 0;
    engine::Rng rng(0);
    nets::UNet3d net(c, rng);
    ck_read_params(r, net.params());
    return net;
}

inline void ck_write_patchgan(std::string& out, const nets::PatchGan& net) {
    const nets::DiscriminatorConfig& c = net.config();
    ck_put_u8(out, 1);
    ck_put_i32(out, c.layers);
    ck_put_i32(out, c.base_channels);
    ck_put_i32(out, c.in_channels);
    ck_write_params(out, net.params());
}

inline nets::PatchGan ck_read_patchgan(CkReader& r) {
    if (r.u8() != 1) throw std::runtime_error("checkpoint block is not a discriminator");
    nets::DiscriminatorConfig c;
    c.layers = r.i32();
    c.base_channels = r.i32();
    c.in_channels = r.i32();
    engine::Rng rng(0);
    nets::PatchGan net(c, rng);
    ck_read_params(r, net.params());
    return net;
}

inline void ck_write_file(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open checkpoint for writing: " + path.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f.good()) throw std::runtime_error("checkpoint write failed: " + path.string());
}

inline detail::CkReader ck_open(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open checkpoint: " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (bytes.size() < 5 || std::memcmp(bytes.data(), "CKP1", 4) != 0) {
        throw std::runtime_error("not a CKP1 checkpoint: " + path.string());
    }
    return detail::CkReader(std::move(bytes), path.string());
}

}  // namespace detail

inline void save_net_checkpoint(const nets::UNet3d& net, const std::filesystem::path& path) {
    std::string out = "CKP1";
    detail::ck_put_u8(out, 0);
    detail::ck_write_unet(out, net);
    detail::ck_write_file(path, out);
}

inline nets::UNet3d load_net_checkpoint(const std::filesystem::path& path) {
    detail::CkReader r = detail::ck_open(path);
    r.str(4);
    if (r.u8() != 0) throw std::runtime_error("checkpoint does not hold a single net: " + path.string());
    nets::UNet3d net = detail::ck_read_unet(r);
    r.expect_end();
    return net;
}

inline void save_gan_checkpoint(const nets::UNet3d& generator, const nets::PatchGan& discriminator,
                                const std::filesystem::path& path) {
    std::string out = "CKP1";
    detail::ck_put_u8(out, 1);
    detail::ck_write_unet(out, generator);
    detail::ck_write_patchgan(out, discriminator);
    detail::ck_write_file(path, out);
}

inline std::pair<nets::UNet3d, nets::PatchGan> load_gan_checkpoint(const std::filesystem::path& path) {
    detail::CkReader r = detail::ck_open(path);
    r.str(4);
    if (r.u8() != 1) throw std::runtime_error("checkpoint does not hold a generator/discriminator pair: " +
                                              path.string());
    nets::UNet3d gen = detail::ck_read_unet(r);
    nets::PatchGan disc = detail::ck_read_patchgan(r);
    r.expect_end();
    return {std::move(gen), std::move(disc)};
}

enum class CheckpointKind : std::uint8_t { single_net = 0, gan = 1 };

// Inspects the header only, so callers can pick the right loader.
inline CheckpointKind peek_checkpoint_kind(const std::filesystem::path& path) {
    detail::CkReader r = detail::ck_open(path);
    r.str(4);
    const std::uint8_t kind = r.u8();
    if (kind > 1) throw std::runtime_error("unknown checkpoint kind: " + path.string());
    return static_cast<CheckpointKind>(kind);
}

}  // namespace echosynth::pipeline
