#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "echosynth/engine/adam.hpp"
#include "echosynth/engine/ops.hpp"
#include "echosynth/engine/rng.hpp"
#include "echosynth/nets/patchgan.hpp"
#include "echosynth/nets/unet3d.hpp"
#include "echosynth/volume.hpp"

// Conditional adversarial training of the label -> image generator against a
// patch discriminator, with on-the-fly rotation/blur augmentation, plus the
// checkerboard-artifact diagnostic used to compare the two decoder variants.

namespace echosynth::gan {

using engine::Rng;
using engine::Tape;
using engine::Tensor;

struct AugmentConfig {
    float blur_sigma_min = 0.0f;   // voxels, image only
    float blur_sigma_max = 1.0f;
    float rotation_range = 0.17453292f;  // radians, about the depth axis
    float probability = 0.5f;
};

struct GanTrainConfig {
    int epochs = 200;
    float lr = 2e-4f;
    float lambda_l1 = 100.0f;
    int batch_size = 1;
    std::uint64_t seed = 0;
    AugmentConfig augment;
};

struct TrainPair {
    Volume image;
    LabelVolume labels;
};

struct EpochStats {
    float loss_d;
    float loss_g;
    float l1_term;
};

struct GanLossTerms {
    Tensor loss_d;
    Tensor loss_g;
    Tensor l1_term;
};

inline void validate_augment_config(const AugmentConfig& a) {
    if (!(a.blur_sigma_min >= 0.0f && a.blur_sigma_max >= a.blur_sigma_min)) {
        throw std::invalid_argument("augment blur sigma range must satisfy 0 <= min <= max");
    }
    if (!(a.rotation_range >= 0.0f)) throw std::invalid_argument("augment rotation_range must be >= 0");
    if (!(a.probability >= 0.0f && a.probability <= 1.0f)) {
        throw std::invalid_argument("augment probability must lie in [0, 1]");
    }
}

inline void validate_train_config(const GanTrainConfig& t) {
    if (t.epochs < 1) throw std::invalid_argument("train config epochs must be >= 1");
    if (!(t.lr > 0.0f)) throw std::invalid_argument("train config lr must be > 0");
    if (!(t.lambda_l1 >= 0.0f)) throw std::invalid_argument("train config lambda_l1 must be >= 0");
    if (t.batch_size < 1) throw std::invalid_argument("train config batch_size must be >= 1");
    validate_augment_config(t.augment);
}

namespace detail {

inline void check_all_finite(const Tensor& t, const char* what) {
    const float* v = t.data();
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        if (!std::isfinite(v[i])) {
            throw std::invalid_argument(std::string(what) + " contains a non-finite value");
        }
    }
}

// 0.5 * (BCE(d_real, 1) + BCE(d_fake, 0))
inline Tensor discriminator_loss(const Tensor& d_real, const Tensor& d_fake, Tape* tape) {
    Tensor a = engine::bce_with_logits_mean(d_real, 1.0f, tape);
    Tensor b = engine::bce_with_logits_mean(d_fake, 0.0f, tape);
    return engine::scale(engine::add(a, b, tape), 0.5f, tape);
}

// BCE(d_fake, 1) + lambda * mean|fake - target|; also returns the bare L1
inline std::pair<Tensor, Tensor> generator_loss(const Tensor& d_fake, const Tensor& fake,
                                                const Tensor& target, float lambda_l1, Tape* tape) {
    Tensor adv = engine::bce_with_logits_mean(d_fake, 1.0f, tape);
    Tensor l1 = engine::mean_abs_diff(fake, target, tape);
    return {engine::add(adv, engine::scale(l1, lambda_l1, tape), tape), l1};
}

}  // namespace detail

inline GanLossTerms gan_loss(const Tensor& d_real_logits, const Tensor& d_fake_logits,
                             const Tensor& fake_image, const Tensor& target_image, float lambda_l1,
                             Tape* tape) {
    if (fake_image.shape() != target_image.shape()) {
        throw std::invalid_argument("gan_loss: fake and target shapes differ: " +
                                    engine::shape_str(fake_image.shape()) + " vs " +
                                    engine::shape_str(target_image.shape()));
    }
    if (!(lambda_l1 >= 0.0f)) throw std::invalid_argument("gan_loss: lambda_l1 must be >= 0");
    detail::check_all_finite(d_real_logits, "gan_loss: d_real_logits");
    detail::check_all_finite(d_fake_logits, "gan_loss: d_fake_logits");
    detail::check_all_finite(fake_image, "gan_loss: fake_image");
    detail::check_all_finite(target_image, "gan_loss: target_image");

    GanLossTerms out;
    out.loss_d = detail::discriminator_loss(d_real_logits, d_fake_logits, tape);
    auto [loss_g, l1] = detail::generator_loss(d_fake_logits, fake_image, target_image, lambda_l1, tape);
    out.loss_g = loss_g;
    out.l1_term = l1;
    return out;
}

namespace detail {

// Separable Gaussian blur in voxel units, clamp-to-edge, kernel normalized to
// sum 1 so flat regions are unchanged.
inline void gaussian_blur_inplace(Volume& vol, float sigma) {
    if (sigma < 1e-4f) return;
    const int radius = static_cast<int>(std::ceil(3.0f * sigma));
    std::vector<float> kernel(static_cast<std::size_t>(2 * radius + 1));
    double ksum = 0.0;
    for (int k = -radius; k <= radius; ++k) {
        const double w = std::exp(-0.5 * (static_cast<double>(k) * k) / (static_cast<double>(sigma) * sigma));
        kernel[static_cast<std::size_t>(k + radius)] = static_cast<float>(w);
        ksum += w;
    }
    for (float& w : kernel) w = static_cast<float>(w / ksum);

    const auto [nx, ny, nz] = vol.dims;
    std::vector<float> tmp(vol.data.size());
    const int n[3] = {nx, ny, nz};
    const std::int64_t stride[3] = {1, nx, static_cast<std::int64_t>(nx) * ny};

    for (int axis = 0; axis < 3; ++axis) {
        const int len = n[axis];
        const std::int64_t st = stride[axis];
        for (int z = 0; z < (axis == 2 ? 1 : nz); ++z) {
            for (int y = 0; y < (axis == 1 ? 1 : ny); ++y) {
                for (int x = 0; x < (axis == 0 ? 1 : nx); ++x) {
                    const std::int64_t base = (static_cast<std::int64_t>(z) * ny + y) * nx + x;
                    for (int i = 0; i < len; ++i) {
                        double acc = 0.0;
                        for (int k = -radius; k <= radius; ++k) {
                            const int j = std::clamp(i + k, 0, len - 1);
                            acc += kernel[static_cast<std::size_t>(k + radius)] *
                                   vol.data[static_cast<std::size_t>(base + j * st)];
                        }
                        tmp[static_cast<std::size_t>(base + i * st)] = static_cast<float>(acc);
                    }
                }
            }
        }
        vol.data.swap(tmp);
    }
}

}  // namespace detail

// Applies the same in-plane rotation about the depth axis to both members
// (bilinear for the image with zero fill, nearest for labels with background
// fill), then blurs the image only. Zero angle and zero sigma return exact
// copies.
inline std::pair<Volume, LabelVolume> rotate_blur_pair(const Volume& image, const LabelVolume& labels,
                                                       float theta_rad, float blur_sigma) {
    check_same_grid(image.dims, labels.dims, "rotate_blur_pair");
    Volume out_img = image;
    LabelVolume out_lab = labels;

    if (theta_rad != 0.0f) {
        const auto [nx, ny, nz] = image.dims;
        const float cx = 0.5f * static_cast<float>(nx - 1);
        const float cy = 0.5f * static_cast<float>(ny - 1);
        const float c = std::cos(theta_rad);
        const float s = std::sin(theta_rad);
        for (int z = 0; z < nz; ++z) {
            for (int y = 0; y < ny; ++y) {
                for (int x = 0; x < nx; ++x) {
                    // pull from the source: rotate the output coordinate by -theta
                    const float dx = static_cast<float>(x) - cx;
                    const float dy = static_cast<float>(y) - cy;
                    const float sx = cx + c * dx + s * dy;
                    const float sy = cy - s * dx + c * dy;
                    const std::size_t oi = static_cast<std::size_t>((static_cast<std::int64_t>(z) * ny + y) * nx + x);

                    const int nxi = static_cast<int>(std::lround(sx));
                    const int nyi = static_cast<int>(std::lround(sy));
                    out_lab.classes[oi] =
                        (nxi >= 0 && nxi < nx && nyi >= 0 && nyi < ny)
                            ? labels.classes[static_cast<std::size_t>((static_cast<std::int64_t>(z) * ny + nyi) * nx + nxi)]
                            : kBackground;

                    const int x0 = static_cast<int>(std::floor(sx));
                    const int y0 = static_cast<int>(std::floor(sy));
                    const float fx = sx - static_cast<float>(x0);
                    const float fy = sy - static_cast<float>(y0);
                    float acc = 0.0f;
                    for (int by = 0; by < 2; ++by) {
                        for (int bx = 0; bx < 2; ++bx) {
                            const int xs = x0 + bx;
                            const int ys = y0 + by;
                            if (xs < 0 || xs >= nx || ys < 0 || ys >= ny) continue;
                            const float w = (bx ? fx : 1.0f - fx) * (by ? fy : 1.0f - fy);
                            acc += w * image.data[static_cast<std::size_t>(
                                           (static_cast<std::int64_t>(z) * ny + ys) * nx + xs)];
                        }
                    }
                    out_img.data[oi] = acc;
                }
            }
        }
    }

    detail::gaussian_blur_inplace(out_img, blur_sigma);
    return {std::move(out_img), std::move(out_lab)};
}

inline std::pair<Volume, LabelVolume> augment_pair(const Volume& image, const LabelVolume& labels,
                                                   const AugmentConfig& cfg, Rng& rng) {
    validate_augment_config(cfg);
    float theta = 0.0f;
    if (rng.uniform01() < cfg.probability) {
        theta = static_cast<float>(rng.uniform(-cfg.rotation_range, cfg.rotation_range));
    }
    float sigma = 0.0f;
    if (rng.uniform01() < cfg.probability) {
        sigma = static_cast<float>(rng.uniform(cfg.blur_sigma_min, cfg.blur_sigma_max));
    }
    return rotate_blur_pair(image, labels, theta, sigma);
}

// Fraction of (mean-removed) signal energy carried by the seven alternating
// sign patterns (-1)^(subset of axes) at the voxel lattice's highest spatial
// frequency, the signature of uneven transposed-convolution overlap.
inline float checkerboard_energy(const Volume& vol) {
    const auto [nx, ny, nz] = vol.dims;
    if (nx < 2 || ny < 2 || nz < 2) {
        throw std::invalid_argument("checkerboard_energy: every extent must be >= 2, got " +
                                    std::to_string(nx) + "x" + std::to_string(ny) + "x" +
                                    std::to_string(nz));
    }
    const std::size_t n = vol.data.size();
    double mean = 0.0;
    float mn = vol.data[0], mx = vol.data[0];
    for (float v : vol.data) {
        mean += v;
        mn = std::min(mn, v);
        mx = std::max(mx, v);
    }
    if (mn == mx) return 0.0f;
    mean /= static_cast<double>(n);

    double energy = 0.0;
    double proj[8] = {};
    std::size_t i = 0;
    for (int z = 0; z < nz; ++z) {
        for (int y = 0; y < ny; ++y) {
            for (int x = 0; x < nx; ++x, ++i) {
                const double d = static_cast<double>(vol.data[i]) - mean;
                energy += d * d;
                const int px = x & 1, py = y & 1, pz = z & 1;
                for (int m = 1; m < 8; ++m) {
                    const int parity = (m & 1 ? px : 0) ^ ((m >> 1) & 1 ? py : 0) ^ ((m >> 2) & 1 ? pz : 0);
                    proj[m] += parity ? -d : d;
                }
            }
        }
    }
    if (energy <= 0.0) return 0.0f;
    double e = 0.0;
    for (int m = 1; m < 8; ++m) e += proj[m] * proj[m] / (energy * static_cast<double>(n));
    return static_cast<float>(std::clamp(e, 0.0, 1.0));
}

struct GanTrainResult {
    nets::UNet3d generator;
    nets::PatchGan discriminator;
    std::vector<EpochStats> history;
};

namespace detail {

inline float scalar_or_throw(const Tensor& loss, const char* what, int epoch) {
    const float v = loss.data()[0];
    if (!std::isfinite(v)) {
        throw std::runtime_error(std::string("train_gan: non-finite ") + what + " at epoch " +
                                 std::to_string(epoch));
    }
    return v;
}

}  // namespace detail

// Alternating Adam updates: the discriminator sees the detached fake, then the
// generator trains against the freshly updated discriminator. Deterministic
// for a fixed config seed.
inline GanTrainResult train_gan(const std::vector<TrainPair>& data, const nets::GeneratorConfig& gcfg,
                                const nets::DiscriminatorConfig& dcfg, const GanTrainConfig& tcfg) {
    if (data.empty()) throw std::invalid_argument("train_gan: dataset is empty");
    validate_train_config(tcfg);
    for (std::size_t i = 0; i < data.size(); ++i) {
        check_same_grid(data[i].image.dims, data[i].labels.dims,
                        ("train_gan pair " + std::to_string(i)).c_str());
    }

    Rng init_rng(engine::hash_combine(tcfg.seed, 0x67616e2d696e6974ULL));
    nets::UNet3d gen(gcfg, init_rng);
    nets::PatchGan disc(dcfg, init_rng);
    engine::AdamOptimizer opt_g(gen.params(), tcfg.lr, 0.5f);
    engine::AdamOptimizer opt_d(disc.params(), tcfg.lr, 0.5f);

    Rng data_rng(engine::hash_combine(tcfg.seed, 0x67616e2d64617461ULL));
    const std::size_t n = data.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});

    std::vector<EpochStats> history;
    history.reserve(static_cast<std::size_t>(tcfg.epochs));

    for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
        for (std::size_t i = n; i > 1; --i) {
            std::swap(order[i - 1], order[static_cast<std::size_t>(data_rng.uniform_int(static_cast<int>(i)))]);
        }

        double sum_d = 0.0, sum_g = 0.0, sum_l1 = 0.0;
        for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(tcfg.batch_size)) {
            const std::size_t nb = std::min(static_cast<std::size_t>(tcfg.batch_size), n - start);
            std::vector<std::pair<Tensor, Tensor>> batch;  // (label intensities, target image)
            batch.reserve(nb);
            for (std::size_t k = 0; k < nb; ++k) {
                const TrainPair& p = data[order[start + k]];
                auto [img, lab] = augment_pair(p.image, p.labels, tcfg.augment, data_rng);
                batch.emplace_back(volume_to_tensor(labels_to_intensity(lab)), volume_to_tensor(img));
            }
            const float inv = 1.0f / static_cast<float>(nb);

            // zero before accumulating: the generator phase below also leaves
            // gradients on discriminator parameters
            opt_d.zero_grad();
            for (const auto& [lab_in, target] : batch) {
                Tensor fake = gen.forward(lab_in, nullptr).detached_copy();
                Tape tape;
                Tensor d_real = disc.forward(engine::concat_channels(lab_in, target, &tape), &tape);
                Tensor d_fake = disc.forward(engine::concat_channels(lab_in, fake, &tape), &tape);
                Tensor loss_d = detail::discriminator_loss(d_real, d_fake, &tape);
                sum_d += detail::scalar_or_throw(loss_d, "discriminator loss", epoch);
                Tensor scaled = engine::scale(loss_d, inv, &tape);
                tape.backward(scaled);
            }
            opt_d.step();

            opt_g.zero_grad();
            for (const auto& [lab_in, target] : batch) {
                Tape tape;
                Tensor fake = gen.forward(lab_in, &tape);
                Tensor d_fake = disc.forward(engine::concat_channels(lab_in, fake, &tape), &tape);
                auto [loss_g, l1] = detail::generator_loss(d_fake, fake, target, tcfg.lambda_l1, &tape);
                sum_g += detail::scalar_or_throw(loss_g, "generator loss", epoch);
                sum_l1 += static_cast<double>(l1.data()[0]);
                Tensor scaled = engine::scale(loss_g, inv, &tape);
                tape.backward(scaled);
            }
            opt_g.step();
        }

        history.push_back({static_cast<float>(sum_d / static_cast<double>(n)),
                           static_cast<float>(sum_g / static_cast<double>(n)),
                           static_cast<float>(sum_l1 / static_cast<double>(n))});
    }

    return {std::move(gen), std::move(disc), std::move(history)};
}

inline Volume synthesize(const nets::UNet3d& generator, const LabelVolume& labels) {
    Tensor lab_in = volume_to_tensor(labels_to_intensity(labels));
    Tensor out = generator.forward(lab_in, nullptr);
    Volume vol = tensor_to_volume(out, labels.spacing);
    for (float& v : vol.data) v = std::clamp(v, 0.0f, 1.0f);
    return vol;
}

inline void save_history_csv(const std::filesystem::path& path, const std::vector<EpochStats>& history) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path);
    if (!f) throw std::runtime_error("save_history_csv: cannot open " + path.string());
    f << "epoch,loss_D,loss_G,l1_term\n";
    char line[128];
    for (std::size_t i = 0; i < history.size(); ++i) {
        std::snprintf(line, sizeof(line), "%zu,%.9g,%.9g,%.9g\n", i, static_cast<double>(history[i].loss_d),
                      static_cast<double>(history[i].loss_g), static_cast<double>(history[i].l1_term));
        f << line;
    }
    if (!f.good()) throw std::runtime_error("save_history_csv: write failed for " + path.string());
}

}  // namespace echosynth::gan
