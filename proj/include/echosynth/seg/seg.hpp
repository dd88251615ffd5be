#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "echosynth/engine/adam.hpp"
#include "echosynth/engine/ops.hpp"
#include "echosynth/engine/rng.hpp"
#include "echosynth/metrics/metrics.hpp"
#include "echosynth/nets/unet3d.hpp"
#include "echosynth/volume.hpp"

// Multi-class volumetric segmentation: a fixed encoder-decoder network
// trained with a combined soft-dice and cross-entropy objective under k-fold
// cross-validation.

namespace echosynth::seg {

using engine::Rng;
using engine::Tape;
using engine::Tensor;

struct SegConfig {
    int folds = 5;
    int epochs = 60;
    float lr = 0.01f;
    int levels = 3;
    int base_channels = 16;
    int num_classes = 4;
    bool poly_lr_decay = false;
    std::uint64_t seed = 0;
};

struct SegSample {
    Volume image;
    LabelVolume labels;
};

inline void validate_seg_config(const SegConfig& cfg) {
    if (cfg.folds < 2) throw std::invalid_argument("seg config folds must be >= 2");
    if (cfg.num_classes != kNumClasses) {
        throw std::invalid_argument("seg config num_classes must be " + std::to_string(kNumClasses));
    }
    if (cfg.epochs < 1) throw std::invalid_argument("seg config epochs must be >= 1");
    if (!(cfg.lr > 0.0f)) throw std::invalid_argument("seg config lr must be > 0");
    if (cfg.levels < 1 || cfg.base_channels < 1) {
        throw std::invalid_argument("seg config levels and base_channels must be >= 1");
    }
}

// Partition {0..n-1} into k shuffled parts whose sizes differ by at most one.
inline std::vector<std::vector<std::size_t>> kfold_split(std::size_t n, int k, std::uint64_t seed) {
    if (k < 1) throw std::invalid_argument("kfold_split: k must be >= 1");
    if (n < static_cast<std::size_t>(k)) {
        throw std::invalid_argument("kfold_split: cannot split " + std::to_string(n) +
                                    " items into " + std::to_string(k) + " folds");
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(engine::hash_combine(seed, 0x6b666f6c64ULL));
    for (std::size_t i = n; i > 1; --i) {
        std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(i)))]);
    }
    std::vector<std::vector<std::size_t>> folds(static_cast<std::size_t>(k));
    const std::size_t base = n / static_cast<std::size_t>(k);
    const std::size_t extra = n % static_cast<std::size_t>(k);
    std::size_t pos = 0;
    for (std::size_t f = 0; f < static_cast<std::size_t>(k); ++f) {
        const std::size_t size = base + (f < extra ? 1 : 0);
        folds[f].assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                        order.begin() + static_cast<std::ptrdiff_t>(pos + size));
        pos += size;
    }
    return folds;
}

namespace detail {

constexpr float kDiceEps = 1e-5f;

}  // namespace detail

// Cross-entropy plus (1 - mean soft dice over the foreground classes), fused
// into one taped node with an analytic gradient. Logits are [1,4,D,H,W] on
// the same grid as the target labels.
inline Tensor dice_ce_loss(const Tensor& logits, const LabelVolume& target, Tape* tape) {
    if (logits.ndim() != 5 || logits.dim(0) != 1 || logits.dim(1) != kNumClasses) {
        throw std::invalid_argument("dice_ce_loss: logits must be [1," + std::to_string(kNumClasses) +
                                    ",D,H,W], got " + engine::shape_str(logits.shape()));
    }
    if (logits.dim(2) != target.dims[2] || logits.dim(3) != target.dims[1] ||
        logits.dim(4) != target.dims[0]) {
        throw std::invalid_argument("dice_ce_loss: logits grid " + engine::shape_str(logits.shape()) +
                                    " does not match the label grid");
    }
    validate_labels(target);

    const std::int64_t v = static_cast<std::int64_t>(target.classes.size());
    const float* z = logits.data();
    auto probs = std::make_shared<std::vector<float>>(static_cast<std::size_t>(kNumClasses) *
                                                      static_cast<std::size_t>(v));

    double ce = 0.0;
    std::array<double, kNumClasses> sum_p{}, sum_pg{}, sum_g{};
    for (std::int64_t i = 0; i < v; ++i) {
        float zmax = z[i];
        for (int c = 1; c < kNumClasses; ++c) zmax = std::max(zmax, z[c * v + i]);
        double norm = 0.0;
        std::array<double, kNumClasses> e{};
        for (int c = 0; c < kNumClasses; ++c) {
            e[static_cast<std::size_t>(c)] = std::exp(static_cast<double>(z[c * v + i]) - zmax);
            norm += e[static_cast<std::size_t>(c)];
        }
        const int t = target.classes[static_cast<std::size_t>(i)];
        for (int c = 0; c < kNumClasses; ++c) {
            const double p = e[static_cast<std::size_t>(c)] / norm;
            (*probs)[static_cast<std::size_t>(c * v + i)] = static_cast<float>(p);
            sum_p[static_cast<std::size_t>(c)] += p;
            if (c == t) {
                ce -= std::log(std::max(p, 1e-30));
                sum_pg[static_cast<std::size_t>(c)] += p;
                sum_g[static_cast<std::size_t>(c)] += 1.0;
            }
        }
    }
    ce /= static_cast<double>(v);

    std::array<double, kNumClasses> num{}, den{};
    double mean_dice = 0.0;
    for (int c = 1; c < kNumClasses; ++c) {
        num[static_cast<std::size_t>(c)] = 2.0 * sum_pg[static_cast<std::size_t>(c)] + detail::kDiceEps;
        den[static_cast<std::size_t>(c)] =
            sum_p[static_cast<std::size_t>(c)] + sum_g[static_cast<std::size_t>(c)] + detail::kDiceEps;
        mean_dice += num[static_cast<std::size_t>(c)] / den[static_cast<std::size_t>(c)];
    }
    mean_dice /= static_cast<double>(kNumClasses - 1);

    Tensor out = Tensor::scalar(static_cast<float>(ce + (1.0 - mean_dice)));
    if (tape) {
        Tensor lc = logits, outc = out;
        auto classes = std::make_shared<std::vector<std::uint8_t>>(target.classes);
        out.node = tape->record([lc, outc, probs, classes, num, den, v]() mutable {
            if (!outc.has_grad()) return;
            const float g = outc.grad()[0];
            float* gl = lc.grad();
            const float* p = probs->data();
            const double inv_v = 1.0 / static_cast<double>(v);
            // d(1 - meanDice)/d p_c is constant per class except for the
            // one-hot numerator contribution
            std::array<double, kNumClasses> base{}, hot{};
            for (int c = 1; c < kNumClasses; ++c) {
                const double d2 = den[static_cast<std::size_t>(c)] * den[static_cast<std::size_t>(c)];
                // derivative of -num/den w.r.t. p: (num - 2*g*den)/den^2, split
                // into the g=0 part and the extra for g=1
                base[static_cast<std::size_t>(c)] = num[static_cast<std::size_t>(c)] / d2 / 3.0;
                hot[static_cast<std::size_t>(c)] = -2.0 * den[static_cast<std::size_t>(c)] / d2 / 3.0;
            }
            for (std::int64_t i = 0; i < v; ++i) {
                const int t = (*classes)[static_cast<std::size_t>(i)];
                std::array<double, kNumClasses> dp{};
                for (int c = 1; c < kNumClasses; ++c) {
                    dp[static_cast<std::size_t>(c)] = base[static_cast<std::size_t>(c)] +
                                                      (c == t ? hot[static_cast<std::size_t>(c)] : 0.0);
                }
                double dot = 0.0;
                for (int c = 0; c < kNumClasses; ++c) {
                    dot += dp[static_cast<std::size_t>(c)] * p[c * v + i];
                }
                for (int c = 0; c < kNumClasses; ++c) {
                    const double pc = p[c * v + i];
                    const double ce_part = (pc - (c == t ? 1.0 : 0.0)) * inv_v;
                    const double dice_part = pc * (dp[static_cast<std::size_t>(c)] - dot);
                    gl[c * v + i] += g * static_cast<float>(ce_part + dice_part);
                }
            }
        });
        out.tape = tape;
    }
    return out;
}

namespace detail {

// Per-voxel argmax over the channel axis; ties go to the lower class id.
inline LabelVolume argmax_labels(const Tensor& logits, Spacing3 spacing) {
    if (logits.ndim() != 5 || logits.dim(0) != 1 || logits.dim(1) != kNumClasses) {
        throw std::invalid_argument("argmax_labels: logits must be [1," + std::to_string(kNumClasses) +
                                    ",D,H,W], got " + engine::shape_str(logits.shape()));
    }
    LabelVolume out;
    out.dims = {logits.dim(4), logits.dim(3), logits.dim(2)};
    out.spacing = spacing;
    const std::int64_t v = static_cast<std::int64_t>(dims_numel(out.dims));
    out.classes.resize(static_cast<std::size_t>(v));
    const float* z = logits.data();
    for (std::int64_t i = 0; i < v; ++i) {
        int best = 0;
        float zbest = z[i];
        for (int c = 1; c < kNumClasses; ++c) {
            if (z[c * v + i] > zbest) {
                zbest = z[c * v + i];
                best = c;
            }
        }
        out.classes[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(best);
    }
    return out;
}

}  // namespace detail

inline LabelVolume predict(const nets::UNet3d& model, const Volume& vol) {
    const auto& cfg = model.config();
    if (cfg.in_channels != 1 || cfg.out_channels != kNumClasses || cfg.tanh_output) {
        throw std::invalid_argument("predict: model is not a " + std::to_string(kNumClasses) +
                                    "-class segmenter");
    }
    Tensor logits = model.forward(volume_to_tensor(vol), nullptr);
    return detail::argmax_labels(logits, vol.spacing);
}

struct FoldResult {
    int fold_index;
    std::array<float, 3> validation_dice;  // LV, LA, MYO
    nets::UNet3d model;
    std::vector<std::size_t> validation_indices;
};

// Trains one model per fold on the other folds' samples and scores each on
// its held-out fold. Deterministic in cfg.seed.
inline std::vector<FoldResult> train_seg(const std::vector<SegSample>& samples, const SegConfig& cfg) {
    validate_seg_config(cfg);
    if (samples.empty()) throw std::invalid_argument("train_seg: dataset is empty");
    for (std::size_t i = 0; i < samples.size(); ++i) {
        check_same_grid(samples[i].image.dims, samples[i].labels.dims,
                        ("train_seg sample " + std::to_string(i)).c_str());
    }

    const auto folds = kfold_split(samples.size(), cfg.folds, cfg.seed);
    std::vector<FoldResult> results;
    results.reserve(folds.size());

    for (std::size_t f = 0; f < folds.size(); ++f) {
        const auto& val = folds[f];
        std::vector<std::size_t> train;
        for (std::size_t g = 0; g < folds.size(); ++g) {
            if (g != f) train.insert(train.end(), folds[g].begin(), folds[g].end());
        }
        if (val.empty() || train.empty()) {
            throw std::runtime_error("train_seg: fold " + std::to_string(f) + " is empty");
        }

        nets::GeneratorConfig net_cfg;
        net_cfg.levels = cfg.levels;
        net_cfg.base_channels = cfg.base_channels;
        net_cfg.upsample_mode = nets::UpsampleMode::transposed;
        net_cfg.in_channels = 1;
        net_cfg.out_channels = kNumClasses;
        net_cfg.tanh_output = false;

        Rng init_rng(engine::hash_combine(engine::hash_combine(cfg.seed, 0x7365672d696e6974ULL),
                                          static_cast<std::uint64_t>(f)));
        nets::UNet3d net(net_cfg, init_rng);
        engine::AdamOptimizer opt(net.params(), cfg.lr);
        Rng data_rng(engine::hash_combine(engine::hash_combine(cfg.seed, 0x7365672d64617461ULL),
                                          static_cast<std::uint64_t>(f)));

        std::vector<std::size_t> order = train;
        for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
            if (cfg.poly_lr_decay) {
                const double frac = static_cast<double>(epoch) / static_cast<double>(cfg.epochs);
                opt.set_lr(cfg.lr * static_cast<float>(std::pow(1.0 - frac, 0.9)));
            }
            for (std::size_t i = order.size(); i > 1; --i) {
                std::swap(order[i - 1],
                          order[static_cast<std::size_t>(data_rng.uniform_int(static_cast<int>(i)))]);
            }
            for (std::size_t idx : order) {
                Tape tape;
                Tensor logits = net.forward(volume_to_tensor(samples[idx].image), &tape);
                Tensor loss = dice_ce_loss(logits, samples[idx].labels, &tape);
                if (!std::isfinite(loss.data()[0])) {
                    throw std::runtime_error("train_seg: non-finite loss in fold " + std::to_string(f) +
                                             " at epoch " + std::to_string(epoch));
                }
                opt.zero_grad();
                tape.backward(loss);
                opt.step();
            }
        }

        std::array<double, 3> dice_sum{};
        for (std::size_t idx : val) {
            LabelVolume pred = predict(net, samples[idx].image);
            dice_sum[0] += metrics::dice(pred, samples[idx].labels, kLV);
            dice_sum[1] += metrics::dice(pred, samples[idx].labels, kLA);
            dice_sum[2] += metrics::dice(pred, samples[idx].labels, kMYO);
        }
        std::array<float, 3> dice_mean{};
        for (int s = 0; s < 3; ++s) {
            dice_mean[static_cast<std::size_t>(s)] =
                static_cast<float>(dice_sum[static_cast<std::size_t>(s)] / static_cast<double>(val.size()));
        }
        results.push_back({static_cast<int>(f), dice_mean, std::move(net), val});
    }
    return results;
}

// Highest mean validation dice across structures; ties go to the lower index.
inline std::size_t best_fold_index(const std::vector<FoldResult>& results) {
    if (results.empty()) throw std::invalid_argument("best_fold_index: no fold results");
    std::size_t best = 0;
    double best_mean = -1.0;
    for (std::size_t i = 0; i < results.size(); ++i) {
        const auto& d = results[i].validation_dice;
        const double mean = (static_cast<double>(d[0]) + d[1] + d[2]) / 3.0;
        if (mean > best_mean) {
            best_mean = mean;
            best = i;
        }
    }
    return best;
}

inline void save_fold_results_csv(const std::filesystem::path& path, const std::string& model_name,
                                  const std::vector<FoldResult>& results) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path);
    if (!f) throw std::runtime_error("save_fold_results_csv: cannot open " + path.string());
    f << "model,structure,fold,dice\n";
    const std::array<std::uint8_t, 3> structures = {kLV, kLA, kMYO};
    char buf[160];
    for (const auto& r : results) {
        for (std::size_t s = 0; s < structures.size(); ++s) {
            std::snprintf(buf, sizeof(buf), "%s,%s,%d,%.9g\n", model_name.c_str(),
                          class_name(structures[s]), r.fold_index,
                          static_cast<double>(r.validation_dice[s]));
            f << buf;
        }
    }
    if (!f.good()) throw std::runtime_error("save_fold_results_csv: write failed for " + path.string());
}

}  // namespace echosynth::seg
