#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "echosynth/engine/ops.hpp"
#include "echosynth/engine/rng.hpp"
#include "echosynth/engine/tensor.hpp"

// 3D U-Net: stride-2 conv encoder, mirrored decoder with skip concatenations.
// Decoder upsampling is either a stride-2 transposed convolution or trilinear
// interpolation followed by a 3x3x3 convolution.

namespace echosynth::nets {

using engine::Act;
using engine::Rng;
using engine::Tape;
using engine::Tensor;

enum class UpsampleMode { transposed, trilinear };

inline const char* upsample_mode_name(UpsampleMode m) {
    return m == UpsampleMode::transposed ? "transposed" : "trilinear";
}

struct GeneratorConfig {
    int levels = 3;
    int base_channels = 16;
    UpsampleMode upsample_mode = UpsampleMode::transposed;
    int in_channels = 1;
    int out_channels = 1;
    // maps the final tanh onto [0,1]; turned off for logit outputs
    bool tanh_output = true;
};

namespace detail {

struct ConvParam {
    Tensor weight;
    Tensor bias;
};

struct NormParam {
    Tensor gamma;
    Tensor beta;
};

inline void check_divisible(const engine::Shape& shape, int levels) {
    const char* axis_names[3] = {"depth", "height", "width"};
    for (int a = 0; a < 3; ++a) {
        const int extent = shape[static_cast<std::size_t>(2 + a)];
        if (extent % (1 << levels) != 0) {
            throw std::invalid_argument("input " + std::string(axis_names[a]) + " " + std::to_string(extent) +
                                        " is not divisible by 2^levels = " + std::to_string(1 << levels));
        }
    }
}

}  // namespace detail

class UNet3d {
  public:
    UNet3d(const GeneratorConfig& cfg, Rng& rng) : cfg_(cfg) {
        if (cfg.levels < 1) throw std::invalid_argument("generator levels must be >= 1");
        if (cfg.base_channels < 1) throw std::invalid_argument("generator base_channels must be >= 1");
        for (int i = 0; i < cfg.levels; ++i) {
            const int in_ch = i == 0 ? cfg.in_channels : cfg.base_channels << (i - 1);
            const int out_ch = cfg.base_channels << i;
            encs_.push_back({Tensor::randn({out_ch, in_ch, 4, 4, 4}, rng, 0.02f), Tensor::zeros({out_ch})});
            if (i > 0) {
                enc_norms_.push_back(detail::NormParam{Tensor::full({out_ch}, 1.0f), Tensor::zeros({out_ch})});
            }
        }
        for (int j = cfg.levels - 1; j >= 0; --j) {
            const int in_ch = j == cfg.levels - 1 ? cfg.base_channels << j : 2 * (cfg.base_channels << j);
            const int out_ch = j == 0 ? cfg.out_channels : cfg.base_channels << (j - 1);
            if (cfg.upsample_mode == UpsampleMode::transposed) {
                decs_.push_back({Tensor::randn({in_ch, out_ch, 4, 4, 4}, rng, 0.02f), Tensor::zeros({out_ch})});
            } else {
                decs_.push_back({Tensor::randn({out_ch, in_ch, 3, 3, 3}, rng, 0.02f), Tensor::zeros({out_ch})});
            }
            if (j > 0) {
                dec_norms_.push_back(detail::NormParam{Tensor::full({out_ch}, 1.0f), Tensor::zeros({out_ch})});
            }
        }
    }

    const GeneratorConfig& config() const { return cfg_; }

    Tensor forward(const Tensor& x, Tape* tape) const {
        if (x.ndim() != 5 || x.dim(1) != cfg_.in_channels) {
            throw std::invalid_argument("generator expects [N," + std::to_string(cfg_.in_channels) +
                                        ",D,H,W] input, got " + engine::shape_str(x.shape()));
        }
        detail::check_divisible(x.shape(), cfg_.levels);

        std::vector<Tensor> skips;
        Tensor h = x;
        for (int i = 0; i < cfg_.levels; ++i) {
            h = engine::conv3d(h, encs_[i].weight, &encs_[i].bias, {2, 2, 2}, {1, 1, 1}, tape);
            if (i > 0) {
                const auto& nrm = enc_norms_[static_cast<std::size_t>(i - 1)];
                h = engine::instance_norm3d(h, nrm.gamma, nrm.beta, 1e-5f, tape);
            }
            h = engine::activation(h, Act::leaky_relu, 0.2f, tape);
            skips.push_back(h);
        }

        h = skips.back();
        for (int j = cfg_.levels - 1; j >= 0; --j) {
            const std::size_t d = static_cast<std::size_t>(cfg_.levels - 1 - j);
            if (j < cfg_.levels - 1) h = engine::concat_channels(h, skips[static_cast<std::size_t>(j)], tape);
            if (cfg_.upsample_mode == UpsampleMode::transposed) {
                h = engine::conv_transpose3d(h, decs_[d].weight, &decs_[d].bias, {2, 2, 2}, {1, 1, 1}, tape);
            } else {
                h = engine::upsample_trilinear(h, 2, tape);
                h = engine::conv3d(h, decs_[d].weight, &decs_[d].bias, {1, 1, 1}, {1, 1, 1}, tape);
            }
            if (j > 0) {
                const auto& nrm = dec_norms_[d];
                h = engine::instance_norm3d(h, nrm.gamma, nrm.beta, 1e-5f, tape);
                h = engine::activation(h, Act::relu, 0.0f, tape);
            }
        }

        if (cfg_.tanh_output) {
            h = engine::activation(h, Act::tanh, 0.0f, tape);
            h = engine::affine(h, 0.5f, 0.5f, tape);
        }
        return h;
    }

    std::vector<std::pair<std::string, Tensor>> params() const {
        std::vector<std::pair<std::string, Tensor>> out;
        for (std::size_t i = 0; i < encs_.size(); ++i) {
            const std::string p = "enc" + std::to_string(i);
            out.emplace_back(p + ".weight", encs_[i].weight);
            out.emplace_back(p + ".bias", encs_[i].bias);
            if (i > 0) {
                out.emplace_back(p + ".gamma", enc_norms_[i - 1].gamma);
                out.emplace_back(p + ".beta", enc_norms_[i - 1].beta);
            }
        }
        for (std::size_t d = 0; d < decs_.size(); ++d) {
            const int j = cfg_.levels - 1 - static_cast<int>(d);
            const std::string p = "dec" + std::to_string(j);
            out.emplace_back(p + ".weight", decs_[d].weight);
            out.emplace_back(p + ".bias", decs_[d].bias);
            if (j > 0) {
                out.emplace_back(p + ".gamma", dec_norms_[d].gamma);
                out.emplace_back(p + ".beta", dec_norms_[d].beta);
            }
        }
        return out;
    }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& [name, t] : params()) n += t.numel();
        return n;
    }

  private:
    GeneratorConfig cfg_;
    std::vector<detail::ConvParam> encs_;
    std::vector<detail::NormParam> enc_norms_;  // [i-1] pairs with encoder block i
    std::vector<detail::ConvParam> decs_;       // ordered bottleneck first
    std::vector<detail::NormParam> dec_norms_;
};

}  // namespace echosynth::nets
