#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "echosynth/engine/ops.hpp"
#include "echosynth/engine/rng.hpp"
#include "echosynth/engine/tensor.hpp"
#include "echosynth/nets/unet3d.hpp"

// PatchGAN discriminator: a stack of stride-2 convolutions ending in a 1x
// convolution that emits a grid of patch logits (no sigmoid; the loss applies
// it). Input is the label map concatenated with the image, 2 channels.

namespace echosynth::nets {

struct DiscriminatorConfig {
    int layers = 3;
    int base_channels = 16;
    int in_channels = 2;
};

class PatchGan {
  public:
    PatchGan(const DiscriminatorConfig& cfg, Rng& rng) : cfg_(cfg) {
        if (cfg.layers < 1) throw std::invalid_argument("discriminator layers must be >= 1");
        if (cfg.base_channels < 1) throw std::invalid_argument("discriminator base_channels must be >= 1");
        for (int i = 0; i < cfg.layers; ++i) {
            const int in_ch = i == 0 ? cfg.in_channels : cfg.base_channels << (i - 1);
            const int out_ch = cfg.base_channels << i;
            convs_.push_back({Tensor::randn({out_ch, in_ch, 4, 4, 4}, rng, 0.02f), Tensor::zeros({out_ch})});
            if (i > 0) {
                norms_.push_back(detail::NormParam{Tensor::full({out_ch}, 1.0f), Tensor::zeros({out_ch})});
            }
        }
        const int top_ch = cfg.base_channels << (cfg.layers - 1);
        final_ = {Tensor::randn({1, top_ch, 3, 3, 3}, rng, 0.02f), Tensor::zeros({1})};
    }

    const DiscriminatorConfig& config() const { return cfg_; }

    Tensor forward(const Tensor& x, Tape* tape) const {
        if (x.ndim() != 5 || x.dim(1) != cfg_.in_channels) {
            throw std::invalid_argument("discriminator expects [N," + std::to_string(cfg_.in_channels) +
                                        ",D,H,W] input, got " + engine::shape_str(x.shape()));
        }
        detail::check_divisible(x.shape(), cfg_.layers);

        Tensor h = x;
        for (int i = 0; i < cfg_.layers; ++i) {
            h = engine::conv3d(h, convs_[i].weight, &convs_[i].bias, {2, 2, 2}, {1, 1, 1}, tape);
            if (i > 0) {
                const auto& nrm = norms_[static_cast<std::size_t>(i - 1)];
                h = engine::instance_norm3d(h, nrm.gamma, nrm.beta, 1e-5f, tape);
            }
            h = engine::activation(h, Act::leaky_relu, 0.2f, tape);
        }
        return engine::conv3d(h, final_.weight, &final_.bias, {1, 1, 1}, {1, 1, 1}, tape);
    }

    std::vector<std::pair<std::string, Tensor>> params() const {
        std::vector<std::pair<std::string, Tensor>> out;
        for (std::size_t i = 0; i < convs_.size(); ++i) {
            const std::string p = "disc" + std::to_string(i);
            out.emplace_back(p + ".weight", convs_[i].weight);
            out.emplace_back(p + ".bias", convs_[i].bias);
            if (i > 0) {
                out.emplace_back(p + ".gamma", norms_[i - 1].gamma);
                out.emplace_back(p + ".beta", norms_[i - 1].beta);
            }
        }
        out.emplace_back("final.weight", final_.weight);
        out.emplace_back("final.bias", final_.bias);
        return out;
    }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& [name, t] : params()) n += t.numel();
        return n;
    }

  private:
    DiscriminatorConfig cfg_;
    std::vector<detail::ConvParam> convs_;
    std::vector<detail::NormParam> norms_;  // [i-1] pairs with layer i
    detail::ConvParam final_;
};

}  // namespace echosynth::nets
