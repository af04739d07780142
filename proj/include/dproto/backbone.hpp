#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dproto/autodiff.hpp"
#include "dproto/config.hpp"
#include "dproto/tensor.hpp"

namespace dproto {

using NamedTensor = std::pair<std::string, Tensor>;

// Convolutional feature extractor: a stack of conv -> relu -> maxpool blocks
// followed by a 1x1 -> relu -> 1x1 channel-shaping pair with a configurable
// final activation. Output is a {D1, H1, W1} feature map whose grid size is
// checked against the config at build time.
class Backbone {
public:
    // Initializes all parameters with Kaiming-uniform fan-in scaling from the
    // given seed; identical (cfg, seed) produce identical parameters. Throws
    // ConfigError with the full spatial shape trace when the block stack does
    // not land on (grid_h, grid_w).
    static Backbone build(const BackboneConfig& cfg, std::uint64_t seed);

    // image {C, H, W} in [0,1] -> feature map {D1, H1, W1}. Differentiable
    // through all parameters and the image. Subtracts input_mean first, so
    // the conv stack sees a zero-centered signal.
    Tensor forward(const Tensor& image) const;

    // Shifts an image tensor into the conv stack's input domain.
    Tensor center(const Tensor& image) const;
    // Conv stack only, for inputs already shifted by center(). Perturbations
    // toward zero in this domain mean "toward the background level", which is
    // what mask-based explanations rely on.
    Tensor forward_centered(const Tensor& centered) const;

    const BackboneConfig& config() const { return cfg_; }

    // Conv-block parameters (frozen during warmup epochs).
    std::vector<NamedTensor> block_params() const;
    // 1x1 shaping-pair parameters (always trainable).
    std::vector<NamedTensor> shaping_params() const;
    std::vector<NamedTensor> all_params() const;

private:
    BackboneConfig cfg_;
    std::vector<Tensor> block_w_;
    std::vector<Tensor> block_b_;
    Tensor shape1_w_, shape1_b_;
    Tensor shape2_w_, shape2_b_;
};

// Spatial sizes after each block for the given config, starting with the
// input size. Used for validation and error messages.
std::vector<std::pair<int, int>> backbone_shape_trace(const BackboneConfig& cfg);

}  // namespace dproto
