#include "dproto/backbone.hpp"

#include <cmath>

#include "dproto/errors.hpp"
#include "dproto/rng.hpp"

namespace dproto {

namespace {

Tensor kaiming_uniform(std::vector<int> shape, int fan_in, Rng& rng) {
    const double bound = std::sqrt(6.0 / fan_in);
    std::vector<double> v(numel(shape));
    for (double& x : v) x = rng.uniform(-bound, bound);
    return Tensor::from(std::move(shape), std::move(v), true);
}

}  // namespace

std::vector<std::pair<int, int>> backbone_shape_trace(const BackboneConfig& cfg) {
    std::vector<std::pair<int, int>> trace;
    int h = cfg.input_h, w = cfg.input_w;
    trace.emplace_back(h, w);
    for (const auto& b : cfg.blocks) {
        const int pad = b.kernel / 2;
        h = (h + 2 * pad - b.kernel) / b.stride + 1;
        w = (w + 2 * pad - b.kernel) / b.stride + 1;
        if (h < b.pool || w < b.pool)
            throw ConfigError("backbone: block pool " + std::to_string(b.pool) +
                              " exceeds feature size " + std::to_string(h) + "x" +
                              std::to_string(w));
        h = (h - b.pool) / b.pool + 1;
        w = (w - b.pool) / b.pool + 1;
        trace.emplace_back(h, w);
    }
    return trace;
}

Backbone Backbone::build(const BackboneConfig& cfg, std::uint64_t seed) {
    const auto trace = backbone_shape_trace(cfg);
    const auto [h1, w1] = trace.back();
    if (h1 != cfg.grid_h || w1 != cfg.grid_w) {
        std::string msg = "backbone: block stack produces grid " + std::to_string(h1) + "x" +
                          std::to_string(w1) + ", config requires " + std::to_string(cfg.grid_h) +
                          "x" + std::to_string(cfg.grid_w) + "; shape trace:";
        for (const auto& [th, tw] : trace)
            msg += " " + std::to_string(th) + "x" + std::to_string(tw);
        throw ConfigError(msg);
    }

    Backbone bb;
    bb.cfg_ = cfg;
    int cin = cfg.input_c;
    int param_idx = 0;
    for (const auto& b : cfg.blocks) {
        Rng rng(derive_seed(seed, "backbone", static_cast<std::uint64_t>(param_idx++)));
        bb.block_w_.push_back(
            kaiming_uniform({b.channels, cin, b.kernel, b.kernel}, cin * b.kernel * b.kernel, rng));
        bb.block_b_.push_back(Tensor::zeros({b.channels}, true));
        cin = b.channels;
    }
    {
        Rng rng(derive_seed(seed, "backbone", static_cast<std::uint64_t>(param_idx++)));
        bb.shape1_w_ = kaiming_uniform({cfg.shaping_channels, cin, 1, 1}, cin, rng);
        bb.shape1_b_ = Tensor::zeros({cfg.shaping_channels}, true);
    }
    {
        Rng rng(derive_seed(seed, "backbone", static_cast<std::uint64_t>(param_idx++)));
        bb.shape2_w_ = kaiming_uniform({cfg.shaping_channels, cfg.shaping_channels, 1, 1},
                                       cfg.shaping_channels, rng);
        bb.shape2_b_ = Tensor::zeros({cfg.shaping_channels}, true);
    }
    return bb;
}

Tensor Backbone::forward(const Tensor& image) const {
    return forward_centered(center(image));
}

Tensor Backbone::center(const Tensor& image) const {
    if (image.ndim() != 3 || image.dim(0) != cfg_.input_c || image.dim(1) != cfg_.input_h ||
        image.dim(2) != cfg_.input_w)
        throw ShapeError("backbone: expected image {" + std::to_string(cfg_.input_c) + ", " +
                         std::to_string(cfg_.input_h) + ", " + std::to_string(cfg_.input_w) +
                         "}, got " + shape_str(image.shape()));
    return cfg_.input_mean == 0.0 ? image : add_scalar(image, -cfg_.input_mean);
}

Tensor Backbone::forward_centered(const Tensor& centered) const {
    if (centered.ndim() != 3 || centered.dim(0) != cfg_.input_c ||
        centered.dim(1) != cfg_.input_h || centered.dim(2) != cfg_.input_w)
        throw ShapeError("backbone: expected image {" + std::to_string(cfg_.input_c) + ", " +
                         std::to_string(cfg_.input_h) + ", " + std::to_string(cfg_.input_w) +
                         "}, got " + shape_str(centered.shape()));
    Tensor x = centered;
    for (std::size_t i = 0; i < block_w_.size(); ++i) {
        const auto& b = cfg_.blocks[i];
        x = conv2d(x, block_w_[i], block_b_[i], b.stride, b.kernel / 2);
        x = relu(x);
        x = maxpool2d(x, b.pool, b.pool);
    }
    x = conv2d(x, shape1_w_, shape1_b_, 1, 0);
    x = relu(x);
    x = conv2d(x, shape2_w_, shape2_b_, 1, 0);
    if (cfg_.shaping_final == "relu")
        x = relu(x);
    else if (cfg_.shaping_final == "sigmoid")
        x = sigmoid(x);
    return x;
}

std::vector<NamedTensor> Backbone::block_params() const {
    std::vector<NamedTensor> out;
    for (std::size_t i = 0; i < block_w_.size(); ++i) {
        const std::string base = "backbone.block" + std::to_string(i);
        out.emplace_back(base + ".weight", block_w_[i]);
        out.emplace_back(base + ".bias", block_b_[i]);
    }
    return out;
}

std::vector<NamedTensor> Backbone::shaping_params() const {
    return {{"shaping.conv1.weight", shape1_w_},
            {"shaping.conv1.bias", shape1_b_},
            {"shaping.conv2.weight", shape2_w_},
            {"shaping.conv2.bias", shape2_b_}};
}

std::vector<NamedTensor> Backbone::all_params() const {
    auto out = block_params();
    for (auto& p : shaping_params()) out.push_back(std::move(p));
    return out;
}

}  // namespace dproto
