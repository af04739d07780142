#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace dproto {

// One conv -> relu -> maxpool stage of the feature extractor.
struct ConvBlockConfig {
    int channels = 16;
    int kernel = 3;
    int stride = 1;
    int pool = 2;
};

struct BackboneConfig {
    int input_c = 3;
    int input_h = 56;
    int input_w = 56;
    double input_mean = 0.5;  // subtracted before the conv stack
    std::vector<ConvBlockConfig> blocks = {{16, 3, 1, 2}, {32, 3, 1, 2}, {32, 3, 1, 2}};
    int shaping_channels = 32;  // D1, channel width after the 1x1 shaping pair
    int grid_h = 7;             // H1 x W1: required spatial size of the feature map
    int grid_w = 7;
    std::string shaping_final = "relu";  // activation after the second 1x1 conv: none|relu|sigmoid
};

struct ProtoConfig {
    int mask_count = 64;            // n, size of the shared feature-mask pool
    int per_class_prototypes = 10;  // prototypes assigned to each class
    double epsilon = 1e-12;         // floor inside the log-ratio activation
    double head_init_own = 1.0;     // initial head weight prototype -> its own class
    double head_init_other = -0.5;  // initial head weight prototype -> other classes
};

struct TrainConfig {
    double lambda1 = 0.8;    // cluster-cost weight (>= 0)
    double lambda2 = -0.08;  // separation-cost weight (<= 0)
    double lambda3 = 1e-4;   // off-class head l1 weight
    double lr_backbone = 1e-4;
    double lr_shaping = 3e-3;
    double lr_prototype = 3e-3;
    double lr_head = 1e-4;
    int batch_size = 60;
    int epochs = 30;
    int warmup_epochs = 5;           // backbone frozen for the first epochs
    int push_period = 10;            // project prototypes every this many epochs
    int head_refit_iterations = 20;  // head-only passes after each push
    int push_augmentations = 8;      // R, augmented views averaged per pushed prototype
    std::string optimizer = "adam";  // adam|sgd
    std::uint64_t seed = 42;
};

struct MdmConfig {
    std::vector<int> scales = {6, 7, 8, 9, 10, 11, 12, 13, 14, 15};  // square mask grids a_i = b_i
    double tau = 0.5;    // initial mask value
    double eta = 1.0;    // mask area penalty weight, sized against desk-scale feature distances
    double lr = 0.05;    // gradient-descent step size
    int steps = 800;     // optimization steps per mask
    double gamma = 3.0;  // threshold applied to the summed saliency
    double alpha = 0.5;  // image weight in the rendered overlay
    double beta = 0.3;   // heatmap weight in the rendered overlay
};

struct EvalConfig {
    double top_percent = 20.0;  // binarization budget for localization metrics
    int step_percent = 2;       // pixel fraction step of the deletion/insertion curves
    int occlusion_patch = 8;
    int occlusion_stride = 4;
    int max_images = 0;  // cap on evaluated test images, 0 = all
};

struct DatasetConfig {
    int classes = 4;
    int per_class = 200;
    int image_size = 56;
    int clutter = 3;            // distractor shapes per image
    double noise_sigma = 0.02;  // gaussian background noise
    double train_fraction = 0.8;
};

struct RunConfig {
    BackboneConfig backbone;
    ProtoConfig protolayer;
    TrainConfig trainer;
    MdmConfig mdm;
    EvalConfig eval;
    DatasetConfig dataset;

    // Throws ConfigError on out-of-range values or inconsistent sections.
    void validate() const;

    nlohmann::json to_json() const;
    // Rejects unknown keys anywhere in the document; missing keys keep defaults.
    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig load_file(const std::string& path);
    void save_file(const std::string& path) const;
};

}  // namespace dproto
