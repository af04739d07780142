#include "dproto/config.hpp"

#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>

#include "dproto/errors.hpp"

namespace dproto {

namespace {

using nlohmann::json;

void check_keys(const json& j, const std::string& section,
                std::initializer_list<const char*> allowed) {
    if (!j.is_object())
        throw ConfigError(section + ": expected a JSON object");
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!ok.count(it.key()))
            throw ConfigError(section + ": unknown key \"" + it.key() + "\"");
}

template <typename T>
void read(const json& j, const char* key, T& out) {
    if (auto it = j.find(key); it != j.end())
        out = it->get<T>();
}

void require_positive(double v, const std::string& what) {
    if (!(v > 0.0))
        throw ConfigError(what + " must be positive, got " + std::to_string(v));
}

void require_at_least(int v, int lo, const std::string& what) {
    if (v < lo)
        throw ConfigError(what + " must be >= " + std::to_string(lo) + ", got " +
                           std::to_string(v));
}

json blocks_to_json(const std::vector<ConvBlockConfig>& blocks) {
    json arr = json::array();
    for (const auto& b : blocks)
        arr.push_back({{"channels", b.channels},
                       {"kernel", b.kernel},
                       {"stride", b.stride},
                       {"pool", b.pool}});
    return arr;
}

std::vector<ConvBlockConfig> blocks_from_json(const json& arr) {
    if (!arr.is_array())
        throw ConfigError("backbone.blocks: expected a JSON array");
    std::vector<ConvBlockConfig> blocks;
    for (std::size_t i = 0; i < arr.size(); ++i) {
        const json& jb = arr[i];
        check_keys(jb, "backbone.blocks[" + std::to_string(i) + "]",
                   {"channels", "kernel", "stride", "pool"});
        ConvBlockConfig b;
        read(jb, "channels", b.channels);
        read(jb, "kernel", b.kernel);
        read(jb, "stride", b.stride);
        read(jb, "pool", b.pool);
        blocks.push_back(b);
    }
    return blocks;
}

}  // namespace

void RunConfig::validate() const {
    const auto& bb = backbone;
    require_at_least(bb.input_c, 1, "backbone.input_c");
    require_at_least(bb.input_h, 1, "backbone.input_h");
    require_at_least(bb.input_w, 1, "backbone.input_w");
    if (bb.input_mean < 0.0 || bb.input_mean >= 1.0)
        throw ConfigError("backbone.input_mean must be in [0, 1), got " +
                           std::to_string(bb.input_mean));
    if (bb.blocks.empty())
        throw ConfigError("backbone.blocks must not be empty");
    for (std::size_t i = 0; i < bb.blocks.size(); ++i) {
        const auto& b = bb.blocks[i];
        const std::string tag = "backbone.blocks[" + std::to_string(i) + "]";
        require_at_least(b.channels, 1, tag + ".channels");
        require_at_least(b.kernel, 1, tag + ".kernel");
        if (b.kernel % 2 == 0)
            throw ConfigError(tag + ".kernel must be odd for same-padding, got " +
                               std::to_string(b.kernel));
        require_at_least(b.stride, 1, tag + ".stride");
        require_at_least(b.pool, 1, tag + ".pool");
    }
    require_at_least(bb.shaping_channels, 1, "backbone.shaping_channels");
    require_at_least(bb.grid_h, 1, "backbone.grid_h");
    require_at_least(bb.grid_w, 1, "backbone.grid_w");
    if (bb.shaping_final != "none" && bb.shaping_final != "relu" &&
        bb.shaping_final != "sigmoid")
        throw ConfigError("backbone.shaping_final must be none|relu|sigmoid, got \"" +
                           bb.shaping_final + "\"");

    require_at_least(protolayer.mask_count, 1, "protolayer.mask_count");
    require_at_least(protolayer.per_class_prototypes, 1, "protolayer.per_class_prototypes");
    if (!(protolayer.epsilon > 0.0) || protolayer.epsilon >= 1.0)
        throw ConfigError("protolayer.epsilon must lie in (0, 1)");

    if (trainer.lambda1 < 0.0)
        throw ConfigError("trainer.lambda1 must be >= 0");
    if (trainer.lambda2 > 0.0)
        throw ConfigError("trainer.lambda2 must be <= 0");
    if (trainer.lambda3 < 0.0)
        throw ConfigError("trainer.lambda3 must be >= 0");
    require_positive(trainer.lr_backbone, "trainer.lr_backbone");
    require_positive(trainer.lr_shaping, "trainer.lr_shaping");
    require_positive(trainer.lr_prototype, "trainer.lr_prototype");
    require_positive(trainer.lr_head, "trainer.lr_head");
    require_at_least(trainer.batch_size, 1, "trainer.batch_size");
    require_at_least(trainer.epochs, 0, "trainer.epochs");
    require_at_least(trainer.warmup_epochs, 0, "trainer.warmup_epochs");
    require_at_least(trainer.push_period, 1, "trainer.push_period");
    require_at_least(trainer.head_refit_iterations, 0, "trainer.head_refit_iterations");
    require_at_least(trainer.push_augmentations, 1, "trainer.push_augmentations");
    if (trainer.optimizer != "adam" && trainer.optimizer != "sgd")
        throw ConfigError("trainer.optimizer must be adam|sgd, got \"" +
                           trainer.optimizer + "\"");

    if (mdm.scales.empty())
        throw ConfigError("mdm.scales must not be empty");
    for (int s : mdm.scales)
        require_at_least(s, 1, "mdm.scales entry");
    if (mdm.tau < 0.0 || mdm.tau > 1.0)
        throw ConfigError("mdm.tau must lie in [0, 1]");
    if (mdm.eta < 0.0)
        throw ConfigError("mdm.eta must be >= 0");
    require_positive(mdm.lr, "mdm.lr");
    require_at_least(mdm.steps, 1, "mdm.steps");
    if (mdm.gamma < 0.0)
        throw ConfigError("mdm.gamma must be >= 0");
    if (mdm.alpha < 0.0 || mdm.beta < 0.0)
        throw ConfigError("mdm.alpha and mdm.beta must be >= 0");

    if (!(eval.top_percent > 0.0) || eval.top_percent > 100.0)
        throw ConfigError("eval.top_percent must lie in (0, 100]");
    require_at_least(eval.step_percent, 1, "eval.step_percent");
    if (eval.step_percent > 100)
        throw ConfigError("eval.step_percent must be <= 100");
    require_at_least(eval.occlusion_patch, 1, "eval.occlusion_patch");
    require_at_least(eval.occlusion_stride, 1, "eval.occlusion_stride");
    require_at_least(eval.max_images, 0, "eval.max_images");

    require_at_least(dataset.classes, 1, "dataset.classes");
    if (dataset.classes > 8)
        throw ConfigError("dataset.classes must be <= 8 (shape/colour vocabulary)");
    require_at_least(dataset.per_class, 1, "dataset.per_class");
    require_at_least(dataset.image_size, 16, "dataset.image_size");
    require_at_least(dataset.clutter, 0, "dataset.clutter");
    if (dataset.noise_sigma < 0.0)
        throw ConfigError("dataset.noise_sigma must be >= 0");
    if (!(dataset.train_fraction > 0.0) || !(dataset.train_fraction < 1.0))
        throw ConfigError("dataset.train_fraction must lie in (0, 1)");
}

nlohmann::json RunConfig::to_json() const {
    json j;
    j["backbone"] = {{"input_c", backbone.input_c},
                     {"input_h", backbone.input_h},
                     {"input_w", backbone.input_w},
                     {"input_mean", backbone.input_mean},
                     {"blocks", blocks_to_json(backbone.blocks)},
                     {"shaping_channels", backbone.shaping_channels},
                     {"grid_h", backbone.grid_h},
                     {"grid_w", backbone.grid_w},
                     {"shaping_final", backbone.shaping_final}};
    j["protolayer"] = {{"mask_count", protolayer.mask_count},
                       {"per_class_prototypes", protolayer.per_class_prototypes},
                       {"epsilon", protolayer.epsilon},
                       {"head_init_own", protolayer.head_init_own},
                       {"head_init_other", protolayer.head_init_other}};
    j["trainer"] = {{"lambda1", trainer.lambda1},
                    {"lambda2", trainer.lambda2},
                    {"lambda3", trainer.lambda3},
                    {"lr_backbone", trainer.lr_backbone},
                    {"lr_shaping", trainer.lr_shaping},
                    {"lr_prototype", trainer.lr_prototype},
                    {"lr_head", trainer.lr_head},
                    {"batch_size", trainer.batch_size},
                    {"epochs", trainer.epochs},
                    {"warmup_epochs", trainer.warmup_epochs},
                    {"push_period", trainer.push_period},
                    {"head_refit_iterations", trainer.head_refit_iterations},
                    {"push_augmentations", trainer.push_augmentations},
                    {"optimizer", trainer.optimizer},
                    {"seed", trainer.seed}};
    j["mdm"] = {{"scales", mdm.scales}, {"tau", mdm.tau},     {"eta", mdm.eta},
                {"lr", mdm.lr},         {"steps", mdm.steps}, {"gamma", mdm.gamma},
                {"alpha", mdm.alpha},   {"beta", mdm.beta}};
    j["eval"] = {{"top_percent", eval.top_percent},
                 {"step_percent", eval.step_percent},
                 {"occlusion_patch", eval.occlusion_patch},
                 {"occlusion_stride", eval.occlusion_stride},
                 {"max_images", eval.max_images}};
    j["dataset"] = {{"classes", dataset.classes},
                    {"per_class", dataset.per_class},
                    {"image_size", dataset.image_size},
                    {"clutter", dataset.clutter},
                    {"noise_sigma", dataset.noise_sigma},
                    {"train_fraction", dataset.train_fraction}};
    return j;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
    check_keys(j, "config",
               {"backbone", "protolayer", "trainer", "mdm", "eval", "dataset"});
    RunConfig c;
    if (auto it = j.find("backbone"); it != j.end()) {
        const json& jb = *it;
        check_keys(jb, "backbone",
                   {"input_c", "input_h", "input_w", "input_mean", "blocks",
                    "shaping_channels", "grid_h", "grid_w", "shaping_final"});
        read(jb, "input_c", c.backbone.input_c);
        read(jb, "input_h", c.backbone.input_h);
        read(jb, "input_w", c.backbone.input_w);
        read(jb, "input_mean", c.backbone.input_mean);
        if (auto bit = jb.find("blocks"); bit != jb.end())
            c.backbone.blocks = blocks_from_json(*bit);
        read(jb, "shaping_channels", c.backbone.shaping_channels);
        read(jb, "grid_h", c.backbone.grid_h);
        read(jb, "grid_w", c.backbone.grid_w);
        read(jb, "shaping_final", c.backbone.shaping_final);
    }
    if (auto it = j.find("protolayer"); it != j.end()) {
        const json& jp = *it;
        check_keys(jp, "protolayer",
                   {"mask_count", "per_class_prototypes", "epsilon", "head_init_own",
                    "head_init_other"});
        read(jp, "mask_count", c.protolayer.mask_count);
        read(jp, "per_class_prototypes", c.protolayer.per_class_prototypes);
        read(jp, "epsilon", c.protolayer.epsilon);
        read(jp, "head_init_own", c.protolayer.head_init_own);
        read(jp, "head_init_other", c.protolayer.head_init_other);
    }
    if (auto it = j.find("trainer"); it != j.end()) {
        const json& jt = *it;
        check_keys(jt, "trainer",
                   {"lambda1", "lambda2", "lambda3", "lr_backbone", "lr_shaping",
                    "lr_prototype", "lr_head", "batch_size", "epochs", "warmup_epochs",
                    "push_period", "head_refit_iterations", "push_augmentations",
                    "optimizer", "seed"});
        read(jt, "lambda1", c.trainer.lambda1);
        read(jt, "lambda2", c.trainer.lambda2);
        read(jt, "lambda3", c.trainer.lambda3);
        read(jt, "lr_backbone", c.trainer.lr_backbone);
        read(jt, "lr_shaping", c.trainer.lr_shaping);
        read(jt, "lr_prototype", c.trainer.lr_prototype);
        read(jt, "lr_head", c.trainer.lr_head);
        read(jt, "batch_size", c.trainer.batch_size);
        read(jt, "epochs", c.trainer.epochs);
        read(jt, "warmup_epochs", c.trainer.warmup_epochs);
        read(jt, "push_period", c.trainer.push_period);
        read(jt, "head_refit_iterations", c.trainer.head_refit_iterations);
        read(jt, "push_augmentations", c.trainer.push_augmentations);
        read(jt, "optimizer", c.trainer.optimizer);
        read(jt, "seed", c.trainer.seed);
    }
    if (auto it = j.find("mdm"); it != j.end()) {
        const json& jm = *it;
        check_keys(jm, "mdm",
                   {"scales", "tau", "eta", "lr", "steps", "gamma", "alpha", "beta"});
        read(jm, "scales", c.mdm.scales);
        read(jm, "tau", c.mdm.tau);
        read(jm, "eta", c.mdm.eta);
        read(jm, "lr", c.mdm.lr);
        read(jm, "steps", c.mdm.steps);
        read(jm, "gamma", c.mdm.gamma);
        read(jm, "alpha", c.mdm.alpha);
        read(jm, "beta", c.mdm.beta);
    }
    if (auto it = j.find("eval"); it != j.end()) {
        const json& je = *it;
        check_keys(je, "eval",
                   {"top_percent", "step_percent", "occlusion_patch", "occlusion_stride",
                    "max_images"});
        read(je, "top_percent", c.eval.top_percent);
        read(je, "step_percent", c.eval.step_percent);
        read(je, "occlusion_patch", c.eval.occlusion_patch);
        read(je, "occlusion_stride", c.eval.occlusion_stride);
        read(je, "max_images", c.eval.max_images);
    }
    if (auto it = j.find("dataset"); it != j.end()) {
        const json& jd = *it;
        check_keys(jd, "dataset",
                   {"classes", "per_class", "image_size", "clutter", "noise_sigma",
                    "train_fraction"});
        read(jd, "classes", c.dataset.classes);
        read(jd, "per_class", c.dataset.per_class);
        read(jd, "image_size", c.dataset.image_size);
        read(jd, "clutter", c.dataset.clutter);
        read(jd, "noise_sigma", c.dataset.noise_sigma);
        read(jd, "train_fraction", c.dataset.train_fraction);
    }
    c.validate();
    return c;
}

RunConfig RunConfig::load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw ConfigError("cannot open config file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("invalid JSON in " + path + ": " + e.what());
    }
    return from_json(j);
}

void RunConfig::save_file(const std::string& path) const {
    std::ofstream out(path);
    if (!out)
        throw ConfigError("cannot write config file: " + path);
    out << to_json().dump(2) << "\n";
}

}  // namespace dproto
