#include "dproto/model.hpp"

#include "dproto/errors.hpp"

namespace dproto {

Model Model::build(const RunConfig& cfg, std::vector<std::string> class_names,
                   std::uint64_t seed) {
    cfg.validate();
    if (class_names.empty())
        throw ConfigError("model: class name list is empty");
    Model m;
    m.cfg = cfg;
    m.backbone = Backbone::build(cfg.backbone, seed);
    m.proto = ProtoLayer::build(cfg.protolayer, static_cast<int>(class_names.size()),
                                cfg.backbone.shaping_channels, cfg.backbone.grid_h,
                                cfg.backbone.grid_w, seed);
    m.class_names = std::move(class_names);
    const int k = m.proto.prototype_count();
    m.proto_source_images =
        Tensor::zeros({k, cfg.backbone.input_c, cfg.backbone.input_h, cfg.backbone.input_w});
    m.proto_provenance = Tensor::zeros({k, 4});
    return m;
}

ModelForward Model::forward(const Tensor& image) const {
    ModelForward f;
    f.feature_map = backbone.forward(image);
    f.proto = proto.forward(f.feature_map);
    return f;
}

ModelForward Model::forward(const Image& image) const { return forward(image.to_tensor()); }

int Model::predicted_class(const ModelForward& f) {
    const auto& v = f.proto.logits.values();
    int best = 0;
    for (int i = 1; i < static_cast<int>(v.size()); ++i)
        if (v[static_cast<std::size_t>(i)] > v[static_cast<std::size_t>(best)])
            best = i;
    return best;
}

bool Model::prototype_pushed(int j) const {
    return proto_provenance.values()[static_cast<std::size_t>(j) * 4] > 0.5;
}

Image Model::prototype_source_image(int j) const {
    const int c = cfg.backbone.input_c, h = cfg.backbone.input_h, w = cfg.backbone.input_w;
    Image img = Image::zeros(c, h, w);
    const std::size_t plane = static_cast<std::size_t>(c) * h * w;
    const double* src = proto_source_images.data() + static_cast<std::size_t>(j) * plane;
    std::copy(src, src + plane, img.data.begin());
    return img;
}

}  // namespace dproto
