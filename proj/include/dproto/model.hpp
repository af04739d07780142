#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dproto/backbone.hpp"
#include "dproto/config.hpp"
#include "dproto/image.hpp"
#include "dproto/protolayer.hpp"

namespace dproto {

struct ModelForward {
    Tensor feature_map;  // {D1, H1, W1}
    ProtoForward proto;
};

// Backbone + prototype layer plus the push artifacts needed to explain a
// prediction later: per-prototype source image pixels and provenance.
// proto_provenance is [K, 4] rows of (pushed flag, source image index,
// source mask index, augmentation count R); proto_source_images is
// [K, C, H, W] with zeros for never-pushed prototypes.
struct Model {
    RunConfig cfg;
    Backbone backbone;
    ProtoLayer proto;
    std::vector<std::string> class_names;
    Tensor proto_source_images;
    Tensor proto_provenance;

    static Model build(const RunConfig& cfg, std::vector<std::string> class_names,
                       std::uint64_t seed);

    ModelForward forward(const Tensor& image) const;
    ModelForward forward(const Image& image) const;

    // argmax of the logits, ties to the lowest class index
    static int predicted_class(const ModelForward& f);

    bool prototype_pushed(int j) const;
    Image prototype_source_image(int j) const;
};

}  // namespace dproto
