#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dproto/config.hpp"
#include "dproto/image.hpp"

namespace dproto {

struct Sample {
    Image image;  // {3, s, s}
    Image mask;   // {1, s, s}, ground-truth pixels of the class shape, values 0/1
    int label = 0;
    std::string image_path;
    std::string mask_path;
};

struct Dataset {
    std::vector<std::string> class_names;
    int image_size = 0;
    std::vector<Sample> train;
    std::vector<Sample> test;
};

// Writes images/, masks/ and manifest.json under out_dir. Each image contains
// exactly one class shape (class-specific color + shape, drawn last so it is
// never occluded) plus distractor shapes in colors shared across classes over
// a noisy gray background. Byte-identical for identical (cfg, seed).
// Refuses a non-empty out_dir unless force is set.
void generate_dataset(const DatasetConfig& cfg, std::uint64_t seed, const std::string& out_dir,
                      bool force);

// Loads and validates a manifest.json produced by generate_dataset. Image and
// mask files are loaded eagerly; any inconsistency raises DataError.
Dataset load_manifest(const std::string& manifest_path);

enum class AugmentKind { rotation, shear, perspective, distortion };

// Magnitude ranges: rotation |deg| <= 360, shear |factor| <= 0.2,
// perspective corner jitter fraction in [0, 0.1], distortion displacement
// in [0, 3] px. The push pipeline samples rotations from [-25, 25] degrees.
// perspective/distortion draw their jitter from seed; rotation and shear are
// fully determined by magnitude. Resampling is bilinear and out-of-frame
// reads return the 0.5 background.
Image augment(const Image& img, AugmentKind kind, double magnitude, std::uint64_t seed);

AugmentKind augment_kind_from_index(int idx);

}  // namespace dproto
