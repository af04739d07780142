#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dproto/image.hpp"
#include "dproto/mdm.hpp"
#include "dproto/model.hpp"

namespace dproto {

// Pixel-overlap scores between a binary saliency mask and ground truth.
// Ratios with an empty denominator come back as 0 with `degenerate` set.
struct LocalizationMetrics {
    double dice = 0.0;
    double iou = 0.0;
    double ppv = 0.0;
    double sensitivity = 0.0;
    long long tp = 0, fp = 0, tn = 0, fn = 0;
    bool degenerate = false;
};

// Both images are single-channel with entries treated as 0/1 via > 0.5.
LocalizationMetrics localization_metrics(const Image& cam_binary, const Image& truth);

// Keeps exactly ceil(top_percent/100 * H*W) pixels, chosen by descending cam
// value with ties at the cut broken by row-major pixel index.
Image binarize_cam(const Cam& cam, double top_percent);

// Model confidence in the originally predicted class, before and after
// reducing the image to its cam-selected region.
struct ConfidencePair {
    double original = 0.0;  // Y
    double masked = 0.0;    // O
};

ConfidencePair confidence_pair(const Model& model, const Image& image, const Cam& cam,
                               double top_percent);

struct DropIncrease {
    double ad = 0.0;  // average drop, in [0, 100]
    double ai = 0.0;  // average increase, in [0, 100]
    int degenerate = 0;  // cases with Y == 0, which contribute 0 to AD
};

DropIncrease aggregate_drop_increase(const std::vector<ConfidencePair>& cases);

struct CurveResult {
    std::vector<double> fractions;      // strictly increasing, 0 to 1
    std::vector<double> probabilities;  // true-class confidence per fraction
    double auc = 0.0;                   // trapezoidal integral
};

// Deletion zeroes pixels of the original image in descending-cam order;
// insertion restores them into an all-zero image in the same order. The
// deletion curve's first point equals the insertion curve's last point.
std::pair<CurveResult, CurveResult> deletion_insertion(const Model& model, const Image& image,
                                                       int true_class, const Cam& cam,
                                                       int step_percent);

// Sliding-window occlusion map: each pixel scores the mean predicted-class
// confidence drop over the windows covering it, min-max normalized.
Cam occlusion_baseline(const Model& model, const Image& image, int patch, int stride);

// Uniform random cam, the comparison floor for localization quality.
Cam random_cam(int h, int w, std::uint64_t seed);

struct SweepRow {
    int threshold = 0;  // top percentage, 1..99
    double dice = 0.0;
    double iou = 0.0;
    double ppv = 0.0;
    double sensitivity = 0.0;
};

// Mean localization metrics per top-percent threshold from 1 to 99.
std::vector<SweepRow> threshold_sweep(const std::vector<Cam>& cams,
                                      const std::vector<const Image*>& truths);

void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows);
void write_curves_csv(const std::string& path, const std::vector<double>& fractions,
                      const std::vector<double>& deletion_mean,
                      const std::vector<double>& insertion_mean);

}  // namespace dproto
