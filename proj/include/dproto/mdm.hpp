#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dproto/config.hpp"
#include "dproto/image.hpp"
#include "dproto/model.hpp"

namespace dproto {

// One coarse mask grid, optimized so that masking the image preserves a
// detection node's activation while an L1 term pushes unneeded cells to zero.
struct MaskVector {
    int rows = 0;
    int cols = 0;
    double eta = 0.0;
    bool trained = false;
    std::vector<double> values;      // rows*cols entries, in [0,1] after every step
    std::vector<double> loss_trace;  // one entry per optimization step
    double final_loss = 0.0;
    bool window_monotone = true;  // trailing 100-step window means never rose
};

// Scalar- or vector-valued activation probe. `preprocess` shifts a raw image
// tensor [C,H,W] into the probed network's input domain (identity for scalar
// probes, mean-centering for prototype probes); the mask multiplies that
// domain, so a masked-out cell reads as background rather than black.
// `activation` maps the (masked) network input to the probed activation; the
// optimizer matches it to `target` in squared L2 distance. Prototype nodes
// borrow the model, which must stay alive and unchanged while in use.
struct DetectionNode {
    std::string kind;  // "prototype" or "scalar"
    int predicted_class = -1;
    int prototype = -1;   // p_t
    int mask_index = -1;  // frozen feature-mask index (j_x or the source's)
    Tensor target;        // detached activation target
    std::function<Tensor(const Tensor& image)> preprocess;
    std::function<Tensor(const Tensor& input)> activation;
};

// Freezes every trainable model parameter on construction and restores
// trainability on destruction, so mask optimization back-propagates into the
// mask alone. A model that is already fully frozen is left untouched, which
// keeps concurrent explanations over one shared frozen model write-free.
class FreezeScope {
  public:
    explicit FreezeScope(Model& model);
    ~FreezeScope();
    FreezeScope(const FreezeScope&) = delete;
    FreezeScope& operator=(const FreezeScope&) = delete;

  private:
    std::vector<Tensor> frozen_;
};

// Classifies x, picks the predicted class's prototype with the largest head
// contribution w*g (ties to the lowest id), freezes the feature mask whose
// vector lies nearest that prototype, and targets the image's own activation.
DetectionNode select_detection_node(const Model& model, const Image& x);

// Node for explaining a prototype on its own source image: the feature mask
// is the one whose vector on `source` lies nearest the prototype, and the
// target is the prototype vector itself.
DetectionNode prototype_detection_node(const Model& model, int prototype, const Image& source);

// Wraps an arbitrary differentiable probe for harnesses and tests; the target
// is the probe's value on the unmasked image.
DetectionNode scalar_detection_node(std::function<Tensor(const Tensor&)> fn, const Image& x);

// Plain projected gradient descent on a rows x cols mask initialized to tau:
// loss = ||activation(mask*x) - target||^2 + eta * mean|mask|, entries clamped
// to [0,1] after every step. Model and image stay frozen. Non-finite loss
// raises DivergenceError.
MaskVector optimize_mask_vector(const DetectionNode& node, const Image& x, int rows, int cols,
                                double eta, double tau, int steps, double lr);

// One MaskVector per configured scale; threads > 1 distributes scales across
// workers with bit-identical results for any thread count.
std::vector<MaskVector> optimize_scales(const DetectionNode& node, const Image& x,
                                        const MdmConfig& cfg, int threads);

// Mixed class activation map: values are exactly 0 outside the thresholded
// region and max out at 1 unless the whole map is zero.
struct Cam {
    int h = 0;
    int w = 0;
    double gamma = 0.0;
    std::vector<double> values;        // h*w, in [0,1]
    std::vector<std::uint8_t> region;  // indicator of sum >= gamma
};

// Sums the bilinearly upsampled mask grids, zeroes everything below gamma,
// and min-max normalizes the rest; a constant map normalizes to all zeros.
Cam mix_cam(const std::vector<MaskVector>& vectors, double gamma, int h, int w);

Image colorize_cam(const Cam& cam);  // fixed 256-entry blue-to-red colormap
Image render_heatmap(const Image& x, const Cam& cam, double alpha, double beta);
Image render_binary(const Image& x, const Cam& cam);

struct Explanation {
    int predicted_class = -1;
    int prototype = -1;       // p_t
    int mask_x = -1;          // feature mask frozen for the input image
    int mask_prototype = -1;  // feature mask frozen for the source image
    bool has_prototype_image = false;
    std::string warning;  // set when provenance is missing
    std::vector<MaskVector> vectors_x;
    std::vector<MaskVector> vectors_prototype;
    Cam cam_x;
    Cam cam_prototype;
    Image prototype_image;
};

// Full decode: node selection, per-scale mask optimization for the image and
// (when provenance exists) for the prototype's source image, and CAM mixing.
// The model's parameters are frozen for the duration and restored on return.
Explanation explain_image(Model& model, const Image& x, const MdmConfig& cfg, int threads);

// Writes cam_*.ppm (grayscale), heatmap_*.ppm, binary_*.ppm, and bundle.json
// into dir; prototype-side files appear only when provenance exists.
void write_explanation(const std::string& dir, const Image& x, const Explanation& e,
                       const MdmConfig& cfg);

struct OrderingPair {
    int region_a = 0;
    int region_b = 0;
    double product = 0.0;  // (I_a - I_b) * (m_a - m_b)
};

struct OrderingReport {
    std::vector<double> contributions;
    std::vector<double> mask_values;
    std::vector<OrderingPair> violations;  // pairs with product < -tol
    double min_product = 0.0;
    double spearman = 0.0;  // rank correlation of contributions vs mask values
};

// Builds an additive concave detection node over disjoint unit regions with
// the given contributions, optimizes a single mask across them, and checks
// that higher-contribution regions end up with mask values at least as large.
OrderingReport ordering_property_harness(const std::vector<double>& contributions, double eta,
                                         int steps, double lr, double tol);

}  // namespace dproto
