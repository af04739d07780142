#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dproto/autodiff.hpp"
#include "dproto/config.hpp"
#include "dproto/tensor.hpp"

namespace dproto {

struct ProtoForward {
    Tensor z;            // [n, D1], masked pooled features per mask
    Tensor s;            // [n, K], squared distances ||z_i - p_j||^2
    Tensor log_ratio;    // [n, K], ln((s + 1) / (s + eps))
    Tensor g;            // [K], per-prototype activation (max over masks)
    Tensor logits;       // [m]
    std::vector<int> best_mask;  // mask index attaining each prototype's max
};

// Prototype layer: a frozen pool of n feature masks in [0,1]^{D1 x H1 x W1},
// per-class prototype vectors in R^{D1}, and a linear head over prototype
// activations. The activation of prototype j is the maximum over masks i of
// ln((||z_i - p_j||^2 + 1) / (||z_i - p_j||^2 + eps)).
class ProtoLayer {
public:
    static ProtoLayer build(const ProtoConfig& cfg, int classes, int d1, int h1, int w1,
                            std::uint64_t seed);

    ProtoForward forward(const Tensor& feature_map) const;

    const ProtoConfig& config() const { return cfg_; }
    int classes() const { return classes_; }
    int prototype_count() const { return classes_ * cfg_.per_class_prototypes; }
    int class_of(int prototype) const { return prototype / cfg_.per_class_prototypes; }
    // Prototype ids belonging to one class (contiguous block).
    std::vector<int> class_prototypes(int cls) const;

    Tensor masks() const { return masks_; }        // [n, D1, H1, W1], frozen
    Tensor prototypes() const { return prototypes_; }  // [K, D1], trainable
    Tensor head() const { return head_; }          // [m, K], trainable

    // For checkpoint load.
    static ProtoLayer from_tensors(const ProtoConfig& cfg, int classes, Tensor masks,
                                   Tensor prototypes, Tensor head);

private:
    ProtoConfig cfg_;
    int classes_ = 0;
    Tensor masks_;
    Tensor prototypes_;
    Tensor head_;
};

// Capacity counts of restricted mask families on an h1 x w1 grid, from the
// closed forms, cross-checked against explicit enumeration on every call;
// a mismatch throws Error.
//
// Unit patches: one indicator mask per grid cell.
long long count_unit_patch_prototypes(int h1, int w1);
// Axis-aligned rectangular patches covering more than one cell, excluding the
// full grid (that one is the global-average case).
long long count_rect_patch_prototypes(int h1, int w1);

// An explicit mask that reproduces a classical restricted feature inside the
// unrestricted-mask formalism. masked_gap(feat, mask) equals `scale` times
// the reference quantity named in `description`, channel by channel.
struct ContainmentWitness {
    Tensor mask;  // [d1, h1, w1]
    double scale;
    std::string description;
};

ContainmentWitness unit_patch_witness(int d1, int h1, int w1, int u, int v);
// Rectangle rows [r0, r1] x cols [c0, c1], inclusive bounds.
ContainmentWitness rect_patch_witness(int d1, int h1, int w1, int r0, int c0, int r1, int c1);
ContainmentWitness global_scalar_witness(int d1, int h1, int w1);

}  // namespace dproto
