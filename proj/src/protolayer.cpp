#include "dproto/protolayer.hpp"

#include <numeric>

#include "dproto/errors.hpp"
#include "dproto/rng.hpp"

namespace dproto {

ProtoLayer ProtoLayer::build(const ProtoConfig& cfg, int classes, int d1, int h1, int w1,
                             std::uint64_t seed) {
    if (classes < 1)
        throw ConfigError("protolayer: need at least one class");
    ProtoLayer pl;
    pl.cfg_ = cfg;
    pl.classes_ = classes;

    {
        Rng rng(derive_seed(seed, "masks"));
        std::vector<double> v(static_cast<std::size_t>(cfg.mask_count) * d1 * h1 * w1);
        for (double& x : v) x = rng.uniform();
        pl.masks_ = Tensor::from({cfg.mask_count, d1, h1, w1}, std::move(v), false);
    }
    {
        Rng rng(derive_seed(seed, "prototypes"));
        const int k = classes * cfg.per_class_prototypes;
        std::vector<double> v(static_cast<std::size_t>(k) * d1);
        for (double& x : v) x = rng.uniform();
        pl.prototypes_ = Tensor::from({k, d1}, std::move(v), true);
    }
    {
        const int k = classes * cfg.per_class_prototypes;
        std::vector<double> v(static_cast<std::size_t>(classes) * k);
        for (int c = 0; c < classes; ++c)
            for (int j = 0; j < k; ++j)
                v[static_cast<std::size_t>(c) * k + j] =
                    (j / cfg.per_class_prototypes == c) ? cfg.head_init_own : cfg.head_init_other;
        pl.head_ = Tensor::from({classes, k}, std::move(v), true);
    }
    return pl;
}

ProtoLayer ProtoLayer::from_tensors(const ProtoConfig& cfg, int classes, Tensor masks,
                                    Tensor prototypes, Tensor head) {
    ProtoLayer pl;
    pl.cfg_ = cfg;
    pl.classes_ = classes;
    pl.masks_ = std::move(masks);
    pl.prototypes_ = std::move(prototypes);
    pl.head_ = std::move(head);
    const int k = classes * cfg.per_class_prototypes;
    if (pl.masks_.ndim() != 4 || pl.masks_.dim(0) != cfg.mask_count)
        throw ConfigError("protolayer: mask tensor shape " + shape_str(pl.masks_.shape()) +
                          " does not match mask_count " + std::to_string(cfg.mask_count));
    if (pl.prototypes_.ndim() != 2 || pl.prototypes_.dim(0) != k ||
        pl.prototypes_.dim(1) != pl.masks_.dim(1))
        throw ConfigError("protolayer: prototype tensor shape " +
                          shape_str(pl.prototypes_.shape()) + " inconsistent with config");
    if (pl.head_.ndim() != 2 || pl.head_.dim(0) != classes || pl.head_.dim(1) != k)
        throw ConfigError("protolayer: head tensor shape " + shape_str(pl.head_.shape()) +
                          " inconsistent with config");
    return pl;
}

std::vector<int> ProtoLayer::class_prototypes(int cls) const {
    std::vector<int> ids(static_cast<std::size_t>(cfg_.per_class_prototypes));
    std::iota(ids.begin(), ids.end(), cls * cfg_.per_class_prototypes);
    return ids;
}

ProtoForward ProtoLayer::forward(const Tensor& feature_map) const {
    ProtoForward f;
    f.z = masked_gap(feature_map, masks_);
    f.s = pairwise_sqdist(f.z, prototypes_);
    f.log_ratio = sub(log(add_scalar(f.s, 1.0)), log(add_scalar(f.s, cfg_.epsilon)));
    f.g = colwise_max(f.log_ratio);
    const auto& aux = f.g.raw()->aux;
    f.best_mask.assign(aux.begin(), aux.end());
    const int k = prototype_count();
    f.logits = reshape(matmul(head_, reshape(f.g, {k, 1})), {classes_});
    return f;
}

namespace {

long long enumerate_rects(int h1, int w1, bool unit_only) {
    long long count = 0;
    for (int r0 = 0; r0 < h1; ++r0)
        for (int r1 = r0; r1 < h1; ++r1)
            for (int c0 = 0; c0 < w1; ++c0)
                for (int c1 = c0; c1 < w1; ++c1) {
                    const long long area =
                        static_cast<long long>(r1 - r0 + 1) * (c1 - c0 + 1);
                    const bool full = (r1 - r0 + 1 == h1) && (c1 - c0 + 1 == w1);
                    if (unit_only ? area == 1 : (area > 1 && !full))
                        ++count;
                }
    return count;
}

void require_grid(int h1, int w1) {
    if (h1 < 1 || w1 < 1)
        throw ConfigError("prototype counting: grid must be positive, got " +
                          std::to_string(h1) + "x" + std::to_string(w1));
}

}  // namespace

long long count_unit_patch_prototypes(int h1, int w1) {
    require_grid(h1, w1);
    const long long closed = static_cast<long long>(h1) * w1;
    const long long enumerated = enumerate_rects(h1, w1, true);
    if (closed != enumerated)
        throw Error("count_unit_patch_prototypes: closed form " + std::to_string(closed) +
                    " != enumeration " + std::to_string(enumerated));
    return closed;
}

long long count_rect_patch_prototypes(int h1, int w1) {
    require_grid(h1, w1);
    const long long hw = static_cast<long long>(h1) * w1;
    if (hw < 2)
        throw ConfigError("count_rect_patch_prototypes: needs a grid of at least two cells");
    const long long closed = hw * (hw + h1 + w1 - 3) / 4 - 1;
    const long long enumerated = enumerate_rects(h1, w1, false);
    if (closed != enumerated)
        throw Error("count_rect_patch_prototypes: closed form " + std::to_string(closed) +
                    " != enumeration " + std::to_string(enumerated));
    return closed;
}

namespace {

ContainmentWitness rect_witness_impl(int d1, int h1, int w1, int r0, int c0, int r1, int c1,
                                     std::string description, double scale) {
    if (r0 < 0 || c0 < 0 || r1 >= h1 || c1 >= w1 || r0 > r1 || c0 > c1)
        throw ConfigError("containment witness: rectangle out of bounds");
    ContainmentWitness wit;
    std::vector<double> m(static_cast<std::size_t>(d1) * h1 * w1, 0.0);
    for (int d = 0; d < d1; ++d)
        for (int r = r0; r <= r1; ++r)
            for (int c = c0; c <= c1; ++c)
                m[(static_cast<std::size_t>(d) * h1 + r) * w1 + c] = 1.0;
    wit.mask = Tensor::from({d1, h1, w1}, std::move(m), false);
    wit.scale = scale;
    wit.description = std::move(description);
    return wit;
}

}  // namespace

ContainmentWitness unit_patch_witness(int d1, int h1, int w1, int u, int v) {
    return rect_witness_impl(d1, h1, w1, u, v, u, v,
                             "single feature-map cell (" + std::to_string(u) + ", " +
                                 std::to_string(v) + "), scaled by 1/(H1*W1)",
                             1.0 / (static_cast<double>(h1) * w1));
}

ContainmentWitness rect_patch_witness(int d1, int h1, int w1, int r0, int c0, int r1, int c1) {
    const double area = static_cast<double>(r1 - r0 + 1) * (c1 - c0 + 1);
    return rect_witness_impl(d1, h1, w1, r0, c0, r1, c1,
                             "average pool over rectangle rows [" + std::to_string(r0) + ", " +
                                 std::to_string(r1) + "] x cols [" + std::to_string(c0) + ", " +
                                 std::to_string(c1) + "], scaled by area/(H1*W1)",
                             area / (static_cast<double>(h1) * w1));
}

ContainmentWitness global_scalar_witness(int d1, int h1, int w1) {
    return rect_witness_impl(d1, h1, w1, 0, 0, h1 - 1, w1 - 1,
                             "global average pool of the feature map", 1.0);
}

}  // namespace dproto
