#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dproto/dataset.hpp"
#include "dproto/model.hpp"

namespace dproto {

struct LossBreakdown {
    double total = 0.0;
    double ce = 0.0;
    double clst = 0.0;
    double sep = 0.0;
    double l1 = 0.0;
};

struct EpochLog {
    int epoch = 0;
    LossBreakdown loss;  // per-image means over the epoch
    double train_acc = 0.0;
    double test_acc = 0.0;  // state at epoch end (after any push + refit)
    bool pushed = false;
    double pre_push_test_acc = 0.0;   // equals test_acc on non-push epochs
    double post_push_test_acc = 0.0;  // after push, before head refit
};

struct PushRecord {
    int prototype = 0;
    int source_index = 0;  // position in the train split
    int source_mask = 0;   // mask index that made this image the source
    std::vector<int> view_masks;                   // e_r per augmented view
    std::vector<std::vector<double>> view_vectors;  // z_{e_r} per view
};

struct RefitReport {
    int passes = 0;
    double first_loss = 0.0;
    double last_loss = 0.0;
    bool non_increasing = true;  // monitored, not asserted
};

// Mean loss over the batch: cross-entropy of the logits, cluster cost
// (min own-class squared distance over all masks), separation cost (the
// negative of the same minimum over other-class prototypes), and the l1 of
// off-class head weights. total recomposes exactly as
// ce + lambda1*clst + lambda2*sep + lambda3*l1, evaluated in that order.
// With backward = true, gradients accumulate into the model parameters
// (caller zeroes them first).
LossBreakdown compute_loss(const Model& model, const std::vector<const Sample*>& batch,
                           const TrainConfig& cfg, bool backward);

// Differentiable per-image term ce + lambda1*clst + lambda2*sep (no head l1,
// no batch scaling); compute_loss is built from this.
Tensor image_loss_graph(const Model& model, const Sample& sample, const TrainConfig& cfg);
// Differentiable off-class head l1 term (unweighted).
Tensor head_l1_graph(const Model& model);

// Projects every prototype onto the mean of R augmented nearest-patch
// vectors from its source image: the class image with the globally nearest
// masked feature. Rewrites model prototypes, source images, and provenance;
// deterministic in (model, train split, R, seed).
std::vector<PushRecord> push_prototypes(Model& model, const std::vector<Sample>& train, int R,
                                        std::uint64_t seed);

// Head-only refit on cached prototype activations; exact for the full model
// since only the head changes. Uses a fresh optimizer of cfg.optimizer kind.
RefitReport refit_head(Model& model, const std::vector<Sample>& train, int iterations,
                       const TrainConfig& cfg, std::uint64_t seed);

double accuracy(const Model& model, const std::vector<Sample>& samples);

// Warmup epochs with frozen conv blocks, then joint training; prototype
// push every push_period epochs (after warmup) followed by a head refit.
// Throws DivergenceError when a batch loss is non-finite or above 1e6.
std::vector<EpochLog> train(Model& model, const Dataset& ds, const TrainConfig& cfg);

// CSV rows: epoch,total,ce,clst,sep,l1,train_acc,test_acc,pushed
void write_train_log(const std::string& path, const std::vector<EpochLog>& logs);

}  // namespace dproto
