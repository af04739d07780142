#include "dproto/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "dproto/errors.hpp"
#include "dproto/optimizer.hpp"
#include "dproto/rng.hpp"

namespace dproto {

namespace {

// 1 on off-class head entries, 0 on own-class ones.
Tensor off_class_mask(const Model& model) {
    const int m = model.proto.classes();
    const int k = model.proto.prototype_count();
    std::vector<double> v(static_cast<std::size_t>(m) * k, 1.0);
    for (int c = 0; c < m; ++c)
        for (int j = 0; j < k; ++j)
            if (model.proto.class_of(j) == c)
                v[static_cast<std::size_t>(c) * k + j] = 0.0;
    return Tensor::from({m, k}, std::move(v));
}

std::vector<int> other_class_prototypes(const Model& model, int cls) {
    std::vector<int> ids;
    for (int j = 0; j < model.proto.prototype_count(); ++j)
        if (model.proto.class_of(j) != cls)
            ids.push_back(j);
    return ids;
}

std::vector<int> shuffled_indices(std::size_t n, Rng& rng) {
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = n; i > 1; --i)
        std::swap(idx[i - 1], idx[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1))]);
    return idx;
}

double push_magnitude(AugmentKind kind, Rng& rng) {
    switch (kind) {
        case AugmentKind::rotation: return rng.uniform(-25.0, 25.0);
        case AugmentKind::shear: return rng.uniform(-0.2, 0.2);
        case AugmentKind::perspective: return rng.uniform(0.0, 0.1);
        case AugmentKind::distortion: return rng.uniform(0.0, 3.0);
    }
    return 0.0;
}

// z rows of one image under every mask, as plain values.
std::vector<double> masked_features(const Model& model, const Image& img) {
    ModelForward f = model.forward(img);
    return f.proto.z.values();
}

// (best squared distance, best mask index) of prototype row p against z rows.
std::pair<double, int> nearest_mask(const std::vector<double>& z, int n, int d,
                                    const double* p) {
    double best = std::numeric_limits<double>::infinity();
    int best_i = 0;
    for (int i = 0; i < n; ++i) {
        double acc = 0.0;
        const double* row = z.data() + static_cast<std::size_t>(i) * d;
        for (int c = 0; c < d; ++c) {
            const double diff = row[c] - p[c];
            acc += diff * diff;
        }
        if (acc < best) {
            best = acc;
            best_i = i;
        }
    }
    return {best, best_i};
}

}  // namespace

Tensor image_loss_graph(const Model& model, const Sample& sample, const TrainConfig& cfg) {
    if (sample.label < 0 || sample.label >= model.proto.classes())
        throw Error("compute_loss: label " + std::to_string(sample.label) + " out of range");
    ModelForward f = model.forward(sample.image);
    const Tensor ce = softmax_xent(f.proto.logits, sample.label);
    const Tensor clst =
        min_all(gather_cols(f.proto.s, model.proto.class_prototypes(sample.label)));
    Tensor loss = add(ce, mul_scalar(clst, cfg.lambda1));
    const auto others = other_class_prototypes(model, sample.label);
    if (!others.empty()) {
        const Tensor sep = mul_scalar(min_all(gather_cols(f.proto.s, others)), -1.0);
        loss = add(loss, mul_scalar(sep, cfg.lambda2));
    }
    return loss;
}

Tensor head_l1_graph(const Model& model) {
    return sum_all(mul(abs(model.proto.head()), off_class_mask(model)));
}

LossBreakdown compute_loss(const Model& model, const std::vector<const Sample*>& batch,
                           const TrainConfig& cfg, bool backward) {
    if (batch.empty())
        throw Error("compute_loss: empty batch");
    const int classes = model.proto.classes();
    const double inv_b = 1.0 / static_cast<double>(batch.size());

    LossBreakdown bd;
    for (const Sample* sm : batch) {
        if (sm->label < 0 || sm->label >= classes)
            throw Error("compute_loss: label " + std::to_string(sm->label) + " out of range");
        ModelForward f = model.forward(sm->image);
        const Tensor ce = softmax_xent(f.proto.logits, sm->label);
        const Tensor clst = min_all(gather_cols(f.proto.s, model.proto.class_prototypes(sm->label)));
        const auto others = other_class_prototypes(model, sm->label);
        Tensor sep;
        if (!others.empty())
            sep = mul_scalar(min_all(gather_cols(f.proto.s, others)), -1.0);

        bd.ce += ce.scalar() * inv_b;
        bd.clst += clst.scalar() * inv_b;
        if (sep.defined())
            bd.sep += sep.scalar() * inv_b;

        if (backward) {
            Tensor img_loss = add(ce, mul_scalar(clst, cfg.lambda1));
            if (sep.defined())
                img_loss = add(img_loss, mul_scalar(sep, cfg.lambda2));
            mul_scalar(img_loss, inv_b).backward();
        }
    }

    const Tensor l1 = head_l1_graph(model);
    bd.l1 = l1.scalar();
    if (backward)
        mul_scalar(l1, cfg.lambda3).backward();

    bd.total = bd.ce + cfg.lambda1 * bd.clst + cfg.lambda2 * bd.sep + cfg.lambda3 * bd.l1;
    return bd;
}

std::vector<PushRecord> push_prototypes(Model& model, const std::vector<Sample>& train, int R,
                                        std::uint64_t seed) {
    if (R < 1)
        throw ConfigError("push_prototypes: R must be >= 1");
    const int n = model.cfg.protolayer.mask_count;
    const int d = model.cfg.backbone.shaping_channels;
    const int k = model.proto.prototype_count();

    std::vector<std::vector<int>> by_class(static_cast<std::size_t>(model.proto.classes()));
    for (std::size_t i = 0; i < train.size(); ++i)
        by_class[static_cast<std::size_t>(train[i].label)].push_back(static_cast<int>(i));
    for (int c = 0; c < model.proto.classes(); ++c)
        if (by_class[static_cast<std::size_t>(c)].empty())
            throw Error("push_prototypes: class " + std::to_string(c) + " has no training images");

    // One forward per train image, shared across all prototypes.
    std::vector<std::vector<double>> z_cache(train.size());
    for (std::size_t i = 0; i < train.size(); ++i)
        z_cache[i] = masked_features(model, train[i].image);

    auto& pvals = model.proto.prototypes().values();
    auto& prov = model.proto_provenance.values();
    auto& src_pixels = model.proto_source_images.values();
    const std::size_t plane = model.proto_source_images.size() / static_cast<std::size_t>(k);

    std::vector<PushRecord> records;
    for (int j = 0; j < k; ++j) {
        const double* pj = pvals.data() + static_cast<std::size_t>(j) * d;

        PushRecord rec;
        rec.prototype = j;
        double best = std::numeric_limits<double>::infinity();
        for (int idx : by_class[static_cast<std::size_t>(model.proto.class_of(j))]) {
            const auto [dist, mask_i] = nearest_mask(z_cache[static_cast<std::size_t>(idx)], n, d, pj);
            if (dist < best) {
                best = dist;
                rec.source_index = idx;
                rec.source_mask = mask_i;
            }
        }

        const Image& src = train[static_cast<std::size_t>(rec.source_index)].image;
        Rng rng(derive_seed(seed, "proto", static_cast<std::uint64_t>(j)));
        std::vector<double> mean(static_cast<std::size_t>(d), 0.0);
        for (int r = 0; r < R; ++r) {
            const AugmentKind kind = augment_kind_from_index(rng.uniform_int(0, 3));
            const double magnitude = push_magnitude(kind, rng);
            const Image view = augment(src, kind, magnitude, rng.next_u64());
            const std::vector<double> z = masked_features(model, view);
            const auto [dist, e_r] = nearest_mask(z, n, d, pj);
            rec.view_masks.push_back(e_r);
            rec.view_vectors.emplace_back(z.begin() + static_cast<std::ptrdiff_t>(e_r) * d,
                                          z.begin() + static_cast<std::ptrdiff_t>(e_r + 1) * d);
            for (int c = 0; c < d; ++c) mean[static_cast<std::size_t>(c)] += rec.view_vectors.back()[static_cast<std::size_t>(c)];
        }
        for (int c = 0; c < d; ++c)
            pvals[static_cast<std::size_t>(j) * d + c] = mean[static_cast<std::size_t>(c)] / R;

        prov[static_cast<std::size_t>(j) * 4 + 0] = 1.0;
        prov[static_cast<std::size_t>(j) * 4 + 1] = static_cast<double>(rec.source_index);
        prov[static_cast<std::size_t>(j) * 4 + 2] = static_cast<double>(rec.source_mask);
        prov[static_cast<std::size_t>(j) * 4 + 3] = static_cast<double>(R);
        std::copy(src.data.begin(), src.data.end(),
                  src_pixels.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(j) * plane));
        records.push_back(std::move(rec));
    }
    return records;
}

RefitReport refit_head(Model& model, const std::vector<Sample>& train, int iterations,
                       const TrainConfig& cfg, std::uint64_t seed) {
    RefitReport report;
    report.passes = iterations;
    if (iterations == 0)
        return report;

    // Prototype activations are fixed while only the head moves; cache them.
    std::vector<Tensor> g_cache;
    g_cache.reserve(train.size());
    for (const Sample& sm : train)
        g_cache.push_back(model.forward(sm.image).proto.g.detach());

    const Tensor off_mask = off_class_mask(model);
    const Tensor head = model.proto.head();
    const int k = model.proto.prototype_count();
    const int classes = model.proto.classes();
    Optimizer opt(cfg.optimizer);
    opt.add_group("head", {head}, cfg.lr_head);

    const double inv_n = 1.0 / static_cast<double>(train.size());
    for (int pass = 0; pass < iterations; ++pass) {
        Rng rng(derive_seed(seed, "refit", static_cast<std::uint64_t>(pass)));
        const auto order = shuffled_indices(train.size(), rng);
        double pass_loss = 0.0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t stop =
                std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            const double inv_b = 1.0 / static_cast<double>(stop - start);
            opt.zero_grad();
            for (std::size_t q = start; q < stop; ++q) {
                const int i = order[q];
                const Tensor logits =
                    reshape(matmul(head, reshape(g_cache[static_cast<std::size_t>(i)], {k, 1})),
                            {classes});
                const Tensor ce = softmax_xent(logits, train[static_cast<std::size_t>(i)].label);
                pass_loss += ce.scalar() * inv_n;
                mul_scalar(ce, inv_b).backward();
            }
            const Tensor l1 = sum_all(mul(abs(head), off_mask));
            mul_scalar(l1, cfg.lambda3).backward();
            opt.step();
        }
        if (pass == 0)
            report.first_loss = pass_loss;
        report.last_loss = pass_loss;
    }
    report.non_increasing = report.last_loss <= report.first_loss + 1e-12;
    return report;
}

double accuracy(const Model& model, const std::vector<Sample>& samples) {
    if (samples.empty())
        return 0.0;
    int hit = 0;
    for (const Sample& sm : samples)
        if (Model::predicted_class(model.forward(sm.image)) == sm.label)
            ++hit;
    return static_cast<double>(hit) / static_cast<double>(samples.size());
}

std::vector<EpochLog> train(Model& model, const Dataset& ds, const TrainConfig& cfg) {
    {
        RunConfig probe = model.cfg;
        probe.trainer = cfg;
        probe.validate();
    }
    if (ds.class_names.size() != static_cast<std::size_t>(model.proto.classes()))
        throw Error("train: dataset has " + std::to_string(ds.class_names.size()) +
                    " classes, model expects " + std::to_string(model.proto.classes()));
    std::vector<int> per_class(ds.class_names.size(), 0);
    for (const Sample& sm : ds.train) ++per_class[static_cast<std::size_t>(sm.label)];
    for (std::size_t c = 0; c < per_class.size(); ++c)
        if (per_class[c] == 0)
            throw Error("train: class " + std::to_string(c) + " has no training images");

    Optimizer opt(cfg.optimizer);
    {
        std::vector<Tensor> blocks, shaping;
        for (auto& [name, t] : model.backbone.block_params()) blocks.push_back(t);
        for (auto& [name, t] : model.backbone.shaping_params()) shaping.push_back(t);
        opt.add_group("backbone", std::move(blocks), cfg.lr_backbone);
        opt.add_group("shaping", std::move(shaping), cfg.lr_shaping);
        opt.add_group("prototype", {model.proto.prototypes()}, cfg.lr_prototype);
        opt.add_group("head", {model.proto.head()}, cfg.lr_head);
    }

    std::vector<EpochLog> logs;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const bool warmup = epoch <= cfg.warmup_epochs;
        for (auto& [name, t] : model.backbone.block_params()) t.set_requires_grad(!warmup);

        Rng shuffle_rng(derive_seed(cfg.seed, "shuffle", static_cast<std::uint64_t>(epoch)));
        const auto order = shuffled_indices(ds.train.size(), shuffle_rng);

        EpochLog log;
        log.epoch = epoch;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t stop =
                std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<const Sample*> batch;
            for (std::size_t q = start; q < stop; ++q)
                batch.push_back(&ds.train[static_cast<std::size_t>(order[q])]);

            opt.zero_grad();
            const LossBreakdown bd = compute_loss(model, batch, cfg, true);
            if (!std::isfinite(bd.total) || bd.total > 1e6)
                throw DivergenceError("train: loss " + std::to_string(bd.total) + " at epoch " +
                                      std::to_string(epoch));
            opt.step();

            const double w = static_cast<double>(batch.size()) / static_cast<double>(order.size());
            log.loss.total += bd.total * w;
            log.loss.ce += bd.ce * w;
            log.loss.clst += bd.clst * w;
            log.loss.sep += bd.sep * w;
            log.loss.l1 += bd.l1 * w;
        }

        log.train_acc = accuracy(model, ds.train);
        log.test_acc = accuracy(model, ds.test);
        log.pre_push_test_acc = log.test_acc;
        log.post_push_test_acc = log.test_acc;
        log.pushed = !warmup && (epoch % cfg.push_period == 0);
        if (log.pushed) {
            push_prototypes(model, ds.train, cfg.push_augmentations,
                            derive_seed(cfg.seed, "push", static_cast<std::uint64_t>(epoch)));
            opt.reset_group_state("prototype");
            log.post_push_test_acc = accuracy(model, ds.test);
            refit_head(model, ds.train, cfg.head_refit_iterations, cfg,
                       derive_seed(cfg.seed, "refit-epoch", static_cast<std::uint64_t>(epoch)));
            log.train_acc = accuracy(model, ds.train);
            log.test_acc = accuracy(model, ds.test);
        }
        logs.push_back(log);
    }
    return logs;
}

void write_train_log(const std::string& path, const std::vector<EpochLog>& logs) {
    std::ofstream out(path);
    if (!out)
        throw DataError("cannot write training log: " + path);
    out << "epoch,total,ce,clst,sep,l1,train_acc,test_acc,pushed\n";
    out.precision(17);
    for (const EpochLog& l : logs)
        out << l.epoch << ',' << l.loss.total << ',' << l.loss.ce << ',' << l.loss.clst << ','
            << l.loss.sep << ',' << l.loss.l1 << ',' << l.train_acc << ',' << l.test_acc << ','
            << (l.pushed ? 1 : 0) << '\n';
}

}  // namespace dproto
