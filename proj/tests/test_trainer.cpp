#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "dproto/checkpoint.hpp"
#include "dproto/errors.hpp"
#include "dproto/optimizer.hpp"
#include "dproto/rng.hpp"
#include "dproto/trainer.hpp"

using namespace dproto;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_run_cfg() {
    RunConfig cfg;
    cfg.backbone.input_h = 16;
    cfg.backbone.input_w = 16;
    cfg.backbone.blocks = {{6, 3, 1, 2}};
    cfg.backbone.shaping_channels = 5;
    cfg.backbone.grid_h = 8;
    cfg.backbone.grid_w = 8;
    cfg.protolayer.mask_count = 8;
    cfg.protolayer.per_class_prototypes = 2;
    cfg.dataset.classes = 2;
    cfg.dataset.per_class = 12;
    cfg.dataset.image_size = 16;
    cfg.dataset.clutter = 1;
    cfg.trainer.batch_size = 6;
    cfg.trainer.epochs = 4;
    cfg.trainer.warmup_epochs = 2;
    cfg.trainer.push_period = 3;
    cfg.trainer.head_refit_iterations = 4;
    cfg.trainer.push_augmentations = 3;
    return cfg;
}

struct Fixture {
    RunConfig cfg = tiny_run_cfg();
    fs::path dir = fs::temp_directory_path() / "dproto_trainer_ds";
    Dataset ds;
    Fixture() {
        fs::remove_all(dir);
        generate_dataset(cfg.dataset, 31, dir.string(), false);
        ds = load_manifest((dir / "manifest.json").string());
    }
    ~Fixture() { fs::remove_all(dir); }
    Model model(std::uint64_t seed = 1) const { return Model::build(cfg, ds.class_names, seed); }
    std::vector<const Sample*> batch(std::size_t count) const {
        std::vector<const Sample*> b;
        for (std::size_t i = 0; i < count; ++i) b.push_back(&ds.train[i * 5 % ds.train.size()]);
        return b;
    }
};

std::vector<double> snapshot(const std::vector<NamedTensor>& params) {
    std::vector<double> all;
    for (const auto& [name, t] : params) all.insert(all.end(), t.values().begin(), t.values().end());
    return all;
}

}  // namespace

TEST_CASE("loss breakdown: identity, signs, and hand examples") {
    const Fixture fx;
    const Model model = fx.model();
    const auto batch = fx.batch(3);
    const LossBreakdown bd = compute_loss(model, batch, fx.cfg.trainer, false);

    CHECK(bd.clst >= 0.0);
    CHECK(bd.sep <= 0.0);
    CHECK(bd.ce > 0.0);
    CHECK(bd.l1 > 0.0);  // off-class entries start at -0.5
    const double recomposed = bd.ce + fx.cfg.trainer.lambda1 * bd.clst +
                              fx.cfg.trainer.lambda2 * bd.sep + fx.cfg.trainer.lambda3 * bd.l1;
    CHECK(std::abs(bd.total - recomposed) <= 1e-10);

    SUBCASE("two-image batch averages per-image terms") {
        const LossBreakdown a = compute_loss(model, {batch[0]}, fx.cfg.trainer, false);
        const LossBreakdown b = compute_loss(model, {batch[1]}, fx.cfg.trainer, false);
        const LossBreakdown ab = compute_loss(model, {batch[0], batch[1]}, fx.cfg.trainer, false);
        CHECK(ab.ce == doctest::Approx((a.ce + b.ce) / 2).epsilon(1e-12));
        CHECK(ab.clst == doctest::Approx((a.clst + b.clst) / 2).epsilon(1e-12));
        CHECK(ab.sep == doctest::Approx((a.sep + b.sep) / 2).epsilon(1e-12));
        CHECK(ab.l1 == a.l1);  // head term does not depend on the batch
    }

    SUBCASE("zero distance to an own-class prototype zeroes clst") {
        Model m = fx.model();
        const Sample& sm = *batch[0];
        const ModelForward f = m.forward(sm.image);
        // Plant the first own-class prototype exactly on the image's first mask feature.
        const int d = fx.cfg.backbone.shaping_channels;
        const int j = m.proto.class_prototypes(sm.label)[0];
        for (int c = 0; c < d; ++c)
            m.proto.prototypes().values()[static_cast<std::size_t>(j) * d + c] =
                f.proto.z.values()[static_cast<std::size_t>(c)];
        const LossBreakdown planted = compute_loss(m, {&sm}, fx.cfg.trainer, false);
        CHECK(planted.clst == 0.0);
    }

    SUBCASE("zero off-class head weights zero the l1 term") {
        Model m = fx.model();
        auto& h = m.proto.head().values();
        const int k = m.proto.prototype_count();
        for (int c = 0; c < m.proto.classes(); ++c)
            for (int j = 0; j < k; ++j)
                if (m.proto.class_of(j) != c) h[static_cast<std::size_t>(c) * k + j] = 0.0;
        CHECK(compute_loss(m, batch, fx.cfg.trainer, false).l1 == 0.0);
    }
}

TEST_CASE("loss gradient with respect to prototypes matches finite differences") {
    const Fixture fx;
    const Model model = fx.model(7);
    const auto batch = fx.batch(2);
    Tensor prototypes = model.proto.prototypes();

    const auto res = gradient_check(
        [&](const Tensor&) {
            Tensor total;
            for (const Sample* sm : batch) {
                Tensor term = mul_scalar(image_loss_graph(model, *sm, fx.cfg.trainer),
                                         1.0 / static_cast<double>(batch.size()));
                total = total.defined() ? add(total, term) : term;
            }
            return add(total, mul_scalar(head_l1_graph(model), fx.cfg.trainer.lambda3));
        },
        prototypes, 1e-5);
    CHECK(res.max_rel_err < 1e-4);
    CHECK(res.checked == static_cast<int>(prototypes.size()));
}

TEST_CASE("optimizer: sgd arithmetic, adam convergence, freezing, reset") {
    SUBCASE("sgd applies x -= lr * g exactly") {
        Tensor x = Tensor::from({2}, {1.0, -2.0}, true);
        Optimizer opt("sgd");
        opt.add_group("g", {x}, 0.5);
        x.grad() = {0.2, -0.4};
        opt.step();
        CHECK(x.values()[0] == 1.0 - 0.5 * 0.2);
        CHECK(x.values()[1] == -2.0 + 0.5 * 0.4);
    }
    SUBCASE("adam minimizes a quadratic") {
        Tensor x = Tensor::from({2}, {3.0, -4.0}, true);
        Optimizer opt("adam");
        opt.add_group("g", {x}, 0.05);
        for (int i = 0; i < 2000; ++i) {
            opt.zero_grad();
            sum_all(square(x)).backward();
            opt.step();
        }
        CHECK(std::abs(x.values()[0]) < 1e-3);
        CHECK(std::abs(x.values()[1]) < 1e-3);
    }
    SUBCASE("frozen tensors are skipped") {
        Tensor x = Tensor::from({1}, {1.0}, true);
        Optimizer opt("sgd");
        opt.add_group("g", {x}, 1.0);
        x.grad() = {1.0};
        x.set_requires_grad(false);
        opt.step();
        CHECK(x.values()[0] == 1.0);
    }
    SUBCASE("unknown kind is rejected") { CHECK_THROWS_AS(Optimizer("rmsprop"), ConfigError); }
}

TEST_CASE("push: mean identity, provenance, optimality oracle, idempotence") {
    const Fixture fx;
    Model model = fx.model(3);
    const int d = fx.cfg.backbone.shaping_channels;

    const auto records = push_prototypes(model, fx.ds.train, 3, 555);
    REQUIRE(records.size() == static_cast<std::size_t>(model.proto.prototype_count()));

    for (const auto& rec : records) {
        REQUIRE(rec.view_vectors.size() == 3);
        // Prototype equals the arithmetic mean of its recorded view vectors.
        for (int c = 0; c < d; ++c) {
            double mean = 0.0;
            for (const auto& v : rec.view_vectors) mean += v[static_cast<std::size_t>(c)];
            mean /= 3.0;
            CHECK(model.proto.prototypes().values()[static_cast<std::size_t>(rec.prototype) * d + c] ==
                  doctest::Approx(mean).epsilon(1e-14));
        }
        // Source must belong to the prototype's class; provenance recorded.
        CHECK(fx.ds.train[static_cast<std::size_t>(rec.source_index)].label ==
              model.proto.class_of(rec.prototype));
        CHECK(model.prototype_pushed(rec.prototype));
        const auto& prov = model.proto_provenance.values();
        CHECK(prov[static_cast<std::size_t>(rec.prototype) * 4 + 1] == rec.source_index);
        CHECK(prov[static_cast<std::size_t>(rec.prototype) * 4 + 3] == 3.0);
        CHECK(model.prototype_source_image(rec.prototype).data ==
              fx.ds.train[static_cast<std::size_t>(rec.source_index)].image.data);
    }

    SUBCASE("the mean minimizes the summed squared distance (1000 perturbations)") {
        const auto& rec = records[1];
        const double* p =
            model.proto.prototypes().data() + static_cast<std::size_t>(rec.prototype) * d;
        auto objective = [&](const double* q) {
            double s = 0.0;
            for (const auto& v : rec.view_vectors)
                for (int c = 0; c < d; ++c) {
                    const double diff = v[static_cast<std::size_t>(c)] - q[c];
                    s += diff * diff;
                }
            return s;
        };
        const double at_mean = objective(p);
        Rng rng(99);
        std::vector<double> q(static_cast<std::size_t>(d));
        for (int trial = 0; trial < 1000; ++trial) {
            const double scale = rng.uniform(1e-4, 0.5);
            for (int c = 0; c < d; ++c) q[static_cast<std::size_t>(c)] = p[c] + scale * rng.normal();
            CHECK(objective(q.data()) >= at_mean);
        }
    }

    SUBCASE("R=1 copies the single nearest view vector exactly") {
        Model single = fx.model(3);
        const auto recs1 = push_prototypes(single, fx.ds.train, 1, 555);
        for (const auto& rec : recs1)
            for (int c = 0; c < d; ++c)
                CHECK(single.proto.prototypes().values()[static_cast<std::size_t>(rec.prototype) * d + c] ==
                      rec.view_vectors[0][static_cast<std::size_t>(c)]);
    }

    SUBCASE("push is deterministic given the seed") {
        Model a = fx.model(3), b = fx.model(3);
        push_prototypes(a, fx.ds.train, 3, 555);
        push_prototypes(b, fx.ds.train, 3, 555);
        CHECK(a.proto.prototypes().values() == b.proto.prototypes().values());
        CHECK(a.proto_provenance.values() == b.proto_provenance.values());
    }

    SUBCASE("pushing a settled model again is a no-op") {
        // Source selection anchors on the current prototype, so pushes form a
        // fixed-point iteration; once settled, a repeat push with the same
        // seed must change nothing.
        std::vector<double> before;
        bool settled = false;
        for (int it = 0; it < 16 && !settled; ++it) {
            before = model.proto.prototypes().values();
            push_prototypes(model, fx.ds.train, 3, 555);
            settled = model.proto.prototypes().values() == before;
        }
        REQUIRE(settled);
        push_prototypes(model, fx.ds.train, 3, 555);
        CHECK(model.proto.prototypes().values() == before);
    }

    SUBCASE("missing class images raise an error") {
        std::vector<Sample> only_class0;
        for (const Sample& sm : fx.ds.train)
            if (sm.label == 0) only_class0.push_back(sm);
        Model m2 = fx.model(3);
        CHECK_THROWS_WITH_AS(push_prototypes(m2, only_class0, 2, 1), doctest::Contains("class"),
                             Error);
    }
}

TEST_CASE("refit: head-only updates with zero gradients elsewhere") {
    const Fixture fx;
    Model model = fx.model(5);

    SUBCASE("zero iterations change nothing") {
        const auto before = model.proto.head().values();
        const RefitReport rep = refit_head(model, fx.ds.train, 0, fx.cfg.trainer, 1);
        CHECK(model.proto.head().values() == before);
        CHECK(rep.passes == 0);
    }

    SUBCASE("only the head moves; aggregate loss does not increase") {
        const auto blocks_before = snapshot(model.backbone.all_params());
        const auto protos_before = model.proto.prototypes().values();
        const auto head_before = model.proto.head().values();
        for (auto& [name, t] : model.backbone.all_params()) t.zero_grad();
        model.proto.prototypes().zero_grad();

        const RefitReport rep = refit_head(model, fx.ds.train, 4, fx.cfg.trainer, 1);
        CHECK(model.proto.head().values() != head_before);
        CHECK(snapshot(model.backbone.all_params()) == blocks_before);
        CHECK(model.proto.prototypes().values() == protos_before);
        CHECK(rep.non_increasing);
        CHECK(rep.last_loss <= rep.first_loss);

        // No gradient ever reached the non-head parameters.
        for (auto& [name, t] : model.backbone.all_params())
            for (double g : t.grad()) CHECK(g == 0.0);
        for (double g : model.proto.prototypes().grad()) CHECK(g == 0.0);
    }
}

TEST_CASE("train: warmup freeze, determinism, push epochs, divergence guard") {
    const Fixture fx;

    SUBCASE("epochs below warmup leave conv blocks bit-identical to init") {
        Model model = fx.model(11);
        const auto init_blocks = snapshot(model.backbone.block_params());
        const auto init_shaping = snapshot(model.backbone.shaping_params());
        TrainConfig tc = fx.cfg.trainer;
        tc.epochs = 2;  // == warmup_epochs
        const auto logs = train(model, fx.ds, tc);
        CHECK(logs.size() == 2);
        CHECK(snapshot(model.backbone.block_params()) == init_blocks);
        CHECK(snapshot(model.backbone.shaping_params()) != init_shaping);
        for (const auto& l : logs) CHECK_FALSE(l.pushed);
    }

    SUBCASE("identical seeds give identical runs, different seeds differ") {
        Model a = fx.model(11), b = fx.model(11), c = fx.model(11);
        TrainConfig tc = fx.cfg.trainer;
        const auto la = train(a, fx.ds, tc);
        const auto lb = train(b, fx.ds, tc);
        TrainConfig tc2 = tc;
        tc2.seed = 43;
        const auto lc = train(c, fx.ds, tc2);

        REQUIRE(la.size() == lb.size());
        for (std::size_t i = 0; i < la.size(); ++i) {
            CHECK(la[i].loss.total == lb[i].loss.total);
            CHECK(la[i].test_acc == lb[i].test_acc);
        }
        CHECK(a.proto.prototypes().values() == b.proto.prototypes().values());
        CHECK(snapshot(a.backbone.all_params()) == snapshot(b.backbone.all_params()));
        bool differs = false;
        for (std::size_t i = 0; i < la.size(); ++i)
            if (la[i].loss.total != lc[i].loss.total) differs = true;
        CHECK(differs);
    }

    SUBCASE("push happens on schedule and marks prototypes") {
        Model model = fx.model(11);
        const auto logs = train(model, fx.ds, fx.cfg.trainer);  // 4 epochs, warmup 2, period 3
        REQUIRE(logs.size() == 4);
        CHECK_FALSE(logs[0].pushed);
        CHECK_FALSE(logs[1].pushed);
        CHECK(logs[2].pushed);  // epoch 3: past warmup, divisible by period
        CHECK_FALSE(logs[3].pushed);
        for (int j = 0; j < model.proto.prototype_count(); ++j) CHECK(model.prototype_pushed(j));
        for (const auto& l : logs) {
            CHECK(std::isfinite(l.loss.total));
            CHECK(l.train_acc >= 0.0);
            CHECK(l.train_acc <= 1.0);
        }
    }

    SUBCASE("diverging loss raises DivergenceError") {
        Model model = fx.model(11);
        // A huge head makes the cross-entropy blow past the 1e6 guard.
        for (double& v : model.proto.head().values()) v = 1e8;
        for (double& v : model.proto.prototypes().values()) v = 1e8;
        TrainConfig tc = fx.cfg.trainer;
        tc.epochs = 1;
        CHECK_THROWS_AS(train(model, fx.ds, tc), DivergenceError);
    }

    SUBCASE("class coverage is required") {
        Model model = fx.model(11);
        Dataset bad = fx.ds;
        bad.train.erase(std::remove_if(bad.train.begin(), bad.train.end(),
                                       [](const Sample& s) { return s.label == 1; }),
                        bad.train.end());
        CHECK_THROWS_WITH_AS(train(model, bad, fx.cfg.trainer), doctest::Contains("class"), Error);
    }
}

TEST_CASE("train log csv has the documented columns") {
    const Fixture fx;
    Model model = fx.model(2);
    TrainConfig tc = fx.cfg.trainer;
    tc.epochs = 1;
    const auto logs = train(model, fx.ds, tc);
    const std::string path = "train_log_test.csv";
    write_train_log(path, logs);
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    CHECK(header == "epoch,total,ce,clst,sep,l1,train_acc,test_acc,pushed");
    std::string row;
    int rows = 0;
    while (std::getline(in, row))
        if (!row.empty()) ++rows;
    CHECK(rows == 1);
    std::remove(path.c_str());
}
