#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "dproto/checkpoint.hpp"
#include "dproto/errors.hpp"
#include "dproto/model.hpp"
#include "dproto/rng.hpp"

using namespace dproto;

namespace {

RunConfig tiny_run_cfg() {
    RunConfig cfg;
    cfg.backbone.input_h = 16;
    cfg.backbone.input_w = 16;
    cfg.backbone.blocks = {{4, 3, 1, 2}, {6, 3, 1, 2}};
    cfg.backbone.shaping_channels = 5;
    cfg.backbone.grid_h = 4;
    cfg.backbone.grid_w = 4;
    cfg.protolayer.mask_count = 6;
    cfg.protolayer.per_class_prototypes = 2;
    return cfg;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void spit(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Tensor random_image_tensor(const RunConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<int> shape = {cfg.backbone.input_c, cfg.backbone.input_h, cfg.backbone.input_w};
    std::vector<double> v(numel(shape));
    for (double& x : v) x = rng.uniform();
    return Tensor::from(std::move(shape), std::move(v));
}

}  // namespace

TEST_CASE("checkpoint round trip is bit exact") {
    const RunConfig cfg = tiny_run_cfg();
    Model m = Model::build(cfg, {"a", "b", "c"}, 42);
    // Touch the push artifacts so they are not all zeros.
    m.proto_provenance.values()[0] = 1.0;
    m.proto_provenance.values()[1] = 12.0;
    m.proto_provenance.values()[2] = 3.0;
    m.proto_provenance.values()[3] = 8.0;
    m.proto_source_images.values()[5] = 0.62;

    const std::string path = "ckpt_test.bin";
    save_checkpoint(path, m);
    const Model back = load_checkpoint(path);

    CHECK(back.class_names == m.class_names);
    CHECK(back.cfg.to_json() == m.cfg.to_json());
    const auto pa = m.backbone.all_params(), pb = back.backbone.all_params();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i].second.values() == pb[i].second.values());
        CHECK(pb[i].second.requires_grad());
    }
    CHECK(back.proto.masks().values() == m.proto.masks().values());
    CHECK_FALSE(back.proto.masks().requires_grad());
    CHECK(back.proto.prototypes().values() == m.proto.prototypes().values());
    CHECK(back.proto.prototypes().requires_grad());
    CHECK(back.proto.head().values() == m.proto.head().values());
    CHECK(back.proto_provenance.values() == m.proto_provenance.values());
    CHECK(back.proto_source_images.values() == m.proto_source_images.values());
    CHECK(back.prototype_pushed(0));
    CHECK_FALSE(back.prototype_pushed(1));

    // Same logits bit for bit.
    const Tensor img = random_image_tensor(cfg, 7);
    CHECK(m.forward(img).proto.logits.values() == back.forward(img).proto.logits.values());

    // Saving the loaded model reproduces the identical file.
    save_checkpoint("ckpt_test2.bin", back);
    CHECK(slurp(path) == slurp("ckpt_test2.bin"));
    std::remove(path.c_str());
    std::remove("ckpt_test2.bin");
}

TEST_CASE("identical builds serialize identically; different seeds differ") {
    const RunConfig cfg = tiny_run_cfg();
    save_checkpoint("ckpt_a.bin", Model::build(cfg, {"a", "b", "c"}, 1));
    save_checkpoint("ckpt_b.bin", Model::build(cfg, {"a", "b", "c"}, 1));
    save_checkpoint("ckpt_c.bin", Model::build(cfg, {"a", "b", "c"}, 2));
    CHECK(slurp("ckpt_a.bin") == slurp("ckpt_b.bin"));
    CHECK(slurp("ckpt_a.bin") != slurp("ckpt_c.bin"));
    std::remove("ckpt_a.bin");
    std::remove("ckpt_b.bin");
    std::remove("ckpt_c.bin");
}

TEST_CASE("corrupt checkpoints are rejected with DataError") {
    const RunConfig cfg = tiny_run_cfg();
    save_checkpoint("ckpt_bad.bin", Model::build(cfg, {"a", "b", "c"}, 3));
    const std::string good = slurp("ckpt_bad.bin");

    SUBCASE("bad magic") {
        std::string bad = good;
        bad[0] = 'X';
        spit("ckpt_bad.bin", bad);
        CHECK_THROWS_WITH_AS(load_checkpoint("ckpt_bad.bin"), doctest::Contains("magic"),
                             DataError);
    }
    SUBCASE("truncated payload") {
        spit("ckpt_bad.bin", good.substr(0, good.size() - 16));
        CHECK_THROWS_AS(load_checkpoint("ckpt_bad.bin"), DataError);
    }
    SUBCASE("trailing bytes") {
        spit("ckpt_bad.bin", good + "zz");
        CHECK_THROWS_WITH_AS(load_checkpoint("ckpt_bad.bin"), doctest::Contains("trailing"),
                             DataError);
    }
    SUBCASE("too short for header") {
        spit("ckpt_bad.bin", "DPROTO1");
        CHECK_THROWS_AS(load_checkpoint("ckpt_bad.bin"), DataError);
    }
    std::remove("ckpt_bad.bin");
    CHECK_THROWS_AS(load_checkpoint("/nonexistent/ckpt.bin"), DataError);
}

TEST_CASE("prediction breaks ties toward the lowest class index") {
    const RunConfig cfg = tiny_run_cfg();
    Model m = Model::build(cfg, {"a", "b", "c"}, 4);
    ModelForward f = m.forward(random_image_tensor(cfg, 9));
    f.proto.logits.values() = {1.5, 1.5, 0.2};
    CHECK(Model::predicted_class(f) == 0);
    f.proto.logits.values() = {0.1, 2.0, 2.0};
    CHECK(Model::predicted_class(f) == 1);
}
