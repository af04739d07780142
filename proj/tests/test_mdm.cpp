#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "dproto/autodiff.hpp"
#include "dproto/dataset.hpp"
#include "dproto/errors.hpp"
#include "dproto/mdm.hpp"
#include "dproto/rng.hpp"

using namespace dproto;
namespace fs = std::filesystem;

namespace {

// f(z) = sum of entries; on a one-pixel image of 1.0 the mask loss becomes
// (1 - m)^2 + eta*m, whose analytic optimum is m* = 1 - eta/2.
DetectionNode unit_probe(const Image& x) {
    return scalar_detection_node([](const Tensor& t) { return sum_all(t); }, x);
}

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
    cfg.dataset.per_class = 6;
    cfg.dataset.image_size = 16;
    cfg.dataset.clutter = 1;
    return cfg;
}

MdmConfig tiny_mdm_cfg() {
    MdmConfig cfg;
    cfg.scales = {2, 3, 4};
    cfg.steps = 40;
    cfg.gamma = 1.0;
    return cfg;
}

struct ModelFixture {
    RunConfig cfg = tiny_run_cfg();
    fs::path dir = fs::temp_directory_path() / "dproto_mdm_ds";
    Dataset ds;
    ModelFixture() {
        fs::remove_all(dir);
        generate_dataset(cfg.dataset, 55, dir.string(), false);
        ds = load_manifest((dir / "manifest.json").string());
    }
    ~ModelFixture() { fs::remove_all(dir); }
    Model model(std::uint64_t seed = 5) const { return Model::build(cfg, ds.class_names, seed); }
};

MaskVector hand_vector(int rows, int cols, std::vector<double> values) {
    MaskVector v;
    v.rows = rows;
    v.cols = cols;
    v.trained = true;
    v.values = std::move(values);
    return v;
}

}  // namespace

TEST_CASE("single-cell mask converges to the closed-form optimum 1 - eta/2") {
    const Image x = Image::filled(1, 1, 1, 1.0);
    const DetectionNode node = unit_probe(x);
    for (double eta : {0.1, 0.2, 0.5}) {
        const MaskVector mv = optimize_mask_vector(node, x, 1, 1, eta, 0.5, 800, 0.05);
        REQUIRE(mv.values.size() == 1);
        CHECK(std::abs(mv.values[0] - (1.0 - eta / 2.0)) <= 1e-3);
        CHECK(mv.trained);
        CHECK(mv.window_monotone);
        CHECK(mv.final_loss ==
              doctest::Approx((eta / 2.0) * (eta / 2.0) + eta * (1.0 - eta / 2.0)).epsilon(1e-6));
    }
}

TEST_CASE("zero regularization drives the mask to one") {
    const Image x = Image::filled(1, 1, 1, 1.0);
    const MaskVector mv = optimize_mask_vector(unit_probe(x), x, 1, 1, 0.0, 0.5, 800, 0.05);
    CHECK(std::abs(mv.values[0] - 1.0) <= 1e-9);
}

TEST_CASE("cells the probe ignores decay to zero, watched cells stay up") {
    // probe reads only the first pixel of a 1x2 image
    const Image x = Image::filled(1, 1, 2, 1.0);
    const Tensor pick = Tensor::from({1, 1, 2}, {1.0, 0.0}, false);
    const DetectionNode node =
        scalar_detection_node([pick](const Tensor& t) { return sum_all(mul(t, pick)); }, x);
    const double eta = 0.4;
    const MaskVector mv = optimize_mask_vector(node, x, 1, 2, eta, 0.5, 800, 0.05);
    REQUIRE(mv.values.size() == 2);
    CHECK(std::abs(mv.values[0] - (1.0 - eta / 4.0)) <= 1e-3);  // loss (1-m0)^2 + eta*m0/2
    CHECK(mv.values[1] == 0.0);                                 // clamped at the boundary
}

TEST_CASE("mask entries stay inside [0,1] even with an overshooting step size") {
    const Image x = Image::filled(1, 1, 1, 1.0);
    const MaskVector mv = optimize_mask_vector(unit_probe(x), x, 1, 1, 0.5, 0.5, 200, 5.0);
    for (double v : mv.values) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("optimizer rejects grids that do not fit and non-positive step counts") {
    const Image x = Image::filled(1, 4, 4, 1.0);
    const DetectionNode node = unit_probe(x);
    CHECK_THROWS_AS(optimize_mask_vector(node, x, 5, 4, 0.1, 0.5, 10, 0.05), ConfigError);
    CHECK_THROWS_AS(optimize_mask_vector(node, x, 4, 5, 0.1, 0.5, 10, 0.05), ConfigError);
    CHECK_THROWS_AS(optimize_mask_vector(node, x, 0, 1, 0.1, 0.5, 10, 0.05), ConfigError);
    CHECK_THROWS_AS(optimize_mask_vector(node, x, 2, 2, 0.1, 0.5, 0, 0.05), ConfigError);
}

TEST_CASE("scalar nodes pass the image through preprocess unchanged") {
    const Image x = Image::filled(1, 2, 2, 0.25);
    const DetectionNode node = unit_probe(x);
    CHECK(node.kind == "scalar");
    const Tensor raw = x.to_tensor();
    CHECK(node.preprocess(raw).values() == raw.values());
    CHECK(node.target.values() == std::vector<double>{1.0});
}

TEST_CASE("mix_cam hand examples") {
    SUBCASE("two constant 0.5 grids stay below gamma=3 and vanish") {
        const Cam cam = mix_cam({hand_vector(2, 2, {0.5, 0.5, 0.5, 0.5}),
                                 hand_vector(2, 2, {0.5, 0.5, 0.5, 0.5})},
                                3.0, 4, 4);
        CHECK(cam.values == std::vector<double>(16, 0.0));
        CHECK(cam.region == std::vector<std::uint8_t>(16, 0));
    }
    SUBCASE("threshold keeps the high half, then min-max normalizes") {
        const Cam cam = mix_cam({hand_vector(2, 2, {4.0, 3.0, 2.0, 1.0})}, 3.0, 2, 2);
        CHECK(cam.values == std::vector<double>{1.0, 0.75, 0.0, 0.0});
        CHECK(cam.region == std::vector<std::uint8_t>{1, 1, 0, 0});
    }
    SUBCASE("gamma=0 passes everything and normalizes the single grid") {
        const Cam cam = mix_cam({hand_vector(2, 2, {0.2, 0.4, 0.6, 0.8})}, 0.0, 2, 2);
        REQUIRE(cam.values.size() == 4);
        CHECK(cam.values[0] == doctest::Approx(0.0).epsilon(1e-15));
        CHECK(cam.values[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
        CHECK(cam.values[2] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
        CHECK(cam.values[3] == doctest::Approx(1.0).epsilon(1e-15));
    }
    SUBCASE("cam invariants on random grids: range, zero region, unit max") {
        Rng rng(3);
        for (int trial = 0; trial < 10; ++trial) {
            std::vector<MaskVector> vecs;
            for (int s : {2, 3}) {
                MaskVector v = hand_vector(s, s, {});
                v.values.resize((std::size_t)s * s);
                for (double& e : v.values) e = rng.uniform();
                vecs.push_back(v);
            }
            const Cam cam = mix_cam(vecs, 1.0, 6, 6);
            double mx = 0.0;
            bool any = false;
            for (std::size_t i = 0; i < cam.values.size(); ++i) {
                CHECK(cam.values[i] >= 0.0);
                CHECK(cam.values[i] <= 1.0);
                if (!cam.region[i]) CHECK(cam.values[i] == 0.0);
                mx = std::max(mx, cam.values[i]);
                any = any || cam.values[i] > 0.0;
            }
            if (any) CHECK(mx == 1.0);
        }
    }
    SUBCASE("untrained vectors and empty lists are rejected") {
        MaskVector raw = hand_vector(2, 2, {0, 0, 0, 0});
        raw.trained = false;
        CHECK_THROWS_AS(mix_cam({raw}, 1.0, 2, 2), Error);
        CHECK_THROWS_AS(mix_cam({}, 1.0, 2, 2), ConfigError);
    }
}

TEST_CASE("rendering hand examples") {
    SUBCASE("alpha=0.5, beta=0.3 on white pixel with cam=1 gives 0.8 in red") {
        Cam cam;
        cam.h = cam.w = 1;
        cam.values = {1.0};
        cam.region = {1};
        const Image x = Image::filled(1, 1, 1, 1.0);
        const Image heat = render_heatmap(x, cam, 0.5, 0.3);
        REQUIRE(heat.c == 3);
        CHECK(heat.data[0] == doctest::Approx(0.8).epsilon(1e-15));  // red: 0.5*1 + 0.3*1
        CHECK(heat.data[1] == doctest::Approx(0.5).epsilon(1e-15));  // green: colormap 0
        CHECK(heat.data[2] == doctest::Approx(0.5).epsilon(1e-15));  // blue: colormap 0 at hot end
    }
    SUBCASE("an all-zero cam blanks the binary render") {
        Cam cam;
        cam.h = cam.w = 2;
        cam.values = {0, 0, 0, 0};
        cam.region = {0, 0, 0, 0};
        const Image bin = render_binary(Image::filled(1, 2, 2, 0.7), cam);
        CHECK(bin.data == std::vector<double>(bin.data.size(), 0.0));
    }
    SUBCASE("alpha=1, beta=0 reproduces the image") {
        Cam cam;
        cam.h = cam.w = 2;
        cam.values = {0.1, 0.4, 0.9, 0.0};
        cam.region = {1, 1, 1, 0};
        const Image x = Image::filled(1, 2, 2, 0.3);
        const Image heat = render_heatmap(x, cam, 1.0, 0.0);
        for (int ch = 0; ch < heat.c; ++ch) {
            for (int i = 0; i < 4; ++i) {
                CHECK(heat.data[(std::size_t)ch * 4 + i] == doctest::Approx(0.3).epsilon(1e-15));
            }
        }
    }
    SUBCASE("negative blend weights are rejected") {
        Cam cam;
        cam.h = cam.w = 1;
        cam.values = {0.5};
        cam.region = {1};
        const Image x = Image::filled(1, 1, 1, 0.5);
        CHECK_THROWS_AS(render_heatmap(x, cam, -0.1, 0.3), ConfigError);
        CHECK_THROWS_AS(render_heatmap(x, cam, 0.5, -0.3), ConfigError);
    }
}

TEST_CASE("ordering property: higher contribution keeps a higher mask value") {
    SUBCASE("two regions") {
        const OrderingReport rep = ordering_property_harness({0.9, 0.1}, 0.3, 800, 0.05, 1e-3);
        CHECK(rep.violations.empty());
        CHECK(rep.min_product >= -1e-3);
        CHECK(rep.mask_values[0] > rep.mask_values[1]);
    }
    SUBCASE("three regions with 0.05 gaps") {
        const OrderingReport rep =
            ordering_property_harness({0.2, 0.25, 0.3}, 0.3, 800, 0.05, 1e-3);
        CHECK(rep.violations.empty());
        CHECK(rep.min_product >= -1e-3);
    }
    SUBCASE("five increasing regions rank-correlate") {
        const OrderingReport rep =
            ordering_property_harness({0.10, 0.15, 0.20, 0.25, 0.30}, 0.3, 800, 0.05, 1e-3);
        CHECK(rep.violations.empty());
        CHECK(rep.spearman >= 0.9);
        for (std::size_t i = 1; i < rep.mask_values.size(); ++i) {
            CHECK(rep.mask_values[i] >= rep.mask_values[i - 1] - 1e-3);
        }
    }
    SUBCASE("equal contributions give bit-equal mask values by symmetry") {
        const OrderingReport rep = ordering_property_harness({0.4, 0.4, 0.4}, 0.3, 200, 0.05, 1e-3);
        CHECK(rep.mask_values[0] == rep.mask_values[1]);
        CHECK(rep.mask_values[1] == rep.mask_values[2]);
        CHECK(rep.violations.empty());
    }
    SUBCASE("fewer than two regions is rejected") {
        CHECK_THROWS_AS(ordering_property_harness({0.5}, 0.3, 10, 0.05, 1e-3), ConfigError);
    }
}

TEST_CASE("detection node selection on a zeroed head falls back to the lowest ids") {
    const ModelFixture fx;
    Model model = fx.model();
    std::fill(model.proto.head().values().begin(), model.proto.head().values().end(), 0.0);
    const DetectionNode node = select_detection_node(model, fx.ds.test.front().image);
    CHECK(node.kind == "prototype");
    CHECK(node.predicted_class == 0);  // all logits zero, tie to class 0
    CHECK(node.prototype == 0);        // all head contributions zero, tie to prototype 0
    CHECK(node.mask_index >= 0);
    CHECK(node.mask_index < fx.cfg.protolayer.mask_count);
    REQUIRE(node.target.values().size() == (std::size_t)fx.cfg.backbone.shaping_channels);
}

TEST_CASE("scale optimization is order- and thread-count-independent") {
    const ModelFixture fx;
    Model model = fx.model();
    const Image& x = fx.ds.test.front().image;
    const DetectionNode node = select_detection_node(model, x);
    const MdmConfig cfg = tiny_mdm_cfg();

    const std::vector<MaskVector> serial = optimize_scales(node, x, cfg, 1);
    const std::vector<MaskVector> parallel = optimize_scales(node, x, cfg, 3);
    REQUIRE(serial.size() == parallel.size());
    for (std::size_t i = 0; i < serial.size(); ++i) {
        CHECK(serial[i].values == parallel[i].values);
        CHECK(serial[i].final_loss == parallel[i].final_loss);
    }
}

TEST_CASE("explanations are deterministic and survive missing provenance") {
    const ModelFixture fx;
    Model model = fx.model();
    const Image& x = fx.ds.test.front().image;
    const MdmConfig cfg = tiny_mdm_cfg();

    SUBCASE("never-pushed model explains the input only, with a warning") {
        const Explanation e = explain_image(model, x, cfg, 2);
        CHECK_FALSE(e.has_prototype_image);
        CHECK_FALSE(e.warning.empty());
        CHECK(e.vectors_prototype.empty());
        CHECK(e.vectors_x.size() == cfg.scales.size());
        CHECK((int)e.cam_x.values.size() == x.h * x.w);
    }
    SUBCASE("two runs produce identical cams") {
        const Explanation a = explain_image(model, x, cfg, 1);
        const Explanation b = explain_image(model, x, cfg, 2);
        CHECK(a.cam_x.values == b.cam_x.values);
        CHECK(a.prototype == b.prototype);
        CHECK(a.mask_x == b.mask_x);
    }
    SUBCASE("hand-planted provenance brings in the prototype side") {
        Model pushed = fx.model();
        const Explanation probe = explain_image(pushed, x, cfg, 1);
        const int j = probe.prototype;
        auto& prov = pushed.proto_provenance.values();
        prov[(std::size_t)j * 4 + 0] = 1.0;  // pushed flag
        prov[(std::size_t)j * 4 + 1] = 0.0;  // source image index
        prov[(std::size_t)j * 4 + 2] = 1.0;  // source mask index
        prov[(std::size_t)j * 4 + 3] = 3.0;  // augmentation count
        const Image& src = fx.ds.train.front().image;
        auto& pix = pushed.proto_source_images.values();
        const std::size_t stride = src.data.size();
        std::copy(src.data.begin(), src.data.end(), pix.begin() + (std::size_t)j * stride);

        const Explanation e = explain_image(pushed, x, cfg, 2);
        CHECK(e.has_prototype_image);
        CHECK(e.warning.empty());
        CHECK(e.vectors_prototype.size() == cfg.scales.size());
        CHECK((int)e.cam_prototype.values.size() == x.h * x.w);
        CHECK(e.prototype_image.data == src.data);
    }
    SUBCASE("wrong image size names the expected dimensions") {
        const Image small = Image::filled(1, 8, 8, 0.5);
        try {
            explain_image(model, small, cfg, 1);
            FAIL("expected ShapeError");
        } catch (const ShapeError& err) {
            CHECK(std::string(err.what()).find("16") != std::string::npos);
        }
    }
}

TEST_CASE("explanation bundles serialize the documented artifacts") {
    const ModelFixture fx;
    Model model = fx.model();
    const Image& x = fx.ds.test.front().image;
    const MdmConfig cfg = tiny_mdm_cfg();
    const fs::path out = fs::temp_directory_path() / "dproto_mdm_bundle";
    fs::remove_all(out);

    const Explanation e = explain_image(model, x, cfg, 2);
    write_explanation(out.string(), x, e, cfg);

    CHECK(fs::exists(out / "cam_x.ppm"));
    CHECK(fs::exists(out / "heatmap_x.ppm"));
    CHECK(fs::exists(out / "binary_x.ppm"));
    REQUIRE(fs::exists(out / "bundle.json"));
    CHECK_FALSE(fs::exists(out / "cam_prototype.ppm"));  // no provenance in this model

    std::ifstream in(out / "bundle.json");
    nlohmann::json bundle = nlohmann::json::parse(in);
    CHECK(bundle.at("gamma").get<double>() == cfg.gamma);
    CHECK(bundle.at("node").at("kind").get<std::string>() == "prototype");
    CHECK(bundle.at("final_losses_x").size() == cfg.scales.size());
    CHECK(bundle.at("has_prototype_image").get<bool>() == false);
    CHECK(bundle.contains("warning"));

    SUBCASE("rewriting the bundle is byte-identical") {
        std::ifstream first(out / "bundle.json", std::ios::binary);
        const std::string before((std::istreambuf_iterator<char>(first)), {});
        write_explanation(out.string(), x, e, cfg);
        std::ifstream second(out / "bundle.json", std::ios::binary);
        const std::string after((std::istreambuf_iterator<char>(second)), {});
        CHECK(before == after);
    }
    fs::remove_all(out);
}
