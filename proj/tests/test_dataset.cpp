#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "dproto/dataset.hpp"
#include "dproto/errors.hpp"

using namespace dproto;
namespace fs = std::filesystem;

namespace {

DatasetConfig tiny_cfg() {
    DatasetConfig cfg;
    cfg.classes = 4;
    cfg.per_class = 10;
    cfg.image_size = 32;
    cfg.clutter = 2;
    return cfg;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("generation writes a valid manifest with an 80/20 split") {
    TempDir dir("dproto_ds_basic");
    generate_dataset(tiny_cfg(), 5, dir.path.string(), false);
    const Dataset ds = load_manifest((dir.path / "manifest.json").string());

    CHECK(ds.class_names.size() == 4);
    CHECK(ds.class_names[0] == "red_square");
    CHECK(ds.class_names[3] == "yellow_cross");
    CHECK(ds.image_size == 32);
    CHECK(ds.train.size() == 32);
    CHECK(ds.test.size() == 8);

    int per_class_train[4] = {0, 0, 0, 0};
    for (const auto& s : ds.train) ++per_class_train[s.label];
    for (int k = 0; k < 4; ++k) CHECK(per_class_train[k] == 8);

    for (const auto& s : ds.train) {
        double area = 0.0;
        for (double v : s.mask.data) {
            CHECK((v == 0.0 || v == 1.0));
            area += v;
        }
        // Class shape must exist and stay a minor part of the image.
        CHECK(area >= 0.02 * 32 * 32);
        CHECK(area <= 0.5 * 32 * 32);
    }
}

TEST_CASE("class shape pixels carry the class color exactly") {
    TempDir dir("dproto_ds_color");
    generate_dataset(tiny_cfg(), 5, dir.path.string(), false);
    const Dataset ds = load_manifest((dir.path / "manifest.json").string());

    // red_square fill is (0.85, 0.10, 0.10); files quantize to 8 bits.
    const Sample* red = nullptr;
    for (const auto& s : ds.train)
        if (s.label == 0) {
            red = &s;
            break;
        }
    REQUIRE(red != nullptr);
    for (int y = 0; y < red->mask.h; ++y)
        for (int x = 0; x < red->mask.w; ++x)
            if (red->mask.at(0, y, x) == 1.0) {
                CHECK(red->image.at(0, y, x) == doctest::Approx(0.85).epsilon(0.01));
                CHECK(red->image.at(1, y, x) == doctest::Approx(0.10).epsilon(0.05));
                CHECK(red->image.at(2, y, x) == doctest::Approx(0.10).epsilon(0.05));
            }
}

TEST_CASE("regeneration with the same seed is byte identical") {
    TempDir a("dproto_ds_rep_a");
    TempDir b("dproto_ds_rep_b");
    generate_dataset(tiny_cfg(), 123, a.path.string(), false);
    generate_dataset(tiny_cfg(), 123, b.path.string(), false);

    CHECK(slurp(a.path / "manifest.json") == slurp(b.path / "manifest.json"));
    for (const char* rel : {"images/img_00000.ppm", "images/img_00017.ppm",
                            "masks/mask_00039.pgm"})
        CHECK(slurp(a.path / rel) == slurp(b.path / rel));

    TempDir c("dproto_ds_rep_c");
    generate_dataset(tiny_cfg(), 124, c.path.string(), false);
    CHECK(slurp(a.path / "images/img_00000.ppm") != slurp(c.path / "images/img_00000.ppm"));
}

TEST_CASE("non-empty output directory requires force") {
    TempDir dir("dproto_ds_force");
    fs::create_directories(dir.path);
    std::ofstream(dir.path / "existing.txt") << "x";
    CHECK_THROWS_WITH_AS(generate_dataset(tiny_cfg(), 5, dir.path.string(), false),
                         doctest::Contains("--force"), DataError);
    CHECK_NOTHROW(generate_dataset(tiny_cfg(), 5, dir.path.string(), true));
}

TEST_CASE("manifest validation rejects corrupt inputs") {
    TempDir dir("dproto_ds_corrupt");
    generate_dataset(tiny_cfg(), 5, dir.path.string(), false);
    const fs::path mpath = dir.path / "manifest.json";
    const std::string good = slurp(mpath);

    SUBCASE("broken json") {
        std::ofstream(mpath) << "{ nope";
        CHECK_THROWS_AS(load_manifest(mpath.string()), DataError);
    }
    SUBCASE("bad version") {
        std::string doc = good;
        const auto pos = doc.find("\"version\": 1");
        REQUIRE(pos != std::string::npos);
        doc.replace(pos, 12, "\"version\": 9");
        std::ofstream(mpath) << doc;
        CHECK_THROWS_WITH_AS(load_manifest(mpath.string()), doctest::Contains("version"),
                             DataError);
    }
    SUBCASE("missing image file") {
        fs::remove(dir.path / "images/img_00003.ppm");
        CHECK_THROWS_AS(load_manifest(mpath.string()), DataError);
    }
    SUBCASE("out-of-range label") {
        std::string doc = good;
        const auto pos = doc.find("\"label\": 0");
        REQUIRE(pos != std::string::npos);
        doc.replace(pos, 10, "\"label\": 7");
        std::ofstream(mpath) << doc;
        CHECK_THROWS_WITH_AS(load_manifest(mpath.string()), doctest::Contains("label"),
                             DataError);
    }
}

TEST_CASE("augment identities and determinism") {
    TempDir dir("dproto_ds_aug");
    generate_dataset(tiny_cfg(), 5, dir.path.string(), false);
    const Dataset ds = load_manifest((dir.path / "manifest.json").string());
    const Image& x = ds.train.front().image;

    SUBCASE("zero magnitudes are exact identities") {
        for (auto kind : {AugmentKind::rotation, AugmentKind::shear, AugmentKind::perspective,
                          AugmentKind::distortion}) {
            const Image y = augment(x, kind, 0.0, 99);
            CHECK(y.data == x.data);
        }
    }
    SUBCASE("full turn is the identity within resampling tolerance") {
        const Image y = augment(x, AugmentKind::rotation, 360.0, 0);
        double max_diff = 0.0;
        for (std::size_t i = 0; i < x.data.size(); ++i)
            max_diff = std::max(max_diff, std::abs(y.data[i] - x.data[i]));
        CHECK(max_diff <= 0.02);
    }
    SUBCASE("seeded kinds are deterministic and seed-sensitive") {
        const Image a = augment(x, AugmentKind::perspective, 0.08, 42);
        const Image b = augment(x, AugmentKind::perspective, 0.08, 42);
        const Image c = augment(x, AugmentKind::perspective, 0.08, 43);
        CHECK(a.data == b.data);
        CHECK(a.data != c.data);
        const Image d = augment(x, AugmentKind::distortion, 2.5, 1);
        const Image e = augment(x, AugmentKind::distortion, 2.5, 1);
        CHECK(d.data == e.data);
    }
    SUBCASE("rotation changes pixels but preserves the background level") {
        const Image y = augment(x, AugmentKind::rotation, 20.0, 0);
        CHECK(y.data != x.data);
        for (double v : y.data) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }
    SUBCASE("magnitudes outside the documented ranges are rejected") {
        CHECK_THROWS_AS(augment(x, AugmentKind::rotation, 361.0, 0), ConfigError);
        CHECK_THROWS_AS(augment(x, AugmentKind::shear, 0.3, 0), ConfigError);
        CHECK_THROWS_AS(augment(x, AugmentKind::perspective, 0.2, 0), ConfigError);
        CHECK_THROWS_AS(augment(x, AugmentKind::distortion, 3.5, 0), ConfigError);
        CHECK_THROWS_AS(augment(x, AugmentKind::perspective, -0.01, 0), ConfigError);
    }
}
