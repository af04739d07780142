#include "dproto/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>

#include "dproto/errors.hpp"
#include "dproto/rng.hpp"

namespace dproto {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Color {
    double r, g, b;
};

// Class k uses shape k % 4 with the k-th color; distractors reuse the same
// shapes but only ever the shared palette, so shape+color is the class signal.
constexpr std::array<const char*, 4> kShapeNames = {"square", "circle", "triangle", "cross"};
constexpr std::array<Color, 8> kClassColors = {{{0.85, 0.10, 0.10},
                                                {0.10, 0.75, 0.15},
                                                {0.12, 0.20, 0.85},
                                                {0.90, 0.85, 0.10},
                                                {0.85, 0.10, 0.80},
                                                {0.10, 0.80, 0.85},
                                                {0.95, 0.55, 0.05},
                                                {0.00, 0.50, 0.50}}};
constexpr std::array<const char*, 8> kColorNames = {"red",     "green", "blue",   "yellow",
                                                    "magenta", "cyan",  "orange", "teal"};
constexpr std::array<Color, 3> kSharedColors = {{{0.95, 0.95, 0.95},
                                                 {0.25, 0.25, 0.25},
                                                 {0.65, 0.55, 0.80}}};

bool inside_shape(int shape, double cx, double cy, double r, int x, int y) {
    const double dx = x - cx;
    const double dy = y - cy;
    switch (shape) {
        case 0:  // square
            return std::abs(dx) <= r && std::abs(dy) <= r;
        case 1:  // circle
            return dx * dx + dy * dy <= r * r;
        case 2: {  // upward triangle, half-plane tests
            const double ax = cx, ay = cy - r;
            const double bx = cx - 0.9 * r, by = cy + 0.7 * r;
            const double ex = cx + 0.9 * r, ey = cy + 0.7 * r;
            auto side = [&](double px0, double py0, double px1, double py1) {
                return (px1 - px0) * (y - py0) - (py1 - py0) * (x - px0);
            };
            const double s0 = side(ax, ay, bx, by);
            const double s1 = side(bx, by, ex, ey);
            const double s2 = side(ex, ey, ax, ay);
            return (s0 >= 0 && s1 >= 0 && s2 >= 0) || (s0 <= 0 && s1 <= 0 && s2 <= 0);
        }
        case 3: {  // cross of two bars
            const double bar = std::max(2.0, 0.35 * r);
            return (std::abs(dx) <= r && std::abs(dy) <= bar) ||
                   (std::abs(dy) <= r && std::abs(dx) <= bar);
        }
        default:
            return false;
    }
}

void draw_shape(Image& img, Image* mask, int shape, double cx, double cy, double r,
                const Color& col) {
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            if (inside_shape(shape, cx, cy, r, x, y)) {
                img.at(0, y, x) = col.r;
                img.at(1, y, x) = col.g;
                img.at(2, y, x) = col.b;
                if (mask)
                    mask->at(0, y, x) = 1.0;
            }
}

std::string zero_pad(int v, int width) {
    std::string s = std::to_string(v);
    while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
    return s;
}

double bilinear_at(const Image& img, int ch, double ys, double xs, double background) {
    const int x0 = static_cast<int>(std::floor(xs));
    const int y0 = static_cast<int>(std::floor(ys));
    const double tx = xs - x0;
    const double ty = ys - y0;
    auto px = [&](int y, int x) {
        if (y < 0 || y >= img.h || x < 0 || x >= img.w)
            return background;
        return img.at(ch, y, x);
    };
    const double top = (1.0 - tx) * px(y0, x0) + tx * px(y0, x0 + 1);
    const double bot = (1.0 - tx) * px(y0 + 1, x0) + tx * px(y0 + 1, x0 + 1);
    return (1.0 - ty) * top + ty * bot;
}

// Solves A x = b (n x n) in place with partial pivoting.
void solve_linear(std::vector<double>& a, std::vector<double>& b, int n) {
    for (int col = 0; col < n; ++col) {
        int piv = col;
        for (int r = col + 1; r < n; ++r)
            if (std::abs(a[r * n + col]) > std::abs(a[piv * n + col]))
                piv = r;
        if (std::abs(a[piv * n + col]) < 1e-12)
            throw Error("augment: degenerate perspective system");
        if (piv != col) {
            for (int k = 0; k < n; ++k) std::swap(a[col * n + k], a[piv * n + k]);
            std::swap(b[col], b[piv]);
        }
        const double d = a[col * n + col];
        for (int r = col + 1; r < n; ++r) {
            const double f = a[r * n + col] / d;
            if (f == 0.0)
                continue;
            for (int k = col; k < n; ++k) a[r * n + k] -= f * a[col * n + k];
            b[r] -= f * b[col];
        }
    }
    for (int r = n - 1; r >= 0; --r) {
        double s = b[r];
        for (int k = r + 1; k < n; ++k) s -= a[r * n + k] * b[k];
        b[r] = s / a[r * n + r];
    }
}

// Homography h (h33 = 1) with dst corner i mapping to src corner i.
std::array<double, 9> fit_homography(const std::array<double, 8>& dst,
                                     const std::array<double, 8>& src) {
    std::vector<double> a(64, 0.0), b(8, 0.0);
    for (int i = 0; i < 4; ++i) {
        const double x = dst[2 * i], y = dst[2 * i + 1];
        const double u = src[2 * i], v = src[2 * i + 1];
        double* r0 = a.data() + (2 * i) * 8;
        double* r1 = a.data() + (2 * i + 1) * 8;
        r0[0] = x; r0[1] = y; r0[2] = 1; r0[6] = -u * x; r0[7] = -u * y;
        r1[3] = x; r1[4] = y; r1[5] = 1; r1[6] = -v * x; r1[7] = -v * y;
        b[2 * i] = u;
        b[2 * i + 1] = v;
    }
    solve_linear(a, b, 8);
    return {b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7], 1.0};
}

Image warp(const Image& img, const std::function<void(double, double, double&, double&)>& to_src) {
    Image out = Image::zeros(img.c, img.h, img.w);
    for (int ch = 0; ch < img.c; ++ch)
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x) {
                double xs, ys;
                to_src(static_cast<double>(x), static_cast<double>(y), xs, ys);
                out.at(ch, y, x) = bilinear_at(img, ch, ys, xs, 0.5);
            }
    return out;
}

}  // namespace

void generate_dataset(const DatasetConfig& cfg, std::uint64_t seed, const std::string& out_dir,
                      bool force) {
    RunConfig probe;
    probe.dataset = cfg;
    probe.validate();

    const fs::path root(out_dir);
    if (fs::exists(root) && !fs::is_empty(root) && !force)
        throw DataError("output directory is not empty (use --force to overwrite): " + out_dir);
    fs::create_directories(root / "images");
    fs::create_directories(root / "masks");

    const int s = cfg.image_size;
    const int train_per_class =
        static_cast<int>(std::lround(cfg.per_class * cfg.train_fraction));

    std::vector<std::string> class_names;
    for (int k = 0; k < cfg.classes; ++k)
        class_names.push_back(std::string(kColorNames[k]) + "_" + kShapeNames[k % 4]);

    json entries = json::array();
    const int total = cfg.classes * cfg.per_class;
    const int pad = std::max(5, static_cast<int>(std::to_string(total).size()));

    for (int k = 0; k < cfg.classes; ++k) {
        for (int i = 0; i < cfg.per_class; ++i) {
            const int idx = k * cfg.per_class + i;
            Rng rng(derive_seed(seed, "image", static_cast<std::uint64_t>(idx)));

            Image img = Image::filled(3, s, s, 0.5);
            if (cfg.noise_sigma > 0.0)
                for (double& v : img.data)
                    v = std::clamp(v + cfg.noise_sigma * rng.normal(), 0.0, 1.0);

            for (int d = 0; d < cfg.clutter; ++d) {
                const int shape = rng.uniform_int(0, 3);
                const Color col = kSharedColors[static_cast<std::size_t>(rng.uniform_int(0, 2))];
                const double r = rng.uniform(0.09 * s, 0.16 * s);
                const double cx = rng.uniform(r, s - 1 - r);
                const double cy = rng.uniform(r, s - 1 - r);
                draw_shape(img, nullptr, shape, cx, cy, r, col);
            }

            Image mask = Image::zeros(1, s, s);
            const double r = rng.uniform(0.14 * s, 0.215 * s);
            const double cx = rng.uniform(r, s - 1 - r);
            const double cy = rng.uniform(r, s - 1 - r);
            draw_shape(img, &mask, k % 4, cx, cy, r, kClassColors[static_cast<std::size_t>(k)]);

            const std::string img_rel = "images/img_" + zero_pad(idx, pad) + ".ppm";
            const std::string mask_rel = "masks/mask_" + zero_pad(idx, pad) + ".pgm";
            write_image((root / img_rel).string(), img);
            write_image((root / mask_rel).string(), mask);
            entries.push_back({{"image", img_rel},
                               {"mask", mask_rel},
                               {"label", k},
                               {"split", i < train_per_class ? "train" : "test"}});
        }
    }

    json manifest = {{"version", 1},
                     {"seed", seed},
                     {"image_size", s},
                     {"classes", class_names},
                     {"entries", entries}};
    std::ofstream out(root / "manifest.json");
    if (!out)
        throw DataError("cannot write manifest: " + (root / "manifest.json").string());
    out << manifest.dump(2) << "\n";
}

Dataset load_manifest(const std::string& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in)
        throw DataError("cannot open manifest: " + manifest_path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw DataError("invalid JSON in " + manifest_path + ": " + e.what());
    }

    auto require = [&](const char* key) -> const json& {
        auto it = j.find(key);
        if (it == j.end())
            throw DataError(manifest_path + ": missing key \"" + key + "\"");
        return *it;
    };
    if (require("version").get<int>() != 1)
        throw DataError(manifest_path + ": unsupported manifest version");

    Dataset ds;
    ds.class_names = require("classes").get<std::vector<std::string>>();
    ds.image_size = require("image_size").get<int>();
    if (ds.class_names.empty() || ds.image_size <= 0)
        throw DataError(manifest_path + ": empty class list or bad image_size");

    const fs::path base = fs::path(manifest_path).parent_path();
    const json& entries = require("entries");
    if (!entries.is_array() || entries.empty())
        throw DataError(manifest_path + ": entries must be a non-empty array");

    for (std::size_t i = 0; i < entries.size(); ++i) {
        const json& e = entries[i];
        const std::string tag = manifest_path + ": entry " + std::to_string(i);
        for (const char* key : {"image", "mask", "label", "split"})
            if (!e.contains(key))
                throw DataError(tag + " missing key \"" + key + "\"");
        Sample sm;
        sm.label = e["label"].get<int>();
        if (sm.label < 0 || sm.label >= static_cast<int>(ds.class_names.size()))
            throw DataError(tag + ": label " + std::to_string(sm.label) + " out of range");
        sm.image_path = (base / e["image"].get<std::string>()).string();
        sm.mask_path = (base / e["mask"].get<std::string>()).string();
        sm.image = read_image(sm.image_path);
        sm.mask = read_image(sm.mask_path);
        if (sm.image.c != 3 || sm.image.h != ds.image_size || sm.image.w != ds.image_size)
            throw DataError(tag + ": image has wrong shape");
        if (sm.mask.c != 1 || sm.mask.h != ds.image_size || sm.mask.w != ds.image_size)
            throw DataError(tag + ": mask has wrong shape");
        for (double& v : sm.mask.data)
            v = v > 0.5 ? 1.0 : 0.0;
        const std::string split = e["split"].get<std::string>();
        if (split == "train")
            ds.train.push_back(std::move(sm));
        else if (split == "test")
            ds.test.push_back(std::move(sm));
        else
            throw DataError(tag + ": split must be train|test");
    }
    if (ds.train.empty() || ds.test.empty())
        throw DataError(manifest_path + ": need at least one train and one test sample");
    return ds;
}

AugmentKind augment_kind_from_index(int idx) {
    switch (idx & 3) {
        case 0: return AugmentKind::rotation;
        case 1: return AugmentKind::shear;
        case 2: return AugmentKind::perspective;
        default: return AugmentKind::distortion;
    }
}

Image augment(const Image& img, AugmentKind kind, double magnitude, std::uint64_t seed) {
    const double cx = (img.w - 1) / 2.0;
    const double cy = (img.h - 1) / 2.0;
    switch (kind) {
        case AugmentKind::rotation: {
            if (std::abs(magnitude) > 360.0 + 1e-12)
                throw ConfigError("augment: rotation magnitude beyond 360 degrees");
            const double th = magnitude * (3.14159265358979323846 / 180.0);
            const double c = std::cos(th), sn = std::sin(th);
            return warp(img, [&](double x, double y, double& xs, double& ys) {
                const double dx = x - cx, dy = y - cy;
                xs = cx + c * dx + sn * dy;
                ys = cy - sn * dx + c * dy;
            });
        }
        case AugmentKind::shear: {
            if (std::abs(magnitude) > 0.2 + 1e-12)
                throw ConfigError("augment: shear magnitude beyond 0.2");
            return warp(img, [&](double x, double y, double& xs, double& ys) {
                xs = x - magnitude * (y - cy);
                ys = y;
            });
        }
        case AugmentKind::perspective: {
            if (magnitude < 0.0 || magnitude > 0.1 + 1e-12)
                throw ConfigError("augment: perspective magnitude outside [0, 0.1]");
            Rng rng(seed);
            const double jmax = magnitude * std::max(img.w, img.h);
            const std::array<double, 8> dst = {0.0,
                                               0.0,
                                               static_cast<double>(img.w - 1),
                                               0.0,
                                               0.0,
                                               static_cast<double>(img.h - 1),
                                               static_cast<double>(img.w - 1),
                                               static_cast<double>(img.h - 1)};
            std::array<double, 8> src;
            for (int i = 0; i < 8; ++i)
                src[static_cast<std::size_t>(i)] =
                    dst[static_cast<std::size_t>(i)] + rng.uniform(-jmax, jmax);
            const auto h = fit_homography(dst, src);
            return warp(img, [&](double x, double y, double& xs, double& ys) {
                const double d = h[6] * x + h[7] * y + h[8];
                xs = (h[0] * x + h[1] * y + h[2]) / d;
                ys = (h[3] * x + h[4] * y + h[5]) / d;
            });
        }
        case AugmentKind::distortion: {
            if (magnitude < 0.0 || magnitude > 3.0 + 1e-12)
                throw ConfigError("augment: distortion magnitude outside [0, 3]");
            Rng rng(seed);
            constexpr int G = 4;  // coarse control grid, bilinearly upsampled
            std::array<double, G * G> fx, fy;
            for (int i = 0; i < G * G; ++i) {
                fx[static_cast<std::size_t>(i)] = rng.uniform(-magnitude, magnitude);
                fy[static_cast<std::size_t>(i)] = rng.uniform(-magnitude, magnitude);
            }
            auto field = [&](const std::array<double, G * G>& f, double x, double y) {
                const double gx = x / (img.w - 1) * (G - 1);
                const double gy = y / (img.h - 1) * (G - 1);
                const int x0 = std::min(static_cast<int>(gx), G - 2);
                const int y0 = std::min(static_cast<int>(gy), G - 2);
                const double tx = gx - x0, ty = gy - y0;
                const double top = (1 - tx) * f[static_cast<std::size_t>(y0 * G + x0)] +
                                   tx * f[static_cast<std::size_t>(y0 * G + x0 + 1)];
                const double bot = (1 - tx) * f[static_cast<std::size_t>((y0 + 1) * G + x0)] +
                                   tx * f[static_cast<std::size_t>((y0 + 1) * G + x0 + 1)];
                return (1 - ty) * top + ty * bot;
            };
            return warp(img, [&](double x, double y, double& xs, double& ys) {
                xs = x + field(fx, x, y);
                ys = y + field(fy, x, y);
            });
        }
    }
    throw ConfigError("augment: unknown kind");
}

}  // namespace dproto
