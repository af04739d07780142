#include "dproto/mdm.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <thread>

#include <json.hpp>

#include "dproto/autodiff.hpp"
#include "dproto/errors.hpp"
#include "dproto/kernels.hpp"

namespace dproto {

using nlohmann::json;

namespace {

// Detached [1, D1, H1, W1] copy of one feature mask, usable as a masked_gap
// mask set of size one.
Tensor mask_row_tensor(const Model& model, int j) {
    const Tensor masks = model.proto.masks();
    const int d1 = masks.dim(1), h1 = masks.dim(2), w1 = masks.dim(3);
    const std::size_t len = static_cast<std::size_t>(d1) * h1 * w1;
    std::vector<double> row(masks.values().begin() + static_cast<std::size_t>(j) * len,
                            masks.values().begin() + static_cast<std::size_t>(j + 1) * len);
    return Tensor::from({1, d1, h1, w1}, std::move(row), false);
}

Tensor prototype_row_tensor(const Model& model, int j) {
    const Tensor p = model.proto.prototypes();
    const int d1 = p.dim(1);
    std::vector<double> row(p.values().begin() + static_cast<std::size_t>(j) * d1,
                            p.values().begin() + static_cast<std::size_t>(j + 1) * d1);
    return Tensor::from({d1}, std::move(row), false);
}

DetectionNode prototype_node(const Model& model, int prototype, int mask_index, Tensor target) {
    DetectionNode node;
    node.kind = "prototype";
    node.prototype = prototype;
    node.mask_index = mask_index;
    node.target = std::move(target);
    const Model* m = &model;
    Tensor mask_row = mask_row_tensor(model, mask_index);
    const int d1 = model.proto.prototypes().dim(1);
    node.preprocess = [m](const Tensor& image) { return m->backbone.center(image); };
    node.activation = [m, mask_row, d1](const Tensor& input) {
        return reshape(masked_gap(m->backbone.forward_centered(input), mask_row), {d1});
    };
    return node;
}

// Index of the feature mask whose vector on this forward pass lies nearest
// the prototype (squared distances share the argmin), ties to the lowest id.
int nearest_mask_index(const ModelForward& f, int prototype) {
    const int n = f.proto.s.dim(0);
    const int k = f.proto.s.dim(1);
    int best = 0;
    double best_d = f.proto.s.values()[static_cast<std::size_t>(prototype)];
    for (int j = 1; j < n; ++j) {
        const double d = f.proto.s.values()[static_cast<std::size_t>(j) * k + prototype];
        if (d < best_d) {
            best_d = d;
            best = j;
        }
    }
    return best;
}

void check_image_shape(const Model& model, const Image& x, const char* where) {
    const BackboneConfig& bc = model.cfg.backbone;
    if (x.c != bc.input_c || x.h != bc.input_h || x.w != bc.input_w) {
        throw ShapeError(std::string(where) + ": expected a " + std::to_string(bc.input_c) + "x" +
                         std::to_string(bc.input_h) + "x" + std::to_string(bc.input_w) +
                         " image, got " + std::to_string(x.c) + "x" + std::to_string(x.h) + "x" +
                         std::to_string(x.w));
    }
}

std::vector<double> tie_average_ranks(const std::vector<double>& xs) {
    const std::size_t n = xs.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
    std::vector<double> ranks(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && xs[order[j + 1]] == xs[order[i]]) ++j;
        const double mean_rank = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
        for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = mean_rank;
        i = j + 1;
    }
    return ranks;
}

double spearman_rho(const std::vector<double>& xs, const std::vector<double>& ys) {
    const std::vector<double> rx = tie_average_ranks(xs);
    const std::vector<double> ry = tie_average_ranks(ys);
    const double n = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

Image cam_to_gray(const Cam& cam) {
    Image img = Image::zeros(1, cam.h, cam.w);
    img.data = cam.values;
    return img;
}

}  // namespace

FreezeScope::FreezeScope(Model& model) {
    auto consider = [this](Tensor t) {
        if (t.requires_grad()) frozen_.push_back(t);
    };
    for (auto& [name, t] : model.backbone.all_params()) consider(t);
    consider(model.proto.prototypes());
    consider(model.proto.head());
    for (Tensor& t : frozen_) t.set_requires_grad(false);
}

FreezeScope::~FreezeScope() {
    for (Tensor& t : frozen_) t.set_requires_grad(true);
}

DetectionNode select_detection_node(const Model& model, const Image& x) {
    check_image_shape(model, x, "select_detection_node");
    const ModelForward f = model.forward(x);
    const int c = Model::predicted_class(f);
    const int k = model.proto.prototype_count();

    int p_t = -1;
    double best = 0.0;
    for (int j : model.proto.class_prototypes(c)) {
        const double contribution = model.proto.head().values()[static_cast<std::size_t>(c) * k + j] *
                                    f.proto.g.values()[static_cast<std::size_t>(j)];
        if (p_t < 0 || contribution > best) {
            best = contribution;
            p_t = j;
        }
    }

    const int j_x = nearest_mask_index(f, p_t);
    const int d1 = model.proto.prototypes().dim(1);
    std::vector<double> z_row(f.proto.z.values().begin() + static_cast<std::size_t>(j_x) * d1,
                              f.proto.z.values().begin() + static_cast<std::size_t>(j_x + 1) * d1);
    DetectionNode node =
        prototype_node(model, p_t, j_x, Tensor::from({d1}, std::move(z_row), false));
    node.predicted_class = c;
    return node;
}

DetectionNode prototype_detection_node(const Model& model, int prototype, const Image& source) {
    check_image_shape(model, source, "prototype_detection_node");
    if (prototype < 0 || prototype >= model.proto.prototype_count()) {
        throw Error("prototype_detection_node: no prototype " + std::to_string(prototype));
    }
    const ModelForward f = model.forward(source);
    const int j = nearest_mask_index(f, prototype);
    DetectionNode node = prototype_node(model, prototype, j, prototype_row_tensor(model, prototype));
    node.predicted_class = model.proto.class_of(prototype);
    return node;
}

DetectionNode scalar_detection_node(std::function<Tensor(const Tensor&)> fn, const Image& x) {
    DetectionNode node;
    node.kind = "scalar";
    node.preprocess = [](const Tensor& image) { return image; };
    node.activation = std::move(fn);
    const Tensor value = node.activation(x.to_tensor(false));
    node.target = Tensor::from(value.shape(), value.values(), false);
    return node;
}

MaskVector optimize_mask_vector(const DetectionNode& node, const Image& x, int rows, int cols,
                                double eta, double tau, int steps, double lr) {
    if (rows < 1 || cols < 1 || rows > x.h || cols > x.w) {
        throw ConfigError("optimize_mask_vector: grid " + std::to_string(rows) + "x" +
                          std::to_string(cols) + " does not fit a " + std::to_string(x.h) + "x" +
                          std::to_string(x.w) + " image");
    }
    if (steps < 1) throw ConfigError("optimize_mask_vector: steps must be >= 1");

    const Tensor preprocessed = node.preprocess(x.to_tensor(false));
    const Tensor img = Tensor::from(preprocessed.shape(), preprocessed.values(), false);
    Tensor d = Tensor::full({1, rows, cols}, tau, true);

    MaskVector mv;
    mv.rows = rows;
    mv.cols = cols;
    mv.eta = eta;
    mv.loss_trace.reserve(static_cast<std::size_t>(steps));

    auto loss_graph = [&]() {
        const Tensor masked = mul_bcast_plane(img, upsample_bilinear(d, x.h, x.w));
        const Tensor dist = sqdist(node.activation(masked), node.target);
        return add(dist, mul_scalar(mean_all(abs(d)), eta));
    };

    for (int step = 0; step < steps; ++step) {
        d.zero_grad();
        Tensor loss = loss_graph();
        const double value = loss.values()[0];
        if (!std::isfinite(value)) {
            throw DivergenceError("optimize_mask_vector: non-finite loss at step " +
                                  std::to_string(step));
        }
        mv.loss_trace.push_back(value);
        loss.backward();
        for (std::size_t i = 0; i < d.size(); ++i) {
            d.values()[i] = std::clamp(d.values()[i] - lr * d.grad()[i], 0.0, 1.0);
        }
    }
    mv.values = d.values();
    mv.final_loss = loss_graph().values()[0];
    mv.trained = true;

    const int window = 100;
    if (static_cast<int>(mv.loss_trace.size()) > window) {
        double sum = 0.0;
        for (int i = 0; i < window; ++i) sum += mv.loss_trace[static_cast<std::size_t>(i)];
        double prev = sum;
        for (std::size_t i = static_cast<std::size_t>(window); i < mv.loss_trace.size(); ++i) {
            sum += mv.loss_trace[i] - mv.loss_trace[i - static_cast<std::size_t>(window)];
            if (sum > prev + 1e-9 * std::max(1.0, std::abs(prev))) mv.window_monotone = false;
            prev = sum;
        }
    }
    return mv;
}

std::vector<MaskVector> optimize_scales(const DetectionNode& node, const Image& x,
                                        const MdmConfig& cfg, int threads) {
    const std::size_t count = cfg.scales.size();
    std::vector<MaskVector> out(count);
    const int workers = std::max(1, std::min<int>(threads, static_cast<int>(count)));

    auto run_slice = [&](int first) {
        for (std::size_t i = static_cast<std::size_t>(first); i < count;
             i += static_cast<std::size_t>(workers)) {
            const int side = cfg.scales[i];
            out[i] = optimize_mask_vector(node, x, side, side, cfg.eta, cfg.tau, cfg.steps, cfg.lr);
        }
    };

    if (workers == 1) {
        run_slice(0);
        return out;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    for (int t = 0; t < workers; ++t) {
        pool.emplace_back([&, t] {
            try {
                run_slice(t);
            } catch (...) {
                errors[static_cast<std::size_t>(t)] = std::current_exception();
            }
        });
    }
    for (std::thread& th : pool) th.join();
    for (const std::exception_ptr& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    return out;
}

Cam mix_cam(const std::vector<MaskVector>& vectors, double gamma, int h, int w) {
    if (vectors.empty()) throw ConfigError("mix_cam: needs at least one mask vector");
    for (const MaskVector& v : vectors) {
        if (!v.trained) throw Error("mix_cam: untrained mask vector");
    }
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    std::vector<double> sum(hw, 0.0), up(hw);
    for (const MaskVector& v : vectors) {
        kern::upsample_bilinear_fwd(v.values.data(), up.data(), 1, v.rows, v.cols, h, w);
        for (std::size_t i = 0; i < hw; ++i) sum[i] += up[i];
    }

    Cam cam;
    cam.h = h;
    cam.w = w;
    cam.gamma = gamma;
    cam.region.resize(hw);
    cam.values.assign(hw, 0.0);
    double mn = 0.0, mx = 0.0;
    bool first = true;
    for (std::size_t i = 0; i < hw; ++i) {
        cam.region[i] = sum[i] >= gamma ? 1 : 0;
        const double v = cam.region[i] ? sum[i] : 0.0;
        cam.values[i] = v;
        mn = first ? v : std::min(mn, v);
        mx = first ? v : std::max(mx, v);
        first = false;
    }
    if (mx > mn) {
        for (double& v : cam.values) v = (v - mn) / (mx - mn);
    } else {
        std::fill(cam.values.begin(), cam.values.end(), 0.0);
    }
    return cam;
}

Image colorize_cam(const Cam& cam) {
    static const auto table = [] {
        std::array<std::array<double, 3>, 256> t{};
        for (int i = 0; i < 256; ++i) {
            t[static_cast<std::size_t>(i)] = {i / 255.0, 0.0, (255 - i) / 255.0};
        }
        return t;
    }();
    Image img = Image::zeros(3, cam.h, cam.w);
    const std::size_t hw = static_cast<std::size_t>(cam.h) * cam.w;
    for (std::size_t i = 0; i < hw; ++i) {
        const auto& rgb =
            table[static_cast<std::size_t>(std::lround(std::clamp(cam.values[i], 0.0, 1.0) * 255.0))];
        img.data[i] = rgb[0];
        img.data[hw + i] = rgb[1];
        img.data[2 * hw + i] = rgb[2];
    }
    return img;
}

Image render_heatmap(const Image& x, const Cam& cam, double alpha, double beta) {
    if (x.h != cam.h || x.w != cam.w) {
        throw ShapeError("render_heatmap: image " + std::to_string(x.h) + "x" + std::to_string(x.w) +
                         " vs cam " + std::to_string(cam.h) + "x" + std::to_string(cam.w));
    }
    if (alpha < 0.0 || beta < 0.0) throw ConfigError("render_heatmap: blend weights must be >= 0");
    const Image color = colorize_cam(cam);
    Image out = Image::zeros(3, x.h, x.w);
    const std::size_t hw = static_cast<std::size_t>(x.h) * x.w;
    for (int ch = 0; ch < 3; ++ch) {
        const std::size_t base = static_cast<std::size_t>(ch) * hw;
        const std::size_t xbase = x.c == 3 ? base : 0;  // grayscale broadcasts
        for (std::size_t i = 0; i < hw; ++i) {
            out.data[base + i] =
                std::clamp(alpha * x.data[xbase + i] + beta * color.data[base + i], 0.0, 1.0);
        }
    }
    return out;
}

Image render_binary(const Image& x, const Cam& cam) {
    if (x.h != cam.h || x.w != cam.w) {
        throw ShapeError("render_binary: image " + std::to_string(x.h) + "x" + std::to_string(x.w) +
                         " vs cam " + std::to_string(cam.h) + "x" + std::to_string(cam.w));
    }
    Image out = Image::zeros(x.c, x.h, x.w);
    const std::size_t hw = static_cast<std::size_t>(x.h) * x.w;
    for (int ch = 0; ch < x.c; ++ch) {
        const std::size_t base = static_cast<std::size_t>(ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) {
            out.data[base + i] = cam.region[i] ? x.data[base + i] : 0.0;
        }
    }
    return out;
}

Explanation explain_image(Model& model, const Image& x, const MdmConfig& cfg, int threads) {
    check_image_shape(model, x, "explain_image");
    FreezeScope freeze(model);

    Explanation e;
    const DetectionNode node = select_detection_node(model, x);
    e.predicted_class = node.predicted_class;
    e.prototype = node.prototype;
    e.mask_x = node.mask_index;
    e.vectors_x = optimize_scales(node, x, cfg, threads);
    e.cam_x = mix_cam(e.vectors_x, cfg.gamma, x.h, x.w);

    if (model.prototype_pushed(node.prototype)) {
        e.has_prototype_image = true;
        e.prototype_image = model.prototype_source_image(node.prototype);
        const DetectionNode pnode =
            prototype_detection_node(model, node.prototype, e.prototype_image);
        e.mask_prototype = pnode.mask_index;
        e.vectors_prototype = optimize_scales(pnode, e.prototype_image, cfg, threads);
        e.cam_prototype = mix_cam(e.vectors_prototype, cfg.gamma, x.h, x.w);
    } else {
        e.warning = "prototype " + std::to_string(node.prototype) +
                    " has no recorded source image (model was never pushed); "
                    "writing the input-image explanation only";
    }
    return e;
}

void write_explanation(const std::string& dir, const Image& x, const Explanation& e,
                       const MdmConfig& cfg) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const fs::path base(dir);

    write_image((base / "cam_x.ppm").string(), cam_to_gray(e.cam_x));
    write_image((base / "heatmap_x.ppm").string(),
                render_heatmap(x, e.cam_x, cfg.alpha, cfg.beta));
    write_image((base / "binary_x.ppm").string(), render_binary(x, e.cam_x));

    json node;
    node["kind"] = "prototype";
    node["predicted_class"] = e.predicted_class;
    node["prototype"] = e.prototype;
    node["mask_x"] = e.mask_x;

    json doc;
    doc["gamma"] = cfg.gamma;
    doc["alpha"] = cfg.alpha;
    doc["beta"] = cfg.beta;
    doc["scales"] = cfg.scales;
    doc["steps"] = cfg.steps;
    doc["lr"] = cfg.lr;
    doc["eta"] = cfg.eta;
    doc["tau"] = cfg.tau;
    doc["has_prototype_image"] = e.has_prototype_image;
    json losses_x = json::array();
    for (const MaskVector& v : e.vectors_x) losses_x.push_back(v.final_loss);
    doc["final_losses_x"] = losses_x;

    if (e.has_prototype_image) {
        node["mask_prototype"] = e.mask_prototype;
        write_image((base / "cam_prototype.ppm").string(), cam_to_gray(e.cam_prototype));
        write_image((base / "heatmap_prototype.ppm").string(),
                    render_heatmap(e.prototype_image, e.cam_prototype, cfg.alpha, cfg.beta));
        write_image((base / "binary_prototype.ppm").string(),
                    render_binary(e.prototype_image, e.cam_prototype));
        json losses_p = json::array();
        for (const MaskVector& v : e.vectors_prototype) losses_p.push_back(v.final_loss);
        doc["final_losses_prototype"] = losses_p;
    } else {
        doc["warning"] = e.warning;
    }
    doc["node"] = node;

    std::ofstream out(base / "bundle.json");
    if (!out) throw DataError("cannot write " + (base / "bundle.json").string());
    out << doc.dump(2) << '\n';
}

OrderingReport ordering_property_harness(const std::vector<double>& contributions, double eta,
                                         int steps, double lr, double tol) {
    const int r = static_cast<int>(contributions.size());
    if (r < 2) throw ConfigError("ordering_property_harness: needs at least two regions");

    // Additive concave probe over disjoint unit regions: masking cell i scales
    // its pixel, and the probe reads sum_i I_i * sqrt(pixel_i + delta). The
    // offset keeps the slope finite when a cell is driven to zero.
    const double delta = 0.05;
    const Image x = Image::filled(1, 1, r, 1.0);
    const Tensor weights = Tensor::from({r}, contributions, false);
    auto probe = [weights, r, delta](const Tensor& image) {
        return sum_all(mul(weights, sqrt(add_scalar(reshape(image, {r}), delta))));
    };

    const DetectionNode node = scalar_detection_node(probe, x);
    const MaskVector mv = optimize_mask_vector(node, x, 1, r, eta, 0.5, steps, lr);

    OrderingReport report;
    report.contributions = contributions;
    report.mask_values = mv.values;
    bool first = true;
    for (int a = 0; a < r; ++a) {
        for (int b = a + 1; b < r; ++b) {
            const double product = (contributions[static_cast<std::size_t>(a)] -
                                    contributions[static_cast<std::size_t>(b)]) *
                                   (mv.values[static_cast<std::size_t>(a)] -
                                    mv.values[static_cast<std::size_t>(b)]);
            if (first || product < report.min_product) report.min_product = product;
            first = false;
            if (product < -tol) report.violations.push_back({a, b, product});
        }
    }
    report.spearman = spearman_rho(contributions, mv.values);
    return report;
}

}  // namespace dproto
