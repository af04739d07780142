#include "dproto/saliency_eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "dproto/autodiff.hpp"
#include "dproto/errors.hpp"
#include "dproto/rng.hpp"

namespace dproto {

namespace {

// Pixel indices in descending cam order, ties broken by row-major position.
std::vector<std::size_t> saliency_order(const std::vector<double>& values) {
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
    return order;
}

std::size_t top_pixel_count(std::size_t total, double top_percent) {
    return static_cast<std::size_t>(
        std::ceil(top_percent / 100.0 * static_cast<double>(total)));
}

double class_confidence(const Model& model, const Image& image, int cls) {
    const ModelForward f = model.forward(image);
    return softmax(f.proto.logits.values())[static_cast<std::size_t>(cls)];
}

double ratio_or_zero(double num, double den, bool& degenerate) {
    if (den == 0.0) {
        degenerate = true;
        return 0.0;
    }
    return num / den;
}

double trapezoid_auc(const std::vector<double>& xs, const std::vector<double>& ys) {
    double auc = 0.0;
    for (std::size_t i = 1; i < xs.size(); ++i) {
        auc += (xs[i] - xs[i - 1]) * 0.5 * (ys[i] + ys[i - 1]);
    }
    return auc;
}

}  // namespace

LocalizationMetrics localization_metrics(const Image& cam_binary, const Image& truth) {
    if (cam_binary.c != 1 || truth.c != 1 || cam_binary.h != truth.h || cam_binary.w != truth.w) {
        throw ShapeError("localization_metrics: masks " + std::to_string(cam_binary.c) + "x" +
                         std::to_string(cam_binary.h) + "x" + std::to_string(cam_binary.w) +
                         " vs " + std::to_string(truth.c) + "x" + std::to_string(truth.h) + "x" +
                         std::to_string(truth.w));
    }
    LocalizationMetrics m;
    for (std::size_t i = 0; i < cam_binary.data.size(); ++i) {
        const bool c = cam_binary.data[i] > 0.5;
        const bool t = truth.data[i] > 0.5;
        m.tp += c && t;
        m.fp += c && !t;
        m.fn += !c && t;
        m.tn += !c && !t;
    }
    const double tp = static_cast<double>(m.tp);
    const double fp = static_cast<double>(m.fp);
    const double fn = static_cast<double>(m.fn);
    m.dice = ratio_or_zero(2.0 * tp, fp + 2.0 * tp + fn, m.degenerate);
    m.iou = ratio_or_zero(tp, tp + fp + fn, m.degenerate);
    m.ppv = ratio_or_zero(tp, tp + fp, m.degenerate);
    m.sensitivity = ratio_or_zero(tp, tp + fn, m.degenerate);
    return m;
}

Image binarize_cam(const Cam& cam, double top_percent) {
    if (top_percent <= 0.0 || top_percent > 100.0) {
        throw ConfigError("binarize_cam: top_percent must be in (0, 100], got " +
                          std::to_string(top_percent));
    }
    const std::vector<std::size_t> order = saliency_order(cam.values);
    const std::size_t keep = top_pixel_count(cam.values.size(), top_percent);
    Image out = Image::zeros(1, cam.h, cam.w);
    for (std::size_t i = 0; i < keep; ++i) out.data[order[i]] = 1.0;
    return out;
}

ConfidencePair confidence_pair(const Model& model, const Image& image, const Cam& cam,
                               double top_percent) {
    const ModelForward f = model.forward(image);
    const int c = Model::predicted_class(f);
    const Image keep = binarize_cam(cam, top_percent);

    Image masked = image;
    const std::size_t hw = static_cast<std::size_t>(image.h) * image.w;
    for (int ch = 0; ch < image.c; ++ch) {
        for (std::size_t i = 0; i < hw; ++i) {
            if (keep.data[i] < 0.5) masked.data[static_cast<std::size_t>(ch) * hw + i] = 0.0;
        }
    }
    ConfidencePair pair;
    pair.original = softmax(f.proto.logits.values())[static_cast<std::size_t>(c)];
    pair.masked = class_confidence(model, masked, c);
    return pair;
}

DropIncrease aggregate_drop_increase(const std::vector<ConfidencePair>& cases) {
    if (cases.empty()) throw ConfigError("aggregate_drop_increase: no cases");
    DropIncrease out;
    for (const ConfidencePair& c : cases) {
        if (c.original == 0.0) {
            ++out.degenerate;
        } else {
            out.ad += std::max(0.0, c.original - c.masked) / c.original;
        }
        out.ai += c.original < c.masked ? 1.0 : 0.0;
    }
    const double n = static_cast<double>(cases.size());
    out.ad *= 100.0 / n;
    out.ai *= 100.0 / n;
    return out;
}

std::pair<CurveResult, CurveResult> deletion_insertion(const Model& model, const Image& image,
                                                       int true_class, const Cam& cam,
                                                       int step_percent) {
    if (step_percent < 1 || 100 % step_percent != 0) {
        throw ConfigError("deletion_insertion: step_percent must divide 100, got " +
                          std::to_string(step_percent));
    }
    if (image.h != cam.h || image.w != cam.w) {
        throw ShapeError("deletion_insertion: image " + std::to_string(image.h) + "x" +
                         std::to_string(image.w) + " vs cam " + std::to_string(cam.h) + "x" +
                         std::to_string(cam.w));
    }
    const std::vector<std::size_t> order = saliency_order(cam.values);
    const std::size_t hw = order.size();
    const int steps = 100 / step_percent;

    CurveResult deletion, insertion;
    Image deleted = image;
    Image inserted = Image::zeros(image.c, image.h, image.w);

    std::size_t done = 0;
    for (int t = 0; t <= steps; ++t) {
        const double fraction = static_cast<double>(t) / steps;
        const std::size_t k =
            static_cast<std::size_t>(std::llround(fraction * static_cast<double>(hw)));
        for (; done < k; ++done) {
            const std::size_t pix = order[done];
            for (int ch = 0; ch < image.c; ++ch) {
                const std::size_t at = static_cast<std::size_t>(ch) * hw + pix;
                deleted.data[at] = 0.0;
                inserted.data[at] = image.data[at];
            }
        }
        deletion.fractions.push_back(fraction);
        deletion.probabilities.push_back(class_confidence(model, deleted, true_class));
        insertion.fractions.push_back(fraction);
        insertion.probabilities.push_back(class_confidence(model, inserted, true_class));
    }
    deletion.auc = trapezoid_auc(deletion.fractions, deletion.probabilities);
    insertion.auc = trapezoid_auc(insertion.fractions, insertion.probabilities);
    return {deletion, insertion};
}

Cam occlusion_baseline(const Model& model, const Image& image, int patch, int stride) {
    if (patch < 1 || patch > image.h || patch > image.w) {
        throw ConfigError("occlusion_baseline: patch " + std::to_string(patch) +
                          " does not fit a " + std::to_string(image.h) + "x" +
                          std::to_string(image.w) + " image");
    }
    if (stride < 1) throw ConfigError("occlusion_baseline: stride must be >= 1");

    const ModelForward f = model.forward(image);
    const int c = Model::predicted_class(f);
    const double original = softmax(f.proto.logits.values())[static_cast<std::size_t>(c)];

    auto window_starts = [&](int extent) {
        std::vector<int> starts;
        for (int s = 0; s + patch <= extent; s += stride) starts.push_back(s);
        if (starts.empty() || starts.back() + patch < extent) starts.push_back(extent - patch);
        return starts;
    };

    const std::size_t hw = static_cast<std::size_t>(image.h) * image.w;
    std::vector<double> drop(hw, 0.0);
    std::vector<int> cover(hw, 0);
    for (int sy : window_starts(image.h)) {
        for (int sx : window_starts(image.w)) {
            Image occluded = image;
            for (int ch = 0; ch < image.c; ++ch) {
                for (int y = sy; y < sy + patch; ++y) {
                    for (int x = sx; x < sx + patch; ++x) {
                        occluded.data[(static_cast<std::size_t>(ch) * image.h + y) * image.w + x] =
                            0.0;
                    }
                }
            }
            const double delta = original - class_confidence(model, occluded, c);
            for (int y = sy; y < sy + patch; ++y) {
                for (int x = sx; x < sx + patch; ++x) {
                    const std::size_t at = static_cast<std::size_t>(y) * image.w + x;
                    drop[at] += delta;
                    cover[at] += 1;
                }
            }
        }
    }

    Cam cam;
    cam.h = image.h;
    cam.w = image.w;
    cam.gamma = 0.0;
    cam.region.assign(hw, 1);
    cam.values.resize(hw);
    double mn = 0.0, mx = 0.0;
    for (std::size_t i = 0; i < hw; ++i) {
        cam.values[i] = drop[i] / cover[i];
        mn = i == 0 ? cam.values[i] : std::min(mn, cam.values[i]);
        mx = i == 0 ? cam.values[i] : std::max(mx, cam.values[i]);
    }
    if (mx > mn) {
        for (double& v : cam.values) v = (v - mn) / (mx - mn);
    } else {
        std::fill(cam.values.begin(), cam.values.end(), 0.0);
    }
    return cam;
}

Cam random_cam(int h, int w, std::uint64_t seed) {
    Cam cam;
    cam.h = h;
    cam.w = w;
    cam.gamma = 0.0;
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    cam.region.assign(hw, 1);
    cam.values.resize(hw);
    Rng rng(seed);
    for (double& v : cam.values) v = rng.uniform();
    return cam;
}

std::vector<SweepRow> threshold_sweep(const std::vector<Cam>& cams,
                                      const std::vector<const Image*>& truths) {
    if (cams.size() != truths.size() || cams.empty()) {
        throw ConfigError("threshold_sweep: needs equally many cams and truths");
    }
    std::vector<SweepRow> rows(99);
    for (std::size_t i = 0; i < cams.size(); ++i) {
        const std::vector<std::size_t> order = saliency_order(cams[i].values);
        const Image& truth = *truths[i];
        if (truth.h != cams[i].h || truth.w != cams[i].w) {
            throw ShapeError("threshold_sweep: truth " + std::to_string(truth.h) + "x" +
                             std::to_string(truth.w) + " vs cam " + std::to_string(cams[i].h) +
                             "x" + std::to_string(cams[i].w));
        }
        std::vector<long long> prefix_tp(order.size() + 1, 0);
        long long truth_total = 0;
        for (std::size_t k = 0; k < order.size(); ++k) {
            prefix_tp[k + 1] = prefix_tp[k] + (truth.data[order[k]] > 0.5 ? 1 : 0);
        }
        for (double v : truth.data) truth_total += v > 0.5 ? 1 : 0;

        for (int pct = 1; pct <= 99; ++pct) {
            const std::size_t k = top_pixel_count(order.size(), pct);
            const double tp = static_cast<double>(prefix_tp[k]);
            const double fp = static_cast<double>(k) - tp;
            const double fn = static_cast<double>(truth_total) - tp;
            SweepRow& row = rows[static_cast<std::size_t>(pct - 1)];
            row.threshold = pct;
            bool degenerate = false;
            row.dice += ratio_or_zero(2.0 * tp, fp + 2.0 * tp + fn, degenerate);
            row.iou += ratio_or_zero(tp, tp + fp + fn, degenerate);
            row.ppv += ratio_or_zero(tp, tp + fp, degenerate);
            row.sensitivity += ratio_or_zero(tp, tp + fn, degenerate);
        }
    }
    const double n = static_cast<double>(cams.size());
    for (SweepRow& row : rows) {
        row.dice /= n;
        row.iou /= n;
        row.ppv /= n;
        row.sensitivity /= n;
    }
    return rows;
}

void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    out.precision(17);
    out << "threshold,dice,iou,ppv,sensitivity\n";
    for (const SweepRow& row : rows) {
        out << row.threshold << ',' << row.dice << ',' << row.iou << ',' << row.ppv << ','
            << row.sensitivity << '\n';
    }
}

void write_curves_csv(const std::string& path, const std::vector<double>& fractions,
                      const std::vector<double>& deletion_mean,
                      const std::vector<double>& insertion_mean) {
    if (fractions.size() != deletion_mean.size() || fractions.size() != insertion_mean.size()) {
        throw ConfigError("write_curves_csv: column lengths differ");
    }
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    out.precision(17);
    out << "fraction,deletion_prob,insertion_prob\n";
    for (std::size_t i = 0; i < fractions.size(); ++i) {
        out << fractions[i] << ',' << deletion_mean[i] << ',' << insertion_mean[i] << '\n';
    }
}

}  // namespace dproto
