#include "dproto/commands.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <thread>
#include <vector>

#include <json.hpp>

#include "dproto/checkpoint.hpp"
#include "dproto/dataset.hpp"
#include "dproto/errors.hpp"
#include "dproto/mdm.hpp"
#include "dproto/rng.hpp"
#include "dproto/saliency_eval.hpp"
#include "dproto/threading.hpp"
#include "dproto/trainer.hpp"

namespace dproto {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string manifest_path(const std::string& data) {
    if (fs::is_directory(data)) return (fs::path(data) / "manifest.json").string();
    return data;
}

void write_json(const std::string& path, const json& j) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    out << j.dump(2) << '\n';
}

// Per-image, per-method saliency scores gathered by the eval workers.
struct MethodScores {
    LocalizationMetrics loc;
    ConfidencePair pair;
    double deletion_auc = 0.0;
    double insertion_auc = 0.0;
};

struct ImageScores {
    int label = 0;
    int predicted = 0;
    MethodScores mdm, occlusion, random;
    Cam cam_mdm;  // kept for the threshold sweep
    std::vector<double> deletion_probs;
    std::vector<double> insertion_probs;
    std::vector<double> fractions;
};

MethodScores score_method(const Model& model, const Sample& sm, const Cam& cam,
                          double top_percent, int step_percent) {
    MethodScores s;
    s.loc = localization_metrics(binarize_cam(cam, top_percent), sm.mask);
    s.pair = confidence_pair(model, sm.image, cam, top_percent);
    const auto [del, ins] = deletion_insertion(model, sm.image, sm.label, cam, step_percent);
    s.deletion_auc = del.auc;
    s.insertion_auc = ins.auc;
    return s;
}

json method_block(const std::vector<ImageScores>& rows, double accuracy,
                  MethodScores ImageScores::*method) {
    std::vector<ConfidencePair> pairs;
    double dice = 0, iou = 0, ppv = 0, sens = 0, del = 0, ins = 0;
    for (const ImageScores& r : rows) {
        const MethodScores& m = r.*method;
        pairs.push_back(m.pair);
        dice += m.loc.dice;
        iou += m.loc.iou;
        ppv += m.loc.ppv;
        sens += m.loc.sensitivity;
        del += m.deletion_auc;
        ins += m.insertion_auc;
    }
    const double n = static_cast<double>(rows.size());
    const DropIncrease di = aggregate_drop_increase(pairs);
    return json{{"accuracy", accuracy},   {"AD", di.ad},
                {"AI", di.ai},            {"deletion_auc", del / n},
                {"insertion_auc", ins / n}, {"dice", dice / n},
                {"iou", iou / n},         {"ppv", ppv / n},
                {"sensitivity", sens / n}};
}

}  // namespace

void cmd_gen_data(const GenDataArgs& args, std::ostream& log) {
    if (args.out.empty()) throw ConfigError("gen-data: --out is required");
    DatasetConfig cfg;
    cfg.classes = args.classes;
    cfg.per_class = args.per_class;
    cfg.image_size = args.size;
    RunConfig check;
    check.dataset = cfg;
    check.validate();
    set_threads(args.threads);
    generate_dataset(cfg, args.seed, args.out, args.force);
    log << "wrote " << cfg.classes * cfg.per_class << " images (" << cfg.classes << " classes x "
        << cfg.per_class << ") to " << args.out << "\n";
}

void cmd_train(const TrainArgs& args, std::ostream& log) {
    if (args.data.empty() || args.out.empty())
        throw ConfigError("train: --data and --out are required");
    RunConfig cfg = args.config.empty() ? RunConfig{} : RunConfig::load_file(args.config);
    if (args.epochs >= 0) cfg.trainer.epochs = args.epochs;
    cfg.trainer.seed = args.seed;
    cfg.validate();
    set_threads(args.threads);

    const Dataset ds = load_manifest(manifest_path(args.data));
    Model model = Model::build(cfg, ds.class_names, args.seed);
    const std::vector<EpochLog> logs = train(model, ds, cfg.trainer);
    for (const EpochLog& e : logs) {
        log << "epoch " << e.epoch << " total " << e.loss.total << " ce " << e.loss.ce
            << " train_acc " << e.train_acc << " test_acc " << e.test_acc
            << (e.pushed ? " push" : "") << "\n";
    }

    fs::create_directories(args.out);
    save_checkpoint((fs::path(args.out) / "model.dproto").string(), model);
    write_train_log((fs::path(args.out) / "training_log.csv").string(), logs);

    int pushes = 0;
    for (const EpochLog& e : logs) pushes += e.pushed ? 1 : 0;
    write_json((fs::path(args.out) / "metrics.json").string(),
               json{{"epochs", static_cast<int>(logs.size())},
                    {"pushes", pushes},
                    {"train_accuracy", accuracy(model, ds.train)},
                    {"test_accuracy", accuracy(model, ds.test)}});
    log << "checkpoint, training_log.csv, metrics.json written to " << args.out << "\n";
}

void cmd_explain(const ExplainArgs& args, std::ostream& log) {
    if (args.checkpoint.empty() || args.data.empty() || args.out.empty())
        throw ConfigError("explain: --checkpoint, --data and --out are required");
    Model model = load_checkpoint(args.checkpoint);
    const Dataset ds = load_manifest(manifest_path(args.data));
    const std::vector<Sample>* split = nullptr;
    if (args.split == "train") {
        split = &ds.train;
    } else if (args.split == "test") {
        split = &ds.test;
    } else {
        throw ConfigError("explain: --split must be train or test, got " + args.split);
    }
    if (args.index < 0 || args.index >= static_cast<int>(split->size())) {
        throw ConfigError("explain: --index " + std::to_string(args.index) + " outside the " +
                          args.split + " split of " + std::to_string(split->size()) + " images");
    }
    set_threads(1);  // scale-level parallelism only, keeps any thread count bit-identical
    const Sample& sm = (*split)[static_cast<std::size_t>(args.index)];
    const Explanation e = explain_image(model, sm.image, model.cfg.mdm, args.threads);
    write_explanation(args.out, sm.image, e, model.cfg.mdm);
    log << "predicted class " << e.predicted_class << " via prototype " << e.prototype
        << "; bundle written to " << args.out << "\n";
    if (!e.warning.empty()) log << "warning: " << e.warning << "\n";
}

void cmd_eval(const EvalArgs& args, std::ostream& log) {
    if (args.checkpoint.empty() || args.data.empty() || args.out.empty())
        throw ConfigError("eval: --checkpoint, --data and --out are required");
    if (!(args.top_percent > 0.0) || args.top_percent > 100.0)
        throw ConfigError("eval: --top-percent must lie in (0, 100]");
    Model model = load_checkpoint(args.checkpoint);
    const Dataset ds = load_manifest(manifest_path(args.data));
    if (ds.test.empty()) throw ConfigError("eval: the test split is empty");

    const EvalConfig& ecfg = model.cfg.eval;
    std::size_t count = ds.test.size();
    if (args.limit > 0) count = std::min(count, static_cast<std::size_t>(args.limit));
    else if (ecfg.max_images > 0) count = std::min(count, static_cast<std::size_t>(ecfg.max_images));

    set_threads(1);  // image-level workers below; kernels stay serial
    const double acc = accuracy(model, ds.test);
    log << "accuracy " << acc << " over " << ds.test.size() << " test images\n";
    log << "explaining " << count << " images with " << args.threads << " worker(s)\n";

    const FreezeScope freeze(model);
    std::vector<ImageScores> rows(count);
    const int workers = std::max(1, args.threads);
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    auto work = [&](int w) {
        try {
            for (std::size_t i = static_cast<std::size_t>(w); i < count;
                 i += static_cast<std::size_t>(workers)) {
                const Sample& sm = ds.test[i];
                ImageScores& r = rows[i];
                r.label = sm.label;
                r.predicted = Model::predicted_class(model.forward(sm.image));

                const DetectionNode node = select_detection_node(model, sm.image);
                const std::vector<MaskVector> vecs =
                    optimize_scales(node, sm.image, model.cfg.mdm, 1);
                r.cam_mdm = mix_cam(vecs, model.cfg.mdm.gamma, sm.image.h, sm.image.w);
                const Cam cam_occ = occlusion_baseline(model, sm.image, ecfg.occlusion_patch,
                                                       ecfg.occlusion_stride);
                const Cam cam_rnd =
                    random_cam(sm.image.h, sm.image.w, derive_seed(args.seed, "random-cam", i));

                r.mdm = score_method(model, sm, r.cam_mdm, args.top_percent, ecfg.step_percent);
                r.occlusion =
                    score_method(model, sm, cam_occ, args.top_percent, ecfg.step_percent);
                r.random = score_method(model, sm, cam_rnd, args.top_percent, ecfg.step_percent);

                const auto [del, ins] =
                    deletion_insertion(model, sm.image, sm.label, r.cam_mdm, ecfg.step_percent);
                r.fractions = del.fractions;
                r.deletion_probs = del.probabilities;
                r.insertion_probs = ins.probabilities;
            }
        } catch (...) {
            errors[static_cast<std::size_t>(w)] = std::current_exception();
        }
    };
    if (workers == 1) {
        work(0);
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(work, w);
        for (std::thread& t : pool) t.join();
    }
    for (const std::exception_ptr& e : errors) {
        if (e) std::rethrow_exception(e);
    }

    fs::create_directories(args.out);
    json metrics;
    metrics["mdm"] = method_block(rows, acc, &ImageScores::mdm);
    metrics["occlusion"] = method_block(rows, acc, &ImageScores::occlusion);
    metrics["random"] = method_block(rows, acc, &ImageScores::random);
    write_json((fs::path(args.out) / "metrics.json").string(), metrics);

    std::vector<double> mean_del(rows.front().fractions.size(), 0.0);
    std::vector<double> mean_ins(mean_del.size(), 0.0);
    for (const ImageScores& r : rows) {
        for (std::size_t k = 0; k < mean_del.size(); ++k) {
            mean_del[k] += r.deletion_probs[k];
            mean_ins[k] += r.insertion_probs[k];
        }
    }
    for (double& v : mean_del) v /= static_cast<double>(count);
    for (double& v : mean_ins) v /= static_cast<double>(count);
    write_curves_csv((fs::path(args.out) / "curves.csv").string(), rows.front().fractions,
                     mean_del, mean_ins);

    std::vector<Cam> cams;
    std::vector<const Image*> truths;
    for (std::size_t i = 0; i < count; ++i) {
        cams.push_back(rows[i].cam_mdm);
        truths.push_back(&ds.test[i].mask);
    }
    write_sweep_csv((fs::path(args.out) / "sweep.csv").string(), threshold_sweep(cams, truths));

    std::ofstream per((fs::path(args.out) / "per_image.csv").string(), std::ios::binary);
    if (!per) throw DataError("cannot write per_image.csv");
    per.precision(17);
    per << "index,label,predicted,method,Y,O,dice,iou,ppv,sensitivity,deletion_auc,insertion_"
           "auc\n";
    for (std::size_t i = 0; i < count; ++i) {
        const ImageScores& r = rows[i];
        const auto emit = [&](const char* name, const MethodScores& m) {
            per << i << ',' << r.label << ',' << r.predicted << ',' << name << ',' << m.pair.original
                << ',' << m.pair.masked << ',' << m.loc.dice << ',' << m.loc.iou << ','
                << m.loc.ppv << ',' << m.loc.sensitivity << ',' << m.deletion_auc << ','
                << m.insertion_auc << '\n';
        };
        emit("mdm", r.mdm);
        emit("occlusion", r.occlusion);
        emit("random", r.random);
    }
    log << "metrics.json, curves.csv, sweep.csv, per_image.csv written to " << args.out << "\n";
    log << "mdm mean iou " << metrics["mdm"]["iou"].get<double>() << ", occlusion "
        << metrics["occlusion"]["iou"].get<double>() << ", random "
        << metrics["random"]["iou"].get<double>() << "\n";
}

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e)) return 2;
    if (dynamic_cast<const DataError*>(&e) || dynamic_cast<const ShapeError*>(&e)) return 3;
    if (dynamic_cast<const DivergenceError*>(&e)) return 4;
    return 1;
}

}  // namespace dproto
