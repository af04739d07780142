// dproto CLI: gen-data writes a synthetic shape dataset, train fits a model,
// explain produces a saliency bundle for one image, eval scores saliency
// quality against occlusion and random baselines over a test split.
//
// Exit codes: 0 success, 2 usage or configuration, 3 bad data or shapes,
// 4 numeric divergence, 1 anything else.

#include <exception>
#include <iostream>

#include <CLI11.hpp>

#include "dproto/commands.hpp"

namespace {

CLI::Option* add_threads(CLI::App* cmd, int& threads) {
    return cmd->add_option("--threads", threads, "worker thread count")
        ->check(CLI::PositiveNumber)
        ->envname("DPROTO_THREADS");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dproto: prototype-based interpretable image classifier"};
    app.require_subcommand(1);

    dproto::GenDataArgs gen;
    CLI::App* gen_cmd = app.add_subcommand("gen-data", "generate a synthetic shape dataset");
    gen_cmd->add_option("--out", gen.out, "output directory")->required();
    gen_cmd->add_option("--classes", gen.classes, "number of shape classes")
        ->check(CLI::PositiveNumber);
    gen_cmd->add_option("--per-class", gen.per_class, "images per class")
        ->check(CLI::PositiveNumber);
    gen_cmd->add_option("--size", gen.size, "image side length in pixels")
        ->check(CLI::PositiveNumber);
    gen_cmd->add_option("--seed", gen.seed, "rng seed");
    gen_cmd->add_flag("--force", gen.force, "write into a non-empty directory");
    add_threads(gen_cmd, gen.threads);

    dproto::TrainArgs train;
    CLI::App* train_cmd = app.add_subcommand("train", "train a model on a generated dataset");
    train_cmd->add_option("--data", train.data, "dataset directory or manifest.json")->required();
    train_cmd->add_option("--out", train.out, "run directory for checkpoint and logs")->required();
    train_cmd->add_option("--config", train.config, "config JSON, defaults when omitted")
        ->check(CLI::ExistingFile);
    train_cmd->add_option("--seed", train.seed, "rng seed");
    train_cmd->add_option("--epochs", train.epochs, "override the configured epoch count")
        ->check(CLI::NonNegativeNumber);
    add_threads(train_cmd, train.threads);

    dproto::ExplainArgs explain;
    CLI::App* explain_cmd =
        app.add_subcommand("explain", "write a saliency bundle for one dataset image");
    explain_cmd->add_option("--checkpoint", explain.checkpoint, "trained model file")
        ->required()
        ->check(CLI::ExistingFile);
    explain_cmd->add_option("--data", explain.data, "dataset directory or manifest.json")
        ->required();
    explain_cmd->add_option("--split", explain.split, "train or test")
        ->check(CLI::IsMember({"train", "test"}));
    explain_cmd->add_option("--index", explain.index, "image index within the split")
        ->check(CLI::NonNegativeNumber);
    explain_cmd->add_option("--out", explain.out, "bundle directory")->required();
    add_threads(explain_cmd, explain.threads);

    dproto::EvalArgs eval;
    CLI::App* eval_cmd =
        app.add_subcommand("eval", "score saliency quality over the test split");
    eval_cmd->add_option("--checkpoint", eval.checkpoint, "trained model file")
        ->required()
        ->check(CLI::ExistingFile);
    eval_cmd->add_option("--data", eval.data, "dataset directory or manifest.json")->required();
    eval_cmd->add_option("--out", eval.out, "report directory")->required();
    eval_cmd->add_option("--top-percent", eval.top_percent,
                         "cam pixels kept when binarizing, in (0, 100]");
    eval_cmd->add_option("--limit", eval.limit, "explain at most this many test images, 0 = all")
        ->check(CLI::NonNegativeNumber);
    eval_cmd->add_option("--seed", eval.seed, "rng seed for the random baseline");
    add_threads(eval_cmd, eval.threads);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*gen_cmd) dproto::cmd_gen_data(gen, std::cout);
        if (*train_cmd) dproto::cmd_train(train, std::cout);
        if (*explain_cmd) dproto::cmd_explain(explain, std::cout);
        if (*eval_cmd) dproto::cmd_eval(eval, std::cout);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return dproto::exit_code_for(e);
    }
    return 0;
}
