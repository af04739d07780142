#pragma once

#include <cstdint>
#include <ostream>
#include <string>

namespace dproto {

// In-process bodies of the CLI subcommands. Each throws on failure
// (ConfigError for usage problems, DataError/ShapeError for bad inputs,
// DivergenceError for numeric blowups); exit_code_for maps those to the
// documented process exit codes. All are deterministic given their seed,
// for any thread count.
struct GenDataArgs {
    std::string out;
    int classes = 4;
    int per_class = 200;
    int size = 56;
    std::uint64_t seed = 42;
    bool force = false;
    int threads = 1;
};

struct TrainArgs {
    std::string data;    // dataset directory or manifest.json path
    std::string out;     // run directory: model.dproto, training_log.csv, metrics.json
    std::string config;  // optional RunConfig JSON; defaults when empty
    std::uint64_t seed = 42;
    int epochs = -1;  // >= 0 overrides the config value
    int threads = 1;
};

struct ExplainArgs {
    std::string checkpoint;
    std::string data;
    std::string split = "test";
    int index = 0;
    std::string out;  // bundle directory
    int threads = 1;
};

struct EvalArgs {
    std::string checkpoint;
    std::string data;
    std::string out;  // metrics.json, curves.csv, sweep.csv, per_image.csv
    double top_percent = 20.0;
    int limit = 0;  // cap on explained test images, 0 = config (then 0 = all)
    std::uint64_t seed = 42;
    int threads = 1;
};

void cmd_gen_data(const GenDataArgs& args, std::ostream& log);
void cmd_train(const TrainArgs& args, std::ostream& log);
void cmd_explain(const ExplainArgs& args, std::ostream& log);
void cmd_eval(const EvalArgs& args, std::ostream& log);

// 2 usage, 3 data, 4 divergence, 1 anything else.
int exit_code_for(const std::exception& e);

}  // namespace dproto
