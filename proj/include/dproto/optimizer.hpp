#pragma once

#include <string>
#include <vector>

#include "dproto/tensor.hpp"

namespace dproto {

// First-order optimizer over named parameter groups, each with its own
// learning rate. kind is "adam" (beta1 0.9, beta2 0.999, eps 1e-8) or "sgd".
// Frozen tensors (requires_grad off) are skipped without advancing their
// Adam step counters. Updates are serial and deterministic.
class Optimizer {
public:
    explicit Optimizer(const std::string& kind);

    void add_group(const std::string& name, std::vector<Tensor> params, double lr);
    void zero_grad();
    void step();
    // Clears Adam moments and step counts of one group (used after a push
    // rewrites prototypes to values unrelated to the gradient history).
    void reset_group_state(const std::string& name);

private:
    struct ParamState {
        Tensor tensor;
        std::vector<double> m, v;
        long t = 0;
    };
    struct Group {
        std::string name;
        double lr = 0.0;
        std::vector<ParamState> params;
    };

    bool adam_ = true;
    std::vector<Group> groups_;
};

}  // namespace dproto
