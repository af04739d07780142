#include "dproto/optimizer.hpp"

#include <cmath>

#include "dproto/errors.hpp"

namespace dproto {

namespace {
constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kEps = 1e-8;
}  // namespace

Optimizer::Optimizer(const std::string& kind) {
    if (kind == "adam")
        adam_ = true;
    else if (kind == "sgd")
        adam_ = false;
    else
        throw ConfigError("optimizer: unknown kind \"" + kind + "\"");
}

void Optimizer::add_group(const std::string& name, std::vector<Tensor> params, double lr) {
    if (!(lr > 0.0))
        throw ConfigError("optimizer: group \"" + name + "\" needs a positive learning rate");
    Group g;
    g.name = name;
    g.lr = lr;
    for (auto& t : params) {
        ParamState ps;
        ps.tensor = std::move(t);
        g.params.push_back(std::move(ps));
    }
    groups_.push_back(std::move(g));
}

void Optimizer::zero_grad() {
    for (auto& g : groups_)
        for (auto& ps : g.params) ps.tensor.zero_grad();
}

void Optimizer::step() {
    for (auto& g : groups_)
        for (auto& ps : g.params) {
            if (!ps.tensor.requires_grad())
                continue;
            auto& x = ps.tensor.values();
            const auto& grad = ps.tensor.grad();
            if (!adam_) {
                for (std::size_t i = 0; i < x.size(); ++i) x[i] -= g.lr * grad[i];
                continue;
            }
            if (ps.m.size() != x.size()) {
                ps.m.assign(x.size(), 0.0);
                ps.v.assign(x.size(), 0.0);
                ps.t = 0;
            }
            ++ps.t;
            const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(ps.t));
            const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(ps.t));
            for (std::size_t i = 0; i < x.size(); ++i) {
                ps.m[i] = kBeta1 * ps.m[i] + (1.0 - kBeta1) * grad[i];
                ps.v[i] = kBeta2 * ps.v[i] + (1.0 - kBeta2) * grad[i] * grad[i];
                x[i] -= g.lr * (ps.m[i] / c1) / (std::sqrt(ps.v[i] / c2) + kEps);
            }
        }
}

void Optimizer::reset_group_state(const std::string& name) {
    for (auto& g : groups_)
        if (g.name == name)
            for (auto& ps : g.params) {
                ps.m.clear();
                ps.v.clear();
                ps.t = 0;
            }
}

}  // namespace dproto
