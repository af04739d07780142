#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace dproto {

class Node;
using NodePtr = std::shared_ptr<Node>;

// One vertex of the computation graph. Values and gradients are dense
// row-major float64 buffers; `grad` is allocated only when the node
// participates in differentiation.
class Node {
public:
    std::vector<int> shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<NodePtr> inputs;
    std::function<void(Node&)> backward_fn;
    std::vector<std::int64_t> aux;  // op-specific state (pool argmax indices etc.)
};

std::size_t numel(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

// Shared handle to a Node. Copies alias the same storage.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(NodePtr node) : node_(std::move(node)) {}

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, double v, bool requires_grad = false);
    static Tensor from(std::vector<int> shape, std::vector<double> values,
                       bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const std::vector<int>& shape() const { return node_->shape; }
    int ndim() const { return static_cast<int>(node_->shape.size()); }
    int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
    std::size_t size() const { return node_->value.size(); }

    std::vector<double>& values() { return node_->value; }
    const std::vector<double>& values() const { return node_->value; }
    std::vector<double>& grad() { return node_->grad; }
    const std::vector<double>& grad() const { return node_->grad; }
    double* data() { return node_->value.data(); }
    const double* data() const { return node_->value.data(); }

    bool requires_grad() const { return node_->requires_grad; }
    // Leaves only; toggling allocates or drops the gradient buffer.
    void set_requires_grad(bool rg);
    double scalar() const;
    void zero_grad();

    // Copies values into a fresh leaf that does not require gradients.
    Tensor detach() const;

    // Reverse-mode sweep from a scalar. Gradients accumulate additively,
    // so parameter grads must be zeroed between iterations.
    void backward();

    NodePtr node() const { return node_; }
    Node* raw() const { return node_.get(); }

private:
    NodePtr node_;
};

// Creates an interior node; requires_grad is inherited from the inputs.
Tensor make_op(std::vector<int> shape, const char* op, std::vector<NodePtr> inputs);

}  // namespace dproto
