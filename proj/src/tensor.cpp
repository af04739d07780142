#include "dproto/tensor.hpp"

#include <unordered_set>

#include "dproto/errors.hpp"

namespace dproto {

std::size_t numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d <= 0) {
            throw ShapeError("tensor: non-positive dimension in " + shape_str(shape));
        }
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::string shape_str(const std::vector<int>& shape) {
    std::string s = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ", ";
        s += std::to_string(shape[i]);
    }
    return s + ")";
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    auto n = std::make_shared<Node>();
    const std::size_t count = numel(shape);
    n->shape = std::move(shape);
    n->value.assign(count, 0.0);
    n->requires_grad = requires_grad;
    if (requires_grad) n->grad.assign(count, 0.0);
    return Tensor(std::move(n));
}

Tensor Tensor::full(std::vector<int> shape, double v, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    t.values().assign(t.size(), v);
    return t;
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> values, bool requires_grad) {
    const std::size_t count = numel(shape);
    if (values.size() != count) {
        throw ShapeError("tensor: " + std::to_string(values.size()) +
                         " values for shape " + shape_str(shape));
    }
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    n->requires_grad = requires_grad;
    if (requires_grad) n->grad.assign(count, 0.0);
    return Tensor(std::move(n));
}

double Tensor::scalar() const {
    if (size() != 1) {
        throw ShapeError("scalar: tensor has shape " + shape_str(shape()));
    }
    return node_->value[0];
}

void Tensor::set_requires_grad(bool rg) {
    if (!node_->inputs.empty()) {
        throw Error("set_requires_grad: only leaf tensors can be toggled");
    }
    node_->requires_grad = rg;
    if (rg) {
        node_->grad.assign(node_->value.size(), 0.0);
    } else {
        node_->grad.clear();
    }
}

void Tensor::zero_grad() {
    if (node_->requires_grad) {
        node_->grad.assign(node_->value.size(), 0.0);
    }
}

Tensor Tensor::detach() const {
    auto n = std::make_shared<Node>();
    n->shape = node_->shape;
    n->value = node_->value;
    return Tensor(std::move(n));
}

Tensor make_op(std::vector<int> shape, const char* op, std::vector<NodePtr> inputs) {
    auto n = std::make_shared<Node>();
    const std::size_t count = numel(shape);
    n->shape = std::move(shape);
    n->value.assign(count, 0.0);
    n->op = op;
    for (const auto& in : inputs) {
        if (in->requires_grad) n->requires_grad = true;
    }
    if (n->requires_grad) n->grad.assign(count, 0.0);
    n->inputs = std::move(inputs);
    return Tensor(std::move(n));
}

void Tensor::backward() {
    if (!node_) throw Error("backward: empty tensor");
    if (node_->value.size() != 1) {
        throw ShapeError("backward: root must be scalar, got " + shape_str(node_->shape));
    }
    if (!node_->requires_grad) {
        throw Error("backward: root does not require gradients");
    }

    // Post-order DFS over the requires_grad subgraph; branches that do not
    // need gradients are never entered.
    struct Frame {
        Node* n;
        std::size_t next = 0;
    };
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<Frame> stack;
    stack.push_back({node_.get()});
    seen.insert(node_.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next < f.n->inputs.size()) {
            Node* child = f.n->inputs[f.next++].get();
            if (child->requires_grad && seen.insert(child).second) {
                stack.push_back({child});
            }
        } else {
            order.push_back(f.n);
            stack.pop_back();
        }
    }

    node_->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward_fn) (*it)->backward_fn(**it);
    }
}

}  // namespace dproto
