#pragma once

#include <functional>
#include <vector>

#include "dproto/tensor.hpp"

// Differentiable ops over Tensors. Each op computes its forward result
// eagerly and, when any input requires gradients, attaches a backward
// closure to the new node. Image-like tensors are CHW, conv weights
// [cout][cin][kh][kw].

namespace dproto {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);

Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor square(const Tensor& a);

Tensor reshape(const Tensor& a, std::vector<int> shape);

Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
// Minimum over all elements; ties resolve to the lowest flat index, which
// alone receives the gradient.
Tensor min_all(const Tensor& a);
// a: [n, k] -> [k], maximum over rows per column; ties to the lowest row.
Tensor colwise_max(const Tensor& a);
// Row argmax indices of the latest colwise_max live in its node aux.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias,
              int stride, int pad);
Tensor maxpool2d(const Tensor& x, int k, int stride);
Tensor gap(const Tensor& x);
Tensor upsample_bilinear(const Tensor& x, int ho, int wo);
// x: [c, h, w] scaled elementwise by a single plane m: [1, h, w].
Tensor mul_bcast_plane(const Tensor& x, const Tensor& m);

// feat: [d, h, w], masks: [n, d, h, w] -> [n, d]; row i is the masked
// global average pool of feat under mask i.
Tensor masked_gap(const Tensor& feat, const Tensor& masks);
// z: [n, d], p: [k, d] -> [n, k] of squared L2 distances.
Tensor pairwise_sqdist(const Tensor& z, const Tensor& p);
// Squared L2 distance between same-shape tensors, as a scalar.
Tensor sqdist(const Tensor& a, const Tensor& b);

Tensor gather_rows(const Tensor& a, const std::vector<int>& rows);
Tensor gather_cols(const Tensor& a, const std::vector<int>& cols);

// Numerically stable cross-entropy of softmax(logits) against the target
// class, as a scalar.
Tensor softmax_xent(const Tensor& logits, int target);

std::vector<double> softmax(const std::vector<double>& logits);

struct GradCheckResult {
    double max_rel_err = 0.0;
    int worst_index = -1;
    int checked = 0;
    int skipped = 0;
};

// Compares backward gradients of f (a scalar-valued rebuild-the-graph
// function of x) against central finite differences. Components flagged in
// `skip` are excluded; callers use this for inputs adjacent to ReLU/max
// kinks where the derivative is not defined.
GradCheckResult gradient_check(const std::function<Tensor(const Tensor&)>& f,
                               Tensor x, double eps,
                               const std::vector<bool>& skip = {});

}  // namespace dproto
