#include "dproto/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "dproto/errors.hpp"
#include "dproto/kernels.hpp"

namespace dproto {

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": mismatched shapes " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    }
}

void require_ndim(const char* op, const Tensor& a, int nd) {
    if (a.ndim() != nd) {
        throw ShapeError(std::string(op) + ": expected " + std::to_string(nd) +
                         "-d tensor, got " + shape_str(a.shape()));
    }
}

double* input_grad(Node& self, std::size_t i) {
    Node& in = *self.inputs[i];
    return in.requires_grad ? in.grad.data() : nullptr;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape("add", a, b);
    Tensor out = make_op(a.shape(), "add", {a.node(), b.node()});
    const std::size_t n = out.size();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
    if (out.requires_grad()) {
        out.raw()->backward_fn = [n](Node& self) {
            for (std::size_t k = 0; k < 2; ++k) {
                if (double* g = input_grad(self, k)) {
                    for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i];
                }
            }
        };
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape("sub", a, b);
    Tensor out = make_op(a.shape(), "sub", {a.node(), b.node()});
    const std::size_t n = out.size();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] - b.data()[i];
    if (out.requires_grad()) {
        out.raw()->backward_fn = [n](Node& self) {
            if (double* g = input_grad(self, 0)) {
                for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i];
            }
            if (double* g = input_grad(self, 1)) {
                for (std::size_t i = 0; i < n; ++i) g[i] -= self.grad[i];
            }
        };
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape("mul", a, b);
    Tensor out = make_op(a.shape(), "mul", {a.node(), b.node()});
    const std::size_t n = out.size();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
    if (out.requires_grad()) {
        out.raw()->backward_fn = [n](Node& self) {
            const double* av = self.inputs[0]->value.data();
            const double* bv = self.inputs[1]->value.data();
            if (double* g = input_grad(self, 0)) {
                for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i] * bv[i];
            }
            if (double* g = input_grad(self, 1)) {
                for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i] * av[i];
            }
        };
    }
    return out;
}

Tensor div(const Tensor& a, const Tensor& b) {
    require_same_shape("div", a, b);
    Tensor out = make_op(a.shape(), "div", {a.node(), b.node()});
    const std::size_t n = out.size();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] / b.data()[i];
    if (out.requires_grad()) {
        out.raw()->backward_fn = [n](Node& self) {
            const double* av = self.inputs[0]->value.data();
            const double* bv = self.inputs[1]->value.data();
            if (double* g = input_grad(self, 0)) {
                for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i] / bv[i];
            }
            if (double* g = input_grad(self, 1)) {
                for (std::size_t i = 0; i < n; ++i) {
                    g[i] -= self.grad[i] * av[i] / (bv[i] * bv[i]);
                }
            }
        };
    }
    return out;
}

Tensor add_scalar(const Tensor& a, double c) {
    Tensor out = make_op(a.shape(), "add_scalar", {a.node()});
    const std::size_t n = out.size();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + c;
    if (out.requires_grad()) {
        out.raw()->backward_fn = [n](Node& self) {
            double* g = input_grad(self, 0);
            for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i];
        };
    }
    return out;
}

Tensor mul_scalar(const Tensor& a, double c) {
    Tensor out = make_op(a.shape(), "mul_scalar", {a.node()});
    const std::size_t n = out.size();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * c;
    if (out.requires_grad()) {
        out.raw()->backward_fn = [n, c](Node& self) {
            double* g = input_grad(self, 0);
            for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i] * c;
        };
    }
    return out;
}

Tensor relu(const Tensor& a) {
    Tensor out = make_op(a.shape(), "relu", {a.node()});
    const std::size_t n = out.size();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] > 0.0 ? a.data()[i] : 0.0;
    if (out.requires_grad()) {
        out.raw()->backward_fn = [n](Node& self) {
            const double* av = self.inputs[0]->value.data();
            double* g = input_grad(self, 0);
            for (std::size_t i = 0; i < n; ++i) {
                if (av[i] > 0.0) g[i] += self.grad[i];
            }
        };
    }
    return out;
}

Tensor sigmoid(const Tensor& a) {
    Tensor out = make_op(a.shape(), "sigmoid", {a.node()});
    const std::size_t n = out.size();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = 1.0 / (1.0 + std::exp(-a.data()[i]));
    if (out.requires_grad()) {
        out.raw()->backward_fn = [n](Node& self) {
            double* g = input_grad(self, 0);
            for (std::size_t i = 0; i < n; ++i) {
                const double v = self.value[i];
                g[i] += self.grad[i] * v * (1.0 - v);
            }
        };
    }
    return out;
}

Tensor log(const Tensor& a) {
    Tensor out = make_op(a.shape(), "log", {a.node()});
    const std::size_t n = out.size();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = std::log(a.data()[i]);
    if (out.requires_grad()) {
        out.raw()->backward_fn = [n](Node& self) {
            const double* av = self.inputs[0]->value.data();
            double* g = input_grad(self, 0);
            for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i] / av[i];
        };
    }
    return out;
}

Tensor sqrt(const Tensor& a) {
    Tensor out = make_op(a.shape(), "sqrt", {a.node()});
    const std::size_t n = out.size();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = std::sqrt(a.data()[i]);
    if (out.requires_grad()) {
        out.raw()->backward_fn = [n](Node& self) {
            double* g = input_grad(self, 0);
            for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i] * 0.5 / self.value[i];
        };
    }
    return out;
}

Tensor abs(const Tensor& a) {
    Tensor out = make_op(a.shape(), "abs", {a.node()});
    const std::size_t n = out.size();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = std::fabs(a.data()[i]);
    if (out.requires_grad()) {
        out.raw()->backward_fn = [n](Node& self) {
            const double* av = self.inputs[0]->value.data();
            double* g = input_grad(self, 0);
            for (std::size_t i = 0; i < n; ++i) {
                if (av[i] > 0.0) {
                    g[i] += self.grad[i];
                } else if (av[i] < 0.0) {
                    g[i] -= self.grad[i];
                }
            }
        };
    }
    return out;
}

Tensor square(const Tensor& a) {
    Tensor out = make_op(a.shape(), "square", {a.node()});
    const std::size_t n = out.size();
    for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * a.data()[i];
    if (out.requires_grad()) {
        out.raw()->backward_fn = [n](Node& self) {
            const double* av = self.inputs[0]->value.data();
            double* g = input_grad(self, 0);
            for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i] * 2.0 * av[i];
        };
    }
    return out;
}

Tensor reshape(const Tensor& a, std::vector<int> shape) {
    if (numel(shape) != a.size()) {
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(shape));
    }
    Tensor out = make_op(std::move(shape), "reshape", {a.node()});
    out.values() = a.values();
    if (out.requires_grad()) {
        out.raw()->backward_fn = [](Node& self) {
            double* g = input_grad(self, 0);
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
        };
    }
    return out;
}

Tensor sum_all(const Tensor& a) {
    Tensor out = make_op({1}, "sum_all", {a.node()});
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a.data()[i];
    out.data()[0] = acc;
    if (out.requires_grad()) {
        out.raw()->backward_fn = [](Node& self) {
            double* g = input_grad(self, 0);
            const double gv = self.grad[0];
            for (std::size_t i = 0; i < self.inputs[0]->value.size(); ++i) g[i] += gv;
        };
    }
    return out;
}

Tensor mean_all(const Tensor& a) {
    Tensor out = make_op({1}, "mean_all", {a.node()});
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a.data()[i];
    const double inv = 1.0 / static_cast<double>(a.size());
    out.data()[0] = acc * inv;
    if (out.requires_grad()) {
        out.raw()->backward_fn = [inv](Node& self) {
            double* g = input_grad(self, 0);
            const double gv = self.grad[0] * inv;
            for (std::size_t i = 0; i < self.inputs[0]->value.size(); ++i) g[i] += gv;
        };
    }
    return out;
}

Tensor min_all(const Tensor& a) {
    Tensor out = make_op({1}, "min_all", {a.node()});
    std::size_t arg = 0;
    double best = a.data()[0];
    for (std::size_t i = 1; i < a.size(); ++i) {
        if (a.data()[i] < best) {
            best = a.data()[i];
            arg = i;
        }
    }
    out.data()[0] = best;
    out.raw()->aux = {static_cast<std::int64_t>(arg)};
    if (out.requires_grad()) {
        out.raw()->backward_fn = [](Node& self) {
            double* g = input_grad(self, 0);
            g[self.aux[0]] += self.grad[0];
        };
    }
    return out;
}

Tensor colwise_max(const Tensor& a) {
    require_ndim("colwise_max", a, 2);
    const int n = a.dim(0);
    const int k = a.dim(1);
    Tensor out = make_op({k}, "colwise_max", {a.node()});
    out.raw()->aux.resize(k);
    for (int j = 0; j < k; ++j) {
        double best = a.data()[j];
        int arg = 0;
        for (int i = 1; i < n; ++i) {
            const double v = a.data()[static_cast<std::size_t>(i) * k + j];
            if (v > best) {
                best = v;
                arg = i;
            }
        }
        out.data()[j] = best;
        out.raw()->aux[j] = arg;
    }
    if (out.requires_grad()) {
        out.raw()->backward_fn = [k](Node& self) {
            double* g = input_grad(self, 0);
            for (int j = 0; j < k; ++j) {
                g[static_cast<std::size_t>(self.aux[j]) * k + j] += self.grad[j];
            }
        };
    }
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_ndim("matmul", a, 2);
    require_ndim("matmul", b, 2);
    if (a.dim(1) != b.dim(0)) {
        throw ShapeError("matmul: inner extents differ, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    }
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out = make_op({m, n}, "matmul", {a.node(), b.node()});
    kern::matmul_fwd(a.data(), b.data(), out.data(), m, k, n);
    if (out.requires_grad()) {
        out.raw()->backward_fn = [m, k, n](Node& self) {
            if (double* ga = input_grad(self, 0)) {
                kern::matmul_bwd_a(self.grad.data(), self.inputs[1]->value.data(), ga, m, k, n);
            }
            if (double* gb = input_grad(self, 1)) {
                kern::matmul_bwd_b(self.grad.data(), self.inputs[0]->value.data(), gb, m, k, n);
            }
        };
    }
    return out;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad) {
    require_ndim("conv2d", x, 3);
    require_ndim("conv2d", w, 4);
    if (w.dim(1) != x.dim(0)) {
        throw ShapeError("conv2d: input channels " + shape_str(x.shape()) +
                         " do not match weights " + shape_str(w.shape()));
    }
    if (stride < 1 || pad < 0) {
        throw ShapeError("conv2d: invalid stride/pad");
    }
    const int cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
    const int cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const int ho = (h + 2 * pad - kh) / stride + 1;
    const int wo = (wd + 2 * pad - kw) / stride + 1;
    if (h + 2 * pad < kh || wd + 2 * pad < kw) {
        throw ShapeError("conv2d: kernel " + shape_str(w.shape()) + " larger than padded input " +
                         shape_str(x.shape()));
    }
    std::vector<NodePtr> inputs = {x.node(), w.node()};
    if (bias.defined()) {
        if (bias.ndim() != 1 || bias.dim(0) != cout) {
            throw ShapeError("conv2d: bias shape " + shape_str(bias.shape()) + " for " +
                             std::to_string(cout) + " output channels");
        }
        inputs.push_back(bias.node());
    }
    Tensor out = make_op({cout, ho, wo}, "conv2d", std::move(inputs));
    kern::conv2d_fwd(x.data(), w.data(), bias.defined() ? bias.data() : nullptr, out.data(),
                     cin, h, wd, cout, kh, kw, stride, pad, ho, wo);
    if (out.requires_grad()) {
        out.raw()->backward_fn = [cin, h, wd, cout, kh, kw, stride, pad, ho, wo](Node& self) {
            if (double* gx = input_grad(self, 0)) {
                kern::conv2d_bwd_input(self.grad.data(), self.inputs[1]->value.data(), gx,
                                       cin, h, wd, cout, kh, kw, stride, pad, ho, wo);
            }
            if (double* gw = input_grad(self, 1)) {
                kern::conv2d_bwd_weight(self.grad.data(), self.inputs[0]->value.data(), gw,
                                        cin, h, wd, cout, kh, kw, stride, pad, ho, wo);
            }
            if (self.inputs.size() == 3) {
                if (double* gb = input_grad(self, 2)) {
                    kern::conv2d_bwd_bias(self.grad.data(), gb, cout, ho, wo);
                }
            }
        };
    }
    return out;
}

Tensor maxpool2d(const Tensor& x, int k, int stride) {
    require_ndim("maxpool2d", x, 3);
    const int c = x.dim(0), h = x.dim(1), wd = x.dim(2);
    if (k < 1 || stride < 1 || k > h || k > wd) {
        throw ShapeError("maxpool2d: window " + std::to_string(k) + " on input " +
                         shape_str(x.shape()));
    }
    const int ho = (h - k) / stride + 1;
    const int wo = (wd - k) / stride + 1;
    Tensor out = make_op({c, ho, wo}, "maxpool2d", {x.node()});
    out.raw()->aux.resize(out.size());
    kern::maxpool2d_fwd(x.data(), out.data(), out.raw()->aux.data(), c, h, wd, k, stride, ho, wo);
    if (out.requires_grad()) {
        out.raw()->backward_fn = [c, h, wd, ho, wo](Node& self) {
            double* gx = input_grad(self, 0);
            kern::maxpool2d_bwd(self.grad.data(), self.aux.data(), gx, c, h, wd, ho, wo);
        };
    }
    return out;
}

Tensor gap(const Tensor& x) {
    require_ndim("gap", x, 3);
    const int c = x.dim(0);
    const int hw = x.dim(1) * x.dim(2);
    Tensor out = make_op({c}, "gap", {x.node()});
    const double inv = 1.0 / hw;
    for (int ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        for (int s = 0; s < hw; ++s) acc += x.data()[static_cast<std::size_t>(ch) * hw + s];
        out.data()[ch] = acc * inv;
    }
    if (out.requires_grad()) {
        out.raw()->backward_fn = [c, hw, inv](Node& self) {
            double* g = input_grad(self, 0);
            for (int ch = 0; ch < c; ++ch) {
                const double gv = self.grad[ch] * inv;
                for (int s = 0; s < hw; ++s) g[static_cast<std::size_t>(ch) * hw + s] += gv;
            }
        };
    }
    return out;
}

Tensor upsample_bilinear(const Tensor& x, int ho, int wo) {
    require_ndim("upsample_bilinear", x, 3);
    if (ho < 1 || wo < 1) {
        throw ShapeError("upsample_bilinear: bad target " + std::to_string(ho) + "x" +
                         std::to_string(wo));
    }
    const int c = x.dim(0), h = x.dim(1), wd = x.dim(2);
    Tensor out = make_op({c, ho, wo}, "upsample_bilinear", {x.node()});
    kern::upsample_bilinear_fwd(x.data(), out.data(), c, h, wd, ho, wo);
    if (out.requires_grad()) {
        out.raw()->backward_fn = [c, h, wd, ho, wo](Node& self) {
            double* gx = input_grad(self, 0);
            kern::upsample_bilinear_bwd(self.grad.data(), gx, c, h, wd, ho, wo);
        };
    }
    return out;
}

Tensor mul_bcast_plane(const Tensor& x, const Tensor& m) {
    require_ndim("mul_bcast_plane", x, 3);
    require_ndim("mul_bcast_plane", m, 3);
    if (m.dim(0) != 1 || m.dim(1) != x.dim(1) || m.dim(2) != x.dim(2)) {
        throw ShapeError("mul_bcast_plane: plane " + shape_str(m.shape()) + " for input " +
                         shape_str(x.shape()));
    }
    const int c = x.dim(0);
    const int hw = x.dim(1) * x.dim(2);
    Tensor out = make_op(x.shape(), "mul_bcast_plane", {x.node(), m.node()});
    for (int ch = 0; ch < c; ++ch) {
        for (int s = 0; s < hw; ++s) {
            out.data()[static_cast<std::size_t>(ch) * hw + s] =
                x.data()[static_cast<std::size_t>(ch) * hw + s] * m.data()[s];
        }
    }
    if (out.requires_grad()) {
        out.raw()->backward_fn = [c, hw](Node& self) {
            const double* xv = self.inputs[0]->value.data();
            const double* mv = self.inputs[1]->value.data();
            if (double* gx = input_grad(self, 0)) {
                for (int ch = 0; ch < c; ++ch) {
                    for (int s = 0; s < hw; ++s) {
                        gx[static_cast<std::size_t>(ch) * hw + s] +=
                            self.grad[static_cast<std::size_t>(ch) * hw + s] * mv[s];
                    }
                }
            }
            if (double* gm = input_grad(self, 1)) {
                for (int s = 0; s < hw; ++s) {
                    double acc = 0.0;
                    for (int ch = 0; ch < c; ++ch) {
                        acc += self.grad[static_cast<std::size_t>(ch) * hw + s] *
                               xv[static_cast<std::size_t>(ch) * hw + s];
                    }
                    gm[s] += acc;
                }
            }
        };
    }
    return out;
}

Tensor masked_gap(const Tensor& feat, const Tensor& masks) {
    require_ndim("masked_gap", feat, 3);
    require_ndim("masked_gap", masks, 4);
    if (masks.dim(1) != feat.dim(0) || masks.dim(2) != feat.dim(1) ||
        masks.dim(3) != feat.dim(2)) {
        throw ShapeError("masked_gap: masks " + shape_str(masks.shape()) + " for features " +
                         shape_str(feat.shape()));
    }
    const int n = masks.dim(0);
    const int d = feat.dim(0);
    const int hw = feat.dim(1) * feat.dim(2);
    Tensor out = make_op({n, d}, "masked_gap", {feat.node(), masks.node()});
    kern::masked_gap_fwd(feat.data(), masks.data(), out.data(), n, d, hw);
    if (out.requires_grad()) {
        out.raw()->backward_fn = [n, d, hw](Node& self) {
            if (double* gf = input_grad(self, 0)) {
                kern::masked_gap_bwd_feat(self.grad.data(), self.inputs[1]->value.data(), gf,
                                          n, d, hw);
            }
            if (double* gm = input_grad(self, 1)) {
                kern::masked_gap_bwd_mask(self.grad.data(), self.inputs[0]->value.data(), gm,
                                          n, d, hw);
            }
        };
    }
    return out;
}

Tensor pairwise_sqdist(const Tensor& z, const Tensor& p) {
    require_ndim("pairwise_sqdist", z, 2);
    require_ndim("pairwise_sqdist", p, 2);
    if (z.dim(1) != p.dim(1)) {
        throw ShapeError("pairwise_sqdist: feature dims differ, " + shape_str(z.shape()) +
                         " vs " + shape_str(p.shape()));
    }
    const int n = z.dim(0), k = p.dim(0), d = z.dim(1);
    Tensor out = make_op({n, k}, "pairwise_sqdist", {z.node(), p.node()});
    kern::pairwise_sqdist_fwd(z.data(), p.data(), out.data(), n, k, d);
    if (out.requires_grad()) {
        out.raw()->backward_fn = [n, k, d](Node& self) {
            const double* zv = self.inputs[0]->value.data();
            const double* pv = self.inputs[1]->value.data();
            if (double* gz = input_grad(self, 0)) {
                kern::pairwise_sqdist_bwd_z(self.grad.data(), zv, pv, gz, n, k, d);
            }
            if (double* gp = input_grad(self, 1)) {
                kern::pairwise_sqdist_bwd_p(self.grad.data(), zv, pv, gp, n, k, d);
            }
        };
    }
    return out;
}

Tensor sqdist(const Tensor& a, const Tensor& b) {
    require_same_shape("sqdist", a, b);
    Tensor out = make_op({1}, "sqdist", {a.node(), b.node()});
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double diff = a.data()[i] - b.data()[i];
        acc += diff * diff;
    }
    out.data()[0] = acc;
    if (out.requires_grad()) {
        out.raw()->backward_fn = [](Node& self) {
            const double* av = self.inputs[0]->value.data();
            const double* bv = self.inputs[1]->value.data();
            const double gv = self.grad[0];
            const std::size_t n = self.inputs[0]->value.size();
            if (double* ga = input_grad(self, 0)) {
                for (std::size_t i = 0; i < n; ++i) ga[i] += 2.0 * gv * (av[i] - bv[i]);
            }
            if (double* gb = input_grad(self, 1)) {
                for (std::size_t i = 0; i < n; ++i) gb[i] -= 2.0 * gv * (av[i] - bv[i]);
            }
        };
    }
    return out;
}

Tensor gather_rows(const Tensor& a, const std::vector<int>& rows) {
    require_ndim("gather_rows", a, 2);
    const int n = a.dim(0), d = a.dim(1);
    for (int r : rows) {
        if (r < 0 || r >= n) {
            throw ShapeError("gather_rows: row " + std::to_string(r) + " outside " +
                             shape_str(a.shape()));
        }
    }
    Tensor out = make_op({static_cast<int>(rows.size()), d}, "gather_rows", {a.node()});
    out.raw()->aux.assign(rows.begin(), rows.end());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        for (int j = 0; j < d; ++j) {
            out.data()[i * d + j] = a.data()[static_cast<std::size_t>(rows[i]) * d + j];
        }
    }
    if (out.requires_grad()) {
        out.raw()->backward_fn = [d](Node& self) {
            double* g = input_grad(self, 0);
            for (std::size_t i = 0; i < self.aux.size(); ++i) {
                for (int j = 0; j < d; ++j) {
                    g[static_cast<std::size_t>(self.aux[i]) * d + j] += self.grad[i * d + j];
                }
            }
        };
    }
    return out;
}

Tensor gather_cols(const Tensor& a, const std::vector<int>& cols) {
    require_ndim("gather_cols", a, 2);
    const int n = a.dim(0), k = a.dim(1);
    for (int c : cols) {
        if (c < 0 || c >= k) {
            throw ShapeError("gather_cols: column " + std::to_string(c) + " outside " +
                             shape_str(a.shape()));
        }
    }
    const int m = static_cast<int>(cols.size());
    Tensor out = make_op({n, m}, "gather_cols", {a.node()});
    out.raw()->aux.assign(cols.begin(), cols.end());
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < m; ++j) {
            out.data()[static_cast<std::size_t>(i) * m + j] =
                a.data()[static_cast<std::size_t>(i) * k + cols[j]];
        }
    }
    if (out.requires_grad()) {
        out.raw()->backward_fn = [n, k, m](Node& self) {
            double* g = input_grad(self, 0);
            for (int i = 0; i < n; ++i) {
                for (int j = 0; j < m; ++j) {
                    g[static_cast<std::size_t>(i) * k + self.aux[j]] +=
                        self.grad[static_cast<std::size_t>(i) * m + j];
                }
            }
        };
    }
    return out;
}

Tensor softmax_xent(const Tensor& logits, int target) {
    require_ndim("softmax_xent", logits, 1);
    const int c = logits.dim(0);
    if (target < 0 || target >= c) {
        throw ShapeError("softmax_xent: target " + std::to_string(target) + " for " +
                         std::to_string(c) + " classes");
    }
    Tensor out = make_op({1}, "softmax_xent", {logits.node()});
    double mx = logits.data()[0];
    for (int i = 1; i < c; ++i) mx = std::max(mx, logits.data()[i]);
    double sum = 0.0;
    for (int i = 0; i < c; ++i) sum += std::exp(logits.data()[i] - mx);
    const double lse = mx + std::log(sum);
    out.data()[0] = lse - logits.data()[target];
    out.raw()->aux = {target};
    if (out.requires_grad()) {
        out.raw()->backward_fn = [c, lse](Node& self) {
            const double* lv = self.inputs[0]->value.data();
            double* g = input_grad(self, 0);
            const double gv = self.grad[0];
            const int target_class = static_cast<int>(self.aux[0]);
            for (int i = 0; i < c; ++i) {
                const double p = std::exp(lv[i] - lse);
                g[i] += gv * (p - (i == target_class ? 1.0 : 0.0));
            }
        };
    }
    return out;
}

std::vector<double> softmax(const std::vector<double>& logits) {
    std::vector<double> p(logits.size());
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : logits) mx = std::max(mx, v);
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - mx);
        sum += p[i];
    }
    for (double& v : p) v /= sum;
    return p;
}

GradCheckResult gradient_check(const std::function<Tensor(const Tensor&)>& f,
                               Tensor x, double eps, const std::vector<bool>& skip) {
    if (!x.defined() || !x.requires_grad()) {
        throw Error("gradient_check: input must require gradients");
    }
    if (eps <= 0.0) {
        throw Error("gradient_check: eps must be positive");
    }
    x.zero_grad();
    Tensor loss = f(x);
    if (loss.size() != 1) {
        throw ShapeError("gradient_check: f must be scalar-valued, got " +
                         shape_str(loss.shape()));
    }
    loss.backward();
    const std::vector<double> analytic = x.grad();

    auto eval = [&]() {
        const double v = f(x).scalar();
        if (!std::isfinite(v)) {
            throw DivergenceError("gradient_check: non-finite evaluation");
        }
        return v;
    };

    GradCheckResult r;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (i < skip.size() && skip[i]) {
            ++r.skipped;
            continue;
        }
        const double orig = x.values()[i];
        x.values()[i] = orig + eps;
        const double lp = eval();
        x.values()[i] = orig - eps;
        const double lm = eval();
        x.values()[i] = orig;
        const double fd = (lp - lm) / (2.0 * eps);
        const double denom = std::max({std::fabs(fd), std::fabs(analytic[i]), 1e-3});
        const double rel = std::fabs(fd - analytic[i]) / denom;
        ++r.checked;
        if (rel > r.max_rel_err) {
            r.max_rel_err = rel;
            r.worst_index = static_cast<int>(i);
        }
    }
    return r;
}

}  // namespace dproto
