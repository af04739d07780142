#include <cmath>
#include <vector>

#include <doctest.h>

#include "dproto/autodiff.hpp"
#include "dproto/errors.hpp"
#include "dproto/rng.hpp"
#include "dproto/tensor.hpp"

using namespace dproto;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo, double hi,
                     bool requires_grad = false) {
    std::vector<double> v(numel(shape));
    for (double& x : v) x = rng.uniform(lo, hi);
    return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

// Values bounded away from zero, for ops with a kink or pole there.
Tensor random_signed_tensor(std::vector<int> shape, Rng& rng, bool requires_grad = false) {
    std::vector<double> v(numel(shape));
    for (double& x : v) {
        const double mag = rng.uniform(0.2, 1.0);
        x = rng.uniform() < 0.5 ? -mag : mag;
    }
    return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

}  // namespace

TEST_CASE("forward examples: relu, gap, constant-field upsample") {
    const Tensor r = relu(Tensor::from({3}, {-1.0, 0.0, 2.0}));
    CHECK(r.values() == std::vector<double>{0.0, 0.0, 2.0});

    const Tensor g = gap(Tensor::from({1, 2, 2}, {1.0, 2.0, 3.0, 4.0}));
    CHECK(g.values()[0] == doctest::Approx(2.5).epsilon(1e-15));

    const Tensor u = upsample_bilinear(Tensor::from({1, 1, 1}, {0.7}), 4, 4);
    for (double v : u.values()) CHECK(v == doctest::Approx(0.7).epsilon(1e-15));
}

TEST_CASE("backward examples: sum of squares, log, squared distance") {
    Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
    sum_all(mul(x, x)).backward();
    CHECK(x.grad()[0] == doctest::Approx(2.0).epsilon(1e-14));
    CHECK(x.grad()[1] == doctest::Approx(4.0).epsilon(1e-14));

    Tensor e = Tensor::from({1}, {std::exp(1.0)}, true);
    log(e).backward();
    CHECK(e.grad()[0] == doctest::Approx(std::exp(-1.0)).epsilon(1e-14));

    Tensor z = Tensor::from({2}, {1.0, 0.0}, true);
    const Tensor p = Tensor::from({2}, {0.0, 1.0});
    sqdist(z, p).backward();
    CHECK(z.grad()[0] == doctest::Approx(2.0).epsilon(1e-14));
    CHECK(z.grad()[1] == doctest::Approx(-2.0).epsilon(1e-14));
}

TEST_CASE("gradients accumulate additively across fan-out") {
    Tensor x = Tensor::from({3}, {0.5, -0.25, 1.5}, true);
    const Tensor a = add(x, x);
    sum_all(mul(a, a)).backward();
    for (int i = 0; i < 3; ++i) {
        CHECK(x.grad()[i] == doctest::Approx(8.0 * x.values()[i]).epsilon(1e-13));
    }
}

TEST_CASE("backward requires a scalar root and pure constants get zero gradients") {
    Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
    CHECK_THROWS_AS(mul(x, x).backward(), ShapeError);

    Tensor y = Tensor::from({4}, {1.0, 2.0, 3.0, 4.0}, true);
    const auto r = gradient_check([](const Tensor& t) { return mean_all(mul_scalar(t, 0.0)); },
                                  y, 1e-5);
    CHECK(r.max_rel_err == 0.0);
}

TEST_CASE("gradient_check: every elementwise and reduction op") {
    Rng rng(11);
    const double eps = 1e-5;
    const double tol = 1e-4;

    auto check = [&](const char* name, const std::function<Tensor(const Tensor&)>& f, Tensor x) {
        CAPTURE(name);
        const auto r = gradient_check(f, x, eps);
        CHECK(r.max_rel_err < tol);
    };

    const Tensor c = random_tensor({4, 3}, rng, 0.5, 1.5);
    check("add", [&](const Tensor& t) { return sum_all(add(t, c)); },
          random_tensor({4, 3}, rng, -1, 1, true));
    check("sub", [&](const Tensor& t) { return sum_all(sub(c, t)); },
          random_tensor({4, 3}, rng, -1, 1, true));
    check("mul", [&](const Tensor& t) { return sum_all(mul(t, c)); },
          random_tensor({4, 3}, rng, -1, 1, true));
    check("mul both", [&](const Tensor& t) { return sum_all(mul(t, t)); },
          random_tensor({4, 3}, rng, -1, 1, true));
    check("div num", [&](const Tensor& t) { return sum_all(div(t, c)); },
          random_tensor({4, 3}, rng, -1, 1, true));
    check("div den", [&](const Tensor& t) { return sum_all(div(c, t)); },
          random_tensor({4, 3}, rng, 0.5, 1.5, true));
    check("add_scalar", [&](const Tensor& t) { return sum_all(add_scalar(t, 0.7)); },
          random_tensor({5}, rng, -1, 1, true));
    check("mul_scalar", [&](const Tensor& t) { return sum_all(mul_scalar(t, -1.3)); },
          random_tensor({5}, rng, -1, 1, true));
    check("relu", [&](const Tensor& t) { return sum_all(relu(t)); },
          random_signed_tensor({6, 2}, rng, true));
    check("sigmoid", [&](const Tensor& t) { return sum_all(sigmoid(t)); },
          random_tensor({6}, rng, -2, 2, true));
    check("log", [&](const Tensor& t) { return sum_all(log(t)); },
          random_tensor({6}, rng, 0.5, 2.0, true));
    check("sqrt", [&](const Tensor& t) { return sum_all(sqrt(t)); },
          random_tensor({6}, rng, 0.5, 2.0, true));
    check("abs", [&](const Tensor& t) { return sum_all(abs(t)); },
          random_signed_tensor({6}, rng, true));
    check("square", [&](const Tensor& t) { return sum_all(square(t)); },
          random_tensor({6}, rng, -1, 1, true));
    check("reshape", [&](const Tensor& t) { return sum_all(square(reshape(t, {6}))); },
          random_tensor({2, 3}, rng, -1, 1, true));
    check("mean_all", [&](const Tensor& t) { return mean_all(square(t)); },
          random_tensor({7}, rng, -1, 1, true));

    {
        std::vector<double> v = {0.9, 0.2, 0.5, 0.8, 0.35, 0.65};
        Tensor x = Tensor::from({6}, std::move(v), true);
        check("min_all", [&](const Tensor& t) { return min_all(square(t)); }, x);
    }
    {
        std::vector<double> v = {0.9, 0.2, 0.5, 0.1, 0.7, 0.3, 0.45, 0.25, 0.6, 0.85, 0.15, 0.4};
        Tensor x = Tensor::from({4, 3}, std::move(v), true);
        check("colwise_max", [&](const Tensor& t) { return sum_all(colwise_max(t)); }, x);
    }
}

TEST_CASE("gradient_check: linear, conv, pooling, resize and fused ops") {
    Rng rng(12);
    const double eps = 1e-5;
    const double tol = 1e-4;

    auto check = [&](const char* name, const std::function<Tensor(const Tensor&)>& f, Tensor x) {
        CAPTURE(name);
        const auto r = gradient_check(f, x, eps);
        CHECK(r.max_rel_err < tol);
    };

    {
        const Tensor b = random_tensor({4, 3}, rng, -1, 1);
        check("matmul lhs", [&](const Tensor& t) { return sum_all(square(matmul(t, b))); },
              random_tensor({2, 4}, rng, -1, 1, true));
        const Tensor a = random_tensor({2, 4}, rng, -1, 1);
        check("matmul rhs", [&](const Tensor& t) { return sum_all(square(matmul(a, t))); },
              random_tensor({4, 3}, rng, -1, 1, true));
    }
    {
        const Tensor x = random_tensor({2, 6, 6}, rng, -1, 1);
        const Tensor w = random_tensor({3, 2, 3, 3}, rng, -0.5, 0.5);
        const Tensor b = random_tensor({3}, rng, -0.5, 0.5);
        check("conv2d input",
              [&](const Tensor& t) { return sum_all(square(conv2d(t, w, b, 1, 1))); },
              random_tensor({2, 6, 6}, rng, -1, 1, true));
        check("conv2d weight",
              [&](const Tensor& t) { return sum_all(square(conv2d(x, t, b, 1, 1))); },
              random_tensor({3, 2, 3, 3}, rng, -0.5, 0.5, true));
        check("conv2d bias",
              [&](const Tensor& t) { return sum_all(square(conv2d(x, w, t, 1, 1))); },
              random_tensor({3}, rng, -0.5, 0.5, true));
        check("conv2d stride2 nopad",
              [&](const Tensor& t) { return sum_all(square(conv2d(t, w, Tensor(), 2, 0))); },
              random_tensor({2, 6, 6}, rng, -1, 1, true));
    }
    check("maxpool", [&](const Tensor& t) { return sum_all(square(maxpool2d(t, 2, 2))); },
          random_tensor({2, 6, 6}, rng, -1, 1, true));
    check("gap", [&](const Tensor& t) { return sum_all(square(gap(t))); },
          random_tensor({3, 4, 4}, rng, -1, 1, true));
    check("upsample", [&](const Tensor& t) { return sum_all(square(upsample_bilinear(t, 9, 7))); },
          random_tensor({2, 3, 4}, rng, -1, 1, true));
    {
        const Tensor x = random_tensor({3, 4, 4}, rng, 0, 1);
        check("mul_bcast_plane mask",
              [&](const Tensor& t) { return sum_all(square(mul_bcast_plane(x, t))); },
              random_tensor({1, 4, 4}, rng, 0, 1, true));
        const Tensor m = random_tensor({1, 4, 4}, rng, 0, 1);
        check("mul_bcast_plane image",
              [&](const Tensor& t) { return sum_all(square(mul_bcast_plane(t, m))); },
              random_tensor({3, 4, 4}, rng, 0, 1, true));
    }
    {
        const Tensor feat = random_tensor({3, 4, 4}, rng, -1, 1);
        const Tensor masks = random_tensor({5, 3, 4, 4}, rng, 0, 1);
        check("masked_gap feat",
              [&](const Tensor& t) { return sum_all(square(masked_gap(t, masks))); },
              random_tensor({3, 4, 4}, rng, -1, 1, true));
        check("masked_gap masks",
              [&](const Tensor& t) { return sum_all(square(masked_gap(feat, t))); },
              random_tensor({5, 3, 4, 4}, rng, 0, 1, true));
    }
    {
        const Tensor p = random_tensor({4, 6}, rng, -1, 1);
        check("pairwise_sqdist z",
              [&](const Tensor& t) { return sum_all(square(pairwise_sqdist(t, p))); },
              random_tensor({5, 6}, rng, -1, 1, true));
        const Tensor z = random_tensor({5, 6}, rng, -1, 1);
        check("pairwise_sqdist p",
              [&](const Tensor& t) { return sum_all(square(pairwise_sqdist(z, t))); },
              random_tensor({4, 6}, rng, -1, 1, true));
    }
    {
        const Tensor b = random_tensor({7}, rng, -1, 1);
        check("sqdist", [&](const Tensor& t) { return sqdist(t, b); },
              random_tensor({7}, rng, -1, 1, true));
    }
    check("gather_rows",
          [&](const Tensor& t) { return sum_all(square(gather_rows(t, {2, 0}))); },
          random_tensor({4, 3}, rng, -1, 1, true));
    check("gather_cols",
          [&](const Tensor& t) { return sum_all(square(gather_cols(t, {1, 2}))); },
          random_tensor({4, 3}, rng, -1, 1, true));
    check("softmax_xent", [&](const Tensor& t) { return softmax_xent(t, 1); },
          random_tensor({4}, rng, -2, 2, true));
}

TEST_CASE("gradient_check: conv -> relu -> gap composite with kink margin") {
    Rng rng(13);
    const Tensor w = random_tensor({3, 2, 3, 3}, rng, -0.5, 0.5);
    const Tensor b = random_tensor({3}, rng, -0.2, 0.2);

    // Regenerate inputs until every ReLU pre-activation clears the kink by a
    // margin no 1e-5 input perturbation can cross.
    Tensor x;
    bool found = false;
    for (int attempt = 0; attempt < 20 && !found; ++attempt) {
        x = random_tensor({2, 8, 8}, rng, -1, 1, true);
        const Tensor pre = conv2d(x, w, b, 1, 1);
        double margin = 1e9;
        for (double v : pre.values()) margin = std::min(margin, std::fabs(v));
        found = margin > 1e-3;
    }
    REQUIRE(found);

    const auto r = gradient_check(
        [&](const Tensor& t) { return sum_all(gap(relu(conv2d(t, w, b, 1, 1)))); }, x, 1e-5);
    CHECK(r.max_rel_err < 1e-4);
}

TEST_CASE("gradient_check honors the skip mask") {
    // One component sits exactly on the ReLU kink; skipping it makes the
    // check pass, checking it does not.
    Tensor x = Tensor::from({3}, {0.5, 0.0, -0.5}, true);
    auto f = [](const Tensor& t) { return sum_all(relu(t)); };
    const auto all = gradient_check(f, x, 1e-5);
    CHECK(all.max_rel_err > 0.1);
    const auto masked = gradient_check(f, x, 1e-5, {false, true, false});
    CHECK(masked.max_rel_err < 1e-10);
    CHECK(masked.skipped == 1);
    CHECK(masked.checked == 2);
}

TEST_CASE("backward is linear in the loss") {
    Rng rng(14);
    Tensor x = random_tensor({6}, rng, -1, 1, true);
    const Tensor target = random_tensor({6}, rng, -1, 1);

    auto grad_of = [&](const std::function<Tensor()>& loss) {
        x.zero_grad();
        loss().backward();
        return x.grad();
    };

    const auto g1 = grad_of([&] { return sqdist(x, target); });
    const auto g2 = grad_of([&] { return mean_all(square(x)); });
    const double a = 0.3, b = -1.7;
    const auto gc = grad_of([&] {
        return add(mul_scalar(sqdist(x, target), a), mul_scalar(mean_all(square(x)), b));
    });
    for (int i = 0; i < 6; ++i) {
        CHECK(gc[i] == doctest::Approx(a * g1[i] + b * g2[i]).epsilon(1e-12));
    }
}

TEST_CASE("forward evaluation is deterministic") {
    Rng rng(15);
    const Tensor x = random_tensor({3, 8, 8}, rng, 0, 1);
    const Tensor w = random_tensor({4, 3, 3, 3}, rng, -0.5, 0.5);
    auto run = [&] { return gap(relu(conv2d(x, w, Tensor(), 1, 1))).values(); };
    CHECK(run() == run());
}

TEST_CASE("shape errors name the op and shapes") {
    const Tensor a = Tensor::zeros({2, 3});
    const Tensor b = Tensor::zeros({3, 2});
    CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("add"), ShapeError);
    CHECK_THROWS_WITH_AS(matmul(a, a), doctest::Contains("matmul"), ShapeError);
    CHECK_THROWS_AS(conv2d(Tensor::zeros({2, 4, 4}), Tensor::zeros({3, 9, 3, 3}), Tensor(), 1, 1),
                    ShapeError);
    CHECK_THROWS_AS(softmax_xent(Tensor::zeros({4}), 4), ShapeError);
}
