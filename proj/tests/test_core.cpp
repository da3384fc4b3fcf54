#include <catch2/catch.hpp>

#include <cmath>
#include <cstdio>

#include "volpretext/checkpoint.hpp"
#include "volpretext/grad_check.hpp"
#include "volpretext/nn_conv.hpp"
#include "volpretext/nn_layers.hpp"
#include "volpretext/nn_loss.hpp"
#include "volpretext/nn_norm.hpp"

#include "helpers.hpp"

using namespace vpx;
using test_helpers::random_tensor;

namespace {

// Independent seven-nested-loop convolution reference (cross-correlation).
Tensor<double> conv3d_reference(const Tensor<double>& in, const Tensor<double>& w,
                                const Tensor<double>& b, int stride, int padding) {
    const std::int64_t N = in.dim(0), Cin = in.dim(1), D = in.dim(2), H = in.dim(3),
                       W = in.dim(4);
    const std::int64_t Cout = w.dim(0), K = w.dim(2);
    const std::int64_t OD = (D + 2 * padding - K) / stride + 1;
    const std::int64_t OH = (H + 2 * padding - K) / stride + 1;
    const std::int64_t OW = (W + 2 * padding - K) / stride + 1;
    Tensor<double> out({N, Cout, OD, OH, OW});
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t co = 0; co < Cout; ++co)
            for (std::int64_t od = 0; od < OD; ++od)
                for (std::int64_t oh = 0; oh < OH; ++oh)
                    for (std::int64_t ow = 0; ow < OW; ++ow) {
                        double acc = b[co];
                        for (std::int64_t ci = 0; ci < Cin; ++ci)
                            for (std::int64_t kd = 0; kd < K; ++kd)
                                for (std::int64_t kh = 0; kh < K; ++kh)
                                    for (std::int64_t kw = 0; kw < K; ++kw) {
                                        const std::int64_t id = od * stride - padding + kd;
                                        const std::int64_t ih = oh * stride - padding + kh;
                                        const std::int64_t iw = ow * stride - padding + kw;
                                        if (id < 0 || id >= D || ih < 0 || ih >= H || iw < 0 ||
                                            iw >= W)
                                            continue;
                                        acc += in[(((n * Cin + ci) * D + id) * H + ih) * W + iw] *
                                               w[(((co * Cin + ci) * K + kd) * K + kh) * K + kw];
                                    }
                        out[(((n * Cout + co) * OD + od) * OH + oh) * OW + ow] = acc;
                    }
    return out;
}

double max_rel_diff(const Tensor<double>& a, const Tensor<double>& b) {
    REQUIRE(a.shape == b.shape);
    double worst = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        const double denom = std::max({1.0, std::abs(a[i]), std::abs(b[i])});
        worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
    }
    return worst;
}

} // namespace

TEST_CASE("rng: identical (seed, stream) replays the identical sequence", "[core]") {
    Rng a(1234, 7), b(1234, 7);
    for (int i = 0; i < 1000; ++i) REQUIRE(a.next_u64() == b.next_u64());

    Rng c(1234, 8);
    Rng d(1234, 7);
    int differs = 0;
    for (int i = 0; i < 64; ++i) {
        if (c.next_u64() != d.next_u64()) ++differs;
    }
    REQUIRE(differs > 60); // distinct streams decorrelate immediately

    Rng e(99, 0);
    for (int i = 0; i < 1000; ++i) {
        const double u = e.next_double();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        REQUIRE(e.bounded(17) < 17);
    }
}

TEST_CASE("rng: normal() has roughly standard moments", "[core]") {
    Rng rng(5, 0);
    double sum = 0.0, sq = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double x = rng.normal();
        sum += x;
        sq += x * x;
    }
    REQUIRE(std::abs(sum / n) < 0.03);
    REQUIRE(std::abs(sq / n - 1.0) < 0.05);
}

TEST_CASE("tensor: shape/buffer mismatch is rejected", "[core]") {
    REQUIRE_THROWS_AS(Tensor<float>({2, 3}, std::vector<float>(5)), ShapeError);
    Tensor<float> t({2, 2, 2});
    REQUIRE(t.numel() == 8);
    REQUIRE_THROWS_AS(t.dim(5), ShapeError);
}

TEST_CASE("conv3d: 1x1x1 identity kernel reproduces the input", "[core]") {
    Rng rng(11, 0);
    auto in = random_tensor<float>({2, 1, 4, 5, 6}, rng);
    auto x = Var<float>::leaf(in);
    auto w = Var<float>::leaf(Tensor<float>({1, 1, 1, 1, 1}, std::vector<float>{1.0f}));
    auto b = Var<float>::leaf(Tensor<float>({1}, 0.0f));
    auto y = conv3d(x, w, b, 1, 0);
    REQUIRE(y.value().shape == in.shape);
    for (std::int64_t i = 0; i < in.numel(); ++i) REQUIRE(y.value()[i] == in[i]);
}

TEST_CASE("conv3d: zero input yields the bias per channel", "[core]") {
    Rng rng(12, 0);
    auto x = Var<float>::leaf(Tensor<float>({1, 2, 4, 4, 4}, 0.0f));
    auto w = Var<float>::leaf(random_tensor<float>({3, 2, 3, 3, 3}, rng));
    auto b = Var<float>::leaf(Tensor<float>({3}, std::vector<float>{0.5f, -1.0f, 2.0f}));
    auto y = conv3d(x, w, b, 1, 1);
    for (std::int64_t co = 0; co < 3; ++co) {
        const float expect = b.value()[co];
        for (std::int64_t i = 0; i < 64; ++i) {
            REQUIRE(y.value()[co * 64 + i] == expect);
        }
    }
}

TEST_CASE("conv3d: matches the seven-nested-loop reference", "[core]") {
    Rng rng(13, 0);
    // The documented case: 1x2x4x4x4 input, 3x2x3x3x3 weight, padding 1.
    {
        auto in = random_tensor<double>({1, 2, 4, 4, 4}, rng);
        auto w = random_tensor<double>({3, 2, 3, 3, 3}, rng);
        auto b = random_tensor<double>({3}, rng);
        auto y = conv3d(Var<double>::leaf(in), Var<double>::leaf(w), Var<double>::leaf(b), 1, 1);
        REQUIRE(max_rel_diff(y.value(), conv3d_reference(in, w, b, 1, 1)) < 1e-6);
    }
    // Randomized shapes, both kernel sizes, strides 1 and 2.
    for (int trial = 0; trial < 20; ++trial) {
        const int k = trial % 2 == 0 ? 3 : 1;
        const int stride = trial % 3 == 0 ? 2 : 1;
        const int padding = k == 3 ? static_cast<int>(rng.bounded(2)) : 0;
        const std::int64_t n = 1 + static_cast<std::int64_t>(rng.bounded(2));
        const std::int64_t cin = 1 + static_cast<std::int64_t>(rng.bounded(3));
        const std::int64_t cout = 1 + static_cast<std::int64_t>(rng.bounded(3));
        const std::int64_t d = k + static_cast<std::int64_t>(rng.bounded(3));
        const std::int64_t h = k + static_cast<std::int64_t>(rng.bounded(3));
        const std::int64_t wd = k + static_cast<std::int64_t>(rng.bounded(3));
        auto in = random_tensor<double>({n, cin, d, h, wd}, rng);
        auto w = random_tensor<double>({cout, cin, k, k, k}, rng);
        auto b = random_tensor<double>({cout}, rng);
        auto y = conv3d(Var<double>::leaf(in), Var<double>::leaf(w), Var<double>::leaf(b),
                        stride, padding);
        REQUIRE(max_rel_diff(y.value(), conv3d_reference(in, w, b, stride, padding)) < 1e-6);
    }
}

TEST_CASE("conv3d: stride 1 with padding (k-1)/2 preserves extents", "[core]") {
    Rng rng(14, 0);
    for (int k : {1, 3}) {
        auto in = random_tensor<float>({1, 2, 5, 6, 7}, rng);
        auto w = random_tensor<float>({2, 2, k, k, k}, rng);
        auto b = random_tensor<float>({2}, rng);
        auto y = conv3d(Var<float>::leaf(in), Var<float>::leaf(w), Var<float>::leaf(b), 1,
                        (k - 1) / 2);
        REQUIRE(y.value().dim(2) == 5);
        REQUIRE(y.value().dim(3) == 6);
        REQUIRE(y.value().dim(4) == 7);
    }
}

TEST_CASE("conv3d: shape errors name the offending axis", "[core]") {
    Rng rng(15, 0);
    auto x = Var<float>::leaf(random_tensor<float>({1, 2, 4, 4, 4}, rng));
    auto w_badc = Var<float>::leaf(random_tensor<float>({3, 5, 3, 3, 3}, rng));
    auto b = Var<float>::leaf(random_tensor<float>({3}, rng));
    REQUIRE_THROWS_WITH(conv3d(x, w_badc, b, 1, 1), Catch::Contains("Cin"));
    auto w5 = Var<float>::leaf(random_tensor<float>({3, 2, 5, 5, 5}, rng));
    REQUIRE_THROWS_AS(conv3d(x, w5, b, 1, 1), ParamError); // k not in {1,3}
    auto small = Var<float>::leaf(random_tensor<float>({1, 2, 2, 4, 4}, rng));
    auto w3 = Var<float>::leaf(random_tensor<float>({3, 2, 3, 3, 3}, rng));
    REQUIRE_THROWS_WITH(conv3d(small, w3, b, 1, 0), Catch::Contains("axis D"));
}

TEST_CASE("conv3d: non-finite output is surfaced as a numeric error", "[core]") {
    auto x = Var<float>::leaf(Tensor<float>({1, 1, 2, 2, 2}, 1e30f));
    auto w = Var<float>::leaf(Tensor<float>({1, 1, 1, 1, 1}, 1e30f));
    auto b = Var<float>::leaf(Tensor<float>({1}, 0.0f));
    REQUIRE_THROWS_AS(conv3d(x, w, b, 1, 0), NumericError);
}

TEST_CASE("maxpool3d: constant volume pools to the constant at half resolution", "[core]") {
    auto x = Var<float>::leaf(Tensor<float>({1, 1, 4, 6, 8}, 0.37f));
    auto y = maxpool3d(x);
    REQUIRE(y.value().shape == std::vector<std::int64_t>{1, 1, 2, 3, 4});
    for (std::int64_t i = 0; i < y.value().numel(); ++i) REQUIRE(y.value()[i] == 0.37f);
}

TEST_CASE("maxpool3d: 192 halves to 6 over five pools", "[core]") {
    Var<float> h = Var<float>::leaf(Tensor<float>({1, 1, 192, 192, 192}, 1.0f));
    const std::int64_t expected[] = {96, 48, 24, 12, 6};
    for (std::int64_t e : expected) {
        h = maxpool3d(h);
        REQUIRE(h.value().dim(2) == e);
        REQUIRE(h.value().dim(3) == e);
        REQUIRE(h.value().dim(4) == e);
    }
}

TEST_CASE("maxpool3d: matches brute-force windowed max and routes gradients", "[core]") {
    Rng rng(16, 0);
    auto in = random_tensor<double>({1, 1, 4, 4, 4}, rng);
    auto x = Var<double>::leaf(in, true);
    auto y = maxpool3d(x);
    for (std::int64_t z = 0; z < 2; ++z)
        for (std::int64_t r = 0; r < 2; ++r)
            for (std::int64_t c = 0; c < 2; ++c) {
                double best = -1e300;
                for (std::int64_t kz = 0; kz < 2; ++kz)
                    for (std::int64_t kr = 0; kr < 2; ++kr)
                        for (std::int64_t kc = 0; kc < 2; ++kc)
                            best = std::max(best, in[((2 * z + kz) * 4 + 2 * r + kr) * 4 +
                                                     2 * c + kc]);
                REQUIRE(y.value()[(z * 2 + r) * 2 + c] == best);
            }

    // Backward conserves gradient mass and hits only argmax voxels.
    auto loss = mse_loss(flatten(y), Tensor<double>({1, 8}, 0.0));
    loss.backward();
    double in_mass = 0.0, out_mass = 0.0;
    std::int64_t nonzero = 0;
    for (std::int64_t i = 0; i < 64; ++i) {
        in_mass += x.grad()[i];
        if (x.grad()[i] != 0.0) ++nonzero;
    }
    for (std::int64_t i = 0; i < 8; ++i) out_mass += y.grad()[i];
    REQUIRE(nonzero == 8);
    REQUIRE(in_mass == Approx(out_mass).epsilon(1e-12));
}

TEST_CASE("maxpool3d: ties break to the lowest linear index", "[core]") {
    Tensor<double> in({1, 1, 2, 2, 2}, 1.0); // all tied
    auto x = Var<double>::leaf(in, true);
    auto y = maxpool3d(x);
    auto loss = mse_loss(flatten(y), Tensor<double>({1, 1}, 0.0));
    loss.backward();
    REQUIRE(x.grad()[0] != 0.0); // lowest linear index took the gradient
    for (std::int64_t i = 1; i < 8; ++i) REQUIRE(x.grad()[i] == 0.0);
}

TEST_CASE("avgpool3d: constant in, constant out; gradient mass conserved", "[core]") {
    auto x = Var<double>::leaf(Tensor<double>({1, 2, 4, 4, 4}, 0.25), true);
    auto y = avgpool3d(x);
    for (std::int64_t i = 0; i < y.value().numel(); ++i) {
        REQUIRE(y.value()[i] == Approx(0.25).margin(1e-15));
    }
    auto loss = mse_loss(flatten(y), Tensor<double>({1, 16}, 0.0));
    loss.backward();
    double in_mass = 0.0, out_mass = 0.0;
    for (std::int64_t i = 0; i < x.grad().numel(); ++i) in_mass += x.grad()[i];
    for (std::int64_t i = 0; i < y.grad().numel(); ++i) out_mass += y.grad()[i];
    REQUIRE(in_mass == Approx(out_mass).epsilon(1e-12));
}

TEST_CASE("batchnorm3d: train mode standardizes each channel", "[core]") {
    Rng rng(17, 0);
    auto x = Var<float>::leaf(random_tensor<float>({4, 3, 2, 2, 2}, rng, 5.0));
    auto gamma = Var<float>::leaf(Tensor<float>({3}, 1.0f));
    auto beta = Var<float>::leaf(Tensor<float>({3}, 0.0f));
    auto rm = Var<float>::leaf(Tensor<float>({3}, 0.0f));
    auto rv = Var<float>::leaf(Tensor<float>({3}, 1.0f));
    auto y = batchnorm3d(x, gamma, beta, rm, rv, true);
    const std::int64_t spatial = 8, n = 4;
    for (std::int64_t c = 0; c < 3; ++c) {
        double mean = 0.0, var = 0.0;
        for (std::int64_t b = 0; b < n; ++b)
            for (std::int64_t i = 0; i < spatial; ++i)
                mean += y.value()[(b * 3 + c) * spatial + i];
        mean /= (n * spatial);
        for (std::int64_t b = 0; b < n; ++b)
            for (std::int64_t i = 0; i < spatial; ++i) {
                const double d = y.value()[(b * 3 + c) * spatial + i] - mean;
                var += d * d;
            }
        var /= (n * spatial);
        REQUIRE(std::abs(mean) < 1e-5);
        REQUIRE(std::abs(var - 1.0) < 1e-3);
    }
    // Running stats moved toward the batch statistics.
    REQUIRE(rm.value()[0] != 0.0f);
}

TEST_CASE("batchnorm3d: gamma=2 beta=3 rescales standardized input", "[core]") {
    Rng rng(18, 0);
    auto x = Var<float>::leaf(random_tensor<float>({8, 1, 2, 2, 2}, rng));
    auto gamma = Var<float>::leaf(Tensor<float>({1}, 2.0f));
    auto beta = Var<float>::leaf(Tensor<float>({1}, 3.0f));
    auto rm = Var<float>::leaf(Tensor<float>({1}, 0.0f));
    auto rv = Var<float>::leaf(Tensor<float>({1}, 1.0f));
    auto y = batchnorm3d(x, gamma, beta, rm, rv, true);
    double mean = 0.0, var = 0.0;
    for (std::int64_t i = 0; i < y.value().numel(); ++i) mean += y.value()[i];
    mean /= y.value().numel();
    for (std::int64_t i = 0; i < y.value().numel(); ++i) {
        const double d = y.value()[i] - mean;
        var += d * d;
    }
    var /= y.value().numel();
    REQUIRE(mean == Approx(3.0).margin(1e-4));
    REQUIRE(std::sqrt(var) == Approx(2.0).margin(1e-3));
}

TEST_CASE("batchnorm3d: single element per channel in train mode is degenerate", "[core]") {
    auto x = Var<float>::leaf(Tensor<float>({1, 2, 1, 1, 1}, 1.0f));
    auto gamma = Var<float>::leaf(Tensor<float>({2}, 1.0f));
    auto beta = Var<float>::leaf(Tensor<float>({2}, 0.0f));
    auto rm = Var<float>::leaf(Tensor<float>({2}, 0.0f));
    auto rv = Var<float>::leaf(Tensor<float>({2}, 1.0f));
    REQUIRE_THROWS_AS(batchnorm3d(x, gamma, beta, rm, rv, true), DataError);
    REQUIRE_NOTHROW(batchnorm3d(x, gamma, beta, rm, rv, false));
}

TEST_CASE("dropout: p=0 is the identity in train and eval", "[core]") {
    Rng data_rng(19, 0);
    auto in = random_tensor<float>({2, 3, 2, 2, 2}, data_rng);
    for (bool train : {true, false}) {
        Rng rng(1, stream::kDropout);
        auto y = dropout(Var<float>::leaf(in), 0.0, rng, train);
        for (std::int64_t i = 0; i < in.numel(); ++i) REQUIRE(y.value()[i] == in[i]);
    }
    Rng rng(1, stream::kDropout);
    REQUIRE_THROWS_AS(dropout(Var<float>::leaf(in), 1.0, rng, true), ParamError);
    REQUIRE_THROWS_AS(dropout(Var<float>::leaf(in), -0.1, rng, true), ParamError);
}

TEST_CASE("dropout: survivors are scaled by 1/(1-p)", "[core]") {
    Rng rng(20, stream::kDropout);
    auto in = Tensor<float>({1, 1, 8, 8, 8}, 1.0f);
    auto y = dropout(Var<float>::leaf(in), 0.5, rng, true);
    std::int64_t kept = 0;
    for (std::int64_t i = 0; i < in.numel(); ++i) {
        if (y.value()[i] != 0.0f) {
            REQUIRE(y.value()[i] == 2.0f);
            ++kept;
        }
    }
    REQUIRE(kept > 180);
    REQUIRE(kept < 330);
}

TEST_CASE("losses: mse(x,x) is zero with zero gradient", "[core]") {
    Rng rng(21, 0);
    auto in = random_tensor<double>({3, 4}, rng);
    auto x = Var<double>::leaf(in, true);
    auto loss = mse_loss(x, in);
    REQUIRE(loss.value()[0] == 0.0);
    loss.backward();
    for (std::int64_t i = 0; i < in.numel(); ++i) REQUIRE(x.grad()[i] == 0.0);
}

TEST_CASE("losses: uniform logits over 24 classes cost ln(24)", "[core]") {
    auto logits = Var<double>::leaf(Tensor<double>({2, 24}, 0.7));
    auto loss = cross_entropy(logits, {3, 17});
    REQUIRE(loss.value()[0] == Approx(std::log(24.0)).epsilon(1e-12));
}

TEST_CASE("losses: out-of-range class index is a label error", "[core]") {
    auto logits = Var<double>::leaf(Tensor<double>({1, 4}, 0.0));
    REQUIRE_THROWS_AS(cross_entropy(logits, {4}), DataError);
    REQUIRE_THROWS_AS(cross_entropy(logits, {-1}), DataError);
}

TEST_CASE("softmax: output rows are probability vectors", "[core]") {
    Rng rng(22, 0);
    for (int trial = 0; trial < 20; ++trial) {
        auto logits = random_tensor<double>({3, 7}, rng, 10.0);
        auto p = softmax(logits);
        for (std::int64_t r = 0; r < 3; ++r) {
            double sum = 0.0;
            for (std::int64_t c = 0; c < 7; ++c) {
                REQUIRE(p[r * 7 + c] >= 0.0);
                sum += p[r * 7 + c];
            }
            REQUIRE(sum == Approx(1.0).margin(1e-6));
        }
    }
}

TEST_CASE("gradients: every differentiable op passes finite differences", "[core]") {
    auto run = [&](const char* tag, auto factory, int trials = 20, double h = 1e-5) {
        for (int t = 0; t < trials; ++t) {
            ParameterStore<double> store;
            Rng data_rng(500 + static_cast<std::uint64_t>(t), 0);
            auto build = factory(store, data_rng);
            auto report = grad_check(store, build, h);
            INFO(tag << " trial " << t << " max rel err " << report.max_rel_err);
            REQUIRE(report.max_rel_err <= 1e-4);
        }
    };

    SECTION("conv3d") {
        run("conv3d", [](ParameterStore<double>& store, Rng& rng) {
            const int k = rng.bounded(2) == 0 ? 3 : 1;
            const int pad = k == 3 ? static_cast<int>(rng.bounded(2)) : 0;
            const std::int64_t cin = 1 + static_cast<std::int64_t>(rng.bounded(2));
            const std::int64_t cout = 1 + static_cast<std::int64_t>(rng.bounded(2));
            auto x = store.add("x", random_tensor<double>({1, cin, 4, 4, 4}, rng));
            auto w = store.add("w", random_tensor<double>({cout, cin, k, k, k}, rng, 0.5));
            auto b = store.add("b", random_tensor<double>({cout}, rng, 0.1));
            auto target = std::make_shared<Tensor<double>>();
            return std::function<Var<double>(ParameterStore<double>&)>(
                [k, pad, target](ParameterStore<double>& s) {
                    auto y = conv3d(s.get("x"), s.get("w"), s.get("b"), 1, pad);
                    auto f = flatten(y);
                    if (target->shape.empty()) *target = Tensor<double>(f.value().shape, 0.1);
                    return mse_loss(f, *target);
                });
        });
    }

    SECTION("maxpool3d") {
        run("maxpool3d", [](ParameterStore<double>& store, Rng& rng) {
            auto x = store.add("x", random_tensor<double>({1, 2, 4, 4, 4}, rng));
            (void)x;
            return std::function<Var<double>(ParameterStore<double>&)>(
                [](ParameterStore<double>& s) {
                    auto f = flatten(maxpool3d(s.get("x")));
                    return mse_loss(f, Tensor<double>(f.value().shape, 0.0));
                });
        }, 20, 1e-6);
    }

    SECTION("avgpool3d") {
        run("avgpool3d", [](ParameterStore<double>& store, Rng& rng) {
            auto x = store.add("x", random_tensor<double>({2, 1, 4, 4, 4}, rng));
            (void)x;
            return std::function<Var<double>(ParameterStore<double>&)>(
                [](ParameterStore<double>& s) {
                    auto f = flatten(avgpool3d(s.get("x")));
                    return mse_loss(f, Tensor<double>(f.value().shape, 0.0));
                });
        });
    }

    SECTION("batchnorm3d") {
        run("batchnorm3d", [](ParameterStore<double>& store, Rng& rng) {
            store.add("x", random_tensor<double>({3, 2, 2, 2, 2}, rng));
            store.add("gamma", random_tensor<double>({2}, rng, 0.5));
            store.add("beta", random_tensor<double>({2}, rng, 0.5));
            return std::function<Var<double>(ParameterStore<double>&)>(
                [](ParameterStore<double>& s) {
                    auto rm = Var<double>::leaf(Tensor<double>({2}, 0.0));
                    auto rv = Var<double>::leaf(Tensor<double>({2}, 1.0));
                    auto y = batchnorm3d(s.get("x"), s.get("gamma"), s.get("beta"), rm, rv, true);
                    auto f = flatten(y);
                    return mse_loss(f, Tensor<double>(f.value().shape, 0.25));
                });
        });
    }

    SECTION("linear") {
        run("linear", [](ParameterStore<double>& store, Rng& rng) {
            store.add("x", random_tensor<double>({3, 5}, rng));
            store.add("w", random_tensor<double>({4, 5}, rng, 0.5));
            store.add("b", random_tensor<double>({4}, rng, 0.1));
            return std::function<Var<double>(ParameterStore<double>&)>(
                [](ParameterStore<double>& s) {
                    auto y = linear(s.get("x"), s.get("w"), s.get("b"));
                    return mse_loss(y, Tensor<double>(y.value().shape, 0.3));
                });
        });
    }

    SECTION("relu + sigmoid + scale_shift + upsample + reshape") {
        run("elementwise", [](ParameterStore<double>& store, Rng& rng) {
            store.add("x", random_tensor<double>({1, 2, 2, 2, 2}, rng));
            return std::function<Var<double>(ParameterStore<double>&)>(
                [](ParameterStore<double>& s) {
                    auto h = upsample_nearest3d(s.get("x"), 2);
                    h = relu(scale_shift(h, 1.7, -0.2));
                    h = sigmoid(h);
                    auto f = flatten(reshape(h, {1, 2, 4, 4, 4}));
                    return mse_loss(f, Tensor<double>(f.value().shape, 0.4));
                });
        });
    }

    SECTION("dropout with a replayed mask") {
        run("dropout", [](ParameterStore<double>& store, Rng& rng) {
            store.add("x", random_tensor<double>({1, 1, 4, 4, 4}, rng));
            return std::function<Var<double>(ParameterStore<double>&)>(
                [](ParameterStore<double>& s) {
                    Rng mask_rng(77, stream::kDropout);
                    auto y = dropout(s.get("x"), 0.5, mask_rng, true);
                    auto f = flatten(y);
                    return mse_loss(f, Tensor<double>(f.value().shape, 0.0));
                });
        });
    }

    SECTION("cross_entropy") {
        run("cross_entropy", [](ParameterStore<double>& store, Rng& rng) {
            store.add("z", random_tensor<double>({3, 6}, rng));
            return std::function<Var<double>(ParameterStore<double>&)>(
                [](ParameterStore<double>& s) {
                    return cross_entropy(s.get("z"), {1, 0, 5});
                });
        });
    }
}

TEST_CASE("grad_check: identity linear layer agrees to 1e-8", "[core]") {
    ParameterStore<double> store;
    Tensor<double> w({3, 3}, 0.0);
    w[0] = w[4] = w[8] = 1.0;
    store.add("w", w);
    store.add("b", Tensor<double>({3}, 0.0));
    Rng rng(30, 0);
    auto x = random_tensor<double>({2, 3}, rng);
    auto target = random_tensor<double>({2, 3}, rng);
    auto report = grad_check(store, [&](ParameterStore<double>& s) {
        return mse_loss(linear(Var<double>::leaf(x), s.get("w"), s.get("b")), target);
    });
    REQUIRE(report.max_rel_err <= 1e-8);
}

TEST_CASE("grad_check: refuses oversized parameter vectors", "[core]") {
    ParameterStore<double> store;
    store.add("w", Tensor<double>({101, 100}, 0.0));
    REQUIRE_THROWS_AS(
        grad_check(store, [](ParameterStore<double>& s) { return mse_loss(s.get("w"), Tensor<double>({101, 100}, 0.0)); }),
        ParamError);
}

TEST_CASE("determinism: identical seeds give bit-identical forward/backward", "[core]") {
    auto run_once = [](std::uint64_t seed) {
        Rng rng(seed, stream::kInit);
        ParameterStore<float> store;
        store.add("w", kaiming_normal<float>({2, 1, 3, 3, 3}, 27, rng));
        store.add("b", Tensor<float>({2}, 0.0f));
        auto x = Var<float>::leaf(random_tensor<float>({1, 1, 6, 6, 6}, rng));
        auto y = conv3d(x, store.get("w"), store.get("b"), 1, 1);
        auto f = flatten(y);
        auto loss = mse_loss(f, Tensor<float>(f.value().shape, 0.0f));
        store.zero_grad();
        loss.backward();
        Adam<float> opt(store);
        opt.step(1e-3);
        std::vector<float> out;
        for (const auto& e : store.entries()) {
            out.insert(out.end(), e.node->value.data.begin(), e.node->value.data.end());
        }
        out.push_back(loss.value()[0]);
        return out;
    };
    const auto a = run_once(7);
    const auto b = run_once(7);
    REQUIRE(a == b);
    const auto c = run_once(8);
    REQUIRE(a != c);
}

TEST_CASE("checkpoint: VPXW round trip is bit-exact", "[core]") {
    Rng rng(31, 0);
    ParameterStore<float> store;
    store.add("enc.w", random_tensor<float>({2, 3}, rng));
    store.add("enc.running", random_tensor<float>({3}, rng), false);
    const std::string dir = test_helpers::temp_dir("vpxw");
    const std::string path = dir + "/params.vpxw";
    save_checkpoint(store, path);

    ParameterStore<float> loaded;
    loaded.add("enc.w", Tensor<float>({2, 3}, 0.0f));
    loaded.add("enc.running", Tensor<float>({3}, 0.0f), false);
    load_checkpoint(loaded, path);
    for (std::size_t i = 0; i < store.entries().size(); ++i) {
        REQUIRE(store.entries()[i].node->value.data == loaded.entries()[i].node->value.data);
    }

    // Re-saving the loaded store reproduces the file byte for byte.
    const std::string path2 = dir + "/params2.vpxw";
    save_checkpoint(loaded, path2);
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    REQUIRE(b1 == b2);
}

TEST_CASE("checkpoint: malformed buffers fail with byte offsets", "[core]") {
    using namespace vpx::vpxw;
    REQUIRE_THROWS_AS(decode("NOPE"), FormatError);
    try {
        decode("NOPE");
    } catch (const FormatError& e) {
        REQUIRE(e.offset == 0);
    }
    std::vector<RawEntry> entries{{"w", {2, 2}, {1, 2, 3, 4}}};
    std::string good = encode(entries);
    REQUIRE_NOTHROW(decode(good));
    std::string truncated = good.substr(0, good.size() - 3);
    REQUIRE_THROWS_AS(decode(truncated), FormatError);
    std::string padded = good + "xx";
    REQUIRE_THROWS_AS(decode(padded), FormatError);
}
