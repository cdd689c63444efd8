#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "kanfuse/gradcheck.hpp"
#include "kanfuse/kan.hpp"
#include "oracles.hpp"

using namespace kf;
using D = Tensor<double>;

TEST_CASE("basis sums to one at the domain midpoint") {
    SplineGrid g(-1.0, 1.0, 5, 3);
    auto b = bspline_basis(g, 0.0);
    double sum = 0;
    for (double v : b) sum += v;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("order-0 box splines are one-hot per cell") {
    SplineGrid g(0.0, 1.0, 2, 0);
    auto b = bspline_basis(g, 0.25);
    REQUIRE(b.size() == 2);
    CHECK(b[0] == 1.0);
    CHECK(b[1] == 0.0);
}

TEST_CASE("basis matches the recursive Cox-de Boor oracle") {
    Rng rng(11);
    for (int trial = 0; trial < 60; ++trial) {
        int G = 1 + static_cast<int>(rng.uniform_int(8));
        int k = static_cast<int>(rng.uniform_int(4));
        double lo = rng.uniform(-3.0, 0.0);
        double hi = lo + rng.uniform(0.5, 4.0);
        SplineGrid g(lo, hi, G, k);
        // mostly inside, some outside to exercise clamping
        double x = rng.uniform(lo - 0.5, hi + 0.5);
        auto fast = bspline_basis(g, x);
        auto naive = oracle::bspline_basis_naive(g, x);
        REQUIRE(fast.size() == naive.size());
        for (size_t i = 0; i < fast.size(); ++i)
            CHECK(std::abs(fast[i] - naive[i]) < 1e-12);
    }
}

TEST_CASE("partition of unity across grids and orders") {
    for (int G = 1; G <= 8; ++G)
        for (int k = 0; k <= 3; ++k) {
            SplineGrid g(-1.0, 1.0, G, k);
            for (int i = 0; i <= 64; ++i) {
                double x = -1.0 + 2.0 * i / 64.0;
                auto b = bspline_basis(g, x);
                double sum = 0;
                int nonzero = 0;
                for (double v : b) {
                    CHECK(v >= -1e-15);
                    sum += v;
                    if (v != 0.0) ++nonzero;
                }
                CHECK(std::abs(sum - 1.0) < 1e-9);
                CHECK(nonzero <= k + 1);
            }
        }
}

TEST_CASE("invalid grids are rejected") {
    CHECK_THROWS_AS(SplineGrid(1.0, -1.0, 5, 3), ValueError);
    CHECK_THROWS_AS(SplineGrid(-1.0, 1.0, 0, 3), ValueError);
}

TEST_CASE("eval_phi trivial and oracle cases") {
    SplineGrid g(-1.0, 1.0, 5, 3);
    Rng rng(21);

    SUBCASE("silu-only at zero") {
        KanActivation<double> a;
        a.w_b = 1.0;
        a.w_s = 0.0;
        a.coeffs.assign(static_cast<size_t>(g.basis_count()), 0.0);
        a.grid = &g;
        CHECK(eval_phi(0.0, a) == 0.0);
    }
    SUBCASE("all-ones coefficients give the partition of unity") {
        KanActivation<double> a;
        a.w_b = 0.0;
        a.w_s = 1.0;
        a.coeffs.assign(static_cast<size_t>(g.basis_count()), 1.0);
        a.grid = &g;
        CHECK(eval_phi(0.37, a) == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("random activation matches the summation oracle") {
        for (int trial = 0; trial < 100; ++trial) {
            KanActivation<double> a;
            a.w_b = rng.normal();
            a.w_s = rng.normal();
            a.coeffs.resize(static_cast<size_t>(g.basis_count()));
            for (auto& c : a.coeffs) c = rng.normal();
            a.grid = &g;
            double x = rng.uniform(-1.4, 1.4);
            CHECK(std::abs(eval_phi(x, a) - oracle::eval_phi_naive(x, a)) < 1e-12);
        }
    }
}

TEST_CASE("kan layer degenerate and trivial cases") {
    SplineGrid g(-1.0, 1.0, 5, 3);
    Rng rng(31);

    SUBCASE("1x1 layer equals eval_phi per batch element") {
        KanLayer<double> layer(1, 1, g, rng);
        D x = D::from_data({4, 1}, {-0.8, -0.1, 0.3, 0.9});
        D y = layer.forward(x);
        auto act = layer.activation(0, 0);
        for (int b = 0; b < 4; ++b)
            CHECK(y.data()[b] == doctest::Approx(eval_phi(x.data()[b], act)).epsilon(1e-12));
    }
    SUBCASE("zero input with w_s = 0 gives zero output") {
        KanLayer<double> layer(3, 2, g, rng);
        for (int64_t i = 0; i < layer.w_s.numel(); ++i) layer.w_s.data()[i] = 0.0;
        D x = D::zeros({2, 3});
        D y = layer.forward(x);
        for (int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == 0.0);
    }
}

TEST_CASE("kan layer matches the double-loop oracle on random instances") {
    Rng rng(41);
    for (int trial = 0; trial < 100; ++trial) {
        int G = 3 + static_cast<int>(rng.uniform_int(4));
        int k = static_cast<int>(rng.uniform_int(4));
        SplineGrid g(-1.0, 1.0, G, k);
        int64_t nin = 1 + rng.uniform_int(5), nout = 1 + rng.uniform_int(4);
        int64_t batch = 1 + rng.uniform_int(3);
        KanLayer<double> layer(nin, nout, g, rng);
        for (int64_t i = 0; i < layer.w_b.numel(); ++i) {
            layer.w_b.data()[i] = rng.normal();
            layer.w_s.data()[i] = rng.normal();
        }
        D x = D::uniform({batch, nin}, rng, -1.3, 1.3);
        D y = layer.forward(x);
        auto ref = oracle::kan_layer_naive(layer, x.vec(), batch);
        for (int64_t i = 0; i < y.numel(); ++i)
            CHECK(std::abs(y.data()[i] - ref[static_cast<size_t>(i)]) < 1e-10);
    }
}

TEST_CASE("with w_s = 0 the layer is a w_b-weighted silu map") {
    SplineGrid g(-1.0, 1.0, 5, 3);
    Rng rng(51);
    KanLayer<double> layer(4, 3, g, rng);
    for (int64_t i = 0; i < layer.w_s.numel(); ++i) layer.w_s.data()[i] = 0.0;
    for (int64_t i = 0; i < layer.w_b.numel(); ++i) layer.w_b.data()[i] = rng.normal();
    D x = D::uniform({5, 4}, rng, -2.0, 2.0);
    D y = layer.forward(x);
    for (int64_t b = 0; b < 5; ++b)
        for (int64_t q = 0; q < 3; ++q) {
            double acc = 0;
            for (int64_t p = 0; p < 4; ++p) {
                double xv = x.data()[b * 4 + p];
                acc += layer.w_b.data()[q * 4 + p] * (xv / (1.0 + std::exp(-xv)));
            }
            CHECK(y.data()[b * 3 + q] == doctest::Approx(acc).epsilon(1e-12));
        }
}

TEST_CASE("kan conv shape law and trivial cases") {
    SplineGrid g(-1.0, 1.0, 5, 3);
    Rng rng(61);

    SUBCASE("5x5 input, k=3 gives 3x3 output") {
        KanConv2d<double> conv(1, 1, 3, 0, g, rng);
        D x = D::uniform({1, 5, 5}, rng, -1.0, 1.0);
        D y = conv.forward(x);
        CHECK(y.shape() == Shape{1, 3, 3});
    }
    SUBCASE("valid output is (h-k+1, w-k+1) for k up to 7") {
        for (int64_t k = 1; k <= 7; ++k) {
            KanConv2d<double> conv(1, 1, k, 0, g, rng);
            for (int64_t h = k; h < k + 3; ++h)
                for (int64_t w = k; w < k + 3; ++w) {
                    D x = D::uniform({1, h, w}, rng, -1.0, 1.0);
                    D y = conv.forward(x);
                    CHECK(y.shape() == Shape{1, h - k + 1, w - k + 1});
                }
        }
    }
    SUBCASE("all-zero weights give all-zero output") {
        KanConv2d<double> conv(2, 2, 3, 0, g, rng);
        for (int64_t i = 0; i < conv.w_b.numel(); ++i) {
            conv.w_b.data()[i] = 0.0;
            conv.w_s.data()[i] = 0.0;
        }
        for (int64_t i = 0; i < conv.coeffs.numel(); ++i) conv.coeffs.data()[i] = 0.0;
        D x = D::uniform({2, 6, 6}, rng, -1.0, 1.0);
        D y = conv.forward(x);
        for (int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == 0.0);
    }
    SUBCASE("input smaller than kernel is rejected") {
        KanConv2d<double> conv(1, 1, 3, 0, g, rng);
        D x = D::zeros({1, 2, 5});
        CHECK_THROWS_AS(conv.forward(x), ShapeError);
    }
}

TEST_CASE("kan conv matches the quadruple-loop oracle") {
    Rng rng(71);
    for (int trial = 0; trial < 100; ++trial) {
        int G = 3 + static_cast<int>(rng.uniform_int(4));
        int ko = static_cast<int>(rng.uniform_int(4));
        SplineGrid g(-1.0, 1.0, G, ko);
        int64_t ci = 1 + rng.uniform_int(3), co = 1 + rng.uniform_int(3);
        int64_t k = 1 + rng.uniform_int(3);
        int64_t pad = (trial % 3 == 0) ? k / 2 : 0;
        int64_t h = k + rng.uniform_int(4), w = k + rng.uniform_int(4);
        KanConv2d<double> conv(ci, co, k, pad, g, rng);
        for (int64_t i = 0; i < conv.w_b.numel(); ++i) {
            conv.w_b.data()[i] = rng.normal();
            conv.w_s.data()[i] = rng.normal();
        }
        D x = D::uniform({ci, h, w}, rng, -1.3, 1.3);
        D y = conv.forward(x);
        auto ref = oracle::kan_conv_naive(conv, x.vec(), h, w);
        REQUIRE(y.numel() == static_cast<int64_t>(ref.size()));
        for (int64_t i = 0; i < y.numel(); ++i)
            CHECK(std::abs(y.data()[i] - ref[static_cast<size_t>(i)]) < 1e-10);
    }
}

TEST_CASE("1x1 kan conv equals a kan layer applied per pixel") {
    SplineGrid g(-1.0, 1.0, 5, 3);
    Rng rng(81);
    int64_t c = 3, co = 2, h = 4, w = 5;
    KanConv2d<double> conv(c, co, 1, 0, g, rng);
    KanLayer<double> layer(c, co, g, rng);
    // share parameters: conv edge (oc, ic, 0, 0) == layer edge (q=oc, p=ic)
    for (int64_t i = 0; i < conv.w_b.numel(); ++i) {
        conv.w_b.data()[i] = layer.w_b.data()[i];
        conv.w_s.data()[i] = layer.w_s.data()[i];
    }
    for (int64_t i = 0; i < conv.coeffs.numel(); ++i)
        conv.coeffs.data()[i] = layer.coeffs.data()[i];

    D x = D::uniform({c, h, w}, rng, -1.0, 1.0);
    D yc = conv.forward(x);

    // same pixels as rows of a (h*w, c) matrix
    D rows = transpose2d(reshape(x, {c, h * w}));
    D yl = layer.forward(rows);
    for (int64_t pix = 0; pix < h * w; ++pix)
        for (int64_t oc = 0; oc < co; ++oc)
            CHECK(yc.data()[oc * h * w + pix] ==
                  doctest::Approx(yl.data()[pix * co + oc]).epsilon(1e-12));
}

TEST_CASE("param_count counts every learnable scalar") {
    SplineGrid g(-1.0, 1.0, 5, 3);
    Rng rng(91);
    CHECK(KanLayer<double>(1, 1, g, rng).param_count() == 10);
    CHECK(KanLayer<double>(3, 2, g, rng).param_count() == 60);
    CHECK(KanConv2d<double>(2, 4, 3, 0, g, rng).param_count() == 720);
}

TEST_CASE("gradients of every parameter class match finite differences") {
    Rng rng(101);
    SUBCASE("kan layer") {
        SplineGrid g(-1.0, 1.0, 5, 3);
        KanLayer<double> layer(4, 3, g, rng);
        D x = D::uniform({3, 4}, rng, -1.2, 1.2);
        x.requires_grad_();
        auto loss_fn = [&] { return mean_all(square(layer.forward(x))); };
        CHECK(check_gradients(loss_fn, {layer.w_b, layer.w_s, layer.coeffs, x}) < 1e-6);
    }
    SUBCASE("kan conv valid and same-padded") {
        for (int64_t pad : {0, 1}) {
            SplineGrid g(-1.0, 1.0, 4, 2);
            KanConv2d<double> conv(2, 2, 3, pad, g, rng);
            D x = D::uniform({2, 5, 5}, rng, -1.2, 1.2);
            x.requires_grad_();
            auto loss_fn = [&] { return mean_all(square(conv.forward(x))); };
            CHECK(check_gradients(loss_fn, {conv.w_b, conv.w_s, conv.coeffs, x}) < 1e-6);
        }
    }
    SUBCASE("eval phi path via the layer, order 0") {
        SplineGrid g(-1.0, 1.0, 5, 0);
        KanLayer<double> layer(2, 2, g, rng);
        D x = D::uniform({4, 2}, rng, -0.9, 0.9);
        x.requires_grad_();
        auto loss_fn = [&] { return mean_all(square(layer.forward(x))); };
        CHECK(check_gradients(loss_fn, {layer.w_b, layer.w_s, layer.coeffs, x}) < 1e-6);
    }
}

TEST_CASE("initialization is a near-silu start") {
    SplineGrid g(-1.0, 1.0, 5, 3);
    Rng rng(111);
    KanLayer<double> layer(6, 5, g, rng);
    for (int64_t i = 0; i < layer.w_b.numel(); ++i) {
        CHECK(layer.w_b.data()[i] == 1.0);
        CHECK(layer.w_s.data()[i] == 1.0);
    }
    double sd = 0.1 / std::sqrt(8.0);
    for (int64_t i = 0; i < layer.coeffs.numel(); ++i)
        CHECK(std::abs(layer.coeffs.data()[i]) < 6 * sd);
}
