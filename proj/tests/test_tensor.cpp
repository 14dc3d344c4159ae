#include "mcfa/tensor.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"

using mcfa::Graph;
using mcfa::Tensor;

TEST(Tensor, ShapeValueConsistency) {
    Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
    EXPECT_EQ(t.size(), 6u);
    EXPECT_DOUBLE_EQ(t.at(1, 2), 6.0);
    EXPECT_THROW(Tensor({2, 2}, {1.0}), std::invalid_argument);
}

TEST(Conv2d, IdentityKernel) {
    Graph g;
    Tensor x({1, 3, 3}, std::vector<double>(9, 1.0));
    Tensor k({1, 1, 1, 1}, {1.0});
    Tensor b({1}, {0.0});
    Tensor y = g.conv2d(x, k, b, 1, 0);
    EXPECT_EQ(y.shape(), (std::vector<int>{1, 3, 3}));
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_DOUBLE_EQ(y.data()[i], 1.0);
}

TEST(Conv2d, SumKernel) {
    Graph g;
    Tensor x({1, 2, 2}, {1, 2, 3, 4});
    Tensor k({1, 1, 2, 2}, {1, 1, 1, 1});
    Tensor b({1}, {0.0});
    Tensor y = g.conv2d(x, k, b, 1, 0);
    EXPECT_EQ(y.shape(), (std::vector<int>{1, 1, 1}));
    EXPECT_DOUBLE_EQ(y.value(), 10.0);
}

TEST(Conv2d, MatchesNaiveReferenceWithPadding) {
    std::mt19937_64 rng(11);
    Graph g;
    auto xv = oracle::random_vector(rng, 2 * 5 * 5);
    auto kv = oracle::random_vector(rng, 3 * 2 * 3 * 3);
    auto bv = oracle::random_vector(rng, 3);
    Tensor x({2, 5, 5}, xv);
    Tensor k({3, 2, 3, 3}, kv);
    Tensor b({3}, bv);
    Tensor y = g.conv2d(x, k, b, 1, 1);
    EXPECT_EQ(y.shape(), (std::vector<int>{3, 5, 5}));
    int ho, wo;
    auto ref = oracle::conv2d(xv, 2, 5, 5, kv, 3, 3, 3, bv, 1, 1, ho, wo);
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y.data()[i], ref[i], 1e-12);
}

TEST(Conv2d, ShapeErrors) {
    Graph g;
    Tensor x({2, 4, 4});
    Tensor k({3, 3, 3, 3});  // expects 3 input channels
    Tensor b({3});
    EXPECT_THROW(g.conv2d(x, k, b, 1, 0), std::invalid_argument);
    Tensor k2({3, 2, 6, 6});  // kernel larger than padded input
    EXPECT_THROW(g.conv2d(x, k2, b, 1, 0), std::invalid_argument);
}

TEST(AvgPool, Mean2x2) {
    Graph g;
    Tensor x({1, 2, 2}, {1, 2, 3, 4});
    Tensor y = g.avg_pool2d(x, 2, 2);
    EXPECT_DOUBLE_EQ(y.value(), 2.5);
}

TEST(AvgPool, PreservesConstants) {
    Graph g;
    Tensor x = Tensor::full({2, 6, 6}, 3.25);
    Tensor y = g.avg_pool2d(x, 3, 3);
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_DOUBLE_EQ(y.data()[i], 3.25);
}

TEST(AvgPool, MatchesNaiveReference) {
    std::mt19937_64 rng(12);
    Graph g;
    auto xv = oracle::random_vector(rng, 3 * 8 * 8);
    Tensor x({3, 8, 8}, xv);
    Tensor y = g.avg_pool2d(x, 2, 2);
    EXPECT_EQ(y.shape(), (std::vector<int>{3, 4, 4}));
    int ho, wo;
    auto ref = oracle::avg_pool2d(xv, 3, 8, 8, 2, 2, ho, wo);
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y.data()[i], ref[i], 1e-12);
}

TEST(AvgPool, WindowTooLarge) {
    Graph g;
    Tensor x({1, 2, 2});
    EXPECT_THROW(g.avg_pool2d(x, 3, 1), std::invalid_argument);
}

TEST(MaxPool, Max2x2) {
    Graph g;
    Tensor x({1, 2, 2}, {1, 2, 3, 4});
    EXPECT_DOUBLE_EQ(g.max_pool2d(x, 2, 2).value(), 4.0);
}

TEST(MaxPool, TieGradientGoesToFirstRowMajor) {
    Graph g;
    Tensor x = Tensor::full({1, 2, 2}, 7.0);
    Tensor y = g.max_pool2d(x, 2, 2);
    g.backward(g.sum(y));
    const auto& gx = x.grad();
    EXPECT_DOUBLE_EQ(gx[0], 1.0);
    EXPECT_DOUBLE_EQ(gx[1], 0.0);
    EXPECT_DOUBLE_EQ(gx[2], 0.0);
    EXPECT_DOUBLE_EQ(gx[3], 0.0);
}

TEST(MaxPool, MatchesNaiveReference) {
    std::mt19937_64 rng(13);
    Graph g;
    auto xv = oracle::random_vector(rng, 2 * 6 * 6);
    Tensor x({2, 6, 6}, xv);
    Tensor y = g.max_pool2d(x, 2, 2);
    int ho, wo;
    auto ref = oracle::max_pool2d(xv, 2, 6, 6, 2, 2, ho, wo);
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_DOUBLE_EQ(y.data()[i], ref[i]);
}

TEST(FullyConnected, IdentityAndBias) {
    Graph g;
    Tensor x({3}, {1, 2, 3});
    Tensor w({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Tensor b({3}, {0, 0, 0});
    Tensor y = g.fully_connected(x, w, b);
    for (int i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(y.at(i), x.at(i));

    Tensor w0 = Tensor::zeros({3, 2});
    Tensor b2({2}, {5, -1});
    Tensor y2 = g.fully_connected(x, w0, b2);
    EXPECT_DOUBLE_EQ(y2.at(0), 5.0);
    EXPECT_DOUBLE_EQ(y2.at(1), -1.0);
}

TEST(FullyConnected, MatchesNaiveReference) {
    std::mt19937_64 rng(14);
    Graph g;
    auto xv = oracle::random_vector(rng, 5);
    auto wv = oracle::random_vector(rng, 15);
    auto bv = oracle::random_vector(rng, 3);
    Tensor y = g.fully_connected(Tensor({5}, xv), Tensor({5, 3}, wv), Tensor({3}, bv));
    auto ref = oracle::fully_connected(xv, wv, 5, 3, bv);
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(y.at(i), ref[i], 1e-12);
}

TEST(FullyConnected, DimensionMismatch) {
    Graph g;
    EXPECT_THROW(g.fully_connected(Tensor({4}), Tensor({5, 3}), Tensor({3})),
                 std::invalid_argument);
}

TEST(Relu, ValuesAndSubgradient) {
    Graph g;
    Tensor x({3}, {-1, 0, 2});
    Tensor y = g.relu(x);
    EXPECT_DOUBLE_EQ(y.at(0), 0.0);
    EXPECT_DOUBLE_EQ(y.at(1), 0.0);
    EXPECT_DOUBLE_EQ(y.at(2), 2.0);

    Graph g2;
    Tensor x2({2}, {-1, 3});
    g2.backward(g2.sum(g2.relu(x2)));
    EXPECT_DOUBLE_EQ(x2.grad()[0], 0.0);
    EXPECT_DOUBLE_EQ(x2.grad()[1], 1.0);
}

TEST(Softmax, UniformOnEqualLogits) {
    Graph g;
    Tensor y = g.softmax(Tensor({4}, {0, 0, 0, 0}));
    for (int i = 0; i < 4; ++i) EXPECT_NEAR(y.at(i), 0.25, 1e-15);
}

TEST(Softmax, KnownValues) {
    Graph g;
    Tensor y = g.softmax(Tensor({3}, {1, 2, 3}));
    EXPECT_NEAR(y.at(0), 0.09003, 1e-5);
    EXPECT_NEAR(y.at(1), 0.24473, 1e-5);
    EXPECT_NEAR(y.at(2), 0.66524, 1e-5);
    auto ref = oracle::softmax({1, 2, 3});
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(y.at(i), ref[i], 1e-12);
}

TEST(Softmax, LargeLogitsNoOverflow) {
    Graph g;
    Tensor y = g.softmax(Tensor({2}, {1000, 1000}));
    EXPECT_DOUBLE_EQ(y.at(0), 0.5);
    EXPECT_DOUBLE_EQ(y.at(1), 0.5);
}

TEST(Softmax, SimplexAndShiftInvarianceProperty) {
    std::mt19937_64 rng(15);
    for (int trial = 0; trial < 50; ++trial) {
        const int d = 1 + static_cast<int>(rng() % 12);
        auto v = oracle::random_vector(rng, d, -30.0, 30.0);
        Graph g;
        Tensor y = g.softmax(Tensor({d}, v));
        double s = 0.0;
        for (int i = 0; i < d; ++i) {
            EXPECT_GT(y.at(i), 0.0);
            EXPECT_LE(y.at(i), 1.0);
            s += y.at(i);
        }
        EXPECT_NEAR(s, 1.0, 1e-9);

        const double c = oracle::random_vector(rng, 1, -100.0, 100.0)[0];
        auto shifted = v;
        for (auto& e : shifted) e += c;
        Tensor y2 = g.softmax(Tensor({d}, shifted));
        for (int i = 0; i < d; ++i) EXPECT_NEAR(y.at(i), y2.at(i), 1e-12);
    }
}

TEST(Concat, BasicAndEmpty) {
    Graph g;
    Tensor y = g.concat(Tensor({2}, {1, 2}), Tensor({1}, {3}));
    EXPECT_EQ(y.shape(), (std::vector<int>{3}));
    EXPECT_DOUBLE_EQ(y.at(2), 3.0);

    Tensor e({0}, {});
    Tensor y2 = g.concat(e, Tensor({1}, {5}));
    EXPECT_EQ(y2.shape(), (std::vector<int>{1}));
    EXPECT_DOUBLE_EQ(y2.at(0), 5.0);

    EXPECT_THROW(g.concat(Tensor({2, 2}), Tensor({2})), std::invalid_argument);
}

TEST(Concat, GradientSplits) {
    Graph g;
    Tensor a({2}, {1, 2});
    Tensor b({3}, {3, 4, 5});
    g.backward(g.sum(g.concat(a, b)));
    ASSERT_EQ(a.grad().size(), 2u);
    ASSERT_EQ(b.grad().size(), 3u);
    for (double v : a.grad()) EXPECT_DOUBLE_EQ(v, 1.0);
    for (double v : b.grad()) EXPECT_DOUBLE_EQ(v, 1.0);
}

TEST(Flatten, RowMajorOrder) {
    Graph g;
    Tensor x({1, 2, 2}, {1, 2, 3, 4});
    Tensor y = g.flatten(x);
    EXPECT_EQ(y.shape(), (std::vector<int>{4}));
    for (int i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(y.at(i), i + 1.0);

    Tensor s({1, 1, 1}, {7});
    EXPECT_DOUBLE_EQ(g.flatten(s).value(), 7.0);

    // reshape back from the flat values is the identity
    Tensor back(x.shape(), y.values());
    EXPECT_EQ(back.values(), x.values());
}

TEST(Engine, FiniteOutputsAndGradientsOnFiniteInputs) {
    std::mt19937_64 rng(77);
    for (int trial = 0; trial < 10; ++trial) {
        Graph g;
        Tensor x({2, 6, 6}, oracle::random_vector(rng, 72, -50.0, 50.0));
        Tensor k({3, 2, 3, 3}, oracle::random_vector(rng, 54, -5.0, 5.0));
        Tensor b({3}, oracle::random_vector(rng, 3));
        Tensor y = g.max_pool2d(g.relu(g.conv2d(x, k, b, 1, 1)), 2, 2);
        Tensor f = g.softmax(g.flatten(y));
        Tensor loss = g.sum(g.scale(g.log(g.clamp(f, 1e-12, 1.0)), -1.0));
        g.backward(loss);
        EXPECT_TRUE(std::isfinite(loss.value()));
        for (double v : f.values()) EXPECT_TRUE(std::isfinite(v));
        for (double v : x.grad()) EXPECT_TRUE(std::isfinite(v));
        for (double v : k.grad()) EXPECT_TRUE(std::isfinite(v));
    }
}

TEST(Backward, SumOfSquaresGradient) {
    Graph g;
    Tensor x({3}, {1.0, -2.0, 0.5});
    Tensor loss = g.dot(x, x);
    g.backward(loss);
    EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
    EXPECT_DOUBLE_EQ(x.grad()[1], -4.0);
    EXPECT_DOUBLE_EQ(x.grad()[2], 1.0);
}

TEST(Backward, ConstantRootLeavesGradsZero) {
    Graph g;
    Tensor x({2}, {1, 2});
    Tensor c = Tensor::scalar(3.0);
    g.backward(c);
    EXPECT_DOUBLE_EQ(x.grad()[0], 0.0);
    EXPECT_DOUBLE_EQ(x.grad()[1], 0.0);
}

TEST(Backward, NonScalarRootRejected) {
    Graph g;
    Tensor x({2}, {1, 2});
    EXPECT_THROW(g.backward(x), std::invalid_argument);
}

TEST(Backward, FanOutGradientsAccumulate) {
    // x feeds two consumers; the gradient is the sum of both paths.
    Graph g;
    Tensor x({2}, {3.0, -1.0});
    Tensor a = g.scale(x, 2.0);
    Tensor b = g.mul(x, x);
    Tensor loss = g.add(g.sum(a), g.sum(b));
    g.backward(loss);
    EXPECT_DOUBLE_EQ(x.grad()[0], 2.0 + 2.0 * 3.0);
    EXPECT_DOUBLE_EQ(x.grad()[1], 2.0 + 2.0 * -1.0);
}

TEST(Backward, AccumulatesAcrossBackwardCalls) {
    Tensor x({1}, {2.0});
    {
        Graph g;
        g.backward(g.dot(x, x));
    }
    EXPECT_DOUBLE_EQ(x.grad()[0], 4.0);
    {
        Graph g;
        g.backward(g.dot(x, x));
    }
    EXPECT_DOUBLE_EQ(x.grad()[0], 8.0);
    x.zero_grad();
    EXPECT_DOUBLE_EQ(x.grad()[0], 0.0);
}

TEST(ElementwiseOps, LogClampSliceGradients) {
    Graph g;
    Tensor x({3}, {0.5, 2.0, 4.0});
    Tensor y = g.log(x);
    g.backward(g.sum(y));
    EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
    EXPECT_DOUBLE_EQ(x.grad()[1], 0.5);
    EXPECT_DOUBLE_EQ(x.grad()[2], 0.25);
    EXPECT_THROW(g.log(Tensor({1}, {0.0})), std::invalid_argument);

    Graph g2;
    Tensor z({3}, {-1.0, 0.5, 2.0});
    Tensor c = g2.clamp(z, 0.0, 1.0);
    EXPECT_DOUBLE_EQ(c.at(0), 0.0);
    EXPECT_DOUBLE_EQ(c.at(1), 0.5);
    EXPECT_DOUBLE_EQ(c.at(2), 1.0);
    g2.backward(g2.sum(c));
    EXPECT_DOUBLE_EQ(z.grad()[0], 0.0);
    EXPECT_DOUBLE_EQ(z.grad()[1], 1.0);
    EXPECT_DOUBLE_EQ(z.grad()[2], 0.0);

    Graph g3;
    Tensor v({4}, {1, 2, 3, 4});
    Tensor s = g3.slice(v, 1, 2);
    EXPECT_DOUBLE_EQ(s.at(0), 2.0);
    EXPECT_DOUBLE_EQ(s.at(1), 3.0);
    g3.backward(g3.sum(s));
    EXPECT_DOUBLE_EQ(v.grad()[0], 0.0);
    EXPECT_DOUBLE_EQ(v.grad()[1], 1.0);
    EXPECT_DOUBLE_EQ(v.grad()[2], 1.0);
    EXPECT_DOUBLE_EQ(v.grad()[3], 0.0);
    EXPECT_THROW(g3.slice(v, 3, 2), std::invalid_argument);
}

// Property: analytic gradients of random composite graphs match central
// finite differences. Each trial builds a small random network mixing the
// engine's ops.
TEST(Backward, FiniteDifferencePropertyOnRandomGraphs) {
    std::mt19937_64 rng(99);
    int checked = 0;
    for (int trial = 0; trial < 24; ++trial) {
        const int c = 1 + static_cast<int>(rng() % 2);
        const int h = 5 + static_cast<int>(rng() % 3);
        const int cout = 1 + static_cast<int>(rng() % 3);
        auto xv = oracle::random_vector(rng, static_cast<std::size_t>(c) * h * h);
        auto kv = oracle::random_vector(rng, static_cast<std::size_t>(cout) * c * 9);
        auto bv = oracle::random_vector(rng, cout);
        const bool use_max = (trial % 2) == 0;

        Tensor x({c, h, h}, xv);
        Tensor k({cout, c, 3, 3}, kv);
        Tensor b({cout}, bv);
        Graph g;
        Tensor y = g.relu(g.conv2d(x, k, b, 1, 1));
        y = use_max ? g.max_pool2d(y, 2, 2) : g.avg_pool2d(y, 2, 2);
        Tensor f = g.flatten(y);
        Tensor sm = g.softmax(f);
        Tensor logp = g.log(g.clamp(sm, 1e-9, 1.0));
        Tensor loss = g.sub(g.dot(f, f), g.sum(logp));
        g.backward(loss);

        auto loss_value = [&](std::vector<double>& xs, std::vector<double>& ks,
                              std::vector<double>& bs) {
            Graph gg;
            Tensor xx({c, h, h}, xs);
            Tensor kk({cout, c, 3, 3}, ks);
            Tensor bb({cout}, bs);
            Tensor yy = gg.relu(gg.conv2d(xx, kk, bb, 1, 1));
            yy = use_max ? gg.max_pool2d(yy, 2, 2) : gg.avg_pool2d(yy, 2, 2);
            Tensor ff = gg.flatten(yy);
            Tensor ss = gg.softmax(ff);
            Tensor lp = gg.log(gg.clamp(ss, 1e-9, 1.0));
            return gg.sub(gg.dot(ff, ff), gg.sum(lp)).value();
        };

        // spot-check a few coordinates of each operand
        for (int rep = 0; rep < 3; ++rep) {
            std::size_t xi = rng() % xv.size();
            std::size_t ki = rng() % kv.size();
            auto evalx = [&] { return loss_value(xv, kv, bv); };
            double fx = oracle::fd_grad(evalx, &xv[xi]);
            double fk = oracle::fd_grad(evalx, &kv[ki]);
            EXPECT_LT(oracle::rel_err(x.grad()[xi], fx, 1e-2), 1e-4)
                << "trial " << trial << " x[" << xi << "]";
            EXPECT_LT(oracle::rel_err(k.grad()[ki], fk, 1e-2), 1e-4)
                << "trial " << trial << " k[" << ki << "]";
            ++checked;
        }
    }
    EXPECT_GE(checked, 20);
}

TEST(Backward, FullyConnectedConcatFiniteDifferences) {
    std::mt19937_64 rng(123);
    const int din = 6, dout = 4;
    auto xv = oracle::random_vector(rng, din);
    auto wv = oracle::random_vector(rng, static_cast<std::size_t>(din) * dout);
    auto bv = oracle::random_vector(rng, dout);
    auto cv = oracle::random_vector(rng, 3);

    auto loss_value = [&] {
        Graph g;
        Tensor y = g.fully_connected(Tensor({din}, xv), Tensor({din, dout}, wv), Tensor({dout}, bv));
        Tensor z = g.concat(g.relu(y), Tensor({3}, cv));
        return g.dot(z, z).value();
    };

    Graph g;
    Tensor x({din}, xv), w({din, dout}, wv), b({dout}, bv), c({3}, cv);
    Tensor y = g.fully_connected(x, w, b);
    Tensor z = g.concat(g.relu(y), c);
    g.backward(g.dot(z, z));

    for (int rep = 0; rep < 4; ++rep) {
        const std::size_t wi = rng() % wv.size();
        EXPECT_LT(oracle::rel_err(w.grad()[wi], oracle::fd_grad(loss_value, &wv[wi]), 1e-2), 1e-4);
        const std::size_t xi = rng() % xv.size();
        EXPECT_LT(oracle::rel_err(x.grad()[xi], oracle::fd_grad(loss_value, &xv[xi]), 1e-2), 1e-4);
    }
    for (int j = 0; j < dout; ++j)
        EXPECT_LT(oracle::rel_err(b.grad()[j], oracle::fd_grad(loss_value, &bv[j]), 1e-2), 1e-4);
    for (int j = 0; j < 3; ++j)
        EXPECT_LT(oracle::rel_err(c.grad()[j], oracle::fd_grad(loss_value, &cv[j]), 1e-2), 1e-4);
}

TEST(Graph, OpCounterGrowsWithRecordedWork) {
    Graph g;
    EXPECT_EQ(g.scalar_ops(), 0u);
    std::mt19937_64 rng(1);
    Tensor x({1, 4, 4}, oracle::random_vector(rng, 16));
    g.conv2d(x, Tensor::full({2, 1, 3, 3}, 0.1), Tensor({2}), 1, 1);
    const auto after_conv = g.scalar_ops();
    EXPECT_GT(after_conv, 0u);
    EXPECT_EQ(g.node_count(), 1u);
    g.relu(x);
    EXPECT_GT(g.scalar_ops(), after_conv);
    g.clear();
    EXPECT_EQ(g.node_count(), 0u);
    EXPECT_EQ(g.scalar_ops(), 0u);
}
