#include <gtest/gtest.h>

#include "fd_check.hpp"
#include "typlab/nn.hpp"

using namespace typlab;
using namespace typlab::nn;

namespace {

// Scalar readout so every output element influences the loss with a
// distinct weight.
double weighted_sum(const Tensor<double>& y, const Tensor<double>& w) {
    double acc = 0;
    for (std::size_t i = 0; i < y.numel(); ++i) acc += y.data[i] * w.data[i];
    return acc;
}

Tensor<double> random_tensor(std::vector<int> shape, Rng& rng) {
    return Tensor<double>::randn(std::move(shape), rng);
}

}  // namespace

TEST(Conv2d, ShapesStride1And2) {
    Rng rng(1);
    Conv2d<double> c1(3, 5, 3, 1);
    c1.init(rng);
    EXPECT_EQ(c1.forward(random_tensor({3, 8, 8}, rng)).shape, (std::vector<int>{5, 8, 8}));
    Conv2d<double> c2(3, 5, 3, 2);
    c2.init(rng);
    EXPECT_EQ(c2.forward(random_tensor({3, 8, 8}, rng)).shape, (std::vector<int>{5, 4, 4}));
    EXPECT_EQ(c2.forward(random_tensor({3, 1, 1}, rng)).shape, (std::vector<int>{5, 1, 1}));
    Conv2d<double> c3(4, 2, 1, 1, 0);
    c3.init(rng);
    EXPECT_EQ(c3.forward(random_tensor({4, 6, 6}, rng)).shape, (std::vector<int>{2, 6, 6}));
}

TEST(Conv2d, GradMatchesFiniteDifference) {
    Rng rng(2);
    for (int stride : {1, 2}) {
        Conv2d<double> conv(2, 3, 3, stride);
        conv.init(rng);
        Tensor<double> x = random_tensor({2, 6, 6}, rng);
        Tensor<double> readout = random_tensor(conv.forward(x).shape, rng);

        auto loss = [&] { return weighted_sum(conv.forward(x), readout); };
        ParamList<double> params;
        conv.collect(params, "conv");
        zero_grads(params);
        conv.forward(x);
        const Tensor<double> gx = conv.backward(readout);

        const auto prep = fdcheck::check_params(loss, params);
        EXPECT_LT(prep.max_rel_err, 1e-6) << "stride " << stride;
        const auto irep = fdcheck::check_input(loss, x, gx);
        EXPECT_LT(irep.max_rel_err, 1e-6) << "stride " << stride;
    }
}

TEST(GroupNorm, GradMatchesFiniteDifference) {
    Rng rng(3);
    GroupNorm<double> gn(6, 3);
    Tensor<double> x = random_tensor({6, 4, 4}, rng);
    for (auto& v : gn.gamma.data) v = rng.uniform(0.5, 1.5);
    for (auto& v : gn.beta.data) v = rng.uniform(-0.3, 0.3);
    Tensor<double> readout = random_tensor({6, 4, 4}, rng);

    auto loss = [&] { return weighted_sum(gn.forward(x), readout); };
    ParamList<double> params;
    gn.collect(params, "gn");
    zero_grads(params);
    gn.forward(x);
    const Tensor<double> gx = gn.backward(readout);

    EXPECT_LT(fdcheck::check_params(loss, params).max_rel_err, 1e-5);
    EXPECT_LT(fdcheck::check_input(loss, x, gx).max_rel_err, 1e-5);
}

TEST(Activations, GradMatchesFiniteDifference) {
    Rng rng(4);
    Tensor<double> x = random_tensor({3, 5, 5}, rng);
    Tensor<double> readout = random_tensor({3, 5, 5}, rng);

    SiLU<double> silu;
    auto loss1 = [&] { return weighted_sum(silu.forward(x), readout); };
    silu.forward(x);
    EXPECT_LT(fdcheck::check_input(loss1, x, silu.backward(readout)).max_rel_err, 1e-6);

    LeakyReLU<double> lrelu;
    auto loss2 = [&] { return weighted_sum(lrelu.forward(x), readout); };
    lrelu.forward(x);
    EXPECT_LT(fdcheck::check_input(loss2, x, lrelu.backward(readout)).max_rel_err, 1e-5);
}

TEST(Linear, GradMatchesFiniteDifference) {
    Rng rng(5);
    Linear<double> lin(7, 4);
    lin.init(rng);
    Tensor<double> x = random_tensor({7}, rng);
    Tensor<double> readout = random_tensor({4}, rng);

    auto loss = [&] { return weighted_sum(lin.forward(x), readout); };
    ParamList<double> params;
    lin.collect(params, "lin");
    zero_grads(params);
    lin.forward(x);
    const Tensor<double> gx = lin.backward(readout);
    EXPECT_LT(fdcheck::check_params(loss, params).max_rel_err, 1e-6);
    EXPECT_LT(fdcheck::check_input(loss, x, gx).max_rel_err, 1e-6);
}

TEST(Resamplers, ExactAdjoints) {
    Rng rng(6);
    // Upsample and DepthToSpace are pure duplication/permutation ops, so
    // <Ax, g> == <x, A^T g> must hold exactly.
    Upsample2x<double> up;
    Tensor<double> x = random_tensor({3, 4, 4}, rng);
    Tensor<double> y = up.forward(x);
    Tensor<double> gy = random_tensor(y.shape, rng);
    Tensor<double> gx = up.backward(gy);
    double lhs = 0, rhs = 0;
    for (std::size_t i = 0; i < y.numel(); ++i) lhs += y.data[i] * gy.data[i];
    for (std::size_t i = 0; i < x.numel(); ++i) rhs += x.data[i] * gx.data[i];
    EXPECT_NEAR(lhs, rhs, 1e-9);

    DepthToSpace2<double> d2s;
    Tensor<double> x2 = random_tensor({8, 3, 3}, rng);
    Tensor<double> y2 = d2s.forward(x2);
    EXPECT_EQ(y2.shape, (std::vector<int>{2, 6, 6}));
    Tensor<double> gy2 = random_tensor(y2.shape, rng);
    Tensor<double> gx2 = d2s.backward(gy2);
    lhs = rhs = 0;
    for (std::size_t i = 0; i < y2.numel(); ++i) lhs += y2.data[i] * gy2.data[i];
    for (std::size_t i = 0; i < x2.numel(); ++i) rhs += x2.data[i] * gx2.data[i];
    EXPECT_NEAR(lhs, rhs, 1e-9);
}

TEST(CompositeNet, ChainedGradThroughAllLayerTypes) {
    Rng rng(7);
    Conv2d<double> conv1(2, 4, 3, 2);
    conv1.init(rng);
    GroupNorm<double> gn(4, 2);
    SiLU<double> act;
    Conv2d<double> conv2(4, 4, 3, 1);
    conv2.init(rng);
    Upsample2x<double> up;
    Conv2d<double> conv3(4, 2, 3, 1);
    conv3.init(rng);

    Tensor<double> x = random_tensor({2, 6, 6}, rng);

    auto run = [&](const Tensor<double>& in) {
        return conv3.forward(up.forward(conv2.forward(act.forward(gn.forward(conv1.forward(in))))));
    };
    Tensor<double> readout = random_tensor(run(x).shape, rng);
    auto loss = [&] { return weighted_sum(run(x), readout); };

    ParamList<double> params;
    conv1.collect(params, "c1");
    gn.collect(params, "gn");
    conv2.collect(params, "c2");
    conv3.collect(params, "c3");
    zero_grads(params);
    run(x);
    Tensor<double> g = conv3.backward(readout);
    g = up.backward(g);
    g = conv2.backward(g);
    g = act.backward(g);
    g = gn.backward(g);
    const Tensor<double> gx = conv1.backward(g);

    EXPECT_LT(fdcheck::check_params(loss, params).max_rel_err, 1e-5);
    EXPECT_LT(fdcheck::check_input(loss, x, gx).max_rel_err, 1e-5);
}

TEST(AdamOptimizer, ConvergesOnQuadratic) {
    Tensor<double> p({8});
    Tensor<double> g({8});
    Rng rng(8);
    Tensor<double> target = random_tensor({8}, rng);
    ParamList<double> params{{"p", &p, &g}};
    Adam<double> opt(0.05);
    for (int it = 0; it < 500; ++it) {
        for (std::size_t i = 0; i < 8; ++i) g.data[i] = 2 * (p.data[i] - target.data[i]);
        opt.step(params);
        g.zero();
    }
    for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(p.data[i], target.data[i], 1e-3);
}

TEST(TimestepEmbedding, DistinctAndBounded) {
    const auto e1 = timestep_embedding<double>(1, 64);
    const auto e2 = timestep_embedding<double>(999, 64);
    double diff = 0;
    for (std::size_t i = 0; i < e1.numel(); ++i) {
        EXPECT_LE(std::abs(e1.data[i]), 1.0);
        diff += std::abs(e1.data[i] - e2.data[i]);
    }
    EXPECT_GT(diff, 1.0);
}
