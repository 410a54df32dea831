#include "psp/autograd.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "psp/errors.hpp"
#include "psp/network.hpp"
#include "psp/rng.hpp"

using psp::Activation;
using psp::Parameter;
using psp::Tape;
using psp::Tensor;

namespace {

double rel_err(double a, double b, double floor = 1e-12) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace

TEST(Backward, SingleNeuronHalfSquaredPotential) {
    Parameter<double> w("w", Tensor<double>({1, 2}, {1.0, -2.0}));
    Parameter<double> b("b", Tensor<double>({1}, {0.1}));

    Tape<double> tape;
    auto y = tape.constant(Tensor<double>({1, 2}, {0.5, 0.25}));
    auto z = tape.dense(y, tape.parameter(w), tape.parameter(b));
    EXPECT_NEAR(tape.value(z)(0, 0), 0.1, 1e-16);

    tape.backward(tape.half_sum_squares(z));
    EXPECT_NEAR(b.grad[0], 0.1, 1e-15);
    EXPECT_NEAR(w.grad(0, 0), 0.05, 1e-15);
    EXPECT_NEAR(w.grad(0, 1), 0.025, 1e-15);
}

TEST(Backward, ConstantObjectiveZeroGrads) {
    Parameter<double> w("w", Tensor<double>({2, 2}, {1, 2, 3, 4}));
    Tape<double> tape;
    tape.parameter(w);  // on tape but unreachable from the objective
    auto c = tape.constant(Tensor<double>::scalar(3.0));
    tape.backward(c);
    for (std::size_t i = 0; i < w.grad.size(); ++i) EXPECT_EQ(w.grad[i], 0.0);
}

TEST(Backward, TwoLayerLinearChainCrossLayerTerm) {
    Parameter<double> w1("w1", Tensor<double>({1, 1}, {1.0}));
    Parameter<double> w2("w2", Tensor<double>({1, 1}, {2.0}));
    Parameter<double> b("b", Tensor<double>({1}, {0.0}));

    Tape<double> tape;
    auto x = tape.constant(Tensor<double>({1, 1}, {1.0}));
    auto z1 = tape.dense(x, tape.parameter(w1), tape.parameter(b));
    auto z2 = tape.dense(z1, tape.parameter(w2), tape.parameter(b));
    auto obj = tape.add(tape.half_sum_squares(z1), tape.half_sum_squares(z2));
    tape.backward(obj);

    EXPECT_EQ(w1.grad[0], 5.0);
    EXPECT_EQ(w2.grad[0], 2.0);
    // cross-layer share of the 5: z2 * dz2/dw1 = 2*2 = 4
    Parameter<double> w1b("w1", Tensor<double>({1, 1}, {1.0}));
    Tape<double> t2;
    auto x2 = t2.constant(Tensor<double>({1, 1}, {1.0}));
    Parameter<double> b2("b", Tensor<double>({1}, {0.0}));
    Parameter<double> w2b("w2", Tensor<double>({1, 1}, {2.0}));
    auto z1b = t2.dense(x2, t2.parameter(w1b), t2.parameter(b2));
    auto z2b = t2.dense(z1b, t2.parameter(w2b), t2.parameter(b2));
    t2.backward(t2.half_sum_squares(z2b));
    EXPECT_EQ(w1b.grad[0], 4.0);
}

TEST(Backward, DeeperPenaltyIgnoresLaterLayers) {
    // gradient of layer-1's half-squared potential w.r.t. layer-2 parameters
    // is exactly zero
    Parameter<double> w1("w1", Tensor<double>({1, 1}, {1.5}));
    Parameter<double> w2("w2", Tensor<double>({1, 1}, {-2.5}));
    Parameter<double> b1("b1", Tensor<double>({1}, {0.25}));
    Parameter<double> b2("b2", Tensor<double>({1}, {-0.75}));

    Tape<double> tape;
    auto x = tape.constant(Tensor<double>({1, 1}, {0.8}));
    auto z1 = tape.dense(x, tape.parameter(w1), tape.parameter(b1));
    auto y1 = tape.activation(z1, Activation::tanh);
    auto z2 = tape.dense(y1, tape.parameter(w2), tape.parameter(b2));
    (void)z2;
    tape.backward(tape.half_sum_squares(z1));

    EXPECT_EQ(w2.grad[0], 0.0);
    EXPECT_EQ(b2.grad[0], 0.0);
    EXPECT_NE(w1.grad[0], 0.0);
}

TEST(Backward, NonScalarObjectiveRejected) {
    Tape<double> tape;
    auto v = tape.constant(Tensor<double>({2}, {1.0, 2.0}));
    EXPECT_THROW(tape.backward(v), psp::ContractError);
}

TEST(Backward, MultiplePathsSum) {
    Parameter<double> w("w", Tensor<double>({1, 1}, {3.0}));
    Tape<double> tape;
    auto node = tape.parameter(w);
    auto doubled = tape.add(node, node);  // d/dw (w + w) = 2
    auto summed = tape.half_sum_squares(doubled);  // ½(2w)² -> grad 4w = 12
    tape.backward(summed);
    EXPECT_EQ(w.grad[0], 12.0);
}

TEST(Backward, GradientLinearity) {
    std::mt19937_64 g(29);
    for (int trial = 0; trial < 5; ++trial) {
        psp::Network<double> net = psp::build_mlp<double>({3, 4, 2});
        psp::init_params(net, 100 + trial);
        Tensor<double> batch({2, 3});
        for (std::size_t i = 0; i < batch.size(); ++i) batch[i] = psp::uniform(g, -1.0, 1.0);
        std::vector<int> labels = {0, 1};

        auto grads_of = [&](int which) {
            psp::zero_grads(net.params);
            Tape<double> tape;
            auto rec = psp::forward_record(net, tape, batch);
            auto loss = tape.cross_entropy(rec.logits, labels);
            auto pen = tape.half_sum_squares(rec.traces[0].z);
            tape.backward(which == 0 ? loss : which == 1 ? pen : tape.add(loss, pen));
            std::vector<double> flat;
            for (const auto& p : net.params) {
                for (std::size_t i = 0; i < p.grad.size(); ++i) flat.push_back(p.grad[i]);
            }
            return flat;
        };
        const auto ga = grads_of(0);
        const auto gb = grads_of(1);
        const auto gsum = grads_of(2);
        for (std::size_t i = 0; i < gsum.size(); ++i) {
            EXPECT_NEAR(gsum[i], ga[i] + gb[i], 1e-12);
        }
    }
}

TEST(Backward, DenseMatchesFiniteDifferences) {
    std::mt19937_64 g(31);
    const Activation acts[] = {Activation::identity, Activation::relu, Activation::tanh,
                               Activation::sigmoid};
    for (int trial = 0; trial < 12; ++trial) {
        std::vector<int> sizes;
        const int depth = 1 + static_cast<int>(psp::uniform_index(g, 3));
        sizes.push_back(1 + static_cast<int>(psp::uniform_index(g, 8)));
        for (int d = 0; d < depth; ++d) {
            sizes.push_back(1 + static_cast<int>(psp::uniform_index(g, 8)));
        }
        psp::Network<double> net = psp::build_mlp<double>(sizes);
        for (auto& layer : net.layers) layer.act = acts[psp::uniform_index(g, 4)];
        psp::init_params(net, 500 + trial);

        Tensor<double> batch({2, sizes.front()});
        for (std::size_t i = 0; i < batch.size(); ++i) batch[i] = psp::uniform(g, -1.0, 1.0);
        std::vector<int> labels = {0, sizes.back() - 1};

        auto objective = [&]() {
            Tape<double> tape;
            auto rec = psp::forward_record(net, tape, batch);
            return tape.value(tape.cross_entropy(rec.logits, labels))[0];
        };
        std::vector<Parameter<double>*> ptrs;
        for (auto& p : net.params) ptrs.push_back(&p);
        auto fd = psp::finite_diff_grad<double>(objective, ptrs, 1e-5);

        psp::zero_grads(net.params);
        Tape<double> tape;
        auto rec = psp::forward_record(net, tape, batch);
        tape.backward(tape.cross_entropy(rec.logits, labels));
        for (std::size_t i = 0; i < ptrs.size(); ++i) {
            for (std::size_t j = 0; j < ptrs[i]->grad.size(); ++j) {
                const double a = ptrs[i]->grad[j], b = fd[i][j];
                EXPECT_LT(std::abs(a - b), 1e-4 * std::max({std::abs(a), std::abs(b), 1.0}))
                    << "trial " << trial << " param " << i << " entry " << j;
            }
        }
    }
}

TEST(Backward, ConvPoolFlattenMatchesFiniteDifferences) {
    std::mt19937_64 g(37);
    psp::Network<double> net({psp::LayerSpec::conv_layer(1, 2, 3, 3, Activation::relu),
                              psp::LayerSpec::maxpool_layer(2, 2),
                              psp::LayerSpec::flatten_layer(),
                              psp::LayerSpec::dense_layer(18, 4, Activation::identity)},
                             {1, 8, 8});
    psp::init_params(net, 77);
    Tensor<double> batch({2, 1, 8, 8});
    for (std::size_t i = 0; i < batch.size(); ++i) batch[i] = psp::uniform(g, 0.0, 1.0);
    std::vector<int> labels = {1, 3};

    auto objective = [&]() {
        Tape<double> tape;
        auto rec = psp::forward_record(net, tape, batch);
        return tape.value(tape.cross_entropy(rec.logits, labels))[0];
    };
    std::vector<Parameter<double>*> ptrs;
    for (auto& p : net.params) ptrs.push_back(&p);
    auto fd = psp::finite_diff_grad<double>(objective, ptrs, 1e-5);

    psp::zero_grads(net.params);
    Tape<double> tape;
    auto rec = psp::forward_record(net, tape, batch);
    tape.backward(tape.cross_entropy(rec.logits, labels));
    for (std::size_t i = 0; i < ptrs.size(); ++i) {
        for (std::size_t j = 0; j < ptrs[i]->grad.size(); ++j) {
            const double a = ptrs[i]->grad[j], b = fd[i][j];
            EXPECT_LT(std::abs(a - b), 1e-4 * std::max({std::abs(a), std::abs(b), 1.0}));
        }
    }
}

TEST(Backward, GradAtExposesInputGradients) {
    Tape<double> tape;
    auto x = tape.constant(Tensor<double>({1, 2}, {3.0, -4.0}));
    auto obj = tape.half_sum_squares(x);
    tape.backward(obj);
    const Tensor<double>& gx = tape.grad_at(x);
    EXPECT_EQ(gx[0], 3.0);
    EXPECT_EQ(gx[1], -4.0);
}

TEST(FiniteDiff, QuadraticIsExact) {
    Parameter<double> theta("t", Tensor<double>({1}, {3.0}));
    auto f = [&]() { return theta.value[0] * theta.value[0]; };
    auto g = psp::finite_diff_grad<double>(f, {&theta}, 1e-4);
    EXPECT_NEAR(g[0][0], 6.0, 1e-9);

    theta.value[0] = 1.0;
    auto h = [&]() { return 0.5 * theta.value[0] * theta.value[0]; };
    auto g2 = psp::finite_diff_grad<double>(h, {&theta}, 1e-4);
    EXPECT_NEAR(g2[0][0], 1.0, 1e-10);
}

TEST(FiniteDiff, ConstantFunctionIsZero) {
    Parameter<double> theta("t", Tensor<double>({3}, {1.0, 2.0, 3.0}));
    auto f = [&]() { return 42.0; };
    auto g = psp::finite_diff_grad<double>(f, {&theta}, 1e-4);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(g[0][i], 0.0);
}

TEST(FiniteDiff, EpsilonContract) {
    Parameter<double> theta("t", Tensor<double>({1}, {1.0}));
    auto f = [&]() { return theta.value[0]; };
    EXPECT_THROW(psp::finite_diff_grad<double>(f, {&theta}, 0.0), psp::ContractError);
}

TEST(ZeroGrads, ClearsAndPreservesShape) {
    std::vector<Parameter<double>> params;
    params.emplace_back("a", Tensor<double>({2, 3}));
    params.emplace_back("b", Tensor<double>({4}));
    for (auto& p : params) {
        for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] = 7.0;
    }
    psp::zero_grads(params);
    for (const auto& p : params) {
        EXPECT_EQ(p.grad.shape(), p.value.shape());
        for (std::size_t i = 0; i < p.grad.size(); ++i) EXPECT_EQ(p.grad[i], 0.0);
    }
    psp::zero_grads(params);  // idempotent
    for (const auto& p : params) {
        for (std::size_t i = 0; i < p.grad.size(); ++i) EXPECT_EQ(p.grad[i], 0.0);
    }
}

TEST(CrossEntropy, UniformLogits) {
    Tape<double> tape;
    auto logits = tape.constant(Tensor<double>({1, 10}));
    auto loss = tape.cross_entropy(logits, {4});
    EXPECT_NEAR(tape.value(loss)[0], std::log(10.0), 1e-12);
}

TEST(CrossEntropy, ConfidentCorrectLogit) {
    Tensor<double> row({1, 3});
    row(0, 1) = 50.0;
    Tape<double> tape;
    auto loss = tape.cross_entropy(tape.constant(row), {1});
    EXPECT_LT(tape.value(loss)[0], 1e-9);
}

TEST(CrossEntropy, BatchMeanInvariance) {
    Tensor<double> one({1, 4}, {0.3, -0.2, 1.1, 0.0});
    Tensor<double> two({2, 4}, {0.3, -0.2, 1.1, 0.0, 0.3, -0.2, 1.1, 0.0});
    Tape<double> ta, tb;
    const double la = ta.value(ta.cross_entropy(ta.constant(one), {2}))[0];
    const double lb = tb.value(tb.cross_entropy(tb.constant(two), {2, 2}))[0];
    EXPECT_NEAR(la, lb, 1e-15);
}

TEST(CrossEntropy, OutOfRangeLabel) {
    Tape<double> tape;
    auto logits = tape.constant(Tensor<double>({1, 3}));
    EXPECT_THROW(tape.cross_entropy(logits, {3}), psp::DataError);
    Tape<double> t2;
    auto l2 = t2.constant(Tensor<double>({1, 3}));
    EXPECT_THROW(t2.cross_entropy(l2, {-1}), psp::DataError);
}

TEST(CrossEntropy, LargeLogitsStayFinite) {
    Tensor<double> row({1, 3}, {1000.0, -1000.0, 999.0});
    Tape<double> tape;
    const double loss = tape.value(tape.cross_entropy(tape.constant(row), {2}))[0];
    EXPECT_TRUE(std::isfinite(loss));
    EXPECT_NEAR(loss, 1.0, 0.5);  // logit gap of 1 dominates
}

TEST(TapeOps, ScaleAndAddN) {
    Tape<double> tape;
    auto a = tape.constant(Tensor<double>::scalar(2.0));
    auto b = tape.constant(Tensor<double>::scalar(3.0));
    auto c = tape.constant(Tensor<double>::scalar(5.0));
    auto s = tape.add_n({a, b, c});
    EXPECT_EQ(tape.value(s)[0], 10.0);
    auto scaled = tape.scale(s, 0.5);
    EXPECT_EQ(tape.value(scaled)[0], 5.0);
    tape.backward(scaled);
    EXPECT_EQ(tape.grad_at(a)[0], 0.5);
    EXPECT_EQ(tape.grad_at(b)[0], 0.5);
}

TEST(TapeOps, MatmulBackward) {
    Parameter<double> a("a", Tensor<double>({2, 2}, {1, 2, 3, 4}));
    Parameter<double> b("b", Tensor<double>({2, 1}, {5, 6}));
    Tape<double> tape;
    auto prod = tape.matmul(tape.parameter(a), tape.parameter(b));
    tape.backward(tape.half_sum_squares(prod));
    // c = [17, 39]; dA = c * b^T; dB = A^T * c
    EXPECT_EQ(a.grad(0, 0), 17.0 * 5.0);
    EXPECT_EQ(a.grad(0, 1), 17.0 * 6.0);
    EXPECT_EQ(a.grad(1, 0), 39.0 * 5.0);
    EXPECT_EQ(b.grad(0, 0), 1.0 * 17.0 + 3.0 * 39.0);
    EXPECT_EQ(b.grad(1, 0), 2.0 * 17.0 + 4.0 * 39.0);
}

TEST(TapeOps, HalfSumSquaresBatchMean) {
    Tape<double> tape;
    Tensor<double> z({2, 2}, {1, 2, 1, 2});  // two identical samples
    auto node = tape.half_sum_squares_batchmean(tape.constant(z));
    EXPECT_NEAR(tape.value(node)[0], 0.5 * (1.0 + 4.0), 1e-15);
}
