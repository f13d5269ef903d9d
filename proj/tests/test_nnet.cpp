#include <gtest/gtest.h>

#include <cmath>
#include <sstream>
#include <vector>

#include "dnnc/nnet.hpp"
#include "gradcheck.hpp"

using namespace dnnc;
using namespace dnnc::nn;

namespace {

Network tiny_dense() {
    Network net;
    net.input = {2, 1};
    Dense h(2, 2, Activation::relu);
    h.weights << 1.0, -1.0, 0.5, 2.0;
    h.biases << 0.1, -0.2;
    Dense out(2, 1, Activation::linear, 0.0, true);
    out.weights << 3.0, -1.0;
    out.biases << 0.25;
    net.layers.emplace_back(h);
    net.layers.emplace_back(out);
    return net;
}

CnnOptions small_cnn() {
    CnnOptions o;
    o.kernel1 = 5;
    o.kernel2 = 3;
    o.filters1 = 3;
    o.filters2 = 2;
    o.dense_width = 4;
    o.l2 = 0.01;
    return o;
}

}  // namespace

TEST(Dense, ForwardMatchesHandComputation) {
    const Network net = tiny_dense();
    const std::vector<double> x{0.5, 0.2};
    // hidden: relu(0.5-0.2+0.1)=0.4, relu(0.25+0.4-0.2)=0.45
    EXPECT_NEAR(forward(net, x), 3.0 * 0.4 - 0.45 + 0.25, 1e-15);
    const std::vector<double> y{-1.0, 0.3};
    // hidden: relu(-1.3+0.1)=0, relu(-0.5+0.6-0.2)=0
    EXPECT_NEAR(forward(net, y), 0.25, 1e-15);
}

TEST(Conv1D, ForwardMatchesDirectConvolution) {
    Rng rng = make_rng(3);
    Conv1D conv(2, 9, 3, 4, Activation::linear, 0.0);
    conv.init(rng);
    for (int f = 0; f < 3; ++f) conv.biases(f) = 0.1 * f;
    Matrix x(18, 2);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = std_normal(rng);
    Matrix out;
    conv.forward(x, out, nullptr);
    ASSERT_EQ(out.rows(), 3 * 6);
    for (int b = 0; b < 2; ++b)
        for (int f = 0; f < 3; ++f)
            for (int t = 0; t < 6; ++t) {
                double s = conv.biases(f);
                for (int c = 0; c < 2; ++c)
                    for (int k = 0; k < 4; ++k) s += conv.weights(f, c * 4 + k) * x(c * 9 + t + k, b);
                EXPECT_NEAR(out(f * 6 + t, b), s, 1e-12);
            }
}

TEST(Conv1D, KernelLongerThanInputThrows) {
    EXPECT_THROW(Conv1D(1, 4, 2, 5, Activation::relu, 0.0), ShapeError);
}

TEST(MaxPool1D, PicksWindowMaxima) {
    MaxPool1D pool{1, 6, 2, 2};
    Matrix x(6, 1);
    x << 1, 3, -2, -5, 4, 4;
    Matrix out;
    pool.forward(x, out, nullptr);
    ASSERT_EQ(out.rows(), 3);
    EXPECT_EQ(out(0, 0), 3);
    EXPECT_EQ(out(1, 0), -2);
    EXPECT_EQ(out(2, 0), 4);
}

TEST(BatchNorm, InferenceModeIsAffine) {
    Rng rng = make_rng(5);
    BatchNorm bn(3, 4);
    for (int c = 0; c < 3; ++c) {
        bn.gamma(c) = 0.5 + uniform01(rng);
        bn.beta(c) = std_normal(rng);
        bn.running_mean(c) = std_normal(rng);
        bn.running_var(c) = 0.1 + uniform01(rng);
    }
    for (int trial = 0; trial < 20; ++trial) {
        Matrix a(12, 1), b(12, 1);
        for (int i = 0; i < 12; ++i) {
            a(i, 0) = 3.0 * std_normal(rng);
            b(i, 0) = 3.0 * std_normal(rng);
        }
        const double w = std_normal(rng);
        Matrix fa, fb, fmix;
        bn.forward(a, fa, Mode::inference, nullptr);
        bn.forward(b, fb, Mode::inference, nullptr);
        bn.forward(w * a + (1.0 - w) * b, fmix, Mode::inference, nullptr);
        EXPECT_LT((fmix - (w * fa + (1.0 - w) * fb)).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(BatchNorm, TrainingModeStandardizesEachChannel) {
    Rng rng = make_rng(6);
    BatchNorm bn(2, 5);
    Matrix x(10, 8);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = 10.0 + 4.0 * std_normal(rng);
    Matrix out;
    bn.forward(x, out, Mode::training, nullptr);
    for (int c = 0; c < 2; ++c) {
        auto blk = out.middleRows(c * 5, 5).array();
        const double m = blk.mean();
        EXPECT_NEAR(m, 0.0, 1e-12);
        EXPECT_NEAR((blk - m).square().mean(), 1.0, 1e-4);
    }
}

TEST(Dropout, IdentityAtInference) {
    Rng rng = make_rng(1);
    Dropout d{5, 0.5};
    Matrix x = Matrix::Random(5, 3), out;
    d.forward(x, out, Mode::inference, &rng, nullptr);
    EXPECT_EQ(out, x);
    d.forward(x, out, Mode::training, &rng, nullptr);
    for (Eigen::Index i = 0; i < x.size(); ++i)
        EXPECT_TRUE(out.data()[i] == 0.0 || std::abs(out.data()[i] - 2.0 * x.data()[i]) < 1e-15);
}

TEST(Gradient, DenseNetworkMatchesFiniteDifferences) {
    FfnOptions o;
    o.hidden = {5, 4};
    o.dropout = 0.0;
    o.fit_intercept = true;
    int checked = 0;
    for (std::uint64_t seed = 1; checked < 10 && seed < 200; ++seed) {
        Network net = build_ffn(3, seed, o);
        std::get<Dense>(net.layers[0]).l2 = 0.05;
        Rng rng = make_rng(seed, 9);
        const auto [X, z] = testing_util::random_batch(net.input.size(), 6, rng);
        if (!testing_util::is_smooth(net, X, 1e-4)) continue;
        EXPECT_LT(testing_util::gradient_error(net, X, z), 1e-4) << "seed " << seed;
        ++checked;
    }
    EXPECT_EQ(checked, 10);
}

TEST(Gradient, ConvolutionalNetworkMatchesFiniteDifferences) {
    int checked = 0;
    for (std::uint64_t seed = 1; checked < 10 && seed < 400; ++seed) {
        Network net = build_cnn(20, seed, small_cnn());
        Rng rng = make_rng(seed, 9);
        const auto [X, z] = testing_util::random_batch(net.input.size(), 5, rng);
        if (!testing_util::is_smooth(net, X, 1e-4)) continue;
        EXPECT_LT(testing_util::gradient_error(net, X, z), 1e-4) << "seed " << seed;
        ++checked;
    }
    EXPECT_EQ(checked, 10);
}

TEST(Gradient, L2PenaltyGradientIsTwiceLambdaW) {
    Network net = build_ffn(2, 4, FfnOptions{{3}, 0.0, false});
    auto& out = std::get<Dense>(net.layers.back());
    out.weights.setZero();
    std::get<Dense>(net.layers[0]).l2 = 0.3;
    Matrix X = Matrix::Random(2, 4);
    Vector z = Vector::Zero(4);
    loss_and_gradient(net, X, z, nullptr);
    const auto& h = std::get<Dense>(net.layers[0]);
    // zero output weights: the data term has no gradient on the hidden layer
    EXPECT_LT((h.grad_weights - 2.0 * 0.3 * h.weights).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Basis, ExtractedBasisReproducesPredictions) {
    Network net = build_ffn(4, 11, FfnOptions{{8, 6}, 0.5, true});
    std::get<Dense>(net.layers.back()).biases(0) = 0.7;
    Matrix X = Matrix::Random(30, 4);
    const Matrix B = extract_basis(net, X);
    ASSERT_EQ(B.cols(), 6);
    const Vector beta = std::get<Dense>(net.layers.back()).weights.row(0).transpose();
    const Vector direct = predict(net, X);
    EXPECT_LT((B * beta + Vector::Constant(30, net.output_intercept()) - direct).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_TRUE((B.array() >= 0.0).all());
}

TEST(Basis, CnnBasisHasDenseWidth) {
    const Network net = build_cnn(40, 2, small_cnn());
    EXPECT_EQ(net.basis_size(), 4);
    Matrix X = Matrix::Random(7, 40);
    EXPECT_EQ(extract_basis(net, X).cols(), 4);
    EXPECT_DOUBLE_EQ(net.output_intercept(), 0.0);
}

TEST(Network, WrongInputWidthThrows) {
    const Network net = build_ffn(3, 1);
    Matrix X = Matrix::Random(5, 4);
    EXPECT_THROW(predict(net, X), ShapeError);
    EXPECT_THROW(extract_basis(net, X), ShapeError);
}

TEST(Network, ValidateRejectsNonlinearOutput) {
    Network net;
    net.input = {2, 1};
    net.layers.emplace_back(Dense(2, 1, Activation::relu));
    EXPECT_THROW(validate(net), ShapeError);
}

TEST(Network, JsonRoundTripIsExact) {
    Network net = build_cnn(24, 8, small_cnn());
    auto& bn = std::get<BatchNorm>(net.layers[1]);
    bn.running_mean.setConstant(0.3);
    bn.running_var.setConstant(1.7);
    const Network back = network_from_json(nlohmann::json::parse(to_json(net).dump()));
    Matrix X = Matrix::Random(5, 24);
    EXPECT_EQ(predict(net, X), predict(back, X));
}

TEST(Training, ReducesValidationLossAndIsDeterministic) {
    Rng rng = make_rng(21);
    Matrix X(300, 2);
    Vector z(300);
    for (int i = 0; i < 300; ++i) {
        X(i, 0) = uniform01(rng);
        X(i, 1) = uniform01(rng);
        z(i) = std::sin(3.0 * X(i, 0)) + X(i, 1) * X(i, 1) + 0.05 * std_normal(rng);
    }
    TrainConfig cfg;
    cfg.epochs = 150;
    cfg.learning_rate = 1e-2;
    cfg.batch_size = 32;
    cfg.seed = 4;
    FfnOptions o{{16, 16}, 0.0, true};
    const auto a = train(build_ffn(2, 3, o), X, z, cfg);
    const auto b = train(build_ffn(2, 3, o), X, z, cfg);
    EXPECT_LT(a.best_validation_loss, 0.1 * a.initial_validation_loss);
    EXPECT_GE(a.best_epoch, 1);
    EXPECT_EQ(predict(a.net, X), predict(b.net, X));
}

TEST(Training, NonFiniteResponseRejected) {
    Matrix X = Matrix::Random(10, 2);
    Vector z = Vector::Zero(10);
    z(3) = std::nan("");
    EXPECT_THROW(train(build_ffn(2, 1), X, z, TrainConfig{}), DomainError);
}

TEST(Training, ConfigValidation) {
    TrainConfig cfg;
    cfg.epochs = 0;
    EXPECT_THROW(cfg.validate(), DomainError);
    cfg.epochs = 5;
    cfg.validation_fraction = 1.0;
    EXPECT_THROW(cfg.validate(), DomainError);
    cfg.validation_fraction = 0.1;
    cfg.min_epochs = -1;
    EXPECT_THROW(cfg.validate(), DomainError);
}

TEST(Training, PatienceWaitsForWarmUp) {
    // Pure-noise responses: validation loss rarely improves, so only the
    // warm-up keeps training going.
    Rng rng = make_rng(9);
    Matrix X(60, 2);
    Vector z(60);
    for (int i = 0; i < 60; ++i) {
        X(i, 0) = std_normal(rng);
        X(i, 1) = std_normal(rng);
        z(i) = std_normal(rng);
    }
    TrainConfig cfg;
    cfg.epochs = 100;
    cfg.patience = 1;
    cfg.learning_rate = 0.05;
    cfg.min_epochs = 40;
    const auto r = train(build_ffn(2, 5, FfnOptions{{8}, 0.0, false}), X, z, cfg);
    EXPECT_GE(r.validation_loss.size(), 40u);
    EXPECT_LE(r.best_validation_loss, r.initial_validation_loss);
    cfg.min_epochs = 0;
    const auto early = train(build_ffn(2, 5, FfnOptions{{8}, 0.0, false}), X, z, cfg);
    EXPECT_LT(early.validation_loss.size(), r.validation_loss.size());
}
