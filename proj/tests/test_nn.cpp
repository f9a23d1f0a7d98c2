#include <gtest/gtest.h>

#include <imitdrive/nn.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace imitdrive;

namespace {

// Sum of w .* output as a scalar loss.
double weighted_output(const DenseNet& net, const Eigen::MatrixXd& x, const Eigen::MatrixXd& w) {
  return net.predict(x).cwiseProduct(w).sum();
}

void check_gradients(DenseNet net, const Eigen::MatrixXd& x, const Eigen::MatrixXd& w) {
  const auto g = net.backward(net.forward(x), w);
  const double h = 1e-6;
  for (std::size_t k = 0; k < net.layers().size(); ++k) {
    auto& W = net.layers()[k].weights;
    for (Eigen::Index i = 0; i < W.size(); i += 7) {
      const double keep = W.data()[i];
      W.data()[i] = keep + h;
      const double fp = weighted_output(net, x, w);
      W.data()[i] = keep - h;
      const double fm = weighted_output(net, x, w);
      W.data()[i] = keep;
      const double fd = (fp - fm) / (2 * h);
      EXPECT_NEAR(g.weights[k].data()[i], fd, 1e-6 * std::max(1.0, std::abs(fd))) << "layer " << k << " w" << i;
    }
    auto& b = net.layers()[k].biases;
    for (Eigen::Index i = 0; i < b.size(); ++i) {
      const double keep = b[i];
      b[i] = keep + h;
      const double fp = weighted_output(net, x, w);
      b[i] = keep - h;
      const double fm = weighted_output(net, x, w);
      b[i] = keep;
      EXPECT_NEAR(g.biases[k][i], (fp - fm) / (2 * h), 1e-6 * std::max(1.0, std::abs(fp - fm) / (2 * h)));
    }
  }
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("imitdrive_nn_" + name)).string();
}

}  // namespace

TEST(Activations, Values) {
  EXPECT_EQ(relu(-1.0), 0.0);
  EXPECT_EQ(relu(2.5), 2.5);
  EXPECT_DOUBLE_EQ(softsign(1.0), 0.5);
  EXPECT_DOUBLE_EQ(softsign(-3.0), -0.75);
  EXPECT_DOUBLE_EQ(variance_act(0.0), 1.0 / 32.0);
  EXPECT_LE(variance_act(50.0), 1.0 / 16.0);
  EXPECT_GT(variance_act(-50.0), 0.0);
  const Eigen::MatrixXd s = softmax((Eigen::MatrixXd(3, 1) << 1000.0, 1000.0, 1000.0).finished());
  EXPECT_NEAR(s(0, 0), 1.0 / 3.0, 1e-15);
}

TEST(Activations, DerivativesMatchFiniteDifferences) {
  for (double x : {-2.0, -0.3, 0.4, 1.7}) {
    const double h = 1e-6;
    EXPECT_NEAR(softsign_grad(x), (softsign(x + h) - softsign(x - h)) / (2 * h), 1e-8);
    EXPECT_NEAR(variance_act_grad(x), (variance_act(x + h) - variance_act(x - h)) / (2 * h), 1e-8);
  }
}

TEST(DenseNet, ForwardMatchesHandComputation) {
  DenseLayer l1{(Eigen::MatrixXd(2, 2) << 1.0, -1.0, 0.5, 2.0).finished(), Eigen::Vector2d(0.0, -1.0),
                Activation::relu};
  DenseLayer l2{(Eigen::MatrixXd(1, 2) << 2.0, 3.0).finished(), Eigen::VectorXd::Constant(1, 0.5),
                Activation::softsign};
  const DenseNet net({l1, l2});
  // x = (1, 2): z1 = (-1, 3.5) -> (0, 3.5); z2 = 10.5 + 0.5 = 11 -> 11/12
  const Eigen::MatrixXd y = net.predict(Eigen::Vector2d(1.0, 2.0));
  EXPECT_NEAR(y(0, 0), 11.0 / 12.0, 1e-15);
}

TEST(DenseNet, GradientCheckPolicyShapes) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0.0, 1.0);
  const Eigen::MatrixXd x = Eigen::MatrixXd::NullaryExpr(8, 5, [&] { return n(rng); });
  for (Activation head : {Activation::mdn_head, Activation::softmax, Activation::linear}) {
    const int out = head == Activation::mdn_head ? 12 : head == Activation::softmax ? 3 : 1;
    DenseNet net({8, 16, 16, out}, Activation::relu, head, rng);
    for (auto& l : net.layers()) l.biases.setConstant(0.05);
    const Eigen::MatrixXd w = Eigen::MatrixXd::NullaryExpr(out, 5, [&] { return n(rng); });
    check_gradients(net, x, w);
  }
}

TEST(DenseNet, HeInitialization) {
  std::mt19937_64 rng(1);
  const DenseNet net({400, 300, 1}, Activation::relu, Activation::linear, rng);
  const auto& w = net.layers().front().weights;
  const double var = w.array().square().mean();
  EXPECT_NEAR(var, 2.0 / 400.0, 0.05 * 2.0 / 400.0);
  EXPECT_EQ(net.layers().front().biases.cwiseAbs().maxCoeff(), 0.0);
}

TEST(DenseNet, RejectsWrongInput) {
  std::mt19937_64 rng(1);
  const DenseNet net({4, 3, 2}, Activation::relu, Activation::linear, rng);
  EXPECT_THROW(net.predict(Eigen::MatrixXd::Zero(5, 1)), ValidationError);
}

TEST(PolicyNetworks, ShapesAndOutputRanges) {
  const PolicyNets p = build_policy_networks(310, 32, 3);
  EXPECT_EQ(p.actor.input_dim(), 310);
  EXPECT_EQ(p.actor.output_dim(), 12);
  EXPECT_EQ(p.critic.output_dim(), 1);
  EXPECT_EQ(p.mixing.output_dim(), 3);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0.0, 3.0);
  const Eigen::MatrixXd x = Eigen::MatrixXd::NullaryExpr(310, 20, [&] { return n(rng); });
  const Eigen::MatrixXd a = p.actor.predict(x);
  const Eigen::MatrixXd m = p.mixing.predict(x);
  EXPECT_LT(a.topRows(6).cwiseAbs().maxCoeff(), 1.0);
  EXPECT_GT(a.bottomRows(6).minCoeff(), 0.0);
  EXPECT_LE(a.bottomRows(6).maxCoeff(), 1.0 / 16.0);
  for (Eigen::Index c = 0; c < m.cols(); ++c) EXPECT_NEAR(m.col(c).sum(), 1.0, 1e-12);
}

TEST(PolicyNetworks, HeadInitScalesOutputLayer) {
  const PolicyNets base = build_policy_networks(10, 8, 5);
  const PolicyNets scaled = build_policy_networks(10, 8, 5, HeadInit{0.01, -1.0});
  EXPECT_TRUE((scaled.actor.layers().back().weights - 0.01 * base.actor.layers().back().weights).isZero(1e-15));
  EXPECT_EQ(scaled.actor.layers().back().biases.tail(6), Eigen::VectorXd::Constant(6, -1.0));
  EXPECT_EQ(scaled.actor.layers().back().biases.head(6), Eigen::VectorXd::Zero(6));
  EXPECT_EQ(scaled.critic, base.critic);
}

TEST(Adam, MinimizesQuadratic) {
  // Single parameter w, loss w^2.
  DenseLayer l{Eigen::MatrixXd::Constant(1, 1, 3.0), Eigen::VectorXd::Zero(1), Activation::linear};
  DenseNet net({l});
  Adam adam(AdamConfig{0.1});
  for (int i = 0; i < 500; ++i) {
    auto g = net.zero_gradients();
    g.weights[0](0, 0) = 2.0 * net.layers()[0].weights(0, 0);
    adam.step({&net}, {g});
  }
  EXPECT_LT(std::abs(net.layers()[0].weights(0, 0)), 0.05);
  EXPECT_EQ(adam.steps(), 500);
}

TEST(Adam, FirstStepHasLearningRateMagnitude) {
  DenseLayer l{Eigen::MatrixXd::Constant(1, 1, 1.0), Eigen::VectorXd::Zero(1), Activation::linear};
  DenseNet net({l});
  Adam adam(AdamConfig{0.01});
  auto g = net.zero_gradients();
  g.weights[0](0, 0) = 123.0;
  adam.step({&net}, {g});
  EXPECT_NEAR(net.layers()[0].weights(0, 0), 0.99, 1e-8);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const PolicyNets p = build_policy_networks(310, 16, 9);
  const std::string path = temp_path("rt.bin");
  save_checkpoint(p, path);
  const PolicyNets q = load_checkpoint(path, &p);
  EXPECT_EQ(p, q);
  std::filesystem::remove(path);
}

TEST(Checkpoint, TruncatedOrCorruptRejected) {
  const std::string bytes = serialize_checkpoint(build_policy_networks(12, 4, 1));
  EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, bytes.size() / 2)), ValidationError);
  EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, 10)), ValidationError);
  std::string flipped = bytes;
  flipped[100] ^= 0x01;
  EXPECT_THROW(deserialize_checkpoint(flipped), ValidationError);
  std::string magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(magic), ValidationError);
}

TEST(Checkpoint, DimensionMismatchNamesDims) {
  const PolicyNets small = build_policy_networks(12, 4, 1);
  const PolicyNets big = build_policy_networks(12, 8, 1);
  try {
    deserialize_checkpoint(serialize_checkpoint(small), &big);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("12->4"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("12->8"), std::string::npos) << e.what();
  }
}
