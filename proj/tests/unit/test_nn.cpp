#include <doctest.h>

#include <cmath>

#include "cbc/error.hpp"
#include "cbc/nn.hpp"
#include "oracles.hpp"

using namespace cbc;
using namespace cbc::nn;

namespace {

Vector random_vector(int n, Rng &rng) {
  std::normal_distribution<double> d;
  Vector v(n);
  for (int i = 0; i < n; ++i) {
    v[i] = d(rng);
  }
  return v;
}

} // namespace

TEST_CASE("zero-weight network outputs its last-layer bias") {
  DenseNetwork net({3, 5, 2});
  net.layers()[1].bias << 0.25, -1.5;
  Rng rng(1);
  for (int i = 0; i < 5; ++i) {
    const Vector y = forward(net, random_vector(3, rng));
    CHECK(y[0] == 0.25);
    CHECK(y[1] == -1.5);
  }
}

TEST_CASE("identity 1->1 network passes its input through") {
  Layer l{Matrix::Constant(1, 1, 1.0), Vector::Zero(1), Activation::Identity};
  auto net = DenseNetwork::from_layers({l});
  CHECK(forward(net, Vector::Constant(1, 0.7))[0] == 0.7);
}

TEST_CASE("forward matches a loop-based re-evaluation of the same matrices") {
  Rng rng(42);
  auto net = DenseNetwork::glorot({4, 8, 8, 2}, rng);
  for (int trial = 0; trial < 20; ++trial) {
    const Vector x = random_vector(4, rng);
    const Vector y = forward(net, x);
    const auto ref = oracle::mlp(net, oracle::to_vec(x));
    REQUIRE(y.size() == 2);
    CHECK(y[0] == doctest::Approx(ref[0]).epsilon(1e-14));
    CHECK(y[1] == doctest::Approx(ref[1]).epsilon(1e-14));
  }
}

TEST_CASE("batched forward equals per-column forward") {
  Rng rng(3);
  auto net = DenseNetwork::glorot({3, 6, 4}, rng);
  Matrix xs(3, 7);
  for (int j = 0; j < 7; ++j) {
    xs.col(j) = random_vector(3, rng);
  }
  const Matrix ys = forward_batch(net, xs);
  for (int j = 0; j < 7; ++j) {
    CHECK((ys.col(j) - forward(net, xs.col(j))).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("glorot weights stay inside the uniform limit and biases are zero") {
  Rng rng(5);
  auto net = DenseNetwork::glorot({10, 20, 3}, rng);
  for (const auto &layer : net.layers()) {
    const double limit = std::sqrt(6.0 / static_cast<double>(layer.weight.rows() + layer.weight.cols()));
    CHECK(layer.weight.cwiseAbs().maxCoeff() <= limit);
    CHECK(layer.bias.isZero());
  }
  CHECK(net.parameter_count() == 10 * 20 + 20 + 20 * 3 + 3);
}

TEST_CASE("linear 1->1 chain rule") {
  Layer l{Matrix::Constant(1, 1, 0.3), Vector::Constant(1, -0.2), Activation::Identity};
  auto net = DenseNetwork::from_layers({l});
  const auto g = backward(net, Vector::Constant(1, 1.7), Vector::Constant(1, 1.0));
  CHECK(g.layers[0].weight(0, 0) == doctest::Approx(1.7));
  CHECK(g.layers[0].bias[0] == doctest::Approx(1.0));
}

TEST_CASE("zero upstream gradient gives zero parameter gradients") {
  Rng rng(9);
  auto net = DenseNetwork::glorot({4, 8, 8, 2}, rng);
  const auto g = backward(net, random_vector(4, rng), Vector::Zero(2));
  CHECK(g.max_abs() == 0.0);
}

TEST_CASE("backward agrees with central finite differences on random 4-8-8-2 nets") {
  Rng rng(11);
  for (int trial = 0; trial < 25; ++trial) {
    auto net = DenseNetwork::glorot({4, 8, 8, 2}, rng);
    for (auto &layer : net.layers()) {
      layer.bias = 0.1 * random_vector(static_cast<int>(layer.bias.size()), rng);
    }
    const Vector x = random_vector(4, rng);
    const Vector w = random_vector(2, rng);
    const auto analytic = flatten(backward(net, x, w));
    const auto numeric = oracle::fd_gradient(net, [&] {
      const auto y = oracle::mlp(net, oracle::to_vec(x));
      return w[0] * y[0] + w[1] * y[1];
    });
    CHECK(oracle::relative_error(analytic, numeric) < 1e-4);
  }
}

TEST_CASE("batched backward sums per-sample gradients") {
  Rng rng(13);
  auto net = DenseNetwork::glorot({3, 5, 2}, rng);
  Matrix xs(3, 4);
  Matrix gs(2, 4);
  for (int j = 0; j < 4; ++j) {
    xs.col(j) = random_vector(3, rng);
    gs.col(j) = random_vector(2, rng);
  }
  ForwardCache cache;
  forward_batch(net, xs, &cache);
  const auto batched = flatten(backward_batch(net, cache, gs));
  Vector summed = Vector::Zero(batched.size());
  for (int j = 0; j < 4; ++j) {
    summed += flatten(backward(net, xs.col(j), gs.col(j)));
  }
  CHECK((batched - summed).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("adam: zero gradient leaves parameters and moments unchanged") {
  Rng rng(17);
  auto net = DenseNetwork::glorot({2, 3, 1}, rng);
  const auto before = flatten(net);
  auto state = AdamState::for_network(net);
  adam_step(net, Gradients::zeros_like(net), state);
  CHECK(flatten(net) == before);
  CHECK(state.first_moment.max_abs() == 0.0);
  CHECK(state.second_moment.max_abs() == 0.0);
}

TEST_CASE("adam: first bias-corrected step moves a scalar by about -lr * sign(g)") {
  Layer l{Matrix::Zero(1, 1), Vector::Zero(1), Activation::Identity};
  auto net = DenseNetwork::from_layers({l});
  AdamConfig cfg;
  cfg.learning_rate = 0.1;
  auto state = AdamState::for_network(net, cfg);
  auto g = Gradients::zeros_like(net);
  g.layers[0].weight(0, 0) = 1.0;
  adam_step(net, g, state);
  // m_hat = 1, v_hat = 1 after correction.
  CHECK(net.layers()[0].weight(0, 0) == doctest::Approx(-0.1 / (1.0 + 1e-8)).epsilon(1e-12));

  // Hand-evaluated second step with the same gradient.
  const double before = net.layers()[0].weight(0, 0);
  adam_step(net, g, state);
  const double m = 0.9 * 0.1 + 0.1;
  const double v = 0.999 * 0.001 + 0.001;
  const double m_hat = m / (1.0 - 0.81);
  const double v_hat = v / (1.0 - 0.999 * 0.999);
  const double delta2 = net.layers()[0].weight(0, 0) - before;
  CHECK(delta2 == doctest::Approx(-0.1 * m_hat / (std::sqrt(v_hat) + 1e-8)).epsilon(1e-9));
  CHECK(state.step == 2);
}

TEST_CASE("adam: varying gradients give a second delta different from the first") {
  Layer l{Matrix::Zero(1, 1), Vector::Zero(1), Activation::Identity};
  auto net = DenseNetwork::from_layers({l});
  auto state = AdamState::for_network(net);
  auto g = Gradients::zeros_like(net);
  g.layers[0].weight(0, 0) = 1.0;
  adam_step(net, g, state);
  const double d1 = net.layers()[0].weight(0, 0);
  g.layers[0].weight(0, 0) = 0.25;
  adam_step(net, g, state);
  const double d2 = net.layers()[0].weight(0, 0) - d1;
  CHECK(std::abs(d2 - d1) > 1e-6);
}

TEST_CASE("adam rejects incongruent gradients") {
  auto net = DenseNetwork({2, 3, 1});
  auto other = DenseNetwork({2, 4, 1});
  auto state = AdamState::for_network(net);
  CHECK_THROWS_AS(adam_step(net, Gradients::zeros_like(other), state), InvalidInput);
}

TEST_CASE("network JSON round trip is exact") {
  Rng rng(21);
  auto net = DenseNetwork::glorot({3, 7, 2}, rng);
  const auto doc = to_json(net);
  CHECK(doc["format_version"] == 1);
  const auto back = network_from_json(nlohmann::json::parse(doc.dump()));
  CHECK(back == net);
}

TEST_CASE("malformed network documents are rejected") {
  CHECK_THROWS_AS(DenseNetwork(std::vector<int>{3}), InvalidInput);
  CHECK_THROWS_AS(DenseNetwork(std::vector<int>{3, 0, 1}), InvalidInput);
  Layer a{Matrix::Zero(4, 3), Vector::Zero(4), Activation::Relu};
  Layer b{Matrix::Zero(1, 5), Vector::Zero(1), Activation::Identity};
  CHECK_THROWS_AS(DenseNetwork::from_layers({a, b}), InvalidInput);
  auto doc = to_json(DenseNetwork({2, 2}));
  doc["format_version"] = 7;
  CHECK_THROWS_AS(network_from_json(doc), InvalidInput);
  CHECK_THROWS_AS(forward(DenseNetwork({2, 2}), Vector::Zero(3)), InvalidInput);
}
