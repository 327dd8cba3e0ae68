#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "cbc/rng.hpp"

namespace cbc::nn {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

enum class Activation { Relu, Identity };

struct Layer {
  Matrix weight; // out x in
  Vector bias;   // out
  Activation activation = Activation::Identity;
};

/// Fully connected feed-forward network: ReLU on hidden layers, identity on
/// the output layer.
class DenseNetwork {
public:
  DenseNetwork() = default;

  /// Zero-initialized network with the given widths {in, hidden..., out}.
  explicit DenseNetwork(const std::vector<int> &widths);

  /// Glorot-uniform weights in +-sqrt(6/(fan_in+fan_out)), zero biases.
  static DenseNetwork glorot(const std::vector<int> &widths, Rng &rng);

  /// Builds from explicit layers; consecutive widths must agree.
  static DenseNetwork from_layers(std::vector<Layer> layers);

  int input_width() const;
  int output_width() const;
  std::vector<int> widths() const;
  std::size_t parameter_count() const;

  std::span<const Layer> layers() const { return layers_; }
  std::span<Layer> layers() { return layers_; }

  bool operator==(const DenseNetwork &other) const;

private:
  std::vector<Layer> layers_;
};

struct LayerGradient {
  Matrix weight;
  Vector bias;
};

/// d(loss)/d(parameter) for every parameter of a DenseNetwork.
struct Gradients {
  std::vector<LayerGradient> layers;

  static Gradients zeros_like(const DenseNetwork &net);
  bool congruent_with(const DenseNetwork &net) const;

  Gradients &operator+=(const Gradients &other);
  Gradients &operator*=(double scale);
  double max_abs() const;
};

/// Intermediate values of a batched forward pass, consumed by backward_batch.
/// Column j of every matrix belongs to sample j.
struct ForwardCache {
  std::vector<Matrix> inputs;         // input to layer l
  std::vector<Matrix> preactivations; // W x + b of layer l
};

Vector forward(const DenseNetwork &net, const Vector &input);

/// inputs is (input_width x batch); returns (output_width x batch).
Matrix forward_batch(const DenseNetwork &net, const Matrix &inputs,
                     ForwardCache *cache = nullptr);

Gradients backward(const DenseNetwork &net, const Vector &input, const Vector &output_grad);

/// Gradients summed over the batch columns.
Gradients backward_batch(const DenseNetwork &net, const ForwardCache &cache,
                         const Matrix &output_grad);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  Gradients first_moment;
  Gradients second_moment;
  std::int64_t step = 0;

  static AdamState for_network(const DenseNetwork &net, AdamConfig config = {});
};

/// Bias-corrected Adam update in place. Throws InvalidInput on shape mismatch.
void adam_step(DenseNetwork &net, const Gradients &grads, AdamState &state);

/// Flattened views in layer order, weights row-major then bias.
Vector flatten(const DenseNetwork &net);
Vector flatten(const Gradients &grads);

/// Versioned JSON document: {"format_version":1,"widths":[...],
/// "layers":[{"in":i,"out":o,"activation":"relu"|"identity",
/// "weights":[row-major],"bias":[...]}]}.
nlohmann::json to_json(const DenseNetwork &net);
DenseNetwork network_from_json(const nlohmann::json &doc);

} // namespace cbc::nn
