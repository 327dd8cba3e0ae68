#include "cbc/nn.hpp"

#include <cmath>
#include <string>

#include "cbc/error.hpp"

namespace cbc::nn {

namespace {

void check_widths(const std::vector<int> &widths) {
  if (widths.size() < 2) {
    throw InvalidInput("network needs at least an input and an output width");
  }
  for (int w : widths) {
    if (w < 1) {
      throw InvalidInput("layer widths must be positive");
    }
  }
}

Activation activation_for(std::size_t layer, std::size_t layer_count) {
  return layer + 1 == layer_count ? Activation::Identity : Activation::Relu;
}

} // namespace

DenseNetwork::DenseNetwork(const std::vector<int> &widths) {
  check_widths(widths);
  const std::size_t count = widths.size() - 1;
  layers_.reserve(count);
  for (std::size_t l = 0; l < count; ++l) {
    layers_.push_back(Layer{Matrix::Zero(widths[l + 1], widths[l]), Vector::Zero(widths[l + 1]),
                            activation_for(l, count)});
  }
}

DenseNetwork DenseNetwork::glorot(const std::vector<int> &widths, Rng &rng) {
  DenseNetwork net(widths);
  for (auto &layer : net.layers_) {
    const double limit =
        std::sqrt(6.0 / static_cast<double>(layer.weight.rows() + layer.weight.cols()));
    std::uniform_real_distribution<double> dist(-limit, limit);
    // Row-major draw order so the layout matches the serialized form.
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
        layer.weight(r, c) = dist(rng);
      }
    }
  }
  return net;
}

DenseNetwork DenseNetwork::from_layers(std::vector<Layer> layers) {
  if (layers.empty()) {
    throw InvalidInput("network needs at least one layer");
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (layers[l].bias.size() != layers[l].weight.rows()) {
      throw InvalidInput("layer " + std::to_string(l) + ": bias width differs from weight rows");
    }
    if (l > 0 && layers[l].weight.cols() != layers[l - 1].weight.rows()) {
      throw InvalidInput("layer " + std::to_string(l) + ": input width " +
                         std::to_string(layers[l].weight.cols()) +
                         " does not match previous output width " +
                         std::to_string(layers[l - 1].weight.rows()));
    }
  }
  DenseNetwork net;
  net.layers_ = std::move(layers);
  return net;
}

int DenseNetwork::input_width() const {
  return layers_.empty() ? 0 : static_cast<int>(layers_.front().weight.cols());
}

int DenseNetwork::output_width() const {
  return layers_.empty() ? 0 : static_cast<int>(layers_.back().weight.rows());
}

std::vector<int> DenseNetwork::widths() const {
  std::vector<int> out;
  if (layers_.empty()) {
    return out;
  }
  out.push_back(input_width());
  for (const auto &layer : layers_) {
    out.push_back(static_cast<int>(layer.weight.rows()));
  }
  return out;
}

std::size_t DenseNetwork::parameter_count() const {
  std::size_t n = 0;
  for (const auto &layer : layers_) {
    n += static_cast<std::size_t>(layer.weight.size() + layer.bias.size());
  }
  return n;
}

bool DenseNetwork::operator==(const DenseNetwork &other) const {
  if (layers_.size() != other.layers_.size()) {
    return false;
  }
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto &a = layers_[l];
    const auto &b = other.layers_[l];
    if (a.activation != b.activation || a.weight.rows() != b.weight.rows() ||
        a.weight.cols() != b.weight.cols() || a.weight != b.weight || a.bias != b.bias) {
      return false;
    }
  }
  return true;
}

Gradients Gradients::zeros_like(const DenseNetwork &net) {
  Gradients g;
  g.layers.reserve(net.layers().size());
  for (const auto &layer : net.layers()) {
    g.layers.push_back(LayerGradient{Matrix::Zero(layer.weight.rows(), layer.weight.cols()),
                                     Vector::Zero(layer.bias.size())});
  }
  return g;
}

bool Gradients::congruent_with(const DenseNetwork &net) const {
  const auto net_layers = net.layers();
  if (layers.size() != net_layers.size()) {
    return false;
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (layers[l].weight.rows() != net_layers[l].weight.rows() ||
        layers[l].weight.cols() != net_layers[l].weight.cols() ||
        layers[l].bias.size() != net_layers[l].bias.size()) {
      return false;
    }
  }
  return true;
}

Gradients &Gradients::operator+=(const Gradients &other) {
  if (other.layers.size() != layers.size()) {
    throw InvalidInput("adding gradients of different layer counts");
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (layers[l].weight.rows() != other.layers[l].weight.rows() ||
        layers[l].weight.cols() != other.layers[l].weight.cols()) {
      throw InvalidInput("adding gradients of different shapes");
    }
    layers[l].weight += other.layers[l].weight;
    layers[l].bias += other.layers[l].bias;
  }
  return *this;
}

Gradients &Gradients::operator*=(double scale) {
  for (auto &layer : layers) {
    layer.weight *= scale;
    layer.bias *= scale;
  }
  return *this;
}

double Gradients::max_abs() const {
  double m = 0.0;
  for (const auto &layer : layers) {
    if (layer.weight.size() > 0) {
      m = std::max(m, layer.weight.cwiseAbs().maxCoeff());
    }
    if (layer.bias.size() > 0) {
      m = std::max(m, layer.bias.cwiseAbs().maxCoeff());
    }
  }
  return m;
}

Vector forward(const DenseNetwork &net, const Vector &input) {
  if (input.size() != net.input_width()) {
    throw InvalidInput("forward: input width " + std::to_string(input.size()) +
                       " != network input width " + std::to_string(net.input_width()));
  }
  Vector x = input;
  for (const auto &layer : net.layers()) {
    Vector z = layer.weight * x + layer.bias;
    if (layer.activation == Activation::Relu) {
      z = z.cwiseMax(0.0);
    }
    x = std::move(z);
  }
  return x;
}

Matrix forward_batch(const DenseNetwork &net, const Matrix &inputs, ForwardCache *cache) {
  if (inputs.rows() != net.input_width()) {
    throw InvalidInput("forward: input width " + std::to_string(inputs.rows()) +
                       " != network input width " + std::to_string(net.input_width()));
  }
  if (cache != nullptr) {
    cache->inputs.clear();
    cache->preactivations.clear();
  }
  Matrix x = inputs;
  for (const auto &layer : net.layers()) {
    Matrix z = layer.weight * x;
    z.colwise() += layer.bias;
    if (cache != nullptr) {
      cache->inputs.push_back(std::move(x));
      cache->preactivations.push_back(z);
    }
    if (layer.activation == Activation::Relu) {
      z = z.cwiseMax(0.0);
    }
    x = std::move(z);
  }
  return x;
}

Gradients backward_batch(const DenseNetwork &net, const ForwardCache &cache,
                         const Matrix &output_grad) {
  const auto layers = net.layers();
  if (cache.inputs.size() != layers.size() || cache.preactivations.size() != layers.size()) {
    throw InvalidInput("backward: forward cache does not belong to this network");
  }
  if (output_grad.rows() != net.output_width() ||
      output_grad.cols() != cache.inputs.front().cols()) {
    throw InvalidInput("backward: output gradient shape (" + std::to_string(output_grad.rows()) +
                       "x" + std::to_string(output_grad.cols()) + ") does not match output");
  }
  Gradients grads;
  grads.layers.resize(layers.size());
  Matrix upstream = output_grad;
  for (std::size_t i = layers.size(); i-- > 0;) {
    const auto &layer = layers[i];
    if (layer.activation == Activation::Relu) {
      // Subgradient at exactly zero is taken as zero.
      upstream = (cache.preactivations[i].array() > 0.0).select(upstream, 0.0);
    }
    grads.layers[i].weight = upstream * cache.inputs[i].transpose();
    grads.layers[i].bias = upstream.rowwise().sum();
    if (i > 0) {
      upstream = layer.weight.transpose() * upstream;
    }
  }
  return grads;
}

Gradients backward(const DenseNetwork &net, const Vector &input, const Vector &output_grad) {
  if (output_grad.size() != net.output_width()) {
    throw InvalidInput("backward: output gradient width " + std::to_string(output_grad.size()) +
                       " != network output width " + std::to_string(net.output_width()));
  }
  ForwardCache cache;
  forward_batch(net, input, &cache);
  return backward_batch(net, cache, output_grad);
}

AdamState AdamState::for_network(const DenseNetwork &net, AdamConfig config) {
  AdamState state;
  state.config = config;
  state.first_moment = Gradients::zeros_like(net);
  state.second_moment = Gradients::zeros_like(net);
  state.step = 0;
  return state;
}

void adam_step(DenseNetwork &net, const Gradients &grads, AdamState &state) {
  if (!grads.congruent_with(net) || !state.first_moment.congruent_with(net) ||
      !state.second_moment.congruent_with(net)) {
    throw InvalidInput("adam_step: gradient or moment shapes do not match the network");
  }
  const auto &cfg = state.config;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(cfg.beta1, t);
  const double correction2 = 1.0 - std::pow(cfg.beta2, t);
  const double step_size = cfg.learning_rate / correction1;
  const double sqrt_correction2 = std::sqrt(correction2);

  auto update = [&](auto &param, const auto &g, auto &m, auto &v) {
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseAbs2();
    param.array() -=
        step_size * m.array() / (v.array().sqrt() / sqrt_correction2 + cfg.epsilon);
  };

  auto layers = net.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    update(layers[l].weight, grads.layers[l].weight, state.first_moment.layers[l].weight,
           state.second_moment.layers[l].weight);
    update(layers[l].bias, grads.layers[l].bias, state.first_moment.layers[l].bias,
           state.second_moment.layers[l].bias);
  }
}

Vector flatten(const DenseNetwork &net) {
  Vector out(static_cast<Eigen::Index>(net.parameter_count()));
  Eigen::Index k = 0;
  for (const auto &layer : net.layers()) {
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
        out[k++] = layer.weight(r, c);
      }
    }
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) {
      out[k++] = layer.bias[r];
    }
  }
  return out;
}

Vector flatten(const Gradients &grads) {
  Eigen::Index n = 0;
  for (const auto &layer : grads.layers) {
    n += layer.weight.size() + layer.bias.size();
  }
  Vector out(n);
  Eigen::Index k = 0;
  for (const auto &layer : grads.layers) {
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
        out[k++] = layer.weight(r, c);
      }
    }
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) {
      out[k++] = layer.bias[r];
    }
  }
  return out;
}

nlohmann::json to_json(const DenseNetwork &net) {
  nlohmann::json doc;
  doc["format_version"] = 1;
  doc["widths"] = net.widths();
  auto layers = nlohmann::json::array();
  for (const auto &layer : net.layers()) {
    std::vector<double> weights;
    weights.reserve(static_cast<std::size_t>(layer.weight.size()));
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
        weights.push_back(layer.weight(r, c));
      }
    }
    layers.push_back({
        {"in", layer.weight.cols()},
        {"out", layer.weight.rows()},
        {"activation", layer.activation == Activation::Relu ? "relu" : "identity"},
        {"weights", std::move(weights)},
        {"bias", std::vector<double>(layer.bias.data(), layer.bias.data() + layer.bias.size())},
    });
  }
  doc["layers"] = std::move(layers);
  return doc;
}

DenseNetwork network_from_json(const nlohmann::json &doc) {
  try {
    if (doc.at("format_version").get<int>() != 1) {
      throw InvalidInput("unsupported network format_version");
    }
    std::vector<Layer> layers;
    for (const auto &entry : doc.at("layers")) {
      const auto in = entry.at("in").get<Eigen::Index>();
      const auto out = entry.at("out").get<Eigen::Index>();
      const auto weights = entry.at("weights").get<std::vector<double>>();
      const auto bias = entry.at("bias").get<std::vector<double>>();
      if (static_cast<Eigen::Index>(weights.size()) != in * out ||
          static_cast<Eigen::Index>(bias.size()) != out) {
        throw InvalidInput("layer array sizes do not match declared widths");
      }
      Layer layer;
      layer.weight.resize(out, in);
      for (Eigen::Index r = 0; r < out; ++r) {
        for (Eigen::Index c = 0; c < in; ++c) {
          layer.weight(r, c) = weights[static_cast<std::size_t>(r * in + c)];
        }
      }
      layer.bias = Eigen::Map<const Vector>(bias.data(), out);
      const auto act = entry.at("activation").get<std::string>();
      if (act == "relu") {
        layer.activation = Activation::Relu;
      } else if (act == "identity") {
        layer.activation = Activation::Identity;
      } else {
        throw InvalidInput("unknown activation '" + act + "'");
      }
      layers.push_back(std::move(layer));
    }
    return DenseNetwork::from_layers(std::move(layers));
  } catch (const nlohmann::json::exception &e) {
    throw InvalidInput(std::string("malformed network document: ") + e.what());
  }
}

} // namespace cbc::nn
