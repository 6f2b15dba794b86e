#include "fedclust/nn/net.hpp"

#include <cmath>
#include <cstring>

#include "fedclust/errors.hpp"
#include "fedclust/kernels/kernels.hpp"

namespace fedclust::nn {

namespace {

constexpr double kBceClamp = 1e-7;

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void apply_activation(Matrix& z, Activation act) {
  switch (act) {
    case Activation::kIdentity:
      return;
    case Activation::kRelu:
      kern::ops().relu(z.data(), z.data(), z.size());
      return;
    case Activation::kSigmoid:
      for (auto& v : z.values()) v = sigmoid(v);
      return;
  }
}

// grad *= sigma'(post-activation)
void activation_backward(Matrix& grad, const Matrix& act_out, Activation act) {
  switch (act) {
    case Activation::kIdentity:
      return;
    case Activation::kRelu:
      kern::ops().relu_bwd(grad.data(), act_out.data(), grad.size());
      return;
    case Activation::kSigmoid:
      for (std::size_t i = 0; i < grad.size(); ++i) {
        const double a = act_out.data()[i];
        grad.data()[i] *= a * (1.0 - a);
      }
      return;
  }
}

}  // namespace

void DenseNet::validate() const {
  if (layers.empty()) throw ShapeError("DenseNet: no layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.bias.size() != l.weights.cols()) {
      throw ShapeError("DenseNet: bias width mismatch at layer " +
                       std::to_string(i));
    }
    if (i > 0 && layers[i - 1].weights.cols() != l.weights.rows()) {
      throw ShapeError("DenseNet: layer widths do not chain at layer " +
                       std::to_string(i));
    }
  }
}

DenseNet make_net(const std::vector<std::size_t>& widths,
                  const std::vector<Activation>& acts) {
  if (widths.size() < 2 || acts.size() != widths.size() - 1) {
    throw ShapeError("make_net: need n widths and n-1 activations");
  }
  DenseNet net;
  net.layers.resize(acts.size());
  for (std::size_t i = 0; i < acts.size(); ++i) {
    net.layers[i].weights = Matrix(widths[i], widths[i + 1]);
    net.layers[i].bias.assign(widths[i + 1], 0.0);
    net.layers[i].activation = acts[i];
  }
  return net;
}

void glorot_init(DenseNet& net, rng::Rng& rng) {
  for (auto& layer : net.layers) {
    const double bound = std::sqrt(
        6.0 / static_cast<double>(layer.weights.rows() + layer.weights.cols()));
    for (auto& w : layer.weights.values()) w = rng.uniform(-bound, bound);
    std::fill(layer.bias.begin(), layer.bias.end(), 0.0);
  }
}

std::vector<Matrix> forward(const DenseNet& net, const Matrix& batch) {
  net.validate();
  if (batch.cols() != net.input_width()) {
    throw ShapeError("forward: batch has " + std::to_string(batch.cols()) +
                     " columns, net expects " +
                     std::to_string(net.input_width()));
  }
  std::vector<Matrix> acts;
  acts.reserve(net.layers.size() + 1);
  acts.push_back(batch);
  for (const auto& layer : net.layers) {
    const Matrix& x = acts.back();
    Matrix z(x.rows(), layer.weights.cols());
    kern::ops().gemm_nn(z.data(), x.data(), layer.weights.data(), x.rows(),
                        x.cols(), layer.weights.cols(), false);
    for (std::size_t r = 0; r < z.rows(); ++r) {
      double* row = z.data() + r * z.cols();
      for (std::size_t c = 0; c < z.cols(); ++c) row[c] += layer.bias[c];
    }
    apply_activation(z, layer.activation);
    acts.push_back(std::move(z));
  }
  return acts;
}

Matrix predict(const DenseNet& net, const Matrix& batch) {
  auto acts = forward(net, batch);
  return std::move(acts.back());
}

double loss_value(const Matrix& pred, const Matrix& target, LossKind loss) {
  if (!pred.same_shape(target)) {
    throw ShapeError("loss_value: prediction and target shapes differ");
  }
  const std::size_t n = pred.size();
  if (n == 0) throw ShapeError("loss_value: empty input");
  double total = 0.0;
  switch (loss) {
    case LossKind::kMse: {
      for (std::size_t i = 0; i < n; ++i) {
        const double d = pred.data()[i] - target.data()[i];
        total += d * d;
      }
      return total / static_cast<double>(n);
    }
    case LossKind::kBce: {
      for (std::size_t i = 0; i < n; ++i) {
        double p = pred.data()[i];
        p = std::min(std::max(p, kBceClamp), 1.0 - kBceClamp);
        const double y = target.data()[i];
        total -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
      }
      return total / static_cast<double>(pred.rows());
    }
  }
  throw NumericError("loss_value: unknown loss kind");
}

namespace {

// Shared layer walk once the output-layer delta (pre-activation gradient)
// is known.
Gradients backprop_layers(const DenseNet& net,
                          const std::vector<Matrix>& activations, Matrix delta,
                          Matrix* input_grad);

}  // namespace

Gradients backward(const DenseNet& net, const std::vector<Matrix>& activations,
                   const Matrix& targets, LossKind loss, Matrix* input_grad) {
  net.validate();
  if (activations.size() != net.layers.size() + 1) {
    throw ShapeError("backward: activation list does not match net depth");
  }
  const Matrix& output = activations.back();
  if (!output.same_shape(targets)) {
    throw ShapeError("backward: target shape does not match output");
  }
  const auto rows = static_cast<double>(output.rows());

  // Gradient at the output pre-activation.
  Matrix delta(output.rows(), output.cols());
  const Activation out_act = net.layers.back().activation;
  if (loss == LossKind::kBce) {
    if (out_act != Activation::kSigmoid) {
      throw StateError("backward: BCE requires a sigmoid output layer");
    }
    // Combined sigmoid + cross-entropy gradient.
    kern::ops().vsub(delta.data(), output.data(), targets.data(), delta.size());
    kern::ops().scal(delta.data(), 1.0 / rows, delta.size());
  } else {
    kern::ops().vsub(delta.data(), output.data(), targets.data(), delta.size());
    kern::ops().scal(delta.data(), 2.0 / static_cast<double>(output.size()),
                     delta.size());
    activation_backward(delta, output, out_act);
  }
  return backprop_layers(net, activations, std::move(delta), input_grad);
}

Gradients backward_from_output_gradient(const DenseNet& net,
                                        const std::vector<Matrix>& activations,
                                        const Matrix& output_grad,
                                        Matrix* input_grad) {
  net.validate();
  if (activations.size() != net.layers.size() + 1) {
    throw ShapeError("backward: activation list does not match net depth");
  }
  const Matrix& output = activations.back();
  if (!output.same_shape(output_grad)) {
    throw ShapeError("backward: output gradient shape mismatch");
  }
  Matrix delta = output_grad;
  activation_backward(delta, output, net.layers.back().activation);
  return backprop_layers(net, activations, std::move(delta), input_grad);
}

namespace {

Gradients backprop_layers(const DenseNet& net,
                          const std::vector<Matrix>& activations, Matrix delta,
                          Matrix* input_grad) {
  Gradients grads;
  grads.weights.resize(net.layers.size());
  grads.bias.resize(net.layers.size());

  for (std::size_t li = net.layers.size(); li-- > 0;) {
    const Layer& layer = net.layers[li];
    const Matrix& input = activations[li];

    Matrix& dw = grads.weights[li];
    dw = Matrix(layer.weights.rows(), layer.weights.cols());
    kern::ops().gemm_tn(dw.data(), input.data(), delta.data(), input.rows(),
                        input.cols(), delta.cols(), false);

    auto& db = grads.bias[li];
    db.assign(layer.bias.size(), 0.0);
    for (std::size_t r = 0; r < delta.rows(); ++r) {
      const double* row = delta.data() + r * delta.cols();
      for (std::size_t c = 0; c < delta.cols(); ++c) db[c] += row[c];
    }

    if (li > 0 || input_grad != nullptr) {
      Matrix prev(delta.rows(), layer.weights.rows());
      kern::ops().gemm_nt(prev.data(), delta.data(), layer.weights.data(),
                          delta.rows(), delta.cols(), layer.weights.rows(),
                          false);
      if (li > 0) {
        activation_backward(prev, activations[li], net.layers[li - 1].activation);
        delta = std::move(prev);
      } else {
        *input_grad = std::move(prev);
      }
    }
  }
  return grads;
}

}  // namespace

const std::string& ParamLayout::block_of(std::size_t i) const {
  for (const auto& b : blocks) {
    if (i >= b.offset && i < b.offset + b.rows * b.cols) return b.name;
  }
  throw ShapeError("ParamLayout: index out of range");
}

ParamLayout layout_of(const DenseNet& net) {
  ParamLayout layout;
  std::size_t offset = 0;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& l = net.layers[i];
    layout.blocks.push_back({"layer" + std::to_string(i) + ".weights", offset,
                             l.weights.rows(), l.weights.cols()});
    offset += l.weights.size();
    layout.blocks.push_back(
        {"layer" + std::to_string(i) + ".bias", offset, 1, l.bias.size()});
    offset += l.bias.size();
  }
  layout.total = offset;
  return layout;
}

std::vector<double> flatten(const DenseNet& net) {
  std::vector<double> out;
  out.reserve(layout_of(net).total);
  for (const auto& l : net.layers) {
    out.insert(out.end(), l.weights.values().begin(), l.weights.values().end());
    out.insert(out.end(), l.bias.begin(), l.bias.end());
  }
  return out;
}

void unflatten(DenseNet& net, std::span<const double> params) {
  std::size_t offset = 0;
  for (auto& l : net.layers) {
    const std::size_t wn = l.weights.size();
    if (offset + wn + l.bias.size() > params.size()) {
      throw ShapeError("unflatten: parameter vector too short");
    }
    std::memcpy(l.weights.data(), params.data() + offset, wn * sizeof(double));
    offset += wn;
    std::memcpy(l.bias.data(), params.data() + offset,
                l.bias.size() * sizeof(double));
    offset += l.bias.size();
  }
  if (offset != params.size()) {
    throw ShapeError("unflatten: parameter vector too long");
  }
}

std::vector<double> flatten_gradients(const DenseNet& net, const Gradients& g) {
  std::vector<double> out;
  out.reserve(layout_of(net).total);
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    out.insert(out.end(), g.weights[i].values().begin(),
               g.weights[i].values().end());
    out.insert(out.end(), g.bias[i].begin(), g.bias[i].end());
  }
  return out;
}

void adam_step(AdamState& state, std::span<double> params,
               std::span<const double> grads, const ParamLayout& layout) {
  if (params.size() != grads.size() || params.size() != layout.total) {
    throw ShapeError("adam_step: size mismatch between params, grads, layout");
  }
  if (state.m.size() != params.size()) {
    throw ShapeError("adam_step: optimizer state does not match parameters");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      throw NumericError("adam_step: non-finite gradient in block '" +
                         layout.block_of(i) + "'");
    }
  }
  state.step += 1;
  const double b1c = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double b2c = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  kern::ops().adam(params.data(), state.m.data(), state.v.data(), grads.data(),
                   params.size(), state.lr, state.beta1, state.beta2, state.eps,
                   b1c, b2c);
}

}  // namespace fedclust::nn
