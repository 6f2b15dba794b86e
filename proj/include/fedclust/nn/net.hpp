#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fedclust/linalg/matrix.hpp"
#include "fedclust/rand/rng.hpp"

namespace fedclust::nn {

enum class Activation : std::uint8_t { kIdentity = 0, kRelu = 1, kSigmoid = 2 };
enum class LossKind : std::uint8_t { kMse = 0, kBce = 1 };

struct Layer {
  Matrix weights;            // d_in x d_out
  std::vector<double> bias;  // d_out
  Activation activation = Activation::kIdentity;
};

// Plain feedforward stack. Consecutive layer widths must chain; validate()
// enforces it after construction or deserialization.
struct DenseNet {
  std::vector<Layer> layers;

  std::size_t input_width() const { return layers.front().weights.rows(); }
  std::size_t output_width() const { return layers.back().weights.cols(); }
  void validate() const;
};

// widths = {d_in, h1, ..., d_out}; acts has one entry per layer.
DenseNet make_net(const std::vector<std::size_t>& widths,
                  const std::vector<Activation>& acts);

// Glorot-style uniform init in +-sqrt(6/(d_in+d_out)); biases zero.
void glorot_init(DenseNet& net, rng::Rng& rng);

// Returns all activations: [0] is the input batch, [i] the post-activation
// output of layer i-1. The last entry is the network output.
std::vector<Matrix> forward(const DenseNet& net, const Matrix& batch);

// Single forward pass without keeping intermediates.
Matrix predict(const DenseNet& net, const Matrix& batch);

struct Gradients {
  std::vector<Matrix> weights;
  std::vector<std::vector<double>> bias;
};

// Exact analytic gradients of the mean batch loss with respect to every
// weight and bias. When input_grad is non-null it also receives d(loss)/d(batch),
// which lets composite models backpropagate through a concatenation.
Gradients backward(const DenseNet& net, const std::vector<Matrix>& activations,
                   const Matrix& targets, LossKind loss,
                   Matrix* input_grad = nullptr);

// Backward pass driven by an explicit gradient at the network output
// (post-activation); composite models feed the upstream gradient in here.
Gradients backward_from_output_gradient(const DenseNet& net,
                                        const std::vector<Matrix>& activations,
                                        const Matrix& output_grad,
                                        Matrix* input_grad = nullptr);

// MSE: mean over all elements. BCE: mean over samples of the summed
// per-output cross entropy, predictions clamped to [1e-7, 1-1e-7].
double loss_value(const Matrix& pred, const Matrix& target, LossKind loss);

// ---- flat parameter view ---------------------------------------------------
//
// Parameters travel between sites as one flat vector plus a layout
// descriptor, which makes federated averaging a plain vector operation.

struct ParamBlock {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;

  bool operator==(const ParamBlock&) const = default;
};

struct ParamLayout {
  std::vector<ParamBlock> blocks;
  std::size_t total = 0;

  bool operator==(const ParamLayout&) const = default;
  // Name of the block containing flat index i.
  const std::string& block_of(std::size_t i) const;
};

ParamLayout layout_of(const DenseNet& net);
std::vector<double> flatten(const DenseNet& net);
void unflatten(DenseNet& net, std::span<const double> params);
std::vector<double> flatten_gradients(const DenseNet& net, const Gradients& g);

// ---- Adam -------------------------------------------------------------------

struct AdamState {
  std::size_t step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<double> m;
  std::vector<double> v;

  explicit AdamState(std::size_t n_params = 0, double learning_rate = 1e-3)
      : lr(learning_rate), m(n_params, 0.0), v(n_params, 0.0) {}
};

// Standard bias-corrected Adam update, in place. Throws NumericError naming
// the offending parameter block if a gradient is non-finite.
void adam_step(AdamState& state, std::span<double> params,
               std::span<const double> grads, const ParamLayout& layout);

}  // namespace fedclust::nn
