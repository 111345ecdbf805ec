#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "arise/common.hpp"

namespace arise::nn {

// Activations recorded by a batched forward pass; consumed by backward_batch.
// activations[0] is the input batch, activations[l + 1] the output of layer l.
struct ForwardCache {
  std::vector<Matrix> activations;
};

/// Fully connected network: tanh on hidden layers, identity on the output.
///
/// Parameters are laid out flat layer by layer, each layer contributing its
/// weight matrix (column-major, shape out x in) followed by its bias.
class DenseNet {
 public:
  /// Zero-initialized network. Throws InvalidArchitecture on fewer than two
  /// layers or a non-positive width.
  explicit DenseNet(std::vector<int> layer_dims);

  /// Orthogonal initialization: each weight matrix W has orthonormal rows
  /// (or columns, if taller than wide) scaled by its layer gain; biases zero.
  static DenseNet orthogonal(std::vector<int> layer_dims, std::span<const double> gains,
                             std::uint64_t seed);

  const std::vector<int>& layer_dims() const { return layer_dims_; }
  std::size_t num_layers() const { return weights_.size(); }
  int input_dim() const { return layer_dims_.front(); }
  int output_dim() const { return layer_dims_.back(); }
  std::size_t param_count() const { return param_count_; }

  Matrix& weight(std::size_t layer) { return weights_.at(layer); }
  const Matrix& weight(std::size_t layer) const { return weights_.at(layer); }
  Vector& bias(std::size_t layer) { return biases_.at(layer); }
  const Vector& bias(std::size_t layer) const { return biases_.at(layer); }

  Vector forward(const Vector& input) const;

  /// Columns of `inputs` are samples. When `cache` is given it receives every
  /// layer's activation for a later backward_batch call.
  Matrix forward_batch(const Matrix& inputs, ForwardCache* cache = nullptr) const;

  /// Gradient of output . output_gradient with respect to every parameter.
  ParamVector backward(const Vector& input, const Vector& output_gradient) const;

  /// Sum over the batch of per-sample gradients of output_j . output_gradients_j.
  ParamVector backward_batch(const ForwardCache& cache, const Matrix& output_gradients) const;

  ParamVector get_flat() const;
  void set_flat(std::span<const double> values);
  void set_flat(const ParamVector& values) { set_flat(std::span<const double>(values.data(), values.size())); }

  bool operator==(const DenseNet& other) const;

 private:
  std::vector<int> layer_dims_;
  std::vector<Matrix> weights_;
  std::vector<Vector> biases_;
  std::size_t param_count_ = 0;
};

/// Serialized network fragment: one-line JSON header {layer_dims, param_count}
/// followed by param_count little-endian f64 values.
void write_fragment(std::ostream& out, const DenseNet& net);
DenseNet read_fragment(std::istream& in);

// Raw little-endian f64 helpers shared by the checkpoint writers.
void write_f64_array(std::ostream& out, std::span<const double> values);
std::vector<double> read_f64_array(std::istream& in, std::size_t count);

struct AdamConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::int64_t step_count = 0;
  Vector first_moment;
  Vector second_moment;
};

/// Adam with bias correction. Refuses (NumericError) to apply a non-finite
/// gradient, leaving parameters and moments untouched.
class Adam {
 public:
  Adam() = default;
  Adam(std::size_t size, AdamConfig config);

  void step(Eigen::Ref<Vector> params, const Eigen::Ref<const Vector>& gradient);
  void reset();

  const AdamConfig& config() const { return config_; }
  const AdamState& state() const { return state_; }
  AdamState& state() { return state_; }

 private:
  AdamConfig config_;
  AdamState state_;
};

}  // namespace arise::nn
