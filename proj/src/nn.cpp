#include "arise/nn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include <nlohmann/json.hpp>

#include "arise/rng.hpp"

namespace arise::nn {

namespace {

void validate_dims(const std::vector<int>& dims) {
  if (dims.size() < 2) throw InvalidArchitecture("network needs at least an input and an output layer");
  for (int d : dims) {
    if (d <= 0) throw InvalidArchitecture("layer dimension must be positive, got " + std::to_string(d));
  }
}

Matrix orthogonal_block(int rows, int cols, double gain, Rng& rng) {
  const int tall = std::max(rows, cols);
  const int wide = std::min(rows, cols);
  Matrix a(tall, wide);
  for (int j = 0; j < wide; ++j) {
    for (int i = 0; i < tall; ++i) a(i, j) = rng.normal();
  }
  Eigen::HouseholderQR<Matrix> qr(a);
  Matrix q = qr.householderQ() * Matrix::Identity(tall, wide);
  const Matrix r = qr.matrixQR().topRows(wide).triangularView<Eigen::Upper>();
  // Sign convention makes the factorization unique (Q uniform under Haar measure).
  for (int j = 0; j < wide; ++j) {
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  }
  q *= gain;
  if (rows >= cols) return q;
  return q.transpose();
}

}  // namespace

DenseNet::DenseNet(std::vector<int> layer_dims) : layer_dims_(std::move(layer_dims)) {
  validate_dims(layer_dims_);
  for (std::size_t l = 0; l + 1 < layer_dims_.size(); ++l) {
    weights_.push_back(Matrix::Zero(layer_dims_[l + 1], layer_dims_[l]));
    biases_.push_back(Vector::Zero(layer_dims_[l + 1]));
    param_count_ += static_cast<std::size_t>(layer_dims_[l + 1]) * (layer_dims_[l] + 1);
  }
}

DenseNet DenseNet::orthogonal(std::vector<int> layer_dims, std::span<const double> gains,
                              std::uint64_t seed) {
  DenseNet net(std::move(layer_dims));
  if (gains.size() != net.num_layers()) {
    throw InvalidArchitecture("expected one gain per layer (" + std::to_string(net.num_layers()) +
                              "), got " + std::to_string(gains.size()));
  }
  Rng rng(seed);
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    net.weights_[l] = orthogonal_block(static_cast<int>(net.weights_[l].rows()),
                                       static_cast<int>(net.weights_[l].cols()), gains[l], rng);
  }
  return net;
}

Vector DenseNet::forward(const Vector& input) const {
  if (input.size() != input_dim()) {
    throw ShapeError("forward: expected input of length " + std::to_string(input_dim()) + ", got " +
                     std::to_string(input.size()));
  }
  Vector h = input;
  for (std::size_t l = 0; l < num_layers(); ++l) {
    Vector z = weights_[l] * h + biases_[l];
    h = (l + 1 < num_layers()) ? Vector(z.array().tanh()) : z;
  }
  return h;
}

Matrix DenseNet::forward_batch(const Matrix& inputs, ForwardCache* cache) const {
  if (inputs.rows() != input_dim()) {
    throw ShapeError("forward_batch: expected " + std::to_string(input_dim()) + " input rows, got " +
                     std::to_string(inputs.rows()));
  }
  if (cache) {
    cache->activations.clear();
    cache->activations.reserve(num_layers() + 1);
    cache->activations.push_back(inputs);
  }
  Matrix h = inputs;
  for (std::size_t l = 0; l < num_layers(); ++l) {
    Matrix z = weights_[l] * h;
    z.colwise() += biases_[l];
    if (l + 1 < num_layers()) z = z.array().tanh().matrix();
    h = std::move(z);
    if (cache) cache->activations.push_back(h);
  }
  return h;
}

ParamVector DenseNet::backward(const Vector& input, const Vector& output_gradient) const {
  if (output_gradient.size() != output_dim()) {
    throw ShapeError("backward: output gradient length " + std::to_string(output_gradient.size()) +
                     " != output dimension " + std::to_string(output_dim()));
  }
  ForwardCache cache;
  forward_batch(input, &cache);
  return backward_batch(cache, output_gradient);
}

ParamVector DenseNet::backward_batch(const ForwardCache& cache, const Matrix& output_gradients) const {
  if (cache.activations.size() != num_layers() + 1) throw ShapeError("backward_batch: cache does not match network");
  const Matrix& out = cache.activations.back();
  if (output_gradients.rows() != out.rows() || output_gradients.cols() != out.cols()) {
    throw ShapeError("backward_batch: output gradient shape does not match forward output");
  }
  if (!cache.activations.front().allFinite() || !output_gradients.allFinite()) {
    throw NumericError("backward_batch: non-finite input or output gradient");
  }

  ParamVector grad(param_count_);
  // Offsets of each layer's block in the flat layout.
  std::vector<std::size_t> offsets(num_layers());
  std::size_t offset = 0;
  for (std::size_t l = 0; l < num_layers(); ++l) {
    offsets[l] = offset;
    offset += static_cast<std::size_t>(weights_[l].size() + biases_[l].size());
  }

  Matrix delta = output_gradients;
  for (std::size_t l = num_layers(); l-- > 0;) {
    const Matrix& a_in = cache.activations[l];
    Eigen::Map<Matrix> gw(grad.data() + offsets[l], weights_[l].rows(), weights_[l].cols());
    gw.noalias() = delta * a_in.transpose();
    Eigen::Map<Vector> gb(grad.data() + offsets[l] + weights_[l].size(), biases_[l].size());
    gb = delta.rowwise().sum();
    if (l > 0) {
      Matrix back = weights_[l].transpose() * delta;
      delta = (back.array() * (1.0 - a_in.array().square())).matrix();
    }
  }
  return grad;
}

ParamVector DenseNet::get_flat() const {
  ParamVector flat(param_count_);
  std::size_t offset = 0;
  for (std::size_t l = 0; l < num_layers(); ++l) {
    std::memcpy(flat.data() + offset, weights_[l].data(), sizeof(double) * weights_[l].size());
    offset += weights_[l].size();
    std::memcpy(flat.data() + offset, biases_[l].data(), sizeof(double) * biases_[l].size());
    offset += biases_[l].size();
  }
  return flat;
}

void DenseNet::set_flat(std::span<const double> values) {
  if (values.size() != param_count_) {
    throw ShapeError("set_flat: expected " + std::to_string(param_count_) + " values, got " +
                     std::to_string(values.size()));
  }
  std::size_t offset = 0;
  for (std::size_t l = 0; l < num_layers(); ++l) {
    std::memcpy(weights_[l].data(), values.data() + offset, sizeof(double) * weights_[l].size());
    offset += weights_[l].size();
    std::memcpy(biases_[l].data(), values.data() + offset, sizeof(double) * biases_[l].size());
    offset += biases_[l].size();
  }
}

bool DenseNet::operator==(const DenseNet& other) const {
  if (layer_dims_ != other.layer_dims_) return false;
  for (std::size_t l = 0; l < num_layers(); ++l) {
    if (weights_[l] != other.weights_[l] || biases_[l] != other.biases_[l]) return false;
  }
  return true;
}

void write_f64_array(std::ostream& out, std::span<const double> values) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(double)));
  } else {
    for (double v : values) {
      char bytes[sizeof(double)];
      std::memcpy(bytes, &v, sizeof(double));
      std::reverse(bytes, bytes + sizeof(double));
      out.write(bytes, sizeof(double));
    }
  }
}

std::vector<double> read_f64_array(std::istream& in, std::size_t count) {
  std::vector<double> values(count);
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(count * sizeof(double)));
  if (!in) throw ShapeError("truncated f64 array: expected " + std::to_string(count) + " values");
  if constexpr (std::endian::native != std::endian::little) {
    for (double& v : values) {
      char bytes[sizeof(double)];
      std::memcpy(bytes, &v, sizeof(double));
      std::reverse(bytes, bytes + sizeof(double));
      std::memcpy(&v, bytes, sizeof(double));
    }
  }
  return values;
}

void write_fragment(std::ostream& out, const DenseNet& net) {
  nlohmann::json header{{"layer_dims", net.layer_dims()}, {"param_count", net.param_count()}};
  out << header.dump() << '\n';
  const ParamVector flat = net.get_flat();
  write_f64_array(out, std::span<const double>(flat.data(), flat.size()));
}

DenseNet read_fragment(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ShapeError("network fragment: missing header");
  const auto header = nlohmann::json::parse(line);
  DenseNet net(header.at("layer_dims").get<std::vector<int>>());
  const auto count = header.at("param_count").get<std::size_t>();
  if (count != net.param_count()) throw ShapeError("network fragment: param_count does not match layer_dims");
  net.set_flat(read_f64_array(in, count));
  return net;
}

Adam::Adam(std::size_t size, AdamConfig config) : config_(config) {
  state_.first_moment = Vector::Zero(static_cast<Eigen::Index>(size));
  state_.second_moment = Vector::Zero(static_cast<Eigen::Index>(size));
}

void Adam::step(Eigen::Ref<Vector> params, const Eigen::Ref<const Vector>& gradient) {
  if (params.size() != gradient.size() || params.size() != state_.first_moment.size()) {
    throw ShapeError("adam step: parameter, gradient and moment lengths differ");
  }
  if (!gradient.allFinite()) throw NumericError("adam step: non-finite gradient, update refused");

  ++state_.step_count;
  const double t = static_cast<double>(state_.step_count);
  state_.first_moment = config_.beta1 * state_.first_moment + (1.0 - config_.beta1) * gradient;
  state_.second_moment =
      config_.beta2 * state_.second_moment + (1.0 - config_.beta2) * gradient.cwiseProduct(gradient);
  const double c1 = 1.0 - std::pow(config_.beta1, t);
  const double c2 = 1.0 - std::pow(config_.beta2, t);
  params.array() -= config_.learning_rate * (state_.first_moment.array() / c1) /
                    ((state_.second_moment.array() / c2).sqrt() + config_.eps);
}

void Adam::reset() {
  state_.step_count = 0;
  state_.first_moment.setZero();
  state_.second_moment.setZero();
}

}  // namespace arise::nn
