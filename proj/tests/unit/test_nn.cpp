#include <doctest.h>

#include <sstream>

#include "arise/nn.hpp"
#include "test_util.hpp"

using arise::Matrix;
using arise::Vector;
using arise::nn::Adam;
using arise::nn::DenseNet;

namespace {

DenseNet random_net(std::vector<int> dims, std::uint64_t seed) {
  const std::vector<double> gains(dims.size() - 1, 1.0);
  return DenseNet::orthogonal(std::move(dims), gains, seed);
}

}  // namespace

TEST_CASE("architecture validation") {
  CHECK_THROWS_AS(DenseNet({4}), arise::InvalidArchitecture);
  CHECK_THROWS_AS(DenseNet({4, 0, 2}), arise::InvalidArchitecture);
  CHECK_THROWS_AS(DenseNet({-1, 2}), arise::InvalidArchitecture);
  const DenseNet net({4, 64, 64, 2});
  CHECK(net.param_count() == 4 * 64 + 64 + 64 * 64 + 64 + 64 * 2 + 2);
  CHECK(net.get_flat().isZero());
}

TEST_CASE("orthogonal init gives scaled orthonormal rows or columns") {
  const std::vector<double> gains{std::sqrt(2.0), std::sqrt(2.0), 0.01};
  const DenseNet net = DenseNet::orthogonal({4, 64, 64, 2}, gains, 5);
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const Matrix& w = net.weight(l);
    const double g2 = gains[l] * gains[l];
    const Matrix gram = w.rows() <= w.cols() ? Matrix(w * w.transpose()) : Matrix(w.transpose() * w);
    CHECK((gram - g2 * Matrix::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(net.bias(l).isZero());
  }
  CHECK(DenseNet::orthogonal({4, 64, 64, 2}, gains, 5) == net);
  CHECK_FALSE(DenseNet::orthogonal({4, 64, 64, 2}, gains, 6) == net);
}

TEST_CASE("batched forward matches per-sample forward") {
  const DenseNet net = random_net({3, 8, 5, 2}, 11);
  arise::Rng rng(1);
  Matrix x(3, 6);
  for (int j = 0; j < 6; ++j) x.col(j) = arise::testing::random_vector(3, rng);
  const Matrix y = net.forward_batch(x);
  for (int j = 0; j < 6; ++j) CHECK((y.col(j) - net.forward(x.col(j))).norm() < 1e-14);
  CHECK_THROWS_AS(net.forward(Vector::Zero(4)), arise::ShapeError);
}

TEST_CASE("backward agrees with finite differences") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    DenseNet net = random_net({3, 7, 4, 2}, seed);
    arise::Rng rng(seed + 100);
    const Vector x = arise::testing::random_vector(3, rng);
    const Vector og = arise::testing::random_vector(2, rng);
    const Vector analytic = net.backward(x, og);
    const Vector numeric = arise::testing::finite_difference(
        [&](const Vector& p) {
          DenseNet probe = net;
          probe.set_flat(p);
          return probe.forward(x).dot(og);
        },
        net.get_flat());
    CHECK(arise::testing::relative_error(analytic, numeric) < 1e-7);
  }
}

TEST_CASE("backward_batch sums per-sample gradients") {
  const DenseNet net = random_net({2, 5, 3}, 4);
  arise::Rng rng(4);
  Matrix x(2, 4), og(3, 4);
  for (int j = 0; j < 4; ++j) {
    x.col(j) = arise::testing::random_vector(2, rng);
    og.col(j) = arise::testing::random_vector(3, rng);
  }
  arise::nn::ForwardCache cache;
  net.forward_batch(x, &cache);
  Vector expected = Vector::Zero(static_cast<Eigen::Index>(net.param_count()));
  for (int j = 0; j < 4; ++j) expected += net.backward(x.col(j), og.col(j));
  CHECK((net.backward_batch(cache, og) - expected).norm() < 1e-12);

  Matrix bad = og;
  bad(0, 0) = std::nan("");
  CHECK_THROWS_AS(net.backward_batch(cache, bad), arise::NumericError);
}

TEST_CASE("flat parameters round-trip and reject wrong sizes") {
  DenseNet net = random_net({3, 4, 2}, 9);
  const Vector flat = net.get_flat();
  DenseNet other({3, 4, 2});
  other.set_flat(flat);
  CHECK(other == net);
  // Layer 0 weight is stored column-major first.
  CHECK(flat(0) == net.weight(0)(0, 0));
  CHECK(flat(1) == net.weight(0)(1, 0));
  CHECK_THROWS_AS(other.set_flat(Vector::Zero(3)), arise::ShapeError);
}

TEST_CASE("fragment serialization is bit exact") {
  const DenseNet net = random_net({4, 6, 3}, 21);
  std::stringstream buf;
  arise::nn::write_fragment(buf, net);
  std::string header;
  std::getline(buf, header);
  CHECK(header.find("\"layer_dims\":[4,6,3]") != std::string::npos);
  buf.seekg(0);
  const DenseNet back = arise::nn::read_fragment(buf);
  CHECK(back == net);

  std::stringstream truncated(buf.str().substr(0, buf.str().size() - 8));
  CHECK_THROWS(arise::nn::read_fragment(truncated));
}

TEST_CASE("adam matches a reference trajectory") {
  arise::nn::AdamConfig cfg;
  cfg.learning_rate = 0.01;
  Adam adam(2, cfg);
  Vector p(2);
  p << 0.5, -1.0;
  Vector g(2);
  g << 0.1, -0.2;
  adam.step(p, g);
  CHECK(p(0) == doctest::Approx(0.4900000009999999).epsilon(1e-14));
  CHECK(p(1) == doctest::Approx(-0.9900000004999999).epsilon(1e-14));
  g << 0.3, 0.05;
  adam.step(p, g);
  CHECK(p(0) == doctest::Approx(0.480822190220559).epsilon(1e-14));
  CHECK(p(1) == doctest::Approx(-0.9853053191100446).epsilon(1e-14));
  CHECK(adam.state().step_count == 2);

  adam.reset();
  CHECK(adam.state().step_count == 0);
  CHECK(adam.state().first_moment.isZero());
}

TEST_CASE("adam refuses non-finite gradients without side effects") {
  Adam adam(2, {});
  Vector p = Vector::Ones(2);
  Vector g = Vector::Ones(2);
  adam.step(p, g);
  const Vector p_before = p;
  const arise::nn::AdamState s_before = adam.state();
  g(1) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(adam.step(p, g), arise::NumericError);
  CHECK(p == p_before);
  CHECK(adam.state().step_count == s_before.step_count);
  CHECK(adam.state().first_moment == s_before.first_moment);
}
