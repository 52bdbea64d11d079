// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "increg/gemm.hpp"
#include "increg/gradcheck.hpp"
#include "increg/im2col.hpp"
#include "increg/network.hpp"
#include "increg/rng.hpp"
#include "increg/sgd.hpp"
#include "oracles.hpp"

using namespace increg;

namespace {

NetworkSpec toy_spec() {
  NetworkSpec s;
  s.input = {3, 8, 8};
  s.num_classes = 4;
  s.layers = {ConvSpec{8, 3, 1, 1, std::nullopt}, ReluSpec{}, MaxPoolSpec{2, 2},
              ConvSpec{16, 3, 1, 1, std::nullopt}, ReluSpec{}, MaxPoolSpec{2, 2}, FcSpec{4}};
  s.prune_ratios = {0.5, 0.5};
  return s;
}

template <typename T>
void check_conv(double tol, std::size_t stride, std::size_t pad) {
  const std::size_t n = 2, c = 3, h = 7, w = 6, f = 5, k = 3;
  auto in = oracle::random_values<T>(n * c * h * w, 11);
  auto wt = oracle::random_values<T>(f * c * k * k, 12);
  auto b = oracle::random_values<T>(f, 13);
  std::size_t oh = 0, ow = 0;
  const auto ref = oracle::naive_conv(in, n, c, h, w, wt, f, k, b, stride, pad, oh, ow);
  const Tensor<T> x(Shape4{n, c, h, w}, in);
  const Tensor<T> wk(Shape4{f, c, k, k}, wt);
  const Tensor<T> y = conv2d_im2col(x, wk, std::span<const T>(b), stride, pad);
  REQUIRE(y.shape() == Shape4{n, f, oh, ow});
  double worst = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i)
    worst = std::max(worst, std::abs(static_cast<double>(y.storage()[i]) - ref[i]));
  CHECK(worst <= tol);
}

}  // namespace

TEST_SUITE("tensor-nn") {

TEST_CASE("im2col convolution matches the direct loop") {
  for (std::size_t stride : {1, 2})
    for (std::size_t pad : {0, 1}) {
      CAPTURE(stride);
      CAPTURE(pad);
      check_conv<float>(1e-6, stride, pad);
      check_conv<double>(1e-12, stride, pad);
    }
}

TEST_CASE("col2im is the adjoint of im2col") {
  const ConvGeometry g{2, 5, 6, 3, 3, 2, 1};
  const std::size_t n = 2;
  const Tensor<double> x(Shape4{n, 2, 5, 6}, oracle::random_values<double>(n * 60, 3));
  const Matrix<double> cols = im2col(x, g);
  Matrix<double> y(cols.rows, cols.cols);
  y.data = oracle::random_values<double>(cols.data.size(), 4);
  const Tensor<double> back = col2im(y, g, n);
  const double lhs = std::inner_product(cols.data.begin(), cols.data.end(), y.data.begin(), 0.0);
  const double rhs =
      std::inner_product(x.storage().begin(), x.storage().end(), back.storage().begin(), 0.0);
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("gemm agrees with a triple loop for every transpose combination") {
  const std::size_t m = 7, n = 5, k = 9;
  const auto a = oracle::random_values<double>(m * k, 21);
  const auto b = oracle::random_values<double>(k * n, 22);
  for (Transpose ta : {Transpose::kNo, Transpose::kYes})
    for (Transpose tb : {Transpose::kNo, Transpose::kYes}) {
      std::vector<double> c(m * n, 1.0);
      const std::size_t lda = ta == Transpose::kNo ? k : m;
      const std::size_t ldb = tb == Transpose::kNo ? n : k;
      gemm(ta, tb, m, n, k, 2.0, a.data(), lda, b.data(), ldb, 0.5, c.data(), n);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          double acc = 0.0;
          for (std::size_t p = 0; p < k; ++p) {
            const double av = ta == Transpose::kNo ? a[i * k + p] : a[p * m + i];
            const double bv = tb == Transpose::kNo ? b[p * n + j] : b[j * k + p];
            acc += av * bv;
          }
          CHECK(c[i * n + j] == doctest::Approx(2.0 * acc + 0.5).epsilon(1e-12));
        }
    }
}

TEST_CASE("gemm output does not depend on the thread count") {
  const std::size_t m = 64, n = 300, k = 75;
  const auto a = oracle::random_values<float>(m * k, 5);
  const auto b = oracle::random_values<float>(k * n, 6);
  std::vector<float> one(m * n), four(m * n);
  const int saved = gemm_threads();
  set_gemm_threads(1);
  gemm(Transpose::kNo, Transpose::kNo, m, n, k, 1.0f, a.data(), k, b.data(), n, 0.0f, one.data(), n);
  set_gemm_threads(4);
  gemm(Transpose::kNo, Transpose::kNo, m, n, k, 1.0f, a.data(), k, b.data(), n, 0.0f, four.data(), n);
  set_gemm_threads(saved);
  CHECK(one == four);
}

TEST_CASE("network forward matches the scalar oracle") {
  const std::size_t batch = 3;
  const std::vector<int> labels{0, 3, 1};
  Network<double> net(toy_spec(), 7);
  const auto input = oracle::random_values<double>(batch * 3 * 64, 8);
  const double loss = net.forward(Tensor<double>(Shape4{batch, 3, 8, 8}, input), labels);
  const auto ref = oracle::scalar_forward(net, input, batch);
  REQUIRE(ref.size() == net.logits().size());
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(net.logits().storage()[i] - ref[i]) <= 1e-12);
  CHECK(std::abs(loss - oracle::cross_entropy(ref, 4, labels)) <= 1e-12);

  // float32 accumulates over 144-term dot products: looser bound.
  Network<float> single = net.cast<float>();
  const std::vector<float> input_f(input.begin(), input.end());
  single.forward(Tensor<float>(Shape4{batch, 3, 8, 8}, input_f), labels);
  const auto ref_f = oracle::scalar_forward(single, input_f, batch);
  for (std::size_t i = 0; i < ref_f.size(); ++i)
    CHECK(std::abs(single.logits().storage()[i] - ref_f[i]) <= 1e-5);
}

TEST_CASE("backprop agrees with central differences") {
  Network<double> net(toy_spec(), 3);
  const std::size_t batch = 4;
  const Tensor<double> x(Shape4{batch, 3, 8, 8}, oracle::random_values<double>(batch * 192, 9));
  const std::vector<int> labels{0, 1, 2, 3};
  const GradCheckReport rep = grad_check(net, x, labels);
  CHECK(rep.passed());
  CHECK(rep.max_rel_error < 1e-6);
  CHECK(net.parameter_count() <= 10000);
}

TEST_CASE("a linear-only network checks far below the tolerance") {
  NetworkSpec s;
  s.input = {2, 3, 3};
  s.num_classes = 3;
  s.layers = {FcSpec{3}};
  Network<double> net(s, 5);
  const Tensor<double> x(Shape4{2, 2, 3, 3}, oracle::random_values<double>(36, 12));
  const std::vector<int> labels{2, 0};
  // Only the softmax head is nonlinear, so the error is pure truncation.
  CHECK(grad_check(net, x, labels).max_rel_error < 1e-7);
}

TEST_CASE("gradient check flags a corrupted gradient") {
  Network<double> net(toy_spec(), 3);
  const Tensor<double> x(Shape4{2, 3, 8, 8}, oracle::random_values<double>(2 * 192, 10));
  const std::vector<int> labels{1, 2};
  net.forward(x, labels);
  net.backward();
  std::vector<ParamBlock<double>> analytic(net.layer_count());
  for (std::size_t l : net.spec().param_layers()) analytic[l] = net.grads(l);
  for (double& g : analytic[0].weight.storage()) g *= 1.01;
  const GradCheckReport rep = compare_gradients(net, x, labels, analytic);
  CHECK_FALSE(rep.passed());
  CHECK(rep.layers.front().flagged);
}

TEST_CASE("sgd step worked examples") {
  SgdConfig cfg;
  cfg.learning_rate = 1.0;
  std::vector<double> w{1.0}, g{0.0};
  sgd_step<double>(w, g, std::vector<double>{0.1}, cfg);
  CHECK(w[0] == doctest::Approx(0.9).epsilon(1e-15));

  cfg.learning_rate = 0.1;
  w = {2.0, -3.0};
  g = {0.0, 0.0};
  sgd_step<double>(w, g, {}, cfg);
  CHECK(w == std::vector<double>{2.0, -3.0});

  // Decay past 1/lr clamps the shrink factor at zero.
  w = {5.0};
  g = {1.0};
  sgd_step<double>(w, g, std::vector<double>{20.0}, cfg);
  CHECK(w[0] == doctest::Approx(-0.1));

  w = {4.0, 4.0};
  g = {1.0, 1.0};
  const std::vector<std::uint8_t> pruned{0, 1};
  sgd_step<double>(w, g, {}, cfg, pruned);
  CHECK(w[1] == 0.0);
  CHECK(w[0] == doctest::Approx(3.9));
  CHECK_THROWS_AS(sgd_step<double>(w, std::vector<double>{1.0}, {}, cfg), ShapeError);
}

TEST_CASE("non-finite inputs raise NumericError") {
  Network<float> net(toy_spec(), 1);
  Tensor<float> x(Shape4{1, 3, 8, 8}, 0.5f);
  x.storage()[5] = NAN;
  const std::vector<int> labels{0};
  CHECK_THROWS_AS(net.forward(x, labels), NumericError);
}

TEST_CASE("shape errors") {
  CHECK_THROWS_AS(Tensor<float>(Shape4{1, 2, 2, 2}, std::vector<float>(7)), ShapeError);
  Network<float> net(toy_spec(), 1);
  const Tensor<float> x(Shape4{2, 3, 8, 8});
  const std::vector<int> one{0};
  CHECK_THROWS_AS(net.forward(x, one), ShapeError);
  const Tensor<float> wrong(Shape4{1, 3, 2, 2});
  const Tensor<float> k(Shape4{1, 3, 3, 3});
  CHECK_THROWS_AS(conv2d_im2col(wrong, k, std::span<const float>{}, 1, 0), ShapeError);
  NetworkSpec bad = toy_spec();
  bad.layers.pop_back();
  CHECK_THROWS_AS(bad.validate(), ShapeError);
}

TEST_CASE("equal seeds give equal streams and initialisations") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());
  const Network<float> n1(toy_spec(), 9), n2(toy_spec(), 9), n3(toy_spec(), 10);
  CHECK(n1.params(0).weight.storage() == n2.params(0).weight.storage());
  CHECK(n1.params(0).weight.storage() != n3.params(0).weight.storage());
}

}  // TEST_SUITE
