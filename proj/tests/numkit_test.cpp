#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "structkit/errors.hpp"
#include "structkit/numkit.hpp"

using namespace structkit;
using namespace structkit::numkit;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor t = Tensor::matrix(r, c);
  for (auto& v : t.values()) v = n(rng);
  return t;
}

Param make_param(const std::string& name, Tensor value) {
  Param p{name, value, Tensor(value.shape())};
  return p;
}

// Loss = sum(weights . f(x)) for a scalar projection of an op output.
double dot(const Tensor& a, const Tensor& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("structkit_numkit_" + name)).string();
}

}  // namespace

TEST_CASE("masked softmax") {
  SUBCASE("examples") {
    Tensor a = Tensor::matrix(1, 2);
    auto p = masked_softmax(a);
    CHECK(p[0] == doctest::Approx(0.5));
    CHECK(p[1] == doctest::Approx(0.5));

    Tensor b = Tensor::matrix(1, 2);
    b[0] = 3;
    b[1] = kNegInf;
    p = masked_softmax(b);
    CHECK(p[0] == 1.0);
    CHECK(p[1] == 0.0);

    Tensor c = Tensor::matrix(1, 3);
    c[0] = 1;
    c[1] = 2;
    c[2] = kNegInf;
    p = masked_softmax(c);
    const double e = std::exp(1.0);
    CHECK(p[0] == doctest::Approx(1.0 / (1.0 + e)).epsilon(1e-14));
    CHECK(p[1] == doctest::Approx(e / (1.0 + e)).epsilon(1e-14));
    CHECK(p[2] == 0.0);
  }
  SUBCASE("fully masked row throws") {
    Tensor a = Tensor::matrix(2, 2, kNegInf);
    a(0, 0) = 1.0;
    CHECK_THROWS_AS(masked_softmax(a), AllMaskedRow);
  }
  SUBCASE("random rows sum to one, masked entries are exactly zero") {
    std::mt19937_64 rng(3);
    std::bernoulli_distribution mask(0.4);
    auto s = random_matrix(50, 17, rng, 20.0);
    for (std::size_t r = 0; r < 50; ++r) {
      for (std::size_t c = 1; c < 17; ++c) {
        if (mask(rng)) s(r, c) = kNegInf;
      }
    }
    const auto p = masked_softmax(s);
    for (std::size_t r = 0; r < 50; ++r) {
      double sum = 0;
      for (std::size_t c = 0; c < 17; ++c) {
        sum += p(r, c);
        if (std::isinf(s(r, c))) CHECK(p(r, c) == 0.0);
      }
      CHECK(std::abs(sum - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("cross entropy") {
  std::vector<double> grad(5);
  CHECK(cross_entropy(std::vector<double>(5, 0.7), 2, grad) == doctest::Approx(std::log(5.0)).epsilon(1e-14));
  CHECK(grad[2] == doctest::Approx(0.2 - 1.0));
  CHECK(grad[0] == doctest::Approx(0.2));

  std::vector<double> peaked(4, 0.0);
  peaked[1] = 20.0;
  CHECK(cross_entropy(peaked, 1) < 1e-8);

  CHECK(cross_entropy(std::vector<double>{1.0, 0.0}, 0) == doctest::Approx(std::log1p(std::exp(-1.0))).epsilon(1e-14));
  CHECK(cross_entropy(std::vector<double>{1.0, 0.0}, 0) == doctest::Approx(0.3133).epsilon(1e-4));
}

TEST_CASE("binary cross entropy is stable") {
  double g = 0;
  CHECK(binary_cross_entropy_logit(0.0, 1.0, &g) == doctest::Approx(std::log(2.0)));
  CHECK(g == doctest::Approx(-0.5));
  CHECK(std::isfinite(binary_cross_entropy_logit(800.0, 0.0)));
  CHECK(binary_cross_entropy_logit(800.0, 0.0) == doctest::Approx(800.0));
  CHECK(binary_cross_entropy_logit(-800.0, 0.0) < 1e-300);
}

TEST_CASE("matmul variants agree with a triple loop") {
  std::mt19937_64 rng(1);
  const auto a = random_matrix(5, 7, rng), b = random_matrix(7, 3, rng);
  Tensor ref = Tensor::matrix(5, 3);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      for (std::size_t k = 0; k < 7; ++k) ref(i, j) += a(i, k) * b(k, j);
    }
  }
  Tensor c;
  matmul(a, b, c);
  Tensor bt = Tensor::matrix(3, 7), at = Tensor::matrix(7, 5);
  for (std::size_t i = 0; i < 7; ++i) {
    for (std::size_t j = 0; j < 3; ++j) bt(j, i) = b(i, j);
    for (std::size_t j = 0; j < 5; ++j) at(i, j) = a(j, i);
  }
  Tensor c2, c3;
  matmul_bt(a, bt, c2);
  matmul_at(at, b, c3);
  for (std::size_t i = 0; i < ref.size(); ++i) {
    CHECK(c[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    CHECK(c2[i] == doctest::Approx(ref[i]).epsilon(1e-12));
    CHECK(c3[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
  matmul(a, b, c, true);
  CHECK(c[4] == doctest::Approx(2 * ref[4]).epsilon(1e-12));
}

TEST_CASE("AdamW") {
  SUBCASE("zero gradient, no decay leaves values alone") {
    ParamStore store;
    auto& p = store.add("w", {3});
    p.value.values() = {1.0, -2.0, 0.5};
    AdamW opt;
    opt.step(store);
    CHECK(p.value.values() == std::vector<double>{1.0, -2.0, 0.5});
    CHECK(opt.steps() == 1);
  }
  SUBCASE("first step moves by lr against the gradient sign") {
    ParamStore store;
    auto& p = store.add("w", {2});
    p.grad.values() = {0.3, -7.0};
    AdamW opt({0.01, 0.5, 0.9, 1e-8, 0.0});
    opt.step(store);
    CHECK(p.value[0] == doctest::Approx(-0.01).epsilon(1e-6));
    CHECK(p.value[1] == doctest::Approx(0.01).epsilon(1e-6));
    CHECK(std::abs(p.value[0]) < 0.01);
  }
  SUBCASE("matches the reference recurrence and decreases monotonically") {
    ParamStore store;
    auto& p = store.add("w", {1});
    p.value[0] = 1.0;
    AdamW opt({0.1, 0.9, 0.999, 1e-8, 0.0});
    double m = 0, v = 0, theta = 1.0, prev = 1.0;
    for (int t = 1; t <= 2; ++t) {
      p.grad[0] = 1.0;
      opt.step(store);
      m = 0.9 * m + 0.1;
      v = 0.999 * v + 0.001;
      theta -= 0.1 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
      CHECK(p.value[0] == doctest::Approx(theta).epsilon(1e-14));
      CHECK(p.value[0] < prev);
      prev = p.value[0];
    }
  }
  SUBCASE("weight decay is decoupled from the moments") {
    ParamStore store;
    auto& p = store.add("w", {1});
    p.value[0] = 2.0;
    AdamW opt({0.1, 0.9, 0.999, 1e-8, 0.5});
    opt.step(store);
    CHECK(p.value[0] == doctest::Approx(2.0 - 0.1 * 0.5 * 2.0).epsilon(1e-14));
  }
}

TEST_CASE("finite-difference checker") {
  SUBCASE("quadratic") {
    Param p = make_param("theta", Tensor({2}));
    p.value.values() = {1.0, 2.0};
    p.grad.values() = {2.0, 4.0};
    Param* ps[] = {&p};
    const auto loss = [&] { return p.value[0] * p.value[0] + p.value[1] * p.value[1]; };
    const auto report = finite_diff_check(loss, ps, {1e-3, 1e-4, 0, 0});
    CHECK(report.max_rel_error() < 1e-9);
    CHECK(p.value.values() == std::vector<double>{1.0, 2.0});
  }
  SUBCASE("masked softmax + cross entropy composite") {
    Param p = make_param("logits", Tensor::matrix(1, 3));
    p.value.values() = {0.3, -1.2, 0.8};
    Tensor mask = Tensor::matrix(1, 3);
    mask[1] = kNegInf;
    const auto loss = [&] {
      Tensor s = p.value;
      for (std::size_t i = 0; i < 3; ++i) s[i] += mask[i];
      return -std::log(masked_softmax(s)[2]);
    };
    Tensor s = p.value;
    s[1] = kNegInf;
    const auto probs = masked_softmax(s);
    Tensor dprobs = Tensor::matrix(1, 3);
    dprobs[2] = -1.0 / probs[2];
    p.grad = masked_softmax_backward(probs, dprobs);
    CHECK(p.grad[1] == 0.0);
    Param* ps[] = {&p};
    CHECK(finite_diff_check(loss, ps, {1e-4, 1e-6, 0, 0}).max_rel_error() < 1e-6);
  }
  SUBCASE("a corrupted backward pass is reported by name") {
    Param p = make_param("bad", Tensor({2}));
    p.value.values() = {0.5, -0.25};
    p.grad.values() = {std::cos(0.5), std::cos(-0.25) * 1.01};
    Param* ps[] = {&p};
    const auto loss = [&] { return std::sin(p.value[0]) + std::sin(p.value[1]); };
    try {
      finite_diff_check(loss, ps, {1e-4, 1e-4, 0, 0});
      FAIL("expected GradCheckFailure");
    } catch (const GradCheckFailure& e) {
      CHECK(e.param() == "bad");
      CHECK(e.rel_error() > 1e-3);
    }
  }
}

TEST_CASE("kernel backward passes") {
  std::mt19937_64 rng(11);
  const GradCheckOptions opts{1e-3, 1e-4, 0, 0};

  SUBCASE("matmul family") {
    Param a = make_param("a", random_matrix(3, 4, rng));
    Param b = make_param("b", random_matrix(4, 5, rng));
    const auto w = random_matrix(3, 5, rng);
    const auto loss = [&] {
      Tensor c;
      matmul(a.value, b.value, c);
      return dot(c, w);
    };
    matmul_bt(w, b.value, a.grad);  // dA = W B^T
    matmul_at(a.value, w, b.grad);  // dB = A^T W
    Param* ps[] = {&a, &b};
    CHECK(finite_diff_check(loss, ps, opts).max_rel_error() < 1e-4);
  }
  SUBCASE("masked softmax") {
    Param s = make_param("scores", random_matrix(4, 6, rng));
    const auto w = random_matrix(4, 6, rng);
    Tensor mask = Tensor::matrix(4, 6);
    mask(0, 3) = mask(2, 1) = mask(3, 5) = kNegInf;
    const auto masked = [&] {
      Tensor x = s.value;
      for (std::size_t i = 0; i < x.size(); ++i) x[i] += mask[i];
      return x;
    };
    const auto loss = [&] { return dot(masked_softmax(masked()), w); };
    s.grad = masked_softmax_backward(masked_softmax(masked()), w);
    CHECK(s.grad(0, 3) == 0.0);
    Param* ps[] = {&s};
    CHECK(finite_diff_check(loss, ps, opts).max_rel_error() < 1e-4);
  }
  SUBCASE("layer norm") {
    Param x = make_param("x", random_matrix(3, 8, rng));
    Param g = make_param("gain", Tensor({8}));
    Param b = make_param("bias", Tensor({8}));
    std::normal_distribution<double> n;
    for (auto& v : g.value.values()) v = 1.0 + 0.3 * n(rng);
    for (auto& v : b.value.values()) v = n(rng);
    const auto w = random_matrix(3, 8, rng);
    const auto loss = [&] { return dot(layer_norm(x.value, g.value, b.value, nullptr), w); };
    LayerNormCache cache;
    layer_norm(x.value, g.value, b.value, &cache);
    x.grad = layer_norm_backward(w, g.value, cache, g.grad, b.grad);
    Param* ps[] = {&x, &g, &b};
    CHECK(finite_diff_check(loss, ps, opts).max_rel_error() < 1e-4);
  }
  SUBCASE("gelu and binary cross entropy") {
    Param x = make_param("x", random_matrix(1, 20, rng, 2.0));
    const auto loss = [&] {
      double s = 0;
      for (std::size_t i = 0; i < 20; ++i) s += gelu(x.value[i]) + binary_cross_entropy_logit(x.value[i], i % 3 == 0);
      return s;
    };
    for (std::size_t i = 0; i < 20; ++i) {
      double g = 0;
      binary_cross_entropy_logit(x.value[i], i % 3 == 0, &g);
      x.grad[i] = gelu_grad(x.value[i]) + g;
    }
    Param* ps[] = {&x};
    CHECK(finite_diff_check(loss, ps, opts).max_rel_error() < 1e-4);
  }
}

TEST_CASE("checkpoints") {
  ParamStore store;
  std::mt19937_64 rng(5);
  store.add("a", {2, 3}).value = random_matrix(2, 3, rng);
  auto& b = store.add("b", {4});
  b.value.values() = {1e-300, -0.1, 3.0 / 7.0, 12345.678};
  const auto path = temp_path("ckpt.json");
  save_checkpoint(path, store, {{"note", "x"}});

  ParamStore other;
  other.add("a", {2, 3});
  other.add("b", {4});
  const auto j = read_checkpoint(path);
  CHECK(j.at("meta").at("note") == "x");
  restore_params(j, other);
  CHECK(other.at("a").value == store.at("a").value);
  CHECK(other.at("b").value == store.at("b").value);

  ParamStore wrong_shape;
  wrong_shape.add("a", {3, 2});
  wrong_shape.add("b", {4});
  CHECK_THROWS_AS(restore_params(j, wrong_shape), CheckpointError);
  ParamStore missing;
  missing.add("a", {2, 3});
  missing.add("c", {4});
  CHECK_THROWS_AS(restore_params(j, missing), CheckpointError);

  {
    std::ofstream out(path);
    out << R"({"format":"structkit-checkpoint","version":99,"params":[]})";
  }
  CHECK_THROWS_AS(read_checkpoint(path), CheckpointError);
  CHECK_THROWS_AS(read_checkpoint(temp_path("does_not_exist")), CheckpointError);
  std::filesystem::remove(path);
}
