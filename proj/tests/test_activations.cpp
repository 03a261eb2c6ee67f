#include <doctest.h>

#include <cmath>
#include <random>

#include "kbgrade/activations.hpp"
#include "oracles.hpp"

using namespace kbgrade;

namespace {

std::vector<double> random_vector(std::mt19937_64& rng, std::size_t k, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(k);
  for (auto& x : v) x = u(rng);
  return v;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

bool near(double a, double b, double tol) { return std::abs(a - b) <= tol; }

}  // namespace

TEST_CASE("softmax examples") {
  auto a = softmax(std::vector<double>{0.0, 0.0}).weights;
  CHECK(near(a[0], 0.5, 1e-15));
  CHECK(near(a[1], 0.5, 1e-15));
  a = softmax(std::vector<double>{std::log(2.0), 0.0}).weights;
  CHECK(near(a[0], 2.0 / 3.0, 1e-12));
  CHECK(near(a[1], 1.0 / 3.0, 1e-12));
  a = softmax(std::vector<double>{1000.0, 0.0}).weights;
  CHECK(a[0] == 1.0);
  CHECK(std::isfinite(a[1]));
  CHECK(a[1] < 1e-300);
}

TEST_CASE("sparsemax examples") {
  auto a = sparsemax(std::vector<double>{0.5, 0.5});
  CHECK(a.weights == std::vector<double>{0.5, 0.5});
  a = sparsemax(std::vector<double>{2.0, 0.0});
  CHECK(a.weights == std::vector<double>{1.0, 0.0});
  CHECK(a.support == std::vector<std::size_t>{0});
  CHECK(oracle::simplex_projection(std::vector<double>{2.0, 0.0}) == std::vector<double>{1.0, 0.0});
  a = sparsemax(std::vector<double>{0.1, 0.1, 0.1});
  for (double w : a.weights) CHECK(near(w, 1.0 / 3.0, 1e-15));
  CHECK(sparsemax(std::vector<double>{-7.0}).weights == std::vector<double>{1.0});
}

TEST_CASE("sparsemax agrees with the projection oracle") {
  std::mt19937_64 rng(11);
  for (std::size_t k : {1u, 2u, 3u, 4u, 6u, 8u}) {
    for (int trial = 0; trial < 100; ++trial) {
      const auto z = random_vector(rng, k, -3.0, 3.0);
      const auto got = sparsemax(z).weights;
      const auto want = oracle::simplex_projection(z);
      for (std::size_t i = 0; i < k; ++i) CHECK(near(got[i], want[i], 1e-9));
    }
  }
}

TEST_CASE("sparsegen examples") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const auto z = random_vector(rng, 5, -2.0, 2.0);
    CHECK(sparsegen(z, 0.0).weights == sparsemax(z).weights);
  }
  const auto a = sparsegen(std::vector<double>{2.0, 0.0}, 0.5);
  CHECK(a.weights == std::vector<double>{1.0, 0.0});
  CHECK(oracle::simplex_projection(std::vector<double>{4.0, 0.0}) == std::vector<double>{1.0, 0.0});
  for (double gamma : {0.0, 0.3, 0.9}) {
    const auto u = sparsegen(std::vector<double>{0.7, 0.7, 0.7, 0.7}, gamma).weights;
    for (double w : u) CHECK(near(w, 0.25, 1e-15));
  }
  CHECK_THROWS_AS(sparsegen(std::vector<double>{1.0, 2.0}, 1.0), std::invalid_argument);
}

TEST_CASE("invalid activation input") {
  CHECK_THROWS_AS(sparsemax(std::vector<double>{}), std::invalid_argument);
  CHECK_THROWS_AS(softmax(std::vector<double>{}), std::invalid_argument);
  CHECK_THROWS_AS(sparsemax(std::vector<double>{1.0, NAN}), std::invalid_argument);
}

TEST_CASE("softmax vjp") {
  auto g = softmax_vjp({{1.0, 0.0}, {0}}, std::vector<double>{5.0, -2.0});
  CHECK(g == std::vector<double>{0.0, 0.0});
  g = softmax_vjp({{0.5, 0.5}, {0, 1}}, std::vector<double>{1.0, 0.0});
  CHECK(near(g[0], 0.25, 1e-15));
  CHECK(near(g[1], -0.25, 1e-15));

  std::mt19937_64 rng(3);
  const double h = 1e-5;
  for (int trial = 0; trial < 50; ++trial) {
    auto z = random_vector(rng, 5, -2.0, 2.0);
    const auto up = random_vector(rng, 5, -1.0, 1.0);
    const auto analytic = softmax_vjp(softmax(z), up);
    for (std::size_t i = 0; i < 5; ++i) {
      auto zp = z, zm = z;
      zp[i] += h;
      zm[i] -= h;
      const double fd =
          (dot(up, oracle::softmax(zp)) - dot(up, oracle::softmax(zm))) / (2.0 * h);
      CHECK(near(analytic[i], fd, 1e-6));
    }
  }
}

TEST_CASE("sparsemax vjp") {
  auto g = sparsemax_vjp({{0.25, 0.25, 0.25, 0.25}, {0, 1, 2, 3}}, std::vector<double>{1, 1, 1, 1});
  for (double v : g) CHECK(v == 0.0);
  g = sparsemax_vjp({{1.0, 0.0}, {0}}, std::vector<double>{3.0, 7.0});
  CHECK(g == std::vector<double>{0.0, 0.0});

  std::mt19937_64 rng(8);
  const double h = 1e-5;
  int checked = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const double gamma = trial % 2 ? 0.0 : 0.5;
    const auto z = random_vector(rng, 5, -1.5, 1.5);
    const auto up = random_vector(rng, 5, -1.0, 1.0);
    const auto base = sparsegen(z, gamma);
    // Skip points within reach of a support change.
    const double tau = z[base.support[0]] / (1.0 - gamma) - base.weights[base.support[0]];
    bool stable = true;
    for (double v : z) stable = stable && std::abs(v / (1.0 - gamma) - tau) > 1e-3;
    if (!stable) continue;
    ++checked;
    const auto analytic = sparsegen_vjp(base, up, gamma);
    for (std::size_t i = 0; i < 5; ++i) {
      auto zp = z, zm = z;
      zp[i] += h;
      zm[i] -= h;
      auto scaled = [&](std::vector<double> v) {
        for (auto& x : v) x /= (1.0 - gamma);
        return oracle::simplex_projection(v);
      };
      const double fd = (dot(up, scaled(zp)) - dot(up, scaled(zm))) / (2.0 * h);
      CHECK(near(analytic[i], fd, 1e-5));
    }
  }
  CHECK(checked > 100);
}

TEST_CASE("activation dispatch") {
  const std::vector<double> z{0.3, -0.2, 1.1};
  const Activation soft{ActivationKind::softmax, 0.0};
  const Activation sparse{ActivationKind::sparsegen, 0.5};
  CHECK(soft.apply(z).weights == softmax(z).weights);
  CHECK(sparse.apply(z).weights == sparsegen(z, 0.5).weights);
}

TEST_CASE("outputs lie on the simplex") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 500; ++trial) {
    const auto z = random_vector(rng, 1 + trial % 9, -50.0, 50.0);
    for (const auto& a : {softmax(z), sparsemax(z), sparsegen(z, 0.5), sparsegen(z, 0.9)}) {
      double sum = 0.0;
      for (double w : a.weights) {
        CHECK(w >= 0.0);
        sum += w;
      }
      CHECK(near(sum, 1.0, 1e-9));
      for (std::size_t i = 0; i < a.weights.size(); ++i) {
        const bool listed = std::find(a.support.begin(), a.support.end(), i) != a.support.end();
        CHECK(listed == (a.weights[i] > 0.0));
      }
    }
  }
}
