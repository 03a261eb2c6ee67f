#include "kbgrade/activations.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace kbgrade {
namespace {

void check_scores(std::span<const double> z) {
  if (z.empty()) throw std::invalid_argument("activation input must be non-empty");
  for (double v : z) {
    if (!std::isfinite(v)) throw std::invalid_argument("activation input must be finite");
  }
}

void check_upstream(const SimplexWeights& a, std::span<const double> upstream) {
  if (upstream.size() != a.weights.size()) {
    throw std::invalid_argument("upstream gradient size does not match activation output");
  }
}

}  // namespace

SimplexWeights softmax(std::span<const double> z) {
  check_scores(z);
  const double shift = *std::max_element(z.begin(), z.end());
  SimplexWeights out;
  out.weights.resize(z.size());
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    out.weights[i] = std::exp(z[i] - shift);
    total += out.weights[i];
  }
  for (double& w : out.weights) w /= total;
  out.support.resize(z.size());
  std::iota(out.support.begin(), out.support.end(), std::size_t{0});
  return out;
}

SimplexWeights sparsemax(std::span<const double> z) {
  check_scores(z);
  SimplexWeights out;
  out.weights.assign(z.size(), 0.0);
  if (z.size() == 1) {
    out.weights[0] = 1.0;
    out.support = {0};
    return out;
  }

  std::vector<double> sorted(z.begin(), z.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());

  // Largest k with 1 + k z_(k) >= sum_{j<=k} z_(j); equality keeps k in the support.
  double cumsum = 0.0;
  double support_sum = 0.0;
  std::size_t k = 0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    cumsum += sorted[i];
    if (1.0 + static_cast<double>(i + 1) * sorted[i] >= cumsum) {
      k = i + 1;
      support_sum = cumsum;
    }
  }
  const double tau = (support_sum - 1.0) / static_cast<double>(k);
  const double cutoff = sorted[k - 1];
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (z[i] >= cutoff) {
      out.weights[i] = std::max(z[i] - tau, 0.0);
      out.support.push_back(i);
    }
  }
  return out;
}

SimplexWeights sparsegen(std::span<const double> z, double gamma) {
  if (!(gamma < 1.0)) throw std::invalid_argument("sparsegen requires gamma < 1");
  std::vector<double> scaled(z.begin(), z.end());
  const double temperature = 1.0 - gamma;
  for (double& v : scaled) v /= temperature;
  return sparsemax(scaled);
}

std::vector<double> softmax_vjp(const SimplexWeights& a, std::span<const double> upstream) {
  check_upstream(a, upstream);
  double dot = 0.0;
  for (std::size_t i = 0; i < upstream.size(); ++i) dot += a.weights[i] * upstream[i];
  std::vector<double> out(upstream.size());
  for (std::size_t i = 0; i < upstream.size(); ++i) out[i] = a.weights[i] * (upstream[i] - dot);
  return out;
}

std::vector<double> sparsemax_vjp(const SimplexWeights& a, std::span<const double> upstream,
                                  double scale) {
  check_upstream(a, upstream);
  if (a.support.empty()) throw std::invalid_argument("sparsemax support is empty");
  double mean = 0.0;
  for (std::size_t i : a.support) mean += upstream[i];
  mean /= static_cast<double>(a.support.size());
  std::vector<double> out(upstream.size(), 0.0);
  for (std::size_t i : a.support) out[i] = (upstream[i] - mean) * scale;
  return out;
}

std::vector<double> sparsegen_vjp(const SimplexWeights& a, std::span<const double> upstream,
                                  double gamma) {
  if (!(gamma < 1.0)) throw std::invalid_argument("sparsegen requires gamma < 1");
  return sparsemax_vjp(a, upstream, 1.0 / (1.0 - gamma));
}

SimplexWeights Activation::apply(std::span<const double> z) const {
  return kind == ActivationKind::softmax ? softmax(z) : sparsegen(z, gamma);
}

std::vector<double> Activation::vjp(const SimplexWeights& a,
                                    std::span<const double> upstream) const {
  return kind == ActivationKind::softmax ? softmax_vjp(a, upstream)
                                         : sparsegen_vjp(a, upstream, gamma);
}

}  // namespace kbgrade
