#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace kbgrade {

/// A point on the probability simplex plus the index set the forward pass
/// treated as active. For sparsemax the support can contain an index sitting
/// exactly on the threshold (weight 0); the Jacobian uses it as active.
struct SimplexWeights {
  std::vector<double> weights;
  std::vector<std::size_t> support;  // ascending
};

/// Max-shifted softmax. Full support.
SimplexWeights softmax(std::span<const double> z);

/// Euclidean projection onto the simplex by sort and threshold.
SimplexWeights sparsemax(std::span<const double> z);

/// sparsemax(z / (1 - gamma)). Throws std::invalid_argument for gamma >= 1.
SimplexWeights sparsegen(std::span<const double> z, double gamma);

/// (diag(a) - a a^T) * upstream
std::vector<double> softmax_vjp(const SimplexWeights& a, std::span<const double> upstream);

/// Generalised Jacobian of sparsemax applied to `upstream`: centre over the
/// support, zero elsewhere, then multiply by `scale`.
std::vector<double> sparsemax_vjp(const SimplexWeights& a, std::span<const double> upstream,
                                  double scale = 1.0);

/// sparsemax_vjp scaled by 1 / (1 - gamma).
std::vector<double> sparsegen_vjp(const SimplexWeights& a, std::span<const double> upstream,
                                  double gamma);

enum class ActivationKind { softmax, sparsegen };

/// Attention normaliser selected by a model kind.
struct Activation {
  ActivationKind kind = ActivationKind::softmax;
  double gamma = 0.0;

  SimplexWeights apply(std::span<const double> z) const;
  std::vector<double> vjp(const SimplexWeights& a, std::span<const double> upstream) const;
};

}  // namespace kbgrade
