#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "kbgrade/data.hpp"
#include "kbgrade/model.hpp"

namespace kbgrade {

struct TrainConfig {
  double l2 = 1e-5;  // lambda_reg
  double learning_rate = 0.005;
  std::size_t batch_size = 128;
  std::size_t max_epochs = 200;
  std::size_t patience = 10;
  std::uint64_t seed = 1;
  double epsilon = 1e-8;
  // Literal ||Theta||^2 over every parameter, scalar biases included.
  bool regularize_biases = false;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// One supervised prediction: context and the observed centered grade.
struct Example {
  PredictionContext context;
  double grade = 0.0;
};

std::vector<Example> make_examples(const Dataset& data, std::span<const std::size_t> records,
                                   const ContextBuilder& builder);

double mean_squared_error(const Model& model, std::span<const Example> examples);

/// (1 / 2N) * sum (g - g_hat)^2 + l2 * ||Theta||^2
double objective(const Model& model, std::span<const Example> examples, const TrainConfig& cfg);

/// Dense analytic gradient of objective().
std::vector<double> objective_gradient(const Model& model, std::span<const Example> examples,
                                       const TrainConfig& cfg);

/// Per-parameter adaptive step: G += g^2, theta -= lr * g / (sqrt(G) + eps).
class AdaGrad {
 public:
  AdaGrad(std::size_t size, double learning_rate, double epsilon);

  /// Updates only the parameters touched in `grad`.
  void step(std::span<double> params, const GradientBuffer& grad);
  std::span<const double> accumulators() const noexcept { return accum_; }

 private:
  std::vector<double> accum_;
  double learning_rate_;
  double epsilon_;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 0 is the initial model
  double train_mse = 0.0;
  double validation_mse = 0.0;
  double objective = 0.0;
};

struct TrainResult {
  Model model;  // snapshot with the best validation MSE
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_validation_mse = 0.0;
};

/// Mini-batch AdaGrad from the given starting parameters. Batches are drawn
/// without replacement from a per-epoch shuffle seeded by cfg.seed. When
/// `validation` is empty, the training MSE selects the snapshot instead.
/// Throws NumericError when the loss becomes non-finite.
TrainResult train(Model model, std::span<const Example> train_set,
                  std::span<const Example> validation, const TrainConfig& cfg);

/// Tab-separated: epoch, train_mse, validation_mse, objective.
void write_history(std::ostream& out, const std::vector<EpochRecord>& history);
std::vector<EpochRecord> read_history(std::istream& in);

/// Hyperparameter value lists. Lists that a model kind does not use are ignored.
struct GridSpec {
  std::vector<std::size_t> dims{8, 16, 32};
  std::vector<double> l2{1e-5, 1e-7, 1e-3};
  std::vector<double> learning_rates{0.0007, 0.001, 0.003, 0.005, 0.007};
  std::vector<std::size_t> attention_dims{1, 2, 3, 4};
  std::vector<double> gammas{0.5, 0.9};
  std::vector<double> decays{0.0, 0.3, 0.5, 0.7, 1.0};
};

struct GridPoint {
  ModelConfig model;
  TrainConfig train;
};

struct GridRow {
  GridPoint point;
  double validation_mse = 0.0;
  std::size_t best_epoch = 0;
  std::string error;  // non-empty when training this point failed
};

struct GridResult {
  std::vector<GridRow> rows;
  std::size_t best = 0;  // index into rows
};

/// Cartesian product of the lists relevant to base_model.kind.
std::vector<GridPoint> expand_grid(const ModelConfig& base_model, const TrainConfig& base_train,
                                   const GridSpec& grid);

/// Trains every grid point and picks the lowest validation MSE; ties go to the
/// smaller dimension, then the smaller l2. Failed points are recorded and skipped.
GridResult grid_search(const ModelConfig& base_model, const TrainConfig& base_train,
                       const GridSpec& grid, const Vocabulary& courses,
                       const Vocabulary& students, std::span<const Example> train_set,
                       std::span<const Example> validation, std::size_t threads = 1);

/// Tab-separated grid table, one row per point.
void write_grid(std::ostream& out, const GridResult& result);

}  // namespace kbgrade
