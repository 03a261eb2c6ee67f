#include "kbgrade/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <thread>
#include <tuple>

#include "kbgrade/checkpoint.hpp"
#include "kbgrade/errors.hpp"

namespace kbgrade {

std::vector<Example> make_examples(const Dataset& data, std::span<const std::size_t> records,
                                   const ContextBuilder& builder) {
  std::vector<Example> out;
  out.reserve(records.size());
  for (std::size_t i : records) out.push_back({builder.build(i), data.records()[i].centered});
  return out;
}

double mean_squared_error(const Model& model, std::span<const Example> examples) {
  if (examples.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& ex : examples) {
    const double e = ex.grade - model.predict(ex.context);
    sum += e * e;
  }
  return sum / static_cast<double>(examples.size());
}

double objective(const Model& model, std::span<const Example> examples, const TrainConfig& cfg) {
  double penalty = 0.0;
  if (cfg.l2 != 0.0) {
    const auto mask = model.layout().regularized_mask(cfg.regularize_biases);
    const auto params = model.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (mask[i]) penalty += params[i] * params[i];
    }
  }
  return 0.5 * mean_squared_error(model, examples) + cfg.l2 * penalty;
}

std::vector<double> objective_gradient(const Model& model, std::span<const Example> examples,
                                       const TrainConfig& cfg) {
  const auto params = model.parameters();
  GradientBuffer grad(params.size());
  ForwardCache cache;
  const double n = static_cast<double>(examples.size());
  for (const auto& ex : examples) {
    const double residual = ex.grade - model.forward(ex.context, cache);
    model.backward(ex.context, cache, -residual / n, grad);
  }
  auto dense = grad.dense();
  if (cfg.l2 != 0.0) {
    const auto mask = model.layout().regularized_mask(cfg.regularize_biases);
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (mask[i]) dense[i] += 2.0 * cfg.l2 * params[i];
    }
  }
  return dense;
}

AdaGrad::AdaGrad(std::size_t size, double learning_rate, double epsilon)
    : accum_(size, 0.0), learning_rate_(learning_rate), epsilon_(epsilon) {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (!(epsilon > 0.0)) throw std::invalid_argument("AdaGrad epsilon must be positive");
}

void AdaGrad::step(std::span<double> params, const GradientBuffer& grad) {
  for (std::size_t i : grad.touched()) {
    const double g = grad[i];
    accum_[i] += g * g;
    params[i] -= learning_rate_ * g / (std::sqrt(accum_[i]) + epsilon_);
  }
}

TrainResult train(Model model, std::span<const Example> train_set,
                  std::span<const Example> validation, const TrainConfig& cfg) {
  if (train_set.empty()) throw DataError("training set is empty");
  if (cfg.batch_size == 0) throw std::invalid_argument("batch size must be >= 1");
  if (cfg.l2 < 0.0) throw std::invalid_argument("l2 strength must be non-negative");

  const auto mask = model.layout().regularized_mask(cfg.regularize_biases);
  AdaGrad optimizer(model.parameters().size(), cfg.learning_rate, cfg.epsilon);
  GradientBuffer grad(model.parameters().size());
  ForwardCache cache;
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  auto measure = [&](std::size_t epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_mse = mean_squared_error(model, train_set);
    rec.validation_mse = validation.empty() ? rec.train_mse : mean_squared_error(model, validation);
    rec.objective = objective(model, train_set, cfg);
    if (!std::isfinite(rec.train_mse) || !std::isfinite(rec.validation_mse) ||
        !std::isfinite(rec.objective)) {
      throw NumericError("training diverged at epoch " + std::to_string(epoch) +
                         " (non-finite loss)");
    }
    return rec;
  };

  TrainResult result{model, {}, 0, 0.0};
  result.history.push_back(measure(0));
  result.best_validation_mse = result.history.back().validation_mse;
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const double scale = 1.0 / static_cast<double>(end - start);
      grad.clear();
      for (std::size_t k = start; k < end; ++k) {
        const auto& ex = train_set[order[k]];
        const double residual = ex.grade - model.forward(ex.context, cache);
        model.backward(ex.context, cache, -residual * scale, grad);
      }
      if (cfg.l2 != 0.0) {
        const auto params = model.parameters();
        for (std::size_t i : grad.touched()) {
          if (mask[i]) grad.at(i) += 2.0 * cfg.l2 * params[i];
        }
      }
      optimizer.step(model.parameters(), grad);
    }

    result.history.push_back(measure(epoch));
    const double val = result.history.back().validation_mse;
    if (val < result.best_validation_mse) {
      result.best_validation_mse = val;
      result.best_epoch = epoch;
      std::copy(model.parameters().begin(), model.parameters().end(),
                result.model.parameters().begin());
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  return result;
}

void write_history(std::ostream& out, const std::vector<EpochRecord>& history) {
  out << "epoch\ttrain_mse\tvalidation_mse\tobjective\n";
  for (const auto& rec : history) {
    out << rec.epoch << '\t' << format_double(rec.train_mse) << '\t'
        << format_double(rec.validation_mse) << '\t' << format_double(rec.objective) << '\n';
  }
}

std::vector<EpochRecord> read_history(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "epoch\ttrain_mse\tvalidation_mse\tobjective") {
    throw DataError("history: missing header");
  }
  std::vector<EpochRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string epoch, train, val, obj;
    if (!std::getline(row, epoch, '\t') || !std::getline(row, train, '\t') ||
        !std::getline(row, val, '\t') || !std::getline(row, obj)) {
      throw DataError("history: malformed row '" + line + "'");
    }
    out.push_back({std::stoul(epoch), parse_double(train), parse_double(val), parse_double(obj)});
  }
  return out;
}

std::vector<GridPoint> expand_grid(const ModelConfig& base_model, const TrainConfig& base_train,
                                   const GridSpec& grid) {
  const ModelKind kind = base_model.kind;
  const bool sparse = kind == ModelKind::nak_sparse || kind == ModelKind::cnak;
  auto pick = [](const auto& list, auto base, bool relevant) {
    using T = std::decay_t<decltype(base)>;
    if (!relevant) return std::vector<T>{base};
    if (list.empty()) throw std::invalid_argument("grid value lists must be non-empty");
    return std::vector<T>(list.begin(), list.end());
  };
  const auto dims = pick(grid.dims, base_model.dim, true);
  const auto l2s = pick(grid.l2, base_train.l2, true);
  const auto lrs = pick(grid.learning_rates, base_train.learning_rate, true);
  const auto atts = pick(grid.attention_dims, base_model.attention_dim, uses_prior_attention(kind));
  const auto gammas = pick(grid.gammas, base_model.gamma, sparse);
  const auto decays = pick(grid.decays, base_model.decay, uses_decay(kind));

  std::vector<GridPoint> points;
  for (auto d : dims)
    for (auto l2 : l2s)
      for (auto lr : lrs)
        for (auto l : atts)
          for (auto g : gammas)
            for (auto decay : decays) {
              GridPoint pt{base_model, base_train};
              pt.model.dim = d;
              pt.model.attention_dim = l;
              pt.model.gamma = g;
              pt.model.decay = decay;
              pt.train.l2 = l2;
              pt.train.learning_rate = lr;
              points.push_back(pt);
            }
  return points;
}

GridResult grid_search(const ModelConfig& base_model, const TrainConfig& base_train,
                       const GridSpec& grid, const Vocabulary& courses,
                       const Vocabulary& students, std::span<const Example> train_set,
                       std::span<const Example> validation, std::size_t threads) {
  const auto points = expand_grid(base_model, base_train, grid);
  GridResult result;
  result.rows.resize(points.size());

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < points.size(); i = next++) {
      auto& row = result.rows[i];
      row.point = points[i];
      try {
        Model model(row.point.model, courses, students);
        model.initialize(row.point.train.seed);
        auto fitted = train(std::move(model), train_set, validation, row.point.train);
        row.validation_mse = fitted.best_validation_mse;
        row.best_epoch = fitted.best_epoch;
      } catch (const std::exception& e) {
        row.validation_mse = std::numeric_limits<double>::infinity();
        row.error = e.what();
      }
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, points.size()));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }

  auto key = [&](std::size_t i) {
    const auto& row = result.rows[i];
    return std::make_tuple(row.validation_mse, row.point.model.dim, row.point.train.l2, i);
  };
  for (std::size_t i = 1; i < result.rows.size(); ++i) {
    if (key(i) < key(result.best)) result.best = i;
  }
  return result;
}

void write_grid(std::ostream& out, const GridResult& result) {
  out << "kind\tdim\tl2\tlearning_rate\tattention_dim\tgamma\tdecay\tvalidation_mse\tbest_epoch"
         "\tstatus\n";
  for (std::size_t i = 0; i < result.rows.size(); ++i) {
    const auto& row = result.rows[i];
    const auto& m = row.point.model;
    const auto& t = row.point.train;
    out << model_kind_name(m.kind) << '\t' << m.dim << '\t' << format_double(t.l2) << '\t'
        << format_double(t.learning_rate) << '\t' << m.attention_dim << '\t'
        << format_double(m.gamma) << '\t' << format_double(m.decay) << '\t'
        << format_double(row.validation_mse) << '\t' << row.best_epoch << '\t'
        << (row.error.empty() ? (i == result.best ? "best" : "ok") : "failed: " + row.error)
        << '\n';
  }
}

}  // namespace kbgrade
