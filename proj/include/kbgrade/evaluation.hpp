#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>

#include "kbgrade/data.hpp"
#include "kbgrade/grades.hpp"
#include "kbgrade/model.hpp"

namespace kbgrade {

/// Tick metrics are percentages in [0, 100].
struct TickMetrics {
  double pta0 = 0.0;
  double pta1 = 0.0;
  double pta2 = 0.0;
  double severe_under = 0.0;  // predicted >= 3 ticks below actual
  double severe_over = 0.0;   // predicted >= 3 ticks above actual
};

struct EvalReport {
  std::size_t n = 0;
  double rmse = 0.0;      // centered scale
  double rmse_raw = 0.0;  // GPA scale after de-centering and clamping
  TickMetrics ticks;
};

struct GradePair {
  double actual = 0.0;
  double predicted = 0.0;
};

struct LetterPair {
  LetterGrade actual;
  LetterGrade predicted;
};

/// sqrt(mean((actual - predicted)^2)). Throws std::invalid_argument when empty.
double rmse(std::span<const GradePair> pairs);

/// De-centers, clamps to [0, 4] and rounds to the nearest ladder step.
LetterGrade to_letter(double predicted_centered, double prior_gpa);

/// Throws std::invalid_argument when empty.
TickMetrics tick_metrics(std::span<const LetterPair> pairs);

/// Predicts every record in `targets`. Throws DataError when `targets` is empty.
EvalReport evaluate(const Model& model, const Dataset& data, std::span<const std::size_t> targets);

/// "key: value" lines.
void write_report(std::ostream& out, const EvalReport& report);
EvalReport read_report(std::istream& in);
/// Single-line JSON record.
std::string report_json(const EvalReport& report);

}  // namespace kbgrade
