#include "kbgrade/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "kbgrade/checkpoint.hpp"
#include "kbgrade/errors.hpp"

namespace kbgrade {

double rmse(std::span<const GradePair> pairs) {
  if (pairs.empty()) throw std::invalid_argument("rmse of an empty list");
  double sum = 0.0;
  for (const auto& p : pairs) {
    const double e = p.actual - p.predicted;
    sum += e * e;
  }
  return std::sqrt(sum / static_cast<double>(pairs.size()));
}

LetterGrade to_letter(double predicted_centered, double prior_gpa) {
  return LetterGrade::nearest(predicted_centered + prior_gpa);
}

TickMetrics tick_metrics(std::span<const LetterPair> pairs) {
  if (pairs.empty()) throw std::invalid_argument("tick metrics of an empty list");
  std::size_t within[3] = {0, 0, 0};
  std::size_t under = 0;
  std::size_t over = 0;
  for (const auto& p : pairs) {
    const std::size_t dist = tick_distance(p.actual, p.predicted);
    for (std::size_t t = 0; t < 3; ++t) {
      if (dist <= t) ++within[t];
    }
    if (dist >= 3) {
      // Larger ladder index means a lower grade.
      if (p.predicted.index() > p.actual.index()) {
        ++under;
      } else {
        ++over;
      }
    }
  }
  const double n = static_cast<double>(pairs.size());
  auto pct = [n](std::size_t c) { return 100.0 * static_cast<double>(c) / n; };
  return {pct(within[0]), pct(within[1]), pct(within[2]), pct(under), pct(over)};
}

EvalReport evaluate(const Model& model, const Dataset& data, std::span<const std::size_t> targets) {
  if (targets.empty()) {
    throw DataError(
        "no eligible evaluation targets: a target needs at least 4 prior courses and a course "
        "that appears in the training window");
  }
  const ContextBuilder builder(data, model.courses(), model.students());
  std::vector<GradePair> centered;
  std::vector<GradePair> raw;
  std::vector<LetterPair> letters;
  centered.reserve(targets.size());
  raw.reserve(targets.size());
  letters.reserve(targets.size());
  for (std::size_t i : targets) {
    const auto& rec = data.records().at(i);
    const double predicted = model.predict(builder.build(i));
    centered.push_back({rec.centered, predicted});
    raw.push_back({rec.raw, std::clamp(predicted + rec.reference_gpa, kMinPoints, kMaxPoints)});
    letters.push_back({LetterGrade::nearest(rec.raw), to_letter(predicted, rec.reference_gpa)});
  }
  EvalReport report;
  report.n = targets.size();
  report.rmse = rmse(centered);
  report.rmse_raw = rmse(raw);
  report.ticks = tick_metrics(letters);
  return report;
}

void write_report(std::ostream& out, const EvalReport& r) {
  out << "n: " << r.n << '\n'
      << "rmse: " << format_double(r.rmse) << '\n'
      << "rmse_raw: " << format_double(r.rmse_raw) << '\n'
      << "pta0: " << format_double(r.ticks.pta0) << '\n'
      << "pta1: " << format_double(r.ticks.pta1) << '\n'
      << "pta2: " << format_double(r.ticks.pta2) << '\n'
      << "severe_under: " << format_double(r.ticks.severe_under) << '\n'
      << "severe_over: " << format_double(r.ticks.severe_over) << '\n';
}

EvalReport read_report(std::istream& in) {
  std::map<std::string, std::string> fields;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto colon = line.find(": ");
    if (colon == std::string::npos) throw DataError("report: malformed line '" + line + "'");
    fields[line.substr(0, colon)] = line.substr(colon + 2);
  }
  auto get = [&](const std::string& key) {
    auto it = fields.find(key);
    if (it == fields.end()) throw DataError("report: missing field " + key);
    return it->second;
  };
  EvalReport r;
  r.n = std::stoul(get("n"));
  r.rmse = parse_double(get("rmse"));
  r.rmse_raw = parse_double(get("rmse_raw"));
  r.ticks.pta0 = parse_double(get("pta0"));
  r.ticks.pta1 = parse_double(get("pta1"));
  r.ticks.pta2 = parse_double(get("pta2"));
  r.ticks.severe_under = parse_double(get("severe_under"));
  r.ticks.severe_over = parse_double(get("severe_over"));
  return r;
}

std::string report_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["n"] = r.n;
  j["rmse"] = r.rmse;
  j["rmse_raw"] = r.rmse_raw;
  j["pta0"] = r.ticks.pta0;
  j["pta1"] = r.ticks.pta1;
  j["pta2"] = r.ticks.pta2;
  j["severe_under"] = r.ticks.severe_under;
  j["severe_over"] = r.ticks.severe_over;
  return j.dump();
}

}  // namespace kbgrade
