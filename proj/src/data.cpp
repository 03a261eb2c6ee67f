#include "kbgrade/data.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>
#include <tuple>

#include "kbgrade/errors.hpp"
#include "kbgrade/grades.hpp"

namespace kbgrade {
namespace {

constexpr std::array<std::string_view, 7> kPassFailMarks{"S", "N", "P", "U", "NP", "CR", "NC"};

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    fields.push_back(trim(line.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

}  // namespace

Vocabulary::Vocabulary(std::vector<std::string> ids) {
  for (auto& id : ids) {
    if (index_.count(id) != 0) throw DataError("duplicate id in vocabulary: " + id);
    intern(id);
  }
}

std::size_t Vocabulary::intern(std::string_view id) {
  auto it = index_.find(std::string(id));
  if (it != index_.end()) return it->second;
  const std::size_t index = ids_.size();
  ids_.emplace_back(id);
  index_.emplace(ids_.back(), index);
  return index;
}

std::optional<std::size_t> Vocabulary::find(std::string_view id) const {
  auto it = index_.find(std::string(id));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::span<const GradeRecord> Dataset::history(std::size_t student) const {
  const auto [begin, end] = ranges_.at(student);
  return std::span<const GradeRecord>(records_).subspan(begin, end - begin);
}

Dataset Dataset::from_rows(std::vector<TranscriptRow> rows, std::size_t dropped_pass_fail) {
  Dataset data;
  data.dropped_pass_fail_ = dropped_pass_fail;

  // Students keep first-appearance order; rows within a student are stably sorted by term.
  std::vector<std::vector<std::size_t>> per_student;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& row = rows[i];
    if (!(row.raw >= kMinPoints && row.raw <= kMaxPoints)) {
      throw DataError("grade " + format_grade(row.raw) + " for student " + row.student +
                      " is outside [0, 4]");
    }
    const std::size_t s = data.students_.intern(row.student);
    if (s == per_student.size()) per_student.emplace_back();
    per_student[s].push_back(i);
  }

  data.records_.reserve(rows.size());
  data.ranges_.reserve(per_student.size());
  for (std::size_t s = 0; s < per_student.size(); ++s) {
    auto& idx = per_student[s];
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return rows[a].term < rows[b].term; });
    const std::size_t begin = data.records_.size();
    std::set<std::pair<std::string_view, std::string_view>> seen;
    std::size_t term_index = 0;
    const std::string* previous_term = nullptr;
    for (std::size_t i : idx) {
      auto& row = rows[i];
      if (!seen.emplace(row.term, row.course).second) {
        throw DataError("student " + row.student + " has course " + row.course +
                        " twice in term " + row.term);
      }
      if (previous_term == nullptr || *previous_term != row.term) ++term_index;
      previous_term = &row.term;
      GradeRecord rec;
      rec.student = s;
      rec.course = data.courses_.intern(row.course);
      rec.term = row.term;
      rec.term_index = term_index;
      rec.raw = row.raw;
      data.records_.push_back(std::move(rec));
    }
    data.ranges_.emplace_back(begin, data.records_.size());
    row_center(std::span<GradeRecord>(data.records_).subspan(begin, data.records_.size() - begin));
  }
  return data;
}

void row_center(std::span<GradeRecord> records) {
  double prior_sum = 0.0;
  std::size_t prior_count = 0;
  std::size_t i = 0;
  while (i < records.size()) {
    std::size_t j = i;
    double term_sum = 0.0;
    while (j < records.size() && records[j].term_index == records[i].term_index) {
      term_sum += records[j].raw;
      ++j;
    }
    // The first term has no earlier grades; it is centered on its own mean.
    const double reference = prior_count == 0 ? term_sum / static_cast<double>(j - i)
                                              : prior_sum / static_cast<double>(prior_count);
    for (std::size_t k = i; k < j; ++k) {
      auto& rec = records[k];
      rec.reference_gpa = reference;
      rec.centered = rec.raw - reference;
      if (rec.centered == 0.0) rec.centered = kZeroCenteredGrade;
      rec.prior_courses = prior_count;
    }
    prior_sum += term_sum;
    prior_count += j - i;
    i = j;
  }
}

std::optional<double> parse_grade(std::string_view cell) {
  cell = trim(cell);
  if (auto letter = LetterGrade::parse(cell)) return letter->points();
  if (std::find(kPassFailMarks.begin(), kPassFailMarks.end(), cell) != kPassFailMarks.end()) {
    return std::nullopt;
  }
  double value = 0.0;
  const auto* end = cell.data() + cell.size();
  const auto [ptr, ec] = std::from_chars(cell.data(), end, value);
  if (ec != std::errc() || ptr != end || cell.empty()) {
    throw DataError("unrecognised grade '" + std::string(cell) + "'");
  }
  if (!(value >= kMinPoints && value <= kMaxPoints)) {
    throw DataError("grade " + std::string(cell) + " is outside [0, 4]");
  }
  return value;
}

std::string format_grade(double raw) {
  if (auto letter = exact_letter(raw)) return std::string(letter->symbol());
  std::array<char, 32> buf{};
  const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), raw);
  return std::string(buf.data(), ptr);
}

Dataset read_csv(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  std::vector<TranscriptRow> rows;
  std::size_t dropped = 0;
  std::set<std::tuple<std::string, std::string, std::string>> seen;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_fields(line);
    if (!header_seen) {
      header_seen = true;
      if (fields.size() != 4 || fields[0] != "student_id" || fields[1] != "course_id" ||
          fields[2] != "term" || fields[3] != "grade") {
        throw ParseError(line_no, "expected header 'student_id,course_id,term,grade'");
      }
      continue;
    }
    if (fields.size() != 4) {
      throw ParseError(line_no, "expected 4 fields, found " + std::to_string(fields.size()));
    }
    for (std::size_t f = 0; f < 3; ++f) {
      if (fields[f].empty()) throw ParseError(line_no, "empty field");
    }
    std::optional<double> grade;
    try {
      grade = parse_grade(fields[3]);
    } catch (const DataError& e) {
      throw ParseError(line_no, e.what());
    }
    if (!grade) {
      ++dropped;
      continue;
    }
    TranscriptRow row{std::string(fields[0]), std::string(fields[1]), std::string(fields[2]), *grade};
    if (!seen.emplace(row.student, row.course, row.term).second) {
      throw ParseError(line_no, "duplicate record for student " + row.student + ", course " +
                                    row.course + ", term " + row.term);
    }
    rows.push_back(std::move(row));
  }
  if (!header_seen) throw ParseError(line_no, "missing header row");
  return Dataset::from_rows(std::move(rows), dropped);
}

Dataset ingest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open input file: " + path.string());
  return read_csv(in);
}

void write_csv(const Dataset& data, std::ostream& out) {
  out << "student_id,course_id,term,grade\n";
  for (const auto& rec : data.records()) {
    out << data.students().id(rec.student) << ',' << data.courses().id(rec.course) << ','
        << rec.term << ',' << format_grade(rec.raw) << '\n';
  }
}

void export_csv(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write file: " + path.string());
  write_csv(data, out);
}

DatasetSplit split_chronological(const Dataset& data, std::string_view train_end,
                                 std::string_view val_end, const SplitOptions& options) {
  if (!(train_end < val_end)) {
    throw DataError("configuration error: train_end (" + std::string(train_end) +
                    ") must precede val_end (" + std::string(val_end) + ")");
  }
  DatasetSplit split;
  split.train_end = train_end;
  split.val_end = val_end;

  const auto& records = data.records();
  std::vector<char> in_train(data.courses().size(), 0);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& rec = records[i];
    if (rec.term <= train_end) {
      split.train.push_back(i);
      in_train[rec.course] = 1;
    } else if (rec.term <= val_end) {
      split.validation.push_back(i);
    } else {
      split.test.push_back(i);
    }
  }
  if (split.train.empty()) {
    throw DataError("configuration error: no records on or before train_end " +
                    std::string(train_end));
  }

  for (std::size_t i : split.train) {
    if (records[i].prior_courses >= options.min_prior_train) split.train_targets.push_back(i);
  }
  auto eligible = [&](std::size_t i) {
    return records[i].prior_courses >= options.min_prior_eval && in_train[records[i].course];
  };
  std::copy_if(split.validation.begin(), split.validation.end(),
               std::back_inserter(split.validation_targets), eligible);
  std::copy_if(split.test.begin(), split.test.end(), std::back_inserter(split.test_targets),
               eligible);

  if (split.test.empty()) {
    split.warnings.push_back("test window is empty: every record falls on or before " +
                             std::string(val_end));
  } else if (split.test_targets.empty()) {
    split.warnings.push_back("no eligible test targets (need >= " +
                             std::to_string(options.min_prior_eval) +
                             " prior courses and a course seen in training)");
  }
  if (split.validation.empty()) {
    split.warnings.push_back("validation window is empty");
  }
  return split;
}

std::pair<std::string, std::string> boundaries_by_fraction(const Dataset& data, double train_frac,
                                                           double val_frac) {
  if (!(train_frac > 0.0 && val_frac >= 0.0 && train_frac + val_frac < 1.0)) {
    throw DataError("configuration error: fractions must satisfy 0 < train, 0 <= val, train + val < 1");
  }
  std::map<std::string, std::size_t> per_term;
  for (const auto& rec : data.records()) ++per_term[rec.term];
  if (per_term.size() < 3) throw DataError("configuration error: need at least 3 calendar terms");

  const double total = static_cast<double>(data.records().size());
  std::vector<std::string> terms;
  std::vector<double> cumulative;
  double running = 0.0;
  for (const auto& [term, count] : per_term) {
    running += static_cast<double>(count);
    terms.push_back(term);
    cumulative.push_back(running / total);
  }
  auto first_reaching = [&](double frac, std::size_t lo, std::size_t hi) {
    std::size_t i = lo;
    while (i < hi && cumulative[i] < frac) ++i;
    return std::min(i, hi);
  };
  const std::size_t last = terms.size() - 1;
  const std::size_t t = first_reaching(train_frac, 0, last - 2);
  const std::size_t v = first_reaching(train_frac + val_frac, t + 1, last - 1);
  return {terms[t], terms[v]};
}

}  // namespace kbgrade
