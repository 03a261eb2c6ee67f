#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace kbgrade {

/// Bidirectional map between external string ids and dense indices.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> ids);

  std::size_t intern(std::string_view id);
  std::optional<std::size_t> find(std::string_view id) const;
  const std::string& id(std::size_t index) const { return ids_.at(index); }
  std::size_t size() const noexcept { return ids_.size(); }
  const std::vector<std::string>& ids() const noexcept { return ids_; }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.ids_ == b.ids_; }

 private:
  std::vector<std::string> ids_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// One transcript line before grouping.
struct TranscriptRow {
  std::string student;
  std::string course;
  std::string term;
  double raw = 0.0;
};

/// One (student, course, term, grade) observation.
struct GradeRecord {
  std::size_t student = 0;     // index into Dataset::students
  std::size_t course = 0;      // index into Dataset::courses
  std::string term;            // calendar term token, ordered lexicographically
  std::size_t term_index = 0;  // relative term number w, 1-based per student
  double raw = 0.0;            // GPA points in [0, 4]
  double centered = 0.0;       // raw minus reference_gpa, never exactly 0
  double reference_gpa = 0.0;  // mean raw of strictly earlier terms (first term: own term)
  std::size_t prior_courses = 0;
};

/// Replacement for a centered grade that comes out exactly zero.
inline constexpr double kZeroCenteredGrade = 0.01;

/// Immutable after construction; records are grouped by student and sorted by term.
class Dataset {
 public:
  Dataset() = default;

  const Vocabulary& students() const noexcept { return students_; }
  const Vocabulary& courses() const noexcept { return courses_; }
  const std::vector<GradeRecord>& records() const noexcept { return records_; }
  std::span<const GradeRecord> history(std::size_t student) const;
  /// Index of the first record of `student` within records().
  std::size_t history_offset(std::size_t student) const { return ranges_.at(student).first; }
  std::size_t dropped_pass_fail() const noexcept { return dropped_pass_fail_; }

  /// Groups rows per student, orders them by calendar term, assigns relative
  /// term indices and row-centers every student. Throws DataError on duplicate
  /// (student, course, term) rows or grades outside [0, 4].
  static Dataset from_rows(std::vector<TranscriptRow> rows, std::size_t dropped_pass_fail = 0);

 private:
  Vocabulary students_;
  Vocabulary courses_;
  std::vector<GradeRecord> records_;
  std::vector<std::pair<std::size_t, std::size_t>> ranges_;
  std::size_t dropped_pass_fail_ = 0;
};

/// Parses a grade cell: a ladder symbol or a decimal in [0, 4]. Returns nullopt
/// for pass/fail marks. Throws DataError for anything else.
std::optional<double> parse_grade(std::string_view cell);

/// Canonical text for a grade: the ladder symbol when the value sits exactly on
/// the ladder, otherwise the shortest decimal that round-trips.
std::string format_grade(double raw);

/// Reads `student_id,course_id,term,grade` CSV with a header row.
Dataset read_csv(std::istream& in);
Dataset ingest(const std::filesystem::path& path);

void write_csv(const Dataset& data, std::ostream& out);
void export_csv(const Dataset& data, const std::filesystem::path& path);

/// Fills `centered`, `reference_gpa` and `prior_courses` for one student's
/// records, which must already be sorted by term_index.
void row_center(std::span<GradeRecord> student_records);

/// Chronological partition of a dataset by calendar-term boundaries.
struct DatasetSplit {
  std::string train_end;
  std::string val_end;
  // Windows: term <= train_end, train_end < term <= val_end, term > val_end.
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
  // Prediction targets after eligibility filtering.
  std::vector<std::size_t> train_targets;
  std::vector<std::size_t> validation_targets;
  std::vector<std::size_t> test_targets;
  std::vector<std::string> warnings;
};

struct SplitOptions {
  std::size_t min_prior_eval = 4;   // prior courses required for validation/test targets
  std::size_t min_prior_train = 1;  // prior courses required for training targets
};

DatasetSplit split_chronological(const Dataset& data, std::string_view train_end,
                                 std::string_view val_end, const SplitOptions& options = {});

/// Picks calendar boundaries so that roughly `train_frac` of the records fall in
/// the train window and `val_frac` in the validation window.
std::pair<std::string, std::string> boundaries_by_fraction(const Dataset& data, double train_frac,
                                                           double val_frac);

}  // namespace kbgrade
