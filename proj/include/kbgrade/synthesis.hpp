#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "kbgrade/data.hpp"
#include "kbgrade/model.hpp"

namespace kbgrade {

/// course id -> ids of its prerequisite courses.
using PrerequisiteMap = std::map<std::string, std::set<std::string>>;

enum class GeneratorKind { krm, nak };

GeneratorKind parse_generator_kind(std::string_view name);

struct SynthSpec {
  std::size_t n_students = 500;
  std::size_t n_courses = 40;
  std::size_t dim = 8;
  std::size_t terms_per_student = 6;
  std::size_t courses_per_term = 4;
  double noise = 0.1;  // sigma of the Gaussian grade noise
  PrerequisiteMap prerequisites;
  std::uint64_t seed = 1;
  std::size_t start_spread = 9;    // students start in one of this many calendar terms
  double first_term_spread = 0.5;  // sd of first-term grades around the course bias
  double embedding_scale = 0.5;    // krm: p, r ~ U[-scale, scale]
  double decay = 0.0;              // krm: planted time decay
};

/// Canonical id of synthetic course `index`: C000, C001, ...
std::string synthetic_course_id(std::size_t index);

/// Courses arranged in `topics` chains: course c belongs to topic c % topics at
/// level c / topics and requires every lower level of its topic.
PrerequisiteMap layered_prerequisites(std::size_t n_courses, std::size_t topics);

/// Each course after the first gets one prerequisite among lower-numbered
/// courses with probability `edge_probability`.
PrerequisiteMap random_prerequisites(std::size_t n_courses, double edge_probability,
                                     std::uint64_t seed);

/// Throws DataError when the map has a cycle or names an unknown course.
void validate_prerequisites(const PrerequisiteMap& prerequisites, std::size_t n_courses);

struct SyntheticDataset {
  Dataset data;
  Model planted;  // krm-sum for krm data, nak-sparse for nak data
  PrerequisiteMap prerequisites;
  std::size_t clamped = 0;  // grades clamped into [0, 4]
  // nak: mean planted attention mass on prerequisites over records that have one.
  double prerequisite_mass = 0.0;
};

/// Samples planted parameters and student transcripts. Grades are produced in
/// centered space and stored as raw GPA so that row-centering recovers them.
SyntheticDataset generate(const SynthSpec& spec, GeneratorKind kind);

struct RecoveryScore {
  double score = 0.0;   // fraction of probes whose top-attention prior is a prerequisite
  double chance = 0.0;  // mean fraction of priors that are prerequisites
  std::size_t probes = 0;
};

/// Contexts (in the model's index space) for records whose priors include at
/// least one prerequisite of the target. Keeps at most `max_probes`.
std::vector<PredictionContext> make_probes(const Dataset& data,
                                           std::span<const std::size_t> records,
                                           const Model& model,
                                           const PrerequisiteMap& prerequisites,
                                           std::size_t max_probes);

RecoveryScore attention_recovery_score(const Model& model, const PrerequisiteMap& prerequisites,
                                       std::span<const PredictionContext> probes);

/// Tab-separated: course, comma-joined prerequisites.
void write_prerequisites(std::ostream& out, const PrerequisiteMap& prerequisites);
PrerequisiteMap read_prerequisites(std::istream& in);

/// Writes data.csv, planted_checkpoint.txt and prerequisites.tsv into `dir`.
void write_synthetic(const std::filesystem::path& dir, const SyntheticDataset& synthetic);

}  // namespace kbgrade
