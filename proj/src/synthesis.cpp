#include "kbgrade/synthesis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "kbgrade/checkpoint.hpp"
#include "kbgrade/errors.hpp"
#include "kbgrade/grades.hpp"

namespace kbgrade {
namespace {

constexpr double kRequiredPrerequisiteMass = 0.8;
constexpr double kInitialBoost = 4.0;
constexpr int kMaxBoostDoublings = 8;

std::string calendar_term(std::size_t index) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%04zu-%zu", 2000 + index / 3, index % 3 + 1);
  return buf;
}

std::string student_id(std::size_t index) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "S%05zu", index);
  return buf;
}

Vocabulary canonical_courses(std::size_t n) {
  std::vector<std::string> ids;
  ids.reserve(n);
  for (std::size_t i = 0; i < n; ++i) ids.push_back(synthetic_course_id(i));
  return Vocabulary(std::move(ids));
}

/// prerequisites[c] as canonical indices.
std::vector<std::vector<std::size_t>> index_prerequisites(const PrerequisiteMap& map,
                                                          const Vocabulary& courses) {
  std::vector<std::vector<std::size_t>> out(courses.size());
  for (const auto& [course, prereqs] : map) {
    const auto c = courses.find(course);
    for (const auto& pre : prereqs) out[*c].push_back(*courses.find(pre));
  }
  return out;
}

/// Weakly connected components of the prerequisite graph, numbered by lowest member.
std::vector<std::size_t> components(const std::vector<std::vector<std::size_t>>& prereqs) {
  const std::size_t n = prereqs.size();
  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  std::function<std::size_t(std::size_t)> root = [&](std::size_t x) {
    return parent[x] == x ? x : parent[x] = root(parent[x]);
  };
  for (std::size_t c = 0; c < n; ++c) {
    for (std::size_t pre : prereqs[c]) parent[root(c)] = root(pre);
  }
  std::vector<std::size_t> label(n), id_of_root(n, kUnknownIndex);
  std::size_t next = 0;
  for (std::size_t c = 0; c < n; ++c) {
    const std::size_t r = root(c);
    if (id_of_root[r] == kUnknownIndex) id_of_root[r] = next++;
    label[c] = id_of_root[r];
  }
  return label;
}

Model plant_krm(const SynthSpec& spec, const Vocabulary& courses, std::mt19937_64& rng) {
  ModelConfig cfg;
  cfg.kind = ModelKind::krm_sum;
  cfg.dim = spec.dim;
  cfg.decay = spec.decay;
  Model model(cfg, courses, Vocabulary{});
  std::uniform_real_distribution<double> emb(-spec.embedding_scale, spec.embedding_scale);
  std::uniform_real_distribution<double> bias(-0.3, 0.3);
  for (double& v : model.segment("course_provided")) v = emb(rng);
  for (double& v : model.segment("course_required")) v = emb(rng);
  for (double& v : model.segment("course_bias")) v = bias(rng);
  return model;
}

// Each prerequisite component owns one embedding axis, so p_i . r_j > 0 exactly
// when i and j share a component. A single-unit attention net reads that dot
// product and `boost` scales it into sparse attention scores.
Model plant_nak(const SynthSpec& spec, const Vocabulary& courses,
                const std::vector<std::vector<std::size_t>>& prereqs, double boost,
                std::mt19937_64& rng) {
  ModelConfig cfg;
  cfg.kind = ModelKind::nak_sparse;
  cfg.dim = spec.dim;
  cfg.attention_dim = 1;
  cfg.gamma = 0.0;
  cfg.grade_weighted_attention = false;
  Model model(cfg, courses, Vocabulary{});
  const auto label = components(prereqs);
  std::uniform_real_distribution<double> mag(0.8, 1.2);
  std::uniform_real_distribution<double> bias(-0.3, 0.3);
  auto p = model.segment("course_provided");
  auto r = model.segment("course_required");
  auto b = model.segment("course_bias");
  for (std::size_t c = 0; c < courses.size(); ++c) {
    const std::size_t axis = label[c] % spec.dim;
    p[c * spec.dim + axis] = mag(rng);
    r[c * spec.dim + axis] = mag(rng);
    b[c] = bias(rng);
  }
  for (double& w : model.segment("prior_att_W")) w = 1.0;
  model.segment("prior_att_h")[0] = boost;
  return model;
}

struct Generated {
  Dataset data;
  std::size_t clamped = 0;
  double mass = 0.0;
};

Generated sample_transcripts(const SynthSpec& spec, GeneratorKind kind, const Model& planted,
                             const std::vector<std::vector<std::size_t>>& prereqs,
                             std::mt19937_64& rng) {
  const std::size_t nc = spec.n_courses;
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> base_gpa(2.6, 3.4);
  std::uniform_int_distribution<std::size_t> start_term(0, spec.start_spread - 1);

  std::vector<TranscriptRow> rows;
  rows.reserve(spec.n_students * spec.terms_per_student * spec.courses_per_term);
  std::size_t clamped = 0;
  double mass_sum = 0.0;
  std::size_t mass_count = 0;

  for (std::size_t s = 0; s < spec.n_students; ++s) {
    const std::string sid = student_id(s);
    const std::size_t start = start_term(rng);
    std::vector<char> taken(nc, 0);
    std::vector<PriorCourse> history;  // canonical indices, gap filled per target
    std::vector<std::size_t> history_term;
    double prior_sum = 0.0;
    std::size_t prior_count = 0;

    for (std::size_t w = 1; w <= spec.terms_per_student; ++w) {
      std::vector<std::size_t> eligible;
      for (std::size_t c = 0; c < nc; ++c) {
        if (taken[c]) continue;
        const bool ready = std::all_of(prereqs[c].begin(), prereqs[c].end(),
                                       [&](std::size_t pre) { return taken[pre] != 0; });
        if (ready) eligible.push_back(c);
      }
      if (eligible.size() < spec.courses_per_term) {
        throw DataError("spec error: student " + sid + " has only " +
                        std::to_string(eligible.size()) + " eligible courses in term " +
                        std::to_string(w));
      }
      std::shuffle(eligible.begin(), eligible.end(), rng);
      eligible.resize(spec.courses_per_term);

      const std::string term = calendar_term(start + w - 1);
      std::vector<double> centered(eligible.size());
      std::vector<double> raw(eligible.size());
      if (w == 1) {
        const double base = base_gpa(rng);
        double mean = 0.0;
        for (std::size_t k = 0; k < eligible.size(); ++k) {
          centered[k] = planted.segment("course_bias")[eligible[k]] +
                        spec.first_term_spread * noise(rng);
          mean += centered[k];
        }
        mean /= static_cast<double>(eligible.size());
        for (std::size_t k = 0; k < eligible.size(); ++k) {
          const double want = base + centered[k] - mean;
          raw[k] = std::clamp(want, kMinPoints, kMaxPoints);
          if (raw[k] != want) ++clamped;
        }
        // Match the row-centering of the first term exactly.
        double term_sum = 0.0;
        for (double v : raw) term_sum += v;
        const double reference = term_sum / static_cast<double>(raw.size());
        for (std::size_t k = 0; k < raw.size(); ++k) {
          centered[k] = raw[k] - reference;
          if (centered[k] == 0.0) centered[k] = kZeroCenteredGrade;
        }
      } else {
        const double reference = prior_sum / static_cast<double>(prior_count);
        for (std::size_t k = 0; k < eligible.size(); ++k) {
          PredictionContext ctx;
          ctx.target = eligible[k];
          ctx.prior = history;
          for (std::size_t i = 0; i < ctx.prior.size(); ++i) ctx.prior[i].gap = w - history_term[i];
          if (kind == GeneratorKind::nak) {
            const auto att = planted.attention(ctx);
            double mass = 0.0;
            bool has_prereq = false;
            for (std::size_t i = 0; i < ctx.prior.size(); ++i) {
              const auto& pre = prereqs[eligible[k]];
              if (std::find(pre.begin(), pre.end(), ctx.prior[i].course) != pre.end()) {
                has_prereq = true;
                mass += att.prior.weights[i];
              }
            }
            if (has_prereq) {
              mass_sum += mass;
              ++mass_count;
            }
          }
          const double g = planted.predict(ctx) + spec.noise * noise(rng);
          const double want = reference + g;
          raw[k] = std::clamp(want, kMinPoints, kMaxPoints);
          if (raw[k] != want) ++clamped;
          centered[k] = raw[k] - reference;
          if (centered[k] == 0.0) centered[k] = kZeroCenteredGrade;
        }
      }

      double term_sum = 0.0;
      for (std::size_t k = 0; k < eligible.size(); ++k) {
        rows.push_back({sid, synthetic_course_id(eligible[k]), term, raw[k]});
        history.push_back({eligible[k], centered[k], 1});
        history_term.push_back(w);
        taken[eligible[k]] = 1;
        term_sum += raw[k];
      }
      prior_sum += term_sum;
      prior_count += eligible.size();
    }
  }
  Generated out{Dataset::from_rows(std::move(rows)), clamped, 0.0};
  out.mass = mass_count == 0 ? 1.0 : mass_sum / static_cast<double>(mass_count);
  return out;
}

}  // namespace

GeneratorKind parse_generator_kind(std::string_view name) {
  if (name == "krm") return GeneratorKind::krm;
  if (name == "nak") return GeneratorKind::nak;
  throw std::invalid_argument("unknown generator kind '" + std::string(name) +
                              "' (expected krm or nak)");
}

std::string synthetic_course_id(std::size_t index) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "C%03zu", index);
  return buf;
}

PrerequisiteMap layered_prerequisites(std::size_t n_courses, std::size_t topics) {
  if (topics == 0) throw std::invalid_argument("need at least one topic");
  PrerequisiteMap map;
  for (std::size_t c = 0; c < n_courses; ++c) {
    auto& pre = map[synthetic_course_id(c)];
    for (std::size_t lower = c % topics; lower < c; lower += topics) {
      pre.insert(synthetic_course_id(lower));
    }
  }
  return map;
}

PrerequisiteMap random_prerequisites(std::size_t n_courses, double edge_probability,
                                     std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution edge(edge_probability);
  PrerequisiteMap map;
  for (std::size_t c = 0; c < n_courses; ++c) {
    auto& pre = map[synthetic_course_id(c)];
    if (c > 0 && edge(rng)) {
      std::uniform_int_distribution<std::size_t> pick(0, c - 1);
      pre.insert(synthetic_course_id(pick(rng)));
    }
  }
  return map;
}

void validate_prerequisites(const PrerequisiteMap& map, std::size_t n_courses) {
  const Vocabulary courses = canonical_courses(n_courses);
  for (const auto& [course, prereqs] : map) {
    if (!courses.find(course)) throw DataError("spec error: unknown course " + course);
    for (const auto& pre : prereqs) {
      if (!courses.find(pre)) throw DataError("spec error: unknown prerequisite " + pre);
    }
  }
  const auto graph = index_prerequisites(map, courses);
  // 0 = unvisited, 1 = on stack, 2 = done
  std::vector<char> state(n_courses, 0);
  std::function<void(std::size_t)> visit = [&](std::size_t c) {
    state[c] = 1;
    for (std::size_t pre : graph[c]) {
      if (state[pre] == 1) {
        throw DataError("spec error: cyclic prerequisite map through " + courses.id(pre));
      }
      if (state[pre] == 0) visit(pre);
    }
    state[c] = 2;
  };
  for (std::size_t c = 0; c < n_courses; ++c) {
    if (state[c] == 0) visit(c);
  }
}

SyntheticDataset generate(const SynthSpec& spec, GeneratorKind kind) {
  if (spec.n_students == 0 || spec.n_courses == 0 || spec.dim == 0 ||
      spec.terms_per_student == 0 || spec.start_spread == 0) {
    throw DataError("spec error: sizes must be positive");
  }
  if (spec.courses_per_term < 2) throw DataError("spec error: courses_per_term must be >= 2");
  if (!(spec.noise >= 0.0)) throw DataError("spec error: noise must be >= 0");
  validate_prerequisites(spec.prerequisites, spec.n_courses);

  const Vocabulary courses = canonical_courses(spec.n_courses);
  const auto prereqs = index_prerequisites(spec.prerequisites, courses);

  double boost = kInitialBoost;
  for (int attempt = 0; attempt <= kMaxBoostDoublings; ++attempt, boost *= 2.0) {
    std::mt19937_64 rng(spec.seed);
    Model planted = kind == GeneratorKind::krm ? plant_krm(spec, courses, rng)
                                               : plant_nak(spec, courses, prereqs, boost, rng);
    Generated gen = sample_transcripts(spec, kind, planted, prereqs, rng);
    if (kind == GeneratorKind::krm || gen.mass >= kRequiredPrerequisiteMass) {
      SyntheticDataset out{std::move(gen.data), std::move(planted), spec.prerequisites,
                           gen.clamped, kind == GeneratorKind::nak ? gen.mass : 0.0};
      return out;
    }
  }
  throw DataError("spec error: planted attention cannot reach the required prerequisite mass");
}

std::vector<PredictionContext> make_probes(const Dataset& data,
                                           std::span<const std::size_t> records,
                                           const Model& model,
                                           const PrerequisiteMap& prerequisites,
                                           std::size_t max_probes) {
  const ContextBuilder builder(data, model.courses(), model.students());
  std::vector<PredictionContext> probes;
  for (std::size_t i : records) {
    if (probes.size() >= max_probes) break;
    const auto& rec = data.records().at(i);
    if (rec.prior_courses == 0) continue;
    auto it = prerequisites.find(data.courses().id(rec.course));
    if (it == prerequisites.end() || it->second.empty()) continue;
    auto ctx = builder.build(i);
    const bool has_prereq = std::any_of(ctx.prior.begin(), ctx.prior.end(), [&](const auto& pc) {
      return it->second.count(model.courses().id(pc.course)) != 0;
    });
    if (has_prereq) probes.push_back(std::move(ctx));
  }
  return probes;
}

RecoveryScore attention_recovery_score(const Model& model, const PrerequisiteMap& prerequisites,
                                       std::span<const PredictionContext> probes) {
  RecoveryScore out;
  if (probes.empty()) return out;
  double hits = 0.0;
  double chance = 0.0;
  static const std::set<std::string> kNone;
  for (const auto& ctx : probes) {
    auto it = prerequisites.find(model.courses().id(ctx.target));
    const auto& prereqs = it == prerequisites.end() ? kNone : it->second;
    auto is_prereq = [&](const PriorCourse& pc) {
      return prereqs.count(model.courses().id(pc.course)) != 0;
    };
    const auto weights = model.attention(ctx).prior.weights;
    const auto top = static_cast<std::size_t>(
        std::max_element(weights.begin(), weights.end()) - weights.begin());
    if (is_prereq(ctx.prior[top])) hits += 1.0;
    chance += static_cast<double>(std::count_if(ctx.prior.begin(), ctx.prior.end(), is_prereq)) /
              static_cast<double>(ctx.prior.size());
  }
  out.probes = probes.size();
  out.score = hits / static_cast<double>(probes.size());
  out.chance = chance / static_cast<double>(probes.size());
  return out;
}

void write_prerequisites(std::ostream& out, const PrerequisiteMap& prerequisites) {
  out << "course\tprerequisites\n";
  for (const auto& [course, prereqs] : prerequisites) {
    out << course << '\t';
    bool first = true;
    for (const auto& pre : prereqs) {
      if (!first) out << ',';
      out << pre;
      first = false;
    }
    out << '\n';
  }
}

PrerequisiteMap read_prerequisites(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "course\tprerequisites") {
    throw DataError("prerequisites: missing header");
  }
  PrerequisiteMap map;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw DataError("prerequisites: malformed row '" + line + "'");
    auto& pre = map[line.substr(0, tab)];
    std::istringstream list(line.substr(tab + 1));
    std::string id;
    while (std::getline(list, id, ',')) {
      if (!id.empty()) pre.insert(id);
    }
  }
  return map;
}

void write_synthetic(const std::filesystem::path& dir, const SyntheticDataset& synthetic) {
  std::filesystem::create_directories(dir);
  export_csv(synthetic.data, dir / "data.csv");
  save_checkpoint(dir / "planted_checkpoint.txt", synthetic.planted);
  std::ofstream out(dir / "prerequisites.tsv", std::ios::binary);
  if (!out) throw DataError("cannot write " + (dir / "prerequisites.tsv").string());
  write_prerequisites(out, synthetic.prerequisites);
}

}  // namespace kbgrade
