#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kbgrade/activations.hpp"
#include "kbgrade/data.hpp"

namespace kbgrade {

enum class ModelKind { mf, krm_sum, krm_avg, mak, nak_soft, nak_sparse, cmak, cnak };

inline constexpr std::array<ModelKind, 8> kAllModelKinds{
    ModelKind::mf,       ModelKind::krm_sum,    ModelKind::krm_avg, ModelKind::mak,
    ModelKind::nak_soft, ModelKind::nak_sparse, ModelKind::cmak,    ModelKind::cnak};

std::string_view model_kind_name(ModelKind kind) noexcept;
/// Accepts the CLI spellings: mf, krm-sum, krm-avg, mak, nak-soft, nak-sparse, cmak, cnak.
ModelKind parse_model_kind(std::string_view name);

bool is_knowledge_model(ModelKind kind) noexcept;  // everything except mf
bool uses_prior_attention(ModelKind kind) noexcept;
bool uses_concurrent_attention(ModelKind kind) noexcept;
bool uses_decay(ModelKind kind) noexcept;
bool is_context_aware(ModelKind kind) noexcept;

struct ModelConfig {
  ModelKind kind = ModelKind::krm_sum;
  std::size_t dim = 8;            // embedding size d
  std::size_t attention_dim = 2;  // hidden size l of each attention net
  double decay = 0.0;             // lambda in exp(-lambda * (gap - 1))
  double gamma = 0.5;             // sparsegen temperature parameter
  // true: attention input is g * p (grade weighted); false: p alone.
  bool grade_weighted_attention = true;

  Activation activation() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// exp(-decay * (gap - 1)); gap counts terms since the prior course, >= 1.
double decay_weight(double decay, std::size_t gap) noexcept;

struct PriorCourse {
  std::size_t course = 0;
  double grade = 0.0;  // centered grade
  std::size_t gap = 1;
};

inline constexpr std::size_t kUnknownIndex = std::numeric_limits<std::size_t>::max();

/// Everything one prediction looks at. Indices refer to the model's vocabularies.
struct PredictionContext {
  std::size_t student = kUnknownIndex;
  std::size_t target = 0;
  std::vector<PriorCourse> prior;
  std::vector<std::size_t> concurrent;  // same-term courses, target excluded
};

/// A named block of the flat parameter vector.
struct Segment {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  bool bias = false;       // scalar bias terms: excluded from L2 unless requested
  bool zero_init = false;  // starts at 0 rather than small uniform noise

  std::size_t size() const noexcept { return rows * cols; }
};

class ParameterLayout {
 public:
  const Segment& add(std::string name, std::size_t rows, std::size_t cols, bool bias,
                     bool zero_init);
  const Segment* find(std::string_view name) const noexcept;
  const Segment& at(std::string_view name) const;
  const std::vector<Segment>& segments() const noexcept { return segments_; }
  std::size_t size() const noexcept { return size_; }
  /// 1 for every parameter that L2 applies to.
  std::vector<char> regularized_mask(bool include_biases) const;

 private:
  std::vector<Segment> segments_;
  std::size_t size_ = 0;
};

/// Sparse accumulator over the flat parameter vector.
class GradientBuffer {
 public:
  explicit GradientBuffer(std::size_t size = 0) : values_(size, 0.0), marked_(size, 0) {}

  void add(std::size_t index, double value) {
    if (!marked_[index]) {
      marked_[index] = 1;
      touched_.push_back(index);
    }
    values_[index] += value;
  }
  double operator[](std::size_t index) const { return values_[index]; }
  double& at(std::size_t index) { return values_.at(index); }
  const std::vector<std::size_t>& touched() const noexcept { return touched_; }
  std::size_t size() const noexcept { return values_.size(); }
  void clear();
  /// Dense copy, zeros where untouched.
  std::vector<double> dense() const { return values_; }

 private:
  std::vector<double> values_;
  std::vector<char> marked_;
  std::vector<std::size_t> touched_;
};

struct AttentionCache {
  std::vector<double> inputs;  // K x d, source_i (.) r_target
  std::vector<double> hidden;  // K x l pre-activations
  std::vector<double> scores;  // K
  SimplexWeights weights;
};

/// Intermediates kept by the forward pass for the backward pass.
struct ForwardCache {
  double prediction = 0.0;
  std::vector<double> knowledge;          // k
  std::vector<double> target_embedding;   // r_j, or e = x (.) r_j
  std::vector<double> context;            // x; empty when no concurrent courses
  std::vector<double> prior_coef;         // per prior: decay * grade (krm/mak) or a * grade (nak)
  std::vector<std::size_t> prior_argmax;  // per dimension, index into ctx.prior
  std::vector<std::size_t> concurrent_argmax;
  AttentionCache prior_attention;
  AttentionCache concurrent_attention;
};

struct AttentionExplanation {
  SimplexWeights prior;
  SimplexWeights concurrent;  // empty for NAK or without concurrent courses
};

/// Parameters and forward/backward passes for one of the eight model kinds.
class Model {
 public:
  Model(ModelConfig config, Vocabulary courses, Vocabulary students);

  const ModelConfig& config() const noexcept { return config_; }
  const Vocabulary& courses() const noexcept { return courses_; }
  const Vocabulary& students() const noexcept { return students_; }
  const ParameterLayout& layout() const noexcept { return layout_; }

  std::span<double> parameters() noexcept { return params_; }
  std::span<const double> parameters() const noexcept { return params_; }
  std::span<double> segment(std::string_view name);
  std::span<const double> segment(std::string_view name) const;

  /// Uniform [-0.05, 0.05] for weights, zero for biases.
  void initialize(std::uint64_t seed);

  double predict(const PredictionContext& ctx) const;
  double forward(const PredictionContext& ctx, ForwardCache& cache) const;
  /// Adds upstream * d(prediction)/d(theta) into `grad`. Needs the cache from
  /// forward() on the same context and parameters.
  void backward(const PredictionContext& ctx, const ForwardCache& cache, double upstream,
                GradientBuffer& grad) const;
  /// Per-record loss gradient: -residual * d(prediction)/d(theta) plus
  /// 2 * l2 * theta on every touched regularised parameter.
  GradientBuffer gradients(const PredictionContext& ctx, double residual, double l2,
                           bool regularize_biases = false) const;

  /// Prior (and concurrent, for cnak) attention weights. Throws
  /// std::invalid_argument for kinds without attention.
  AttentionExplanation attention(const PredictionContext& ctx) const;

  friend bool operator==(const Model& a, const Model& b) {
    return a.config_ == b.config_ && a.courses_ == b.courses_ && a.students_ == b.students_ &&
           a.params_ == b.params_;
  }

 private:
  struct AttentionNet {
    std::size_t w = 0, b = 0, h = 0;  // offsets
  };
  struct CourseOffsets {
    std::size_t p = 0, r = 0, b = 0;
  };

  void check_context(const PredictionContext& ctx) const;
  double forward_mf(const PredictionContext& ctx) const;
  void backward_mf(const PredictionContext& ctx, double upstream, GradientBuffer& grad) const;

  void attend(const AttentionNet& net, std::span<const double> sources, std::size_t count,
              std::span<const double> target_r, AttentionCache& cache) const;
  void attend_backward(const AttentionNet& net, const AttentionCache& cache,
                       std::span<const double> sources, std::span<const double> target_r,
                       std::span<const double> d_weights, std::vector<double>& d_sources,
                       std::vector<double>& d_target_r, GradientBuffer& grad) const;

  const double* p(std::size_t course) const { return params_.data() + offs_.p + course * dim_; }
  const double* r(std::size_t course) const { return params_.data() + offs_.r + course * dim_; }

  ModelConfig config_;
  Vocabulary courses_;
  Vocabulary students_;
  ParameterLayout layout_;
  std::vector<double> params_;
  std::size_t dim_ = 0;
  CourseOffsets offs_;
  AttentionNet prior_net_;
  AttentionNet concurrent_net_;
  std::size_t mf_mu_ = 0, mf_sb_ = 0, mf_cb_ = 0, mf_u_ = 0, mf_v_ = 0;
};

/// Builds prediction contexts for records of a dataset against a model's vocabularies.
class ContextBuilder {
 public:
  ContextBuilder(const Dataset& data, const Vocabulary& model_courses,
                 const Vocabulary& model_students);

  /// Context for predicting dataset record `record_index`. Throws
  /// UnknownEntity when a course of the context is missing from the model.
  PredictionContext build(std::size_t record_index) const;
  /// Context for a course the student would take in the term after their last.
  PredictionContext build_next_term(std::size_t student, std::size_t dataset_course) const;

 private:
  std::size_t map_course(std::size_t dataset_course) const;

  const Dataset* data_;
  std::vector<std::size_t> course_map_;
  std::vector<std::size_t> student_map_;
};

}  // namespace kbgrade
