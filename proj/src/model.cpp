#include "kbgrade/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "kbgrade/errors.hpp"

namespace kbgrade {
namespace {

constexpr double kInitScale = 0.05;

double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

std::string_view model_kind_name(ModelKind kind) noexcept {
  switch (kind) {
    case ModelKind::mf: return "mf";
    case ModelKind::krm_sum: return "krm-sum";
    case ModelKind::krm_avg: return "krm-avg";
    case ModelKind::mak: return "mak";
    case ModelKind::nak_soft: return "nak-soft";
    case ModelKind::nak_sparse: return "nak-sparse";
    case ModelKind::cmak: return "cmak";
    case ModelKind::cnak: return "cnak";
  }
  return "?";
}

ModelKind parse_model_kind(std::string_view name) {
  for (ModelKind kind : kAllModelKinds) {
    if (model_kind_name(kind) == name) return kind;
  }
  throw std::invalid_argument("unknown model kind '" + std::string(name) +
                              "' (expected mf, krm-sum, krm-avg, mak, nak-soft, nak-sparse, "
                              "cmak or cnak)");
}

bool is_knowledge_model(ModelKind kind) noexcept { return kind != ModelKind::mf; }

bool uses_prior_attention(ModelKind kind) noexcept {
  return kind == ModelKind::nak_soft || kind == ModelKind::nak_sparse || kind == ModelKind::cnak;
}

bool uses_concurrent_attention(ModelKind kind) noexcept { return kind == ModelKind::cnak; }

bool uses_decay(ModelKind kind) noexcept {
  return kind == ModelKind::krm_sum || kind == ModelKind::krm_avg || kind == ModelKind::mak ||
         kind == ModelKind::cmak;
}

bool is_context_aware(ModelKind kind) noexcept {
  return kind == ModelKind::cmak || kind == ModelKind::cnak;
}

Activation ModelConfig::activation() const {
  if (kind == ModelKind::nak_soft) return {ActivationKind::softmax, 0.0};
  return {ActivationKind::sparsegen, gamma};
}

double decay_weight(double decay, std::size_t gap) noexcept {
  return std::exp(-decay * (static_cast<double>(gap) - 1.0));
}

// ---------------------------------------------------------------------------

const Segment& ParameterLayout::add(std::string name, std::size_t rows, std::size_t cols,
                                    bool bias, bool zero_init) {
  segments_.push_back(Segment{std::move(name), size_, rows, cols, bias, zero_init});
  size_ += rows * cols;
  return segments_.back();
}

const Segment* ParameterLayout::find(std::string_view name) const noexcept {
  for (const auto& seg : segments_) {
    if (seg.name == name) return &seg;
  }
  return nullptr;
}

const Segment& ParameterLayout::at(std::string_view name) const {
  if (const auto* seg = find(name)) return *seg;
  throw std::out_of_range("no parameter segment named " + std::string(name));
}

std::vector<char> ParameterLayout::regularized_mask(bool include_biases) const {
  std::vector<char> mask(size_, 0);
  for (const auto& seg : segments_) {
    if (seg.bias && !include_biases) continue;
    std::fill_n(mask.begin() + static_cast<std::ptrdiff_t>(seg.offset), seg.size(), 1);
  }
  return mask;
}

void GradientBuffer::clear() {
  for (std::size_t i : touched_) {
    values_[i] = 0.0;
    marked_[i] = 0;
  }
  touched_.clear();
}

// ---------------------------------------------------------------------------

Model::Model(ModelConfig config, Vocabulary courses, Vocabulary students)
    : config_(config), courses_(std::move(courses)), students_(std::move(students)),
      dim_(config.dim) {
  if (config_.dim == 0) throw std::invalid_argument("embedding dimension must be positive");
  if (uses_prior_attention(config_.kind) && config_.attention_dim == 0) {
    throw std::invalid_argument("attention dimension must be positive");
  }
  if (config_.decay < 0.0) throw std::invalid_argument("decay must be non-negative");
  if (config_.kind != ModelKind::nak_soft && uses_prior_attention(config_.kind) &&
      !(config_.gamma < 1.0)) {
    throw std::invalid_argument("sparsegen requires gamma < 1");
  }
  const std::size_t nc = courses_.size();
  const std::size_t ns = students_.size();
  const std::size_t d = dim_;
  const std::size_t l = config_.attention_dim;

  if (config_.kind == ModelKind::mf) {
    mf_mu_ = layout_.add("mf_mu", 1, 1, true, true).offset;
    mf_sb_ = layout_.add("mf_student_bias", ns, 1, true, true).offset;
    mf_cb_ = layout_.add("mf_course_bias", nc, 1, true, true).offset;
    mf_u_ = layout_.add("mf_student_vec", ns, d, false, false).offset;
    mf_v_ = layout_.add("mf_course_vec", nc, d, false, false).offset;
  } else {
    offs_.p = layout_.add("course_provided", nc, d, false, false).offset;
    offs_.r = layout_.add("course_required", nc, d, false, false).offset;
    offs_.b = layout_.add("course_bias", nc, 1, true, true).offset;
    if (uses_prior_attention(config_.kind)) {
      prior_net_.w = layout_.add("prior_att_W", l, d, false, false).offset;
      prior_net_.b = layout_.add("prior_att_b", l, 1, false, true).offset;
      prior_net_.h = layout_.add("prior_att_h", l, 1, false, false).offset;
    }
    if (uses_concurrent_attention(config_.kind)) {
      concurrent_net_.w = layout_.add("concurrent_att_W", l, d, false, false).offset;
      concurrent_net_.b = layout_.add("concurrent_att_b", l, 1, false, true).offset;
      concurrent_net_.h = layout_.add("concurrent_att_h", l, 1, false, false).offset;
    }
  }
  params_.assign(layout_.size(), 0.0);
}

std::span<double> Model::segment(std::string_view name) {
  const auto& seg = layout_.at(name);
  return std::span<double>(params_).subspan(seg.offset, seg.size());
}

std::span<const double> Model::segment(std::string_view name) const {
  const auto& seg = layout_.at(name);
  return std::span<const double>(params_).subspan(seg.offset, seg.size());
}

void Model::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uniform(-kInitScale, kInitScale);
  for (const auto& seg : layout_.segments()) {
    for (std::size_t i = 0; i < seg.size(); ++i) {
      params_[seg.offset + i] = seg.zero_init ? 0.0 : uniform(rng);
    }
  }
}

void Model::check_context(const PredictionContext& ctx) const {
  if (ctx.target >= courses_.size()) throw UnknownEntity("target course is not known to the model");
  if (config_.kind == ModelKind::mf) {
    if (ctx.student >= students_.size()) throw UnknownEntity("student is not known to the model");
    return;
  }
  if (ctx.prior.empty()) {
    throw std::invalid_argument("knowledge-based models need at least one prior course");
  }
  for (const auto& pc : ctx.prior) {
    if (pc.course >= courses_.size()) throw UnknownEntity("prior course is not known to the model");
    if (pc.gap == 0) throw std::invalid_argument("prior course gap must be >= 1");
  }
  for (std::size_t c : ctx.concurrent) {
    if (c >= courses_.size()) throw UnknownEntity("concurrent course is not known to the model");
  }
}

double Model::predict(const PredictionContext& ctx) const {
  ForwardCache cache;
  return forward(ctx, cache);
}

double Model::forward_mf(const PredictionContext& ctx) const {
  const double* u = params_.data() + mf_u_ + ctx.student * dim_;
  const double* v = params_.data() + mf_v_ + ctx.target * dim_;
  return params_[mf_mu_] + params_[mf_sb_ + ctx.student] + params_[mf_cb_ + ctx.target] +
         dot(u, v, dim_);
}

void Model::attend(const AttentionNet& net, std::span<const double> sources, std::size_t count,
                   std::span<const double> target_r, AttentionCache& cache) const {
  const std::size_t d = dim_;
  const std::size_t l = config_.attention_dim;
  const double* W = params_.data() + net.w;
  const double* b = params_.data() + net.b;
  const double* h = params_.data() + net.h;
  cache.inputs.assign(count * d, 0.0);
  cache.hidden.assign(count * l, 0.0);
  cache.scores.assign(count, 0.0);
  for (std::size_t i = 0; i < count; ++i) {
    double* u = cache.inputs.data() + i * d;
    for (std::size_t z = 0; z < d; ++z) u[z] = sources[i * d + z] * target_r[z];
    double score = 0.0;
    for (std::size_t a = 0; a < l; ++a) {
      const double pre = dot(W + a * d, u, d) + b[a];
      cache.hidden[i * l + a] = pre;
      if (pre > 0.0) score += h[a] * pre;
    }
    cache.scores[i] = score;
  }
  cache.weights = config_.activation().apply(cache.scores);
}

void Model::attend_backward(const AttentionNet& net, const AttentionCache& cache,
                            std::span<const double> sources, std::span<const double> target_r,
                            std::span<const double> d_weights, std::vector<double>& d_sources,
                            std::vector<double>& d_target_r, GradientBuffer& grad) const {
  const std::size_t d = dim_;
  const std::size_t l = config_.attention_dim;
  const double* W = params_.data() + net.w;
  const double* h = params_.data() + net.h;
  const auto d_scores = config_.activation().vjp(cache.weights, d_weights);
  std::vector<double> d_input(d);
  for (std::size_t i = 0; i < d_scores.size(); ++i) {
    const double dz = d_scores[i];
    if (dz == 0.0) continue;
    const double* u = cache.inputs.data() + i * d;
    std::fill(d_input.begin(), d_input.end(), 0.0);
    for (std::size_t a = 0; a < l; ++a) {
      const double pre = cache.hidden[i * l + a];
      if (!(pre > 0.0)) continue;
      grad.add(net.h + a, dz * pre);
      const double d_pre = dz * h[a];
      grad.add(net.b + a, d_pre);
      for (std::size_t z = 0; z < d; ++z) {
        grad.add(net.w + a * d + z, d_pre * u[z]);
        d_input[z] += W[a * d + z] * d_pre;
      }
    }
    for (std::size_t z = 0; z < d; ++z) {
      d_sources[i * d + z] += d_input[z] * target_r[z];
      d_target_r[z] += d_input[z] * sources[i * d + z];
    }
  }
}

double Model::forward(const PredictionContext& ctx, ForwardCache& cache) const {
  check_context(ctx);
  if (config_.kind == ModelKind::mf) {
    cache.prediction = forward_mf(ctx);
    return cache.prediction;
  }

  const std::size_t d = dim_;
  const std::size_t n = ctx.prior.size();
  const double* r_target = r(ctx.target);
  cache.knowledge.assign(d, 0.0);
  cache.prior_coef.assign(n, 0.0);
  cache.prior_argmax.clear();
  cache.concurrent_argmax.clear();
  cache.context.clear();

  switch (config_.kind) {
    case ModelKind::krm_sum:
    case ModelKind::krm_avg: {
      for (std::size_t i = 0; i < n; ++i) {
        const auto& pc = ctx.prior[i];
        cache.prior_coef[i] = decay_weight(config_.decay, pc.gap) * pc.grade;
        const double* pi = p(pc.course);
        for (std::size_t z = 0; z < d; ++z) cache.knowledge[z] += cache.prior_coef[i] * pi[z];
      }
      if (config_.kind == ModelKind::krm_avg) {
        for (double& kz : cache.knowledge) kz /= static_cast<double>(n);
      }
      break;
    }
    case ModelKind::mak:
    case ModelKind::cmak: {
      cache.prior_argmax.assign(d, 0);
      for (std::size_t i = 0; i < n; ++i) {
        const auto& pc = ctx.prior[i];
        cache.prior_coef[i] = decay_weight(config_.decay, pc.gap) * pc.grade;
        const double* pi = p(pc.course);
        for (std::size_t z = 0; z < d; ++z) {
          const double v = cache.prior_coef[i] * pi[z];
          // Strict comparison keeps the lowest index among tied maxima.
          if (i == 0 || v > cache.knowledge[z]) {
            cache.knowledge[z] = v;
            cache.prior_argmax[z] = i;
          }
        }
      }
      break;
    }
    case ModelKind::nak_soft:
    case ModelKind::nak_sparse:
    case ModelKind::cnak: {
      std::vector<double> sources(n * d);
      for (std::size_t i = 0; i < n; ++i) {
        const auto& pc = ctx.prior[i];
        const double scale = config_.grade_weighted_attention ? pc.grade : 1.0;
        const double* pi = p(pc.course);
        for (std::size_t z = 0; z < d; ++z) sources[i * d + z] = scale * pi[z];
      }
      attend(prior_net_, sources, n, std::span<const double>(r_target, d), cache.prior_attention);
      for (std::size_t i = 0; i < n; ++i) {
        const auto& pc = ctx.prior[i];
        cache.prior_coef[i] = cache.prior_attention.weights.weights[i] * pc.grade;
        const double* pi = p(pc.course);
        for (std::size_t z = 0; z < d; ++z) cache.knowledge[z] += cache.prior_coef[i] * pi[z];
      }
      break;
    }
    case ModelKind::mf:
      break;
  }

  cache.target_embedding.assign(r_target, r_target + d);
  if (is_context_aware(config_.kind) && !ctx.concurrent.empty()) {
    const std::size_t m = ctx.concurrent.size();
    cache.context.assign(d, 0.0);
    if (config_.kind == ModelKind::cmak) {
      cache.concurrent_argmax.assign(d, 0);
      for (std::size_t i = 0; i < m; ++i) {
        const double* pi = p(ctx.concurrent[i]);
        for (std::size_t z = 0; z < d; ++z) {
          if (i == 0 || pi[z] > cache.context[z]) {
            cache.context[z] = pi[z];
            cache.concurrent_argmax[z] = i;
          }
        }
      }
    } else {
      std::vector<double> sources(m * d);
      for (std::size_t i = 0; i < m; ++i) {
        std::copy_n(p(ctx.concurrent[i]), d, sources.begin() + static_cast<std::ptrdiff_t>(i * d));
      }
      attend(concurrent_net_, sources, m, std::span<const double>(r_target, d),
             cache.concurrent_attention);
      for (std::size_t i = 0; i < m; ++i) {
        const double a = cache.concurrent_attention.weights.weights[i];
        for (std::size_t z = 0; z < d; ++z) cache.context[z] += a * sources[i * d + z];
      }
    }
    for (std::size_t z = 0; z < d; ++z) cache.target_embedding[z] = cache.context[z] * r_target[z];
  }

  cache.prediction =
      params_[offs_.b + ctx.target] + dot(cache.knowledge.data(), cache.target_embedding.data(), d);
  return cache.prediction;
}

void Model::backward_mf(const PredictionContext& ctx, double upstream, GradientBuffer& grad) const {
  const std::size_t d = dim_;
  const double* u = params_.data() + mf_u_ + ctx.student * d;
  const double* v = params_.data() + mf_v_ + ctx.target * d;
  grad.add(mf_mu_, upstream);
  grad.add(mf_sb_ + ctx.student, upstream);
  grad.add(mf_cb_ + ctx.target, upstream);
  for (std::size_t z = 0; z < d; ++z) {
    grad.add(mf_u_ + ctx.student * d + z, upstream * v[z]);
    grad.add(mf_v_ + ctx.target * d + z, upstream * u[z]);
  }
}

void Model::backward(const PredictionContext& ctx, const ForwardCache& cache, double upstream,
                     GradientBuffer& grad) const {
  if (grad.size() != params_.size()) throw std::invalid_argument("gradient buffer size mismatch");
  if (config_.kind == ModelKind::mf) {
    backward_mf(ctx, upstream, grad);
    return;
  }
  const std::size_t d = dim_;
  const std::size_t n = ctx.prior.size();
  const std::size_t j = ctx.target;
  const double* r_target = r(j);

  grad.add(offs_.b + j, upstream);

  // prediction = b_j + k . t
  std::vector<double> d_knowledge(d);
  std::vector<double> d_target(d);
  for (std::size_t z = 0; z < d; ++z) {
    d_knowledge[z] = upstream * cache.target_embedding[z];
    d_target[z] = upstream * cache.knowledge[z];
  }

  std::vector<double> d_r(d, 0.0);
  if (cache.context.empty()) {
    for (std::size_t z = 0; z < d; ++z) d_r[z] += d_target[z];
  } else {
    // t = x (.) r_j
    std::vector<double> d_context(d);
    for (std::size_t z = 0; z < d; ++z) {
      d_r[z] += d_target[z] * cache.context[z];
      d_context[z] = d_target[z] * r_target[z];
    }
    const std::size_t m = ctx.concurrent.size();
    if (config_.kind == ModelKind::cmak) {
      for (std::size_t z = 0; z < d; ++z) {
        grad.add(offs_.p + ctx.concurrent[cache.concurrent_argmax[z]] * d + z, d_context[z]);
      }
    } else {
      std::vector<double> sources(m * d);
      for (std::size_t i = 0; i < m; ++i) {
        std::copy_n(p(ctx.concurrent[i]), d, sources.begin() + static_cast<std::ptrdiff_t>(i * d));
      }
      const auto& weights = cache.concurrent_attention.weights.weights;
      std::vector<double> d_weights(m);
      std::vector<double> d_sources(m * d, 0.0);
      for (std::size_t i = 0; i < m; ++i) {
        d_weights[i] = dot(d_context.data(), sources.data() + i * d, d);
        for (std::size_t z = 0; z < d; ++z) d_sources[i * d + z] += weights[i] * d_context[z];
      }
      attend_backward(concurrent_net_, cache.concurrent_attention, sources,
                      std::span<const double>(r_target, d), d_weights, d_sources, d_r, grad);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t z = 0; z < d; ++z) {
          grad.add(offs_.p + ctx.concurrent[i] * d + z, d_sources[i * d + z]);
        }
      }
    }
  }

  switch (config_.kind) {
    case ModelKind::krm_sum:
    case ModelKind::krm_avg: {
      const double norm = config_.kind == ModelKind::krm_avg ? static_cast<double>(n) : 1.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double c = cache.prior_coef[i] / norm;
        for (std::size_t z = 0; z < d; ++z) {
          grad.add(offs_.p + ctx.prior[i].course * d + z, c * d_knowledge[z]);
        }
      }
      break;
    }
    case ModelKind::mak:
    case ModelKind::cmak: {
      for (std::size_t z = 0; z < d; ++z) {
        const std::size_t i = cache.prior_argmax[z];
        grad.add(offs_.p + ctx.prior[i].course * d + z, cache.prior_coef[i] * d_knowledge[z]);
      }
      break;
    }
    case ModelKind::nak_soft:
    case ModelKind::nak_sparse:
    case ModelKind::cnak: {
      std::vector<double> sources(n * d);
      std::vector<double> d_weights(n);
      for (std::size_t i = 0; i < n; ++i) {
        const auto& pc = ctx.prior[i];
        const double scale = config_.grade_weighted_attention ? pc.grade : 1.0;
        const double* pi = p(pc.course);
        for (std::size_t z = 0; z < d; ++z) sources[i * d + z] = scale * pi[z];
        d_weights[i] = pc.grade * dot(d_knowledge.data(), pi, d);
        for (std::size_t z = 0; z < d; ++z) {
          grad.add(offs_.p + pc.course * d + z, cache.prior_coef[i] * d_knowledge[z]);
        }
      }
      std::vector<double> d_sources(n * d, 0.0);
      attend_backward(prior_net_, cache.prior_attention, sources,
                      std::span<const double>(r_target, d), d_weights, d_sources, d_r, grad);
      for (std::size_t i = 0; i < n; ++i) {
        const auto& pc = ctx.prior[i];
        const double scale = config_.grade_weighted_attention ? pc.grade : 1.0;
        for (std::size_t z = 0; z < d; ++z) {
          grad.add(offs_.p + pc.course * d + z, scale * d_sources[i * d + z]);
        }
      }
      break;
    }
    case ModelKind::mf:
      break;
  }

  for (std::size_t z = 0; z < d; ++z) grad.add(offs_.r + j * d + z, d_r[z]);
}

GradientBuffer Model::gradients(const PredictionContext& ctx, double residual, double l2,
                                bool regularize_biases) const {
  ForwardCache cache;
  forward(ctx, cache);
  GradientBuffer grad(params_.size());
  backward(ctx, cache, -residual, grad);
  if (l2 != 0.0) {
    const auto mask = layout_.regularized_mask(regularize_biases);
    for (std::size_t i : grad.touched()) {
      if (mask[i]) grad.at(i) += 2.0 * l2 * params_[i];
    }
  }
  return grad;
}

AttentionExplanation Model::attention(const PredictionContext& ctx) const {
  if (!uses_prior_attention(config_.kind)) {
    throw std::invalid_argument("model kind " + std::string(model_kind_name(config_.kind)) +
                                " has no attention weights");
  }
  ForwardCache cache;
  forward(ctx, cache);
  AttentionExplanation out;
  out.prior = cache.prior_attention.weights;
  if (!cache.context.empty()) out.concurrent = cache.concurrent_attention.weights;
  return out;
}

// ---------------------------------------------------------------------------

ContextBuilder::ContextBuilder(const Dataset& data, const Vocabulary& model_courses,
                               const Vocabulary& model_students)
    : data_(&data) {
  course_map_.reserve(data.courses().size());
  for (const auto& id : data.courses().ids()) {
    course_map_.push_back(model_courses.find(id).value_or(kUnknownIndex));
  }
  student_map_.reserve(data.students().size());
  for (const auto& id : data.students().ids()) {
    student_map_.push_back(model_students.find(id).value_or(kUnknownIndex));
  }
}

std::size_t ContextBuilder::map_course(std::size_t dataset_course) const {
  const std::size_t c = course_map_.at(dataset_course);
  if (c == kUnknownIndex) {
    throw UnknownEntity("course " + data_->courses().id(dataset_course) +
                        " is not known to the model");
  }
  return c;
}

PredictionContext ContextBuilder::build(std::size_t record_index) const {
  const auto& target = data_->records().at(record_index);
  PredictionContext ctx;
  ctx.student = student_map_.at(target.student);
  ctx.target = map_course(target.course);
  for (const auto& rec : data_->history(target.student)) {
    if (rec.term_index < target.term_index) {
      ctx.prior.push_back({map_course(rec.course), rec.centered, target.term_index - rec.term_index});
    } else if (rec.term_index == target.term_index && rec.course != target.course) {
      ctx.concurrent.push_back(map_course(rec.course));
    }
  }
  return ctx;
}

PredictionContext ContextBuilder::build_next_term(std::size_t student,
                                                  std::size_t dataset_course) const {
  const auto history = data_->history(student);
  PredictionContext ctx;
  ctx.student = student_map_.at(student);
  ctx.target = map_course(dataset_course);
  const std::size_t next = history.empty() ? 1 : history.back().term_index + 1;
  for (const auto& rec : history) {
    ctx.prior.push_back({map_course(rec.course), rec.centered, next - rec.term_index});
  }
  return ctx;
}

}  // namespace kbgrade
