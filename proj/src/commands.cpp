#include "kbgrade/commands.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "kbgrade/checkpoint.hpp"
#include "kbgrade/data.hpp"
#include "kbgrade/errors.hpp"
#include "kbgrade/evaluation.hpp"
#include "kbgrade/model.hpp"
#include "kbgrade/synthesis.hpp"
#include "kbgrade/training.hpp"

namespace kbgrade {
namespace {

namespace fs = std::filesystem;

struct SplitArgs {
  std::string train_end;
  std::string val_end;
  double train_frac = 0.7;
  double val_frac = 0.15;
};

struct ModelArgs {
  std::string kind = "krm-sum";
  std::size_t dim = 8;
  std::size_t attention_dim = 2;
  double decay = 0.0;
  double gamma = 0.5;
  bool grade_weighted_attention = true;
};

struct RunConfig {
  std::string input;
  std::string output;
  std::string data;
  std::string checkpoint;
  std::string out_dir;
  std::string eval_split = "test";
  std::string student;
  std::string course;
  std::string term;
  std::size_t threads = 1;
  SplitArgs split;
  ModelArgs model;
  TrainConfig train;
  GridSpec grid;
  // synth
  std::string generator = "krm";
  SynthSpec synth;
  std::string prereq_layout;  // empty: none for krm, layered for nak
  std::size_t topics = 8;
  double edge_probability = 0.3;
};

void add_split_options(CLI::App* cmd, SplitArgs& s) {
  cmd->add_option("--train-end", s.train_end, "Last calendar term of the train window");
  cmd->add_option("--val-end", s.val_end, "Last calendar term of the validation window");
  cmd->add_option("--train-frac", s.train_frac,
                  "Record fraction for the train window when --train-end is not given");
  cmd->add_option("--val-frac", s.val_frac,
                  "Record fraction for the validation window when --val-end is not given");
}

void add_model_options(CLI::App* cmd, ModelArgs& m) {
  cmd->add_option("--model", m.kind,
                  "mf, krm-sum, krm-avg, mak, nak-soft, nak-sparse, cmak or cnak");
  cmd->add_option("--dim", m.dim, "Embedding dimension d");
  cmd->add_option("--attention-dim", m.attention_dim, "Attention hidden size l");
  cmd->add_option("--decay", m.decay, "Time decay lambda");
  cmd->add_option("--gamma", m.gamma, "sparsegen gamma (< 1)");
  cmd->add_option("--grade-weighted-attention", m.grade_weighted_attention,
                  "Feed grade-weighted embeddings to the prior attention net (true/false)");
}

void add_train_options(CLI::App* cmd, TrainConfig& t) {
  cmd->add_option("--l2", t.l2, "L2 regularisation strength");
  cmd->add_option("--lr", t.learning_rate, "AdaGrad learning rate");
  cmd->add_option("--batch-size", t.batch_size, "Mini-batch size");
  cmd->add_option("--max-epochs", t.max_epochs, "Maximum number of epochs");
  cmd->add_option("--patience", t.patience, "Epochs without improvement before stopping");
  cmd->add_option("--epsilon", t.epsilon, "AdaGrad stabiliser");
  cmd->add_option("--regularize-biases", t.regularize_biases,
                  "Apply L2 to scalar bias terms as well (true/false)");
  cmd->add_option("--seed", t.seed, "Random seed")->required();
}

ModelConfig to_model_config(const ModelArgs& m) {
  ModelConfig cfg;
  cfg.kind = parse_model_kind(m.kind);
  cfg.dim = m.dim;
  cfg.attention_dim = m.attention_dim;
  cfg.decay = m.decay;
  cfg.gamma = m.gamma;
  cfg.grade_weighted_attention = m.grade_weighted_attention;
  return cfg;
}

DatasetSplit make_split(const Dataset& data, const SplitArgs& s) {
  std::string train_end = s.train_end;
  std::string val_end = s.val_end;
  if (train_end.empty() || val_end.empty()) {
    auto [t, v] = boundaries_by_fraction(data, s.train_frac, s.val_frac);
    if (train_end.empty()) train_end = t;
    if (val_end.empty()) val_end = v;
  }
  return split_chronological(data, train_end, val_end);
}

fs::path prepare_out_dir(const std::string& dir) {
  if (dir.empty()) throw std::invalid_argument("--out directory is required");
  fs::create_directories(dir);
  return fs::path(dir);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

std::map<std::string, std::string> run_metadata(const TrainConfig& t, const DatasetSplit& split) {
  return {
      {"train.l2", format_double(t.l2)},
      {"train.learning_rate", format_double(t.learning_rate)},
      {"train.batch_size", std::to_string(t.batch_size)},
      {"train.max_epochs", std::to_string(t.max_epochs)},
      {"train.patience", std::to_string(t.patience)},
      {"train.epsilon", format_double(t.epsilon)},
      {"train.regularize_biases", t.regularize_biases ? "1" : "0"},
      {"train.seed", std::to_string(t.seed)},
      {"split.train_end", split.train_end},
      {"split.val_end", split.val_end},
  };
}

void print_warnings(const DatasetSplit& split, std::ostream& err) {
  for (const auto& w : split.warnings) err << "warning: " << w << '\n';
}

int cmd_ingest(const RunConfig& cfg, std::ostream& out) {
  const Dataset data = ingest(cfg.input);
  if (!cfg.output.empty()) export_csv(data, cfg.output);
  out << "students: " << data.students().size() << '\n'
      << "courses: " << data.courses().size() << '\n'
      << "records: " << data.records().size() << '\n'
      << "dropped_pass_fail: " << data.dropped_pass_fail() << '\n';
  return kExitOk;
}

int cmd_split(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const Dataset data = ingest(cfg.data);
  const DatasetSplit split = make_split(data, cfg.split);
  print_warnings(split, err);
  if (!cfg.output.empty()) {
    std::ofstream table(cfg.output, std::ios::binary);
    if (!table) throw DataError("cannot write " + cfg.output);
    std::vector<std::string> partition(data.records().size());
    std::vector<char> target(data.records().size(), 0);
    for (auto i : split.train) partition[i] = "train";
    for (auto i : split.validation) partition[i] = "validation";
    for (auto i : split.test) partition[i] = "test";
    for (const auto* list : {&split.train_targets, &split.validation_targets, &split.test_targets}) {
      for (auto i : *list) target[i] = 1;
    }
    table << "student_id\tcourse_id\tterm\tpartition\ttarget\n";
    for (std::size_t i = 0; i < data.records().size(); ++i) {
      const auto& rec = data.records()[i];
      table << data.students().id(rec.student) << '\t' << data.courses().id(rec.course) << '\t'
            << rec.term << '\t' << partition[i] << '\t' << int(target[i]) << '\n';
    }
  }
  out << "train_end: " << split.train_end << '\n'
      << "val_end: " << split.val_end << '\n'
      << "train: " << split.train.size() << '\n'
      << "validation: " << split.validation.size() << '\n'
      << "test: " << split.test.size() << '\n'
      << "train_targets: " << split.train_targets.size() << '\n'
      << "validation_targets: " << split.validation_targets.size() << '\n'
      << "test_targets: " << split.test_targets.size() << '\n';
  return kExitOk;
}

int cmd_train(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const ModelConfig model_cfg = to_model_config(cfg.model);
  const Dataset data = ingest(cfg.data);
  const DatasetSplit split = make_split(data, cfg.split);
  print_warnings(split, err);
  const fs::path dir = prepare_out_dir(cfg.out_dir);

  Model model(model_cfg, data.courses(), data.students());
  model.initialize(cfg.train.seed);
  const ContextBuilder builder(data, model.courses(), model.students());
  const auto train_set = make_examples(data, split.train_targets, builder);
  const auto val_set = make_examples(data, split.validation_targets, builder);
  auto result = train(std::move(model), train_set, val_set, cfg.train);

  save_checkpoint(dir / "checkpoint.txt", result.model, run_metadata(cfg.train, split));
  std::ostringstream history;
  write_history(history, result.history);
  write_text(dir / "history.tsv", history.str());
  out << "model: " << model_kind_name(model_cfg.kind) << '\n'
      << "epochs: " << result.history.size() - 1 << '\n'
      << "best_epoch: " << result.best_epoch << '\n'
      << "best_validation_mse: " << format_double(result.best_validation_mse) << '\n'
      << "checkpoint: " << (dir / "checkpoint.txt").string() << '\n';
  return kExitOk;
}

void check_against_config(const Model& model, const CLI::App* cmd, const ModelArgs& args) {
  const auto& cfg = model.config();
  if (cmd->count("--model") && parse_model_kind(args.kind) != cfg.kind) {
    throw DataError("checkpoint holds a " + std::string(model_kind_name(cfg.kind)) +
                    " model but --model is " + args.kind);
  }
  if (cmd->count("--dim") && args.dim != cfg.dim) {
    throw DataError("checkpoint dimension " + std::to_string(cfg.dim) +
                    " does not match --dim " + std::to_string(args.dim));
  }
  if (cmd->count("--attention-dim") && args.attention_dim != cfg.attention_dim) {
    throw DataError("checkpoint attention dimension " + std::to_string(cfg.attention_dim) +
                    " does not match --attention-dim " + std::to_string(args.attention_dim));
  }
}

int cmd_evaluate(const RunConfig& cfg, const CLI::App* cmd, std::ostream& out,
                 std::ostream& err) {
  const Checkpoint ck = load_checkpoint(cfg.checkpoint);
  check_against_config(ck.model, cmd, cfg.model);
  const Dataset data = ingest(cfg.data);
  const DatasetSplit split = make_split(data, cfg.split);
  print_warnings(split, err);
  const auto& targets = cfg.eval_split == "validation" ? split.validation_targets
                                                        : split.test_targets;
  if (cfg.eval_split != "validation" && cfg.eval_split != "test") {
    throw std::invalid_argument("--split must be 'test' or 'validation'");
  }
  const EvalReport report = evaluate(ck.model, data, targets);
  std::ostringstream text;
  write_report(text, report);
  if (!cfg.out_dir.empty()) {
    const fs::path dir = prepare_out_dir(cfg.out_dir);
    write_text(dir / "report.txt", text.str());
    write_text(dir / "report.json", report_json(report) + "\n");
  }
  out << text.str();
  return kExitOk;
}

int cmd_grid(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const ModelConfig model_cfg = to_model_config(cfg.model);
  const Dataset data = ingest(cfg.data);
  const DatasetSplit split = make_split(data, cfg.split);
  print_warnings(split, err);
  const fs::path dir = prepare_out_dir(cfg.out_dir);
  const ContextBuilder builder(data, data.courses(), data.students());
  const auto train_set = make_examples(data, split.train_targets, builder);
  const auto val_set = make_examples(data, split.validation_targets, builder);
  const GridResult result = grid_search(model_cfg, cfg.train, cfg.grid, data.courses(),
                                        data.students(), train_set, val_set, cfg.threads);
  std::ostringstream table;
  write_grid(table, result);
  write_text(dir / "grid.tsv", table.str());
  const auto& best = result.rows[result.best];
  if (!best.error.empty()) {
    throw NumericError("every grid point failed; first error: " + best.error);
  }
  std::ostringstream summary;
  summary << "model: " << model_kind_name(best.point.model.kind) << '\n'
          << "dim: " << best.point.model.dim << '\n'
          << "l2: " << format_double(best.point.train.l2) << '\n'
          << "lr: " << format_double(best.point.train.learning_rate) << '\n'
          << "attention_dim: " << best.point.model.attention_dim << '\n'
          << "gamma: " << format_double(best.point.model.gamma) << '\n'
          << "decay: " << format_double(best.point.model.decay) << '\n'
          << "validation_mse: " << format_double(best.validation_mse) << '\n'
          << "grid_points: " << result.rows.size() << '\n';
  write_text(dir / "best.txt", summary.str());
  out << summary.str();
  return kExitOk;
}

int cmd_synth(const RunConfig& cfg, std::ostream& out) {
  SynthSpec spec = cfg.synth;
  spec.seed = cfg.train.seed;
  const std::string layout =
      cfg.prereq_layout.empty() ? (cfg.generator == "nak" ? "layered" : "none") : cfg.prereq_layout;
  if (layout == "layered") {
    spec.prerequisites = layered_prerequisites(spec.n_courses, cfg.topics);
  } else if (layout == "random") {
    spec.prerequisites = random_prerequisites(spec.n_courses, cfg.edge_probability, spec.seed);
  } else if (layout != "none") {
    throw std::invalid_argument("--prereq must be layered, random or none");
  }
  const auto synthetic = generate(spec, parse_generator_kind(cfg.generator));
  const fs::path dir = prepare_out_dir(cfg.out_dir);
  write_synthetic(dir, synthetic);
  out << "records: " << synthetic.data.records().size() << '\n'
      << "students: " << synthetic.data.students().size() << '\n'
      << "courses: " << synthetic.data.courses().size() << '\n'
      << "clamped: " << synthetic.clamped << '\n';
  if (cfg.generator == "nak") {
    out << "prerequisite_mass: " << format_double(synthetic.prerequisite_mass) << '\n';
  }
  return kExitOk;
}

void write_attention_rows(std::ostream& table, std::string_view section,
                          const SimplexWeights& weights, const std::vector<std::string>& ids) {
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < weights.weights.size(); ++i) {
    if (weights.weights[i] > 0.0) order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return weights.weights[a] > weights.weights[b];
  });
  for (std::size_t i : order) {
    table << section << '\t' << ids[i] << '\t' << format_double(weights.weights[i]) << '\n';
  }
}

int cmd_explain(const RunConfig& cfg, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(cfg.checkpoint);
  if (!uses_prior_attention(ck.model.config().kind)) {
    throw std::invalid_argument("explain needs an attentive model (nak-soft, nak-sparse, cnak); "
                                "checkpoint holds " +
                                std::string(model_kind_name(ck.model.config().kind)));
  }
  const Dataset data = ingest(cfg.data);
  const auto student = data.students().find(cfg.student);
  if (!student) throw DataError("unknown student " + cfg.student);
  const auto course = data.courses().find(cfg.course);
  if (!course) throw DataError("unknown course " + cfg.course);

  const ContextBuilder builder(data, ck.model.courses(), ck.model.students());
  std::optional<std::size_t> record;
  const std::size_t offset = data.history_offset(*student);
  const auto history = data.history(*student);
  for (std::size_t i = 0; i < history.size(); ++i) {
    if (history[i].course == *course && (cfg.term.empty() || history[i].term == cfg.term)) {
      record = offset + i;
    }
  }
  if (!cfg.term.empty() && !record) {
    throw DataError("student " + cfg.student + " has no record of " + cfg.course + " in term " +
                    cfg.term);
  }
  PredictionContext ctx;
  if (record) {
    if (data.records()[*record].prior_courses == 0) {
      throw DataError("the record of " + cfg.course + " has no prior courses to attend over");
    }
    ctx = builder.build(*record);
  } else {
    ctx = builder.build_next_term(*student, *course);
  }
  const auto explanation = ck.model.attention(ctx);
  std::vector<std::string> prior_ids, concurrent_ids;
  for (const auto& pc : ctx.prior) prior_ids.push_back(ck.model.courses().id(pc.course));
  for (auto c : ctx.concurrent) concurrent_ids.push_back(ck.model.courses().id(c));

  std::ostringstream table;
  table << "section\tcourse\tweight\n";
  write_attention_rows(table, "prior", explanation.prior, prior_ids);
  if (!explanation.concurrent.weights.empty()) {
    write_attention_rows(table, "concurrent", explanation.concurrent, concurrent_ids);
  }
  if (!cfg.out_dir.empty()) {
    write_text(prepare_out_dir(cfg.out_dir) / "attention.tsv", table.str());
  }
  out << table.str();
  return kExitOk;
}

std::vector<std::string> with_config(const std::vector<std::string>& args) {
  // `--config FILE` anywhere after the subcommand expands in place to the
  // file's settings; later flags then override them.
  std::vector<std::string> out;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      const auto extra = config_arguments(args[++i]);
      out.insert(out.end(), extra.begin(), extra.end());
    } else if (args[i].rfind("--config=", 0) == 0) {
      const auto extra = config_arguments(args[i].substr(9));
      out.insert(out.end(), extra.begin(), extra.end());
    } else {
      out.push_back(args[i]);
    }
  }
  return out;
}

}  // namespace

std::vector<std::string> config_arguments(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config file: " + path);
  std::vector<std::string> out;
  std::string line;
  std::size_t line_no = 0;
  auto trim = [](std::string s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return std::string{};
    return s.substr(first, s.find_last_not_of(" \t\r") - first + 1);
  };
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(line_no, "expected key = value in " + path);
    out.push_back("--" + trim(line.substr(0, eq)) + "=" + trim(line.substr(eq + 1)));
  }
  return out;
}

int run_cli(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  RunConfig cfg;
  CLI::App app{"Knowledge-based grade prediction", "kbgrade"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  auto* ingest_cmd = app.add_subcommand("ingest", "Parse, row-center and re-export a transcript CSV");
  ingest_cmd->add_option("--input", cfg.input, "Transcript CSV")->required();
  ingest_cmd->add_option("--output", cfg.output, "Canonical CSV to write");

  auto* split_cmd = app.add_subcommand("split", "Chronological train/validation/test split");
  split_cmd->add_option("--data", cfg.data, "Transcript CSV")->required();
  split_cmd->add_option("--output", cfg.output, "Per-record partition table (TSV)");
  add_split_options(split_cmd, cfg.split);

  auto* train_cmd = app.add_subcommand("train", "Fit one model with AdaGrad");
  train_cmd->add_option("--data", cfg.data, "Transcript CSV")->required();
  train_cmd->add_option("--out", cfg.out_dir, "Output directory")->required();
  add_split_options(train_cmd, cfg.split);
  add_model_options(train_cmd, cfg.model);
  add_train_options(train_cmd, cfg.train);

  auto* eval_cmd = app.add_subcommand("evaluate", "RMSE and tick metrics of a checkpoint");
  eval_cmd->add_option("--data", cfg.data, "Transcript CSV")->required();
  eval_cmd->add_option("--checkpoint", cfg.checkpoint, "checkpoint.txt")->required();
  eval_cmd->add_option("--out", cfg.out_dir, "Output directory for report.txt/report.json");
  eval_cmd->add_option("--split", cfg.eval_split, "test or validation");
  add_split_options(eval_cmd, cfg.split);
  add_model_options(eval_cmd, cfg.model);

  auto* grid_cmd = app.add_subcommand("grid", "Grid search over hyperparameters");
  grid_cmd->add_option("--data", cfg.data, "Transcript CSV")->required();
  grid_cmd->add_option("--out", cfg.out_dir, "Output directory")->required();
  grid_cmd->add_option("--threads", cfg.threads, "Worker threads");
  grid_cmd->add_option("--grid-dim", cfg.grid.dims)->delimiter(',');
  grid_cmd->add_option("--grid-l2", cfg.grid.l2)->delimiter(',');
  grid_cmd->add_option("--grid-lr", cfg.grid.learning_rates)->delimiter(',');
  grid_cmd->add_option("--grid-attention-dim", cfg.grid.attention_dims)->delimiter(',');
  grid_cmd->add_option("--grid-gamma", cfg.grid.gammas)->delimiter(',');
  grid_cmd->add_option("--grid-decay", cfg.grid.decays)->delimiter(',');
  add_split_options(grid_cmd, cfg.split);
  add_model_options(grid_cmd, cfg.model);
  add_train_options(grid_cmd, cfg.train);
  for (auto* opt : grid_cmd->get_options()) {
    if (opt->get_name().rfind("--grid-", 0) == 0) {
      opt->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    }
  }

  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic transcript with planted truth");
  synth_cmd->add_option("--kind", cfg.generator, "krm or nak");
  synth_cmd->add_option("--students", cfg.synth.n_students);
  synth_cmd->add_option("--courses", cfg.synth.n_courses);
  synth_cmd->add_option("--dim", cfg.synth.dim);
  synth_cmd->add_option("--terms", cfg.synth.terms_per_student);
  synth_cmd->add_option("--per-term", cfg.synth.courses_per_term);
  synth_cmd->add_option("--sigma", cfg.synth.noise);
  synth_cmd->add_option("--start-spread", cfg.synth.start_spread);
  synth_cmd->add_option("--prereq", cfg.prereq_layout, "layered, random or none (default: none for krm, layered for nak)");
  synth_cmd->add_option("--topics", cfg.topics, "Topic chains for --prereq layered");
  synth_cmd->add_option("--edge-prob", cfg.edge_probability, "Edge probability for --prereq random");
  synth_cmd->add_option("--seed", cfg.train.seed)->required();
  synth_cmd->add_option("--out", cfg.out_dir, "Output directory")->required();

  auto* explain_cmd = app.add_subcommand("explain", "Attention weights behind one prediction");
  explain_cmd->add_option("--data", cfg.data, "Transcript CSV")->required();
  explain_cmd->add_option("--checkpoint", cfg.checkpoint, "checkpoint.txt")->required();
  explain_cmd->add_option("--student", cfg.student)->required();
  explain_cmd->add_option("--course", cfg.course)->required();
  explain_cmd->add_option("--term", cfg.term, "Calendar term of the record to explain");
  explain_cmd->add_option("--out", cfg.out_dir, "Output directory for attention.tsv");

  try {
    std::vector<std::string> args = with_config(raw_args);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  } catch (const DataError& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }

  try {
    if (*ingest_cmd) return cmd_ingest(cfg, out);
    if (*split_cmd) return cmd_split(cfg, out, err);
    if (*train_cmd) return cmd_train(cfg, out, err);
    if (*eval_cmd) return cmd_evaluate(cfg, eval_cmd, out, err);
    if (*grid_cmd) return cmd_grid(cfg, out, err);
    if (*synth_cmd) return cmd_synth(cfg, out);
    if (*explain_cmd) return cmd_explain(cfg, out);
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::invalid_argument& e) {
    err << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace kbgrade
