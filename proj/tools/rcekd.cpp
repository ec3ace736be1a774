/* Copyright 2026 The RCE-KD Lab Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/


// rcekd: dataset preparation, training, distillation, evaluation, bound
// verification and report merging.
//
// Exit codes: 0 success, 1 usage, 2 data error, 3 verification failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "rcekd/rcekd.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitVerification = 3;

// Flags that override TrainConfig fields; unset ones leave the config alone.
struct TrainFlags {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  std::optional<std::size_t> k, l, dim, epochs, patience, batch;
  std::optional<double> tau, beta, lambda, lr, wd;
  std::optional<std::string> mode;
  bool gamma_per_user = false;
};

void add_train_flags(CLI::App* cmd, TrainFlags& f, bool with_kd) {
  cmd->add_option("--config", f.config, "JSON config file; flags take precedence");
  cmd->add_option("--seed", f.seed, "Master seed");
  cmd->add_option("--workers", f.workers, "Threads for per-user sections");
  cmd->add_option("--dim", f.dim, "Embedding dimension");
  cmd->add_option("--lr", f.lr, "Adam learning rate");
  cmd->add_option("--weight-decay", f.wd, "L2 weight decay");
  cmd->add_option("--epochs", f.epochs, "Maximum epochs");
  cmd->add_option("--patience", f.patience, "Early-stopping patience (epochs)");
  cmd->add_option("--batch-size", f.batch, "Training pairs per batch");
  if (!with_kd) return;
  cmd->add_option("--mode", f.mode,
                  "student-no-kd | student-vanilla-ce | student-rce-kd");
  cmd->add_option("--k", f.k, "Top-K size of the teacher and student sets");
  cmd->add_option("--l", f.l, "Number of sampled items added to Q2");
  cmd->add_option("--tau", f.tau, "Sampling temperature");
  cmd->add_option("--beta", f.beta, "Fusion sharpness");
  cmd->add_option("--lambda", f.lambda, "Weight of the distillation loss");
  cmd->add_flag("--gamma-per-user", f.gamma_per_user, "Per-user fusion weight");
}

rcekd::TrainConfig resolve(rcekd::TrainConfig cfg, const TrainFlags& f) {
  if (f.config) rcekd::apply_config(cfg, rcekd::load_config_file(*f.config));
  if (f.seed) cfg.seed = *f.seed;
  if (f.workers) cfg.workers = *f.workers;
  if (f.dim) cfg.dim = *f.dim;
  if (f.lr) cfg.learning_rate = *f.lr;
  if (f.wd) cfg.weight_decay = *f.wd;
  if (f.epochs) cfg.max_epochs = *f.epochs;
  if (f.patience) cfg.patience = *f.patience;
  if (f.batch) cfg.batch_size = *f.batch;
  if (f.mode) cfg.mode = rcekd::parse_mode(*f.mode);
  if (f.k) cfg.kd.K = *f.k;
  if (f.l) cfg.kd.L = *f.l;
  if (f.tau) cfg.kd.tau = *f.tau;
  if (f.beta) cfg.kd.beta = *f.beta;
  if (f.lambda) cfg.kd.lambda = *f.lambda;
  if (f.gamma_per_user) cfg.kd.gamma_per_user = true;
  cfg.validate();
  return cfg;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p);
  if (!out) throw rcekd::DataError("cannot write " + p.string());
  return out;
}

void print_metrics(std::ostream& out, const rcekd::TopNMetrics& m) {
  out << std::fixed << std::setprecision(6) << "recall@10\t" << m.recall10 << "\nndcg@10\t"
      << m.ndcg10 << "\nrecall@20\t" << m.recall20 << "\nndcg@20\t" << m.ndcg20 << '\n';
}

// ---------------------------------------------------------------------------

struct PrepArgs {
  std::string input, output;
  std::size_t min_count = 10;
  bool fixpoint = false;
};

int cmd_prep(const PrepArgs& a) {
  const auto raw = rcekd::load_interactions(a.input);
  rcekd::PreprocessOptions opts{a.min_count, a.fixpoint};
  auto ds = rcekd::chronological_split(rcekd::preprocess(raw, opts));
  ds.provenance = {{"input", a.input},
                   {"min_count", a.min_count},
                   {"filter_fixpoint", a.fixpoint},
                   {"split", {0.8, 0.1, 0.1}}};
  rcekd::save_dataset(ds, a.output);
  const auto s = rcekd::summarize(ds);
  std::cout << "| users | items | interactions | sparsity |\n|---|---|---|---|\n"
            << "| " << s.users << " | " << s.items << " | " << s.interactions << " | "
            << std::fixed << std::setprecision(4) << 100.0 * s.sparsity << "% |\n";
  if (ds.dropped_cold)
    spdlog::info("{} validation/test records dropped (item unseen in train)", ds.dropped_cold);
  return 0;
}

struct SynthArgs {
  std::string output;
  rcekd::SyntheticConfig cfg;
};

int cmd_synth(const SynthArgs& a) {
  const auto log = rcekd::synthetic_log(a.cfg);
  auto out = open_out(a.output);
  for (const auto& r : log.records) out << r.user << '\t' << r.item << '\t' << r.timestamp << '\n';
  spdlog::info("wrote {} interactions to {}", log.records.size(), a.output);
  return 0;
}

struct TrainArgs {
  std::string data, out, teacher, log;
  TrainFlags flags;
};

int cmd_train(const TrainArgs& a, rcekd::TrainConfig cfg) {
  const bool teacher_run = cfg.mode == rcekd::TrainMode::teacher;
  cfg = resolve(cfg, a.flags);
  if (teacher_run != (cfg.mode == rcekd::TrainMode::teacher))
    throw rcekd::UsageError(teacher_run ? "train-teacher does not take a student mode"
                                        : "use train-teacher for mode teacher");
  const auto ds = rcekd::load_dataset(a.data);
  std::optional<rcekd::EmbeddingModel> teacher;
  if (rcekd::uses_teacher(cfg.mode)) {
    if (a.teacher.empty())
      throw rcekd::UsageError("mode " + std::string(rcekd::to_string(cfg.mode)) +
                              " requires --teacher");
    teacher = rcekd::load_model(a.teacher, rcekd::ModelRole::teacher);
  }
  const fs::path log_path = a.log.empty() ? fs::path(a.out + ".log.jsonl") : fs::path(a.log);
  auto log = open_out(log_path);
  auto sink = [&](const json& rec) {
    log << rec.dump() << '\n';
    log.flush();
    if (rec.value("type", "") == "metrics")
      spdlog::info("epoch {} {} recall@20={:.4f} ndcg@20={:.4f}", rec.value("epoch", 0),
                   rec.value("split", ""), rec.value("recall@20", 0.0),
                   rec.value("ndcg@20", 0.0));
  };
  const auto result =
      rcekd::train(ds, cfg, teacher ? &*teacher : nullptr, sink);
  rcekd::save_model(result.model, a.out);
  json side = {{"config", cfg.to_json()},
               {"dataset", ds.provenance},
               {"dataset_path", a.data},
               {"teacher", a.teacher},
               {"best_epoch", result.best_epoch},
               {"epochs_run", result.epochs_run},
               {"best_valid_ndcg@20", result.best_valid_ndcg20},
               {"test",
                {{"recall@10", result.test.metrics.recall10},
                 {"ndcg@10", result.test.metrics.ndcg10},
                 {"recall@20", result.test.metrics.recall20},
                 {"ndcg@20", result.test.metrics.ndcg20}}}};
  open_out(a.out + ".json") << side.dump(2) << '\n';
  print_metrics(std::cout, result.test.metrics);
  return 0;
}

struct EvalArgs {
  std::string data, model, split = "test";
  std::size_t workers = 1;
};

int cmd_eval(const EvalArgs& a) {
  const auto ds = rcekd::load_dataset(a.data);
  const auto model = rcekd::load_model(a.model);
  rcekd::Partition p;
  if (a.split == "test") p = rcekd::Partition::test;
  else if (a.split == "valid") p = rcekd::Partition::valid;
  else throw rcekd::UsageError("--split must be valid or test");
  const auto r = rcekd::evaluate(model, ds, p, a.workers);
  print_metrics(std::cout, r.metrics);
  return 0;
}

struct BoundArgs {
  std::size_t instances = 1000;
  std::size_t max_items = 50;
  std::string family = "top-k";
  std::size_t adversarial = 0;
  std::size_t adversarial_items = 100;
  std::size_t bottom_k = 10;
  double tolerance = rcekd::kBoundTolerance;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  std::string out = "-", steps;
  // Real score pairs.
  std::string data, teacher, student;
  std::size_t real_users = 0;
  std::size_t real_k = 100;
};

int cmd_verify_bounds(const BoundArgs& a) {
  rcekd::InstanceFamily family;
  if (a.family == "top-k") family = rcekd::InstanceFamily::top_k;
  else if (a.family == "full") family = rcekd::InstanceFamily::full;
  else if (a.family == "random") family = rcekd::InstanceFamily::random_set;
  else throw rcekd::UsageError("--family must be top-k, full or random");
  if (a.max_items == 0) throw rcekd::UsageError("--max-items must be >= 1");

  std::vector<rcekd::BoundReport> reports;
  auto sweep = [&](std::size_t n, rcekd::InstanceFamily fam, const rcekd::InstanceShape& shape,
                   std::uint64_t stream) {
    const std::size_t base = reports.size();
    reports.resize(base + n);
    rcekd::parallel_for(n, a.workers, [&](std::size_t k) {
      rcekd::Rng rng(rcekd::derive_seed(a.seed, stream, k));
      const auto inst = rcekd::random_instance(rng, fam, shape);
      reports[base + k] = rcekd::verify_partial_bound(inst.student, inst.teacher, inst.items,
                                                      a.tolerance, base + k);
    });
  };
  sweep(a.instances, family, {1, a.max_items, a.bottom_k}, rcekd::tag("bounds"));
  if (a.adversarial)
    sweep(a.adversarial, rcekd::InstanceFamily::adversarial,
          {a.adversarial_items, a.adversarial_items, a.bottom_k}, rcekd::tag("adversarial"));

  if (!a.data.empty() || !a.teacher.empty() || !a.student.empty()) {
    if (a.data.empty() || a.teacher.empty() || a.student.empty())
      throw rcekd::UsageError("real-score verification needs --data, --teacher and --student");
    const auto ds = rcekd::load_dataset(a.data);
    const auto t = rcekd::load_model(a.teacher, rcekd::ModelRole::teacher);
    const auto s = rcekd::load_model(a.student);
    for (const auto* m : {&t, &s})
      if (m->num_users() != ds.num_users || m->num_items() != ds.num_items)
        throw rcekd::DataError("model shape does not match dataset");
    const std::size_t n = std::min(a.real_users, ds.num_users);
    const std::size_t base = reports.size();
    reports.resize(base + n);
    rcekd::parallel_for(n, a.workers, [&](std::size_t u) {
      const auto rs = s.score_all(u);
      const auto rt = t.score_all(u);
      const auto j = rcekd::top_k(rs, std::min(a.real_k, rs.size()));
      reports[base + u] = rcekd::verify_partial_bound(rs, rt, j, a.tolerance, base + u);
    });
  }

  std::ofstream file;
  std::ostream* out = &std::cout;
  if (a.out != "-") {
    file = open_out(a.out);
    out = &file;
  }
  *out << std::setprecision(17);
  rcekd::write_bound_csv_header(*out);
  for (const auto& r : reports) rcekd::write_bound_csv_row(*out, r);
  if (!a.steps.empty()) {
    auto steps = open_out(a.steps);
    steps << std::setprecision(17);
    rcekd::write_steps_csv_header(steps);
    for (const auto& r : reports) rcekd::write_steps_csv_rows(steps, r);
  }

  std::size_t closed = 0, closed_bad = 0, open_bad = 0;
  for (const auto& r : reports) {
    if (r.closure_holds) {
      ++closed;
      closed_bad += !r.bound_holds;
    } else {
      open_bad += !r.bound_holds;
    }
  }
  spdlog::info("{} instances: {} closure-satisfying ({} violations), {} without closure "
               "({} violations)",
               reports.size(), closed, closed_bad, reports.size() - closed, open_bad);
  if (closed_bad) {
    std::cerr << "bound violated on " << closed_bad << " closure-satisfying instance(s)\n";
    return kExitVerification;
  }
  return 0;
}

struct ReportArgs {
  std::vector<std::string> logs;
  std::string markdown = "-", csv, curve_dir;
  double curve_fraction = 0.2;
};

int cmd_report(const ReportArgs& a) {
  if (a.logs.empty()) throw rcekd::UsageError("report needs at least one log");
  std::vector<rcekd::RunSummary> runs;
  for (const auto& p : a.logs) runs.push_back(rcekd::load_run(p));
  if (a.markdown == "-") {
    rcekd::write_report_markdown(std::cout, runs);
  } else {
    auto md = open_out(a.markdown);
    rcekd::write_report_markdown(md, runs);
  }
  if (!a.csv.empty()) {
    auto csv = open_out(a.csv);
    rcekd::write_report_csv(csv, runs);
  }
  if (!a.curve_dir.empty()) {
    fs::create_directories(a.curve_dir);
    for (const auto& r : runs) {
      const auto* c = rcekd::nearest_curve(r, a.curve_fraction);
      if (!c) continue;
      auto out = open_out(fs::path(a.curve_dir) / (fs::path(r.source).stem().string() + ".curve.csv"));
      rcekd::write_curve_csv(out, c->points);
      spdlog::info("{}: curve at epoch {} (fraction {}), spearman {:.4f}", r.source, c->epoch,
                   c->fraction, c->spearman);
    }
  }
  return 0;
}

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("rcekd");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  if (const char* lvl = std::getenv("RCEKD_LOG")) spdlog::set_level(spdlog::level::from_str(lvl));
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"rcekd: ranking distillation toolkit"};
  app.require_subcommand(1);

  PrepArgs prep;
  auto* c_prep = app.add_subcommand("prep", "Filter and split a raw interaction log");
  c_prep->add_option("input", prep.input, "Raw TSV: user<TAB>item<TAB>timestamp")->required();
  c_prep->add_option("output", prep.output, "Dataset artifact")->required();
  c_prep->add_option("--min-count", prep.min_count, "Minimum interactions per user and item");
  c_prep->add_flag("--filter-fixpoint", prep.fixpoint, "Repeat the filter until stable");

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Write a synthetic raw interaction log");
  c_synth->add_option("output", synth.output, "Output log (TSV)")->required();
  c_synth->add_option("--users", synth.cfg.users, "Number of users");
  c_synth->add_option("--items", synth.cfg.items, "Number of items");
  c_synth->add_option("--factors", synth.cfg.factors, "Latent factors of the generator");
  c_synth->add_option("--min-per-user", synth.cfg.min_per_user, "Fewest interactions per user");
  c_synth->add_option("--max-per-user", synth.cfg.max_per_user, "Most interactions per user");
  c_synth->add_option("--seed", synth.cfg.seed, "Generator seed");

  TrainArgs teach;
  auto* c_teach = app.add_subcommand("train-teacher", "Train a BPR teacher");
  c_teach->add_option("--data", teach.data, "Dataset artifact")->required();
  c_teach->add_option("--out", teach.out, "Model artifact")->required();
  c_teach->add_option("--log", teach.log, "JSON-lines log (default <out>.log.jsonl)");
  add_train_flags(c_teach, teach.flags, false);

  TrainArgs dist;
  auto* c_dist = app.add_subcommand("distill", "Train a student, optionally with distillation");
  c_dist->add_option("--data", dist.data, "Dataset artifact")->required();
  c_dist->add_option("--teacher", dist.teacher, "Teacher model artifact");
  c_dist->add_option("--out", dist.out, "Model artifact")->required();
  c_dist->add_option("--log", dist.log, "JSON-lines log (default <out>.log.jsonl)");
  add_train_flags(c_dist, dist.flags, true);

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "Evaluate a model artifact");
  c_eval->add_option("--data", ev.data)->required();
  c_eval->add_option("--model", ev.model)->required();
  c_eval->add_option("--split", ev.split, "valid or test");
  c_eval->add_option("--workers", ev.workers);

  BoundArgs vb;
  auto* c_vb = app.add_subcommand("verify-bounds", "Check the CE / NDCG bounds numerically");
  c_vb->add_option("--instances", vb.instances, "Random instances");
  c_vb->add_option("--max-items", vb.max_items, "Items per random instance (upper bound)");
  c_vb->add_option("--family", vb.family, "top-k | full | random");
  c_vb->add_option("--adversarial", vb.adversarial, "Adversarial instances (teacher = student)");
  c_vb->add_option("--adversarial-items", vb.adversarial_items);
  c_vb->add_option("--bottom-k", vb.bottom_k);
  c_vb->add_option("--tolerance", vb.tolerance);
  c_vb->add_option("--seed", vb.seed);
  c_vb->add_option("--workers", vb.workers);
  c_vb->add_option("--out", vb.out, "Bound CSV ('-' for stdout)");
  c_vb->add_option("--steps", vb.steps, "Per-step slack CSV");
  c_vb->add_option("--data", vb.data);
  c_vb->add_option("--teacher", vb.teacher);
  c_vb->add_option("--student", vb.student);
  c_vb->add_option("--real-users", vb.real_users, "Users checked with real score pairs");
  c_vb->add_option("--real-k", vb.real_k, "J = student top-k for real score pairs");

  ReportArgs rep;
  auto* c_rep = app.add_subcommand("report", "Merge training logs into tables");
  c_rep->add_option("logs", rep.logs, "JSON-lines logs");
  c_rep->add_option("--markdown", rep.markdown, "Markdown table ('-' for stdout)");
  c_rep->add_option("--csv", rep.csv, "CSV table");
  c_rep->add_option("--curve-dir", rep.curve_dir, "Directory for rank-curve CSVs");
  c_rep->add_option("--curve-fraction", rep.curve_fraction, "Snapshot used for the curve");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(rcekd::ErrorKind::usage);
  }

  try {
    if (*c_prep) return cmd_prep(prep);
    if (*c_synth) return cmd_synth(synth);
    if (*c_teach) {
      rcekd::TrainConfig cfg;
      cfg.mode = rcekd::TrainMode::teacher;
      cfg.dim = 400;
      return cmd_train(teach, cfg);
    }
    if (*c_dist) {
      rcekd::TrainConfig cfg;
      cfg.mode = rcekd::TrainMode::student_rce_kd;
      cfg.dim = 20;
      return cmd_train(dist, cfg);
    }
    if (*c_eval) return cmd_eval(ev);
    if (*c_vb) return cmd_verify_bounds(vb);
    if (*c_rep) return cmd_report(rep);
  } catch (const rcekd::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(rcekd::ErrorKind::data);
  }
  return 0;
}
