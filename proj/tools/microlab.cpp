// Copyright 2026 The MicroLab Authors
// SPDX-License-Identifier: Apache-2.0

// microlab: command-line driver for the task library, training, tuning
// and analysis commands.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "microlab/analysis.hpp"
#include "microlab/checkpoint.hpp"
#include "microlab/csv.hpp"
#include "microlab/error.hpp"
#include "microlab/meta.hpp"
#include "microlab/tasks.hpp"
#include "microlab/uho.hpp"

namespace fs = std::filesystem;
using namespace microlab;

namespace {

/// Bad flags, config values or input paths.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LibraryOptions {
  std::string data;
  std::size_t families = 24;
  std::size_t examples = 10;
  std::size_t hw = 32;
  std::uint64_t library_seed = 1;
  std::vector<double> split{0.6, 0.2, 0.2};
  std::uint64_t split_seed = 1;
};

struct ModelOptions {
  std::size_t base_channels = 8;
  std::size_t encoder_stages = 3;
  std::size_t rsd_skip_stage = 2;
  std::size_t rsd_out = 16;
  double dropout = 0.2;
};

struct Common {
  LibraryOptions lib;
  std::string out = ".";
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};

struct Library {
  std::vector<Task> all;
  TaskSplit split;
  std::vector<Task> train, val, test;
};

void add_common(CLI::App* cmd, Common& c, bool with_library = true) {
  cmd->add_option("--out", c.out, "Output directory")->capture_default_str();
  cmd->add_option("--seed", c.seed, "Seed for every random choice of this command")->capture_default_str();
  cmd->add_option("--threads", c.threads, "Worker threads (1 keeps runs bit-reproducible)")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  if (!with_library) return;
  auto* g = cmd->add_option_group("library", "Task library and split");
  g->add_option("--data", c.lib.data, "Load tasks from a dataset directory instead of generating them");
  g->add_option("--families", c.lib.families, "Generated families (tasks)")->capture_default_str();
  g->add_option("--examples", c.lib.examples, "Generated examples per task")->capture_default_str();
  g->add_option("--hw", c.lib.hw, "Generated image side")->capture_default_str();
  g->add_option("--library-seed", c.lib.library_seed, "Generator seed")->capture_default_str();
  g->add_option("--split", c.lib.split, "Train,val,test task fractions")
      ->delimiter(',')
      ->expected(3)
      ->capture_default_str();
  g->add_option("--split-seed", c.lib.split_seed, "Task split seed")->capture_default_str();
}

void add_model(CLI::App* cmd, ModelOptions& m) {
  auto* g = cmd->add_option_group("model", "Network shape");
  g->add_option("--base-channels", m.base_channels, "Stem channels")->capture_default_str();
  g->add_option("--encoder-stages", m.encoder_stages, "Stride-2 encoder stages")->capture_default_str();
  g->add_option("--rsd-skip-stage", m.rsd_skip_stage, "Encoder stage feeding the decoder skip")
      ->capture_default_str();
  g->add_option("--rsd-out", m.rsd_out, "Decoder output channels")->capture_default_str();
  g->add_option("--model-dropout", m.dropout, "Dropout before the head")->capture_default_str();
}

void add_omega(CLI::App* cmd, UpdateHyperparams& w, const std::string& prefix = "") {
  auto* g = cmd->add_option_group("update", "Update routine (inner loop)");
  g->add_option("--" + prefix + "lr", w.lr, "Inner learning rate")->capture_default_str();
  g->add_option("--" + prefix + "steps", w.steps, "Inner SGD steps")->capture_default_str();
  g->add_option("--" + prefix + "batch", w.inner_batch, "Inner batch size")->capture_default_str();
  g->add_option("--" + prefix + "dropout", w.dropout_rate, "Head dropout during adaptation")->capture_default_str();
  g->add_option("--" + prefix + "aug", w.aug_rate, "Augmentation rate")->capture_default_str();
  g->add_option("--" + prefix + "l2", w.l2_lambda, "L2 coefficient")->capture_default_str();
}

ModelConfig model_config(const ModelOptions& m, std::size_t hw) {
  ModelConfig cfg;
  cfg.input_hw = hw;
  cfg.base_channels = m.base_channels;
  cfg.encoder_stages = m.encoder_stages;
  cfg.rsd_skip_stage = m.rsd_skip_stage;
  cfg.rsd_out_channels = m.rsd_out;
  cfg.dropout_rate = m.dropout;
  cfg.validate();
  return cfg;
}

Library load_library(const LibraryOptions& o) {
  Library lib;
  if (!o.data.empty()) {
    if (!fs::is_directory(o.data)) throw UsageError("--data: " + o.data + " is not a directory");
    lib.all = load_dataset(o.data);
    if (lib.all.empty()) throw UsageError("--data: " + o.data + " contains no tasks");
  } else {
    lib.all = generate_task_library(o.families, o.examples, o.hw, o.library_seed);
  }
  lib.split = split_tasks(lib.all, {o.split[0], o.split[1], o.split[2]}, o.split_seed);
  lib.train = select_tasks(lib.all, lib.split.train_tasks);
  lib.val = select_tasks(lib.all, lib.split.val_tasks);
  lib.test = select_tasks(lib.all, lib.split.test_tasks);
  return lib;
}

std::size_t library_hw(const Library& lib) { return lib.all.front().examples.front().image.dim(1); }

const std::vector<Task>& task_set(const Library& lib, const std::string& name) {
  if (name == "train") return lib.train;
  if (name == "val") return lib.val;
  if (name == "test") return lib.test;
  throw UsageError("unknown task set '" + name + "' (expected train, val or test)");
}

void require_nonempty(const std::vector<Task>& tasks, const std::string& what) {
  if (tasks.empty()) throw UsageError("the " + what + " task set is empty; adjust --split or --families");
}

Checkpoint read_checkpoint(const std::string& path) {
  if (path.empty()) throw UsageError("--checkpoint is required");
  if (!fs::is_regular_file(path)) throw UsageError("checkpoint not found: " + path);
  try {
    return load_checkpoint(path);
  } catch (const DataError& e) {
    throw UsageError(e.what());
  }
}

UpdateHyperparams read_omega(const std::string& path) {
  if (!fs::is_regular_file(path)) throw UsageError("omega file not found: " + path);
  try {
    return load_omega(path);
  } catch (const DataError& e) {
    throw UsageError(e.what());
  }
}

/// Parses repeated TAG=PATH arguments, keeping their order.
std::vector<std::pair<std::string, std::string>> tagged_paths(const std::vector<std::string>& args,
                                                              const std::string& flag) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& a : args) {
    const auto eq = a.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == a.size())
      throw UsageError(flag + " expects TAG=PATH, got '" + a + "'");
    out.emplace_back(a.substr(0, eq), a.substr(eq + 1));
  }
  return out;
}

void prepare_out(const std::string& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec || !fs::is_directory(out)) throw UsageError("cannot create output directory " + out);
}

/// Timestamps and the command line go to a sidecar so the data files stay byte-stable.
void write_run_metadata(const std::string& out, const std::string& command, int argc, char** argv) {
  nlohmann::json j;
  j["command"] = command;
  std::vector<std::string> args(argv, argv + argc);
  j["argv"] = args;
  const std::time_t now = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  j["finished_utc"] = buf;
  std::ofstream f(fs::path(out) / ("run_" + command + ".json"));
  f << j.dump(2) << '\n';
}

std::string split_string(const TaskSplit& s) {
  return std::to_string(s.train_tasks.size()) + "/" + std::to_string(s.val_tasks.size()) + "/" +
         std::to_string(s.test_tasks.size());
}

// --- commands -----------------------------------------------------------------

struct GenTasksArgs {
  Common c;
};

int run_gen_tasks(const GenTasksArgs& a) {
  if (!a.c.lib.data.empty()) throw UsageError("gen-tasks generates a library; --data is not accepted");
  prepare_out(a.c.out);
  const auto tasks = generate_task_library(a.c.lib.families, a.c.lib.examples, a.c.lib.hw, a.c.lib.library_seed);
  save_dataset(tasks, a.c.out);
  std::cout << "wrote " << tasks.size() << " tasks to " << a.c.out << '\n';
  return 0;
}

struct MetaTrainArgs {
  Common c;
  ModelOptions model;
  MetaConfig meta;
  std::string algorithm = "fomaml_star";
  std::size_t checkpoint_every = 500;
  std::string init;
};

int run_meta_train(MetaTrainArgs a) {
  a.meta.algorithm = meta_algorithm_from_string(a.algorithm);
  a.meta.threads = a.c.threads;
  a.meta.validate();
  const Library lib = load_library(a.c.lib);
  require_nonempty(lib.train, "training");
  ModelConfig cfg = model_config(a.model, library_hw(lib));
  ParameterSet theta;
  Rng rng(derive_seed(a.c.seed, 0x3e7a));
  const SegmentationNet net(cfg);
  if (!a.init.empty()) {
    Checkpoint ck = read_checkpoint(a.init);
    if (!(ck.config == cfg)) throw UsageError("--init checkpoint was saved for a different model shape");
    theta = std::move(ck.params);
  } else {
    theta = net.build(rng);
  }
  prepare_out(a.c.out);
  const fs::path out(a.c.out);
  const fs::path ckdir = out / "checkpoints";
  if (a.checkpoint_every > 0) fs::create_directories(ckdir);

  std::cout << "meta-train " << to_string(a.meta.algorithm) << ": " << a.meta.meta_steps << " steps on "
            << lib.train.size() << " tasks (split " << split_string(lib.split) << ")\n";
  CsvWriter log(out / "meta_train_log.csv", {"step", "meta_lr", "loss"});
  MetaCallbacks cb;
  cb.on_step = [&](std::size_t step, double lr, double loss) {
    log.row(step, lr, loss);
    if ((step + 1) % 100 == 0) std::cout << "  step " << step + 1 << " loss " << loss << std::endl;
  };
  cb.checkpoint_every = a.checkpoint_every;
  cb.on_checkpoint = [&](std::size_t step, const ParameterSet& p) {
    char name[64];
    std::snprintf(name, sizeof name, "step_%06zu.mlab", step);
    save_checkpoint(ckdir / name, cfg, p);
  };
  const SegmentationLearner learner(net);
  theta = meta_train(learner, std::move(theta), lib.train, a.meta, rng, cb);
  save_checkpoint(out / "meta_final.mlab", cfg, theta);
  std::cout << "wrote " << (out / "meta_final.mlab").string() << '\n';
  return 0;
}

struct JointTrainArgs {
  Common c;
  ModelOptions model;
  JointConfig joint;
};

int run_joint_train(JointTrainArgs a) {
  a.joint.validate();
  const Library lib = load_library(a.c.lib);
  require_nonempty(lib.train, "training");
  const ModelConfig cfg = model_config(a.model, library_hw(lib));
  prepare_out(a.c.out);
  const fs::path out(a.c.out);
  Rng rng(derive_seed(a.c.seed, 0x901e));
  std::cout << "joint-train: " << a.joint.epochs << " epochs on " << lib.train.size() << " tasks\n";
  CsvWriter log(out / "joint_train_log.csv", {"epoch", "loss"});
  const JointTrainResult r = joint_train(cfg, lib.train, a.joint, rng, [&](std::size_t epoch, double loss) {
    log.row(epoch, loss);
    if ((epoch + 1) % 20 == 0) std::cout << "  epoch " << epoch + 1 << " loss " << loss << std::endl;
  });
  save_checkpoint(out / "joint_final.mlab", cfg, r.params);
  nlohmann::json head;
  head["trained_head_channels"] = r.trained_head_channels;
  head["background_class"] = 0;
  head["classes"] = r.class_names;
  head["saved_head_channels"] = cfg.num_output_channels;
  std::ofstream(out / "joint_head.json") << head.dump(2) << '\n';
  std::cout << "wrote " << (out / "joint_final.mlab").string() << '\n';
  return 0;
}

struct UhoArgs {
  Common c;
  std::string checkpoint;
  UpdateHyperparams base;
  UHOOptions options;
  bool extended = false;
  std::size_t max_steps = 0;
  std::size_t patience = 0;
  std::string task_set = "val";
};

int run_uho(UhoArgs a) {
  a.base.validate();
  const Checkpoint ck = read_checkpoint(a.checkpoint);
  const Library lib = load_library(a.c.lib);
  const auto& tasks = task_set(lib, a.task_set);
  require_nonempty(tasks, a.task_set);
  if (library_hw(lib) != ck.config.input_hw) throw UsageError("checkpoint image size differs from the task library");
  SearchSpace space = a.extended ? SearchSpace::extended_space() : SearchSpace{};
  if (a.max_steps > 0) space.max_steps = a.max_steps;
  if (a.patience > 0) space.patience = a.patience;
  a.options.threads = a.c.threads;
  prepare_out(a.c.out);
  const fs::path out(a.c.out);

  const SegmentationLearner learner{SegmentationNet(ck.config)};
  Rng rng(derive_seed(a.c.seed, 0x0e0));
  std::cout << "uho: " << a.options.budget << " candidates x " << a.options.episodes << " episodes on "
            << tasks.size() << " " << a.task_set << " tasks\n";
  const UHOResult r = uho_optimize(learner, ck.params, tasks, space, a.base, a.options, rng);

  std::vector<std::string> header{"cand_idx", "lr", "steps_median", "objective"};
  if (space.extended) header.insert(header.end(), {"dropout_rate", "aug_rate", "inner_batch"});
  CsvWriter trace(out / "uho_trace.csv", header);
  for (std::size_t i = 0; i < r.trace.size(); ++i) {
    const auto& row = r.trace[i];
    std::vector<std::string> cells{std::to_string(i), format_double(row.omega.lr), std::to_string(row.omega.steps),
                                   format_double(row.objective)};
    if (space.extended) {
      cells.push_back(format_double(row.omega.dropout_rate));
      cells.push_back(format_double(row.omega.aug_rate));
      cells.push_back(std::to_string(row.omega.inner_batch));
    }
    trace.write(cells);
  }
  save_omega(out / "omega_test.txt", r.omega_test);
  std::cout << "best candidate " << r.best_index << ": lr " << r.omega_test.lr << ", steps " << r.omega_test.steps
            << ", objective " << r.trace[r.best_index].objective << '\n';
  return 0;
}

struct EvaluateArgs {
  Common c;
  std::string checkpoint;
  std::string omega_file;
  UpdateHyperparams omega;
  std::size_t shots = 5;
  std::size_t splits = 2;
  std::string task_set = "test";
};

int run_evaluate(EvaluateArgs a) {
  const Checkpoint ck = read_checkpoint(a.checkpoint);
  if (!a.omega_file.empty()) a.omega = read_omega(a.omega_file);
  a.omega.validate();
  if (a.splits < 1 || a.shots < 1) throw UsageError("--splits and --shots must be positive");
  const Library lib = load_library(a.c.lib);
  const auto& tasks = task_set(lib, a.task_set);
  require_nonempty(tasks, a.task_set);
  if (library_hw(lib) != ck.config.input_hw) throw UsageError("checkpoint image size differs from the task library");
  prepare_out(a.c.out);
  const fs::path out(a.c.out);

  const SegmentationLearner learner{SegmentationNet(ck.config)};
  std::vector<ScoreRow> rows;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    for (std::size_t s = 0; s < a.splits; ++s) {
      Rng rng(derive_seed(a.c.seed, t, s));
      auto [train, eval] = random_split(tasks[t], a.shots, rng);
      rows.push_back({tasks[t].id, s, adapt_and_eval(learner, ck.params, train, eval, a.omega, rng).iou});
    }
  }
  std::vector<double> scores;
  for (const auto& r : rows) scores.push_back(r.iou);
  const MeanCi m = scores.size() >= 2 ? mean_iou_ci(scores) : MeanCi{scores[0], 0.0, 1};

  CsvWriter csv(out / "eval.csv", {"task_id", "split", "k", "iou"});
  for (const auto& r : rows) csv.row(r.task_id, r.split, a.shots, r.iou);
  csv.row(std::string("summary"), std::string("all"), a.shots, m.mean);
  CsvWriter summary(out / "eval_summary.csv", {"n", "mean", "ci95"});
  summary.row(m.n, m.mean, m.ci95_halfwidth);
  std::cout << a.shots << "-shot mean IoU " << m.mean << " +/- " << m.ci95_halfwidth << " (n=" << m.n << ")\n";
  return 0;
}

struct InitSet {
  std::vector<std::string> inits;
  std::vector<std::string> omegas;
};

struct LoadedInits {
  ModelConfig config;
  std::vector<TaggedInit> inits;
};

LoadedInits load_inits(const InitSet& s, const UpdateHyperparams& fallback) {
  const auto inits = tagged_paths(s.inits, "--init");
  if (inits.empty()) throw UsageError("at least one --init TAG=CHECKPOINT is required");
  std::map<std::string, UpdateHyperparams> omegas;
  for (const auto& [tag, path] : tagged_paths(s.omegas, "--omega")) omegas[tag] = read_omega(path);
  LoadedInits out;
  for (std::size_t i = 0; i < inits.size(); ++i) {
    Checkpoint ck = read_checkpoint(inits[i].second);
    if (i == 0) out.config = ck.config;
    if (!(ck.config == out.config)) throw UsageError("--init checkpoints have different model shapes");
    for (const auto& t : out.inits)
      if (t.tag == inits[i].first) throw UsageError("duplicate --init tag " + t.tag);
    auto it = omegas.find(inits[i].first);
    out.inits.push_back({inits[i].first, std::move(ck.params), it != omegas.end() ? it->second : fallback});
  }
  for (const auto& [tag, w] : omegas) {
    bool known = false;
    for (const auto& t : out.inits) known = known || t.tag == tag;
    if (!known) throw UsageError("--omega tag " + tag + " matches no --init");
  }
  return out;
}

struct FpkArgs {
  Common c;
  InitSet set;
  UpdateHyperparams omega;
  std::vector<std::size_t> k{1, 5, 10, 25};
  std::size_t repeats = 4;
  KShotOptions options;
  std::string task_set = "test";
};

int run_fpk(FpkArgs a) {
  a.omega.validate();
  const LoadedInits loaded = load_inits(a.set, a.omega);
  const Library lib = load_library(a.c.lib);
  std::vector<Task> tasks = task_set(lib, a.task_set);
  require_nonempty(tasks, a.task_set);
  if (library_hw(lib) != loaded.config.input_hw) throw UsageError("checkpoint image size differs from the task library");
  std::sort(a.k.begin(), a.k.end());
  if (a.k.empty() || a.k.front() == 0 || std::adjacent_find(a.k.begin(), a.k.end()) != a.k.end())
    throw UsageError("--k needs distinct positive values");
  const std::size_t need = a.k.back() + a.options.test_size;
  for (auto& t : tasks) {
    if (t.examples.size() >= need) continue;
    if (!t.family) throw UsageError("task " + t.id + " has " + std::to_string(t.examples.size()) +
                                    " examples; FP-k needs " + std::to_string(need) + " (use a generated library)");
    t = deepen_task(t, need);
  }
  a.options.threads = a.c.threads;
  prepare_out(a.c.out);
  const fs::path out(a.c.out);

  const SegmentationLearner learner{SegmentationNet(loaded.config)};
  const KShotCurve curve = kshot_curve(learner, loaded.inits, tasks, a.k, a.repeats, a.omega, a.options, a.c.seed);
  CsvWriter csv(out / "fpk.csv", {"init_tag", "k", "task_id", "repeat", "iou", "ci95"});
  std::size_t r = 0;
  for (const auto& s : curve.summary) {
    for (; r < curve.rows.size() && curve.rows[r].init_tag == s.init_tag && curve.rows[r].k == s.k; ++r)
      csv.row(curve.rows[r].init_tag, curve.rows[r].k, curve.rows[r].task_id, curve.rows[r].repeat,
              curve.rows[r].iou, std::string(""));
    csv.row(s.init_tag, s.k, std::string("summary"), std::string(""), s.stats.mean, s.stats.ci95_halfwidth);
    std::cout << s.init_tag << " k=" << s.k << " mean IoU " << s.stats.mean << " +/- " << s.stats.ci95_halfwidth
              << '\n';
  }
  return 0;
}

struct AnalyzeArgs {
  Common c;
  InitSet set;
  UpdateHyperparams omega;
  std::size_t shots = 5;
  std::size_t repeats = 2;
  std::string task_set = "test";
};

int run_analyze_weights(AnalyzeArgs a) {
  a.omega.validate();
  const LoadedInits loaded = load_inits(a.set, a.omega);
  const Library lib = load_library(a.c.lib);
  const auto& tasks = task_set(lib, a.task_set);
  require_nonempty(tasks, a.task_set);
  if (library_hw(lib) != loaded.config.input_hw) throw UsageError("checkpoint image size differs from the task library");
  prepare_out(a.c.out);
  const fs::path out(a.c.out);

  const SegmentationLearner learner{SegmentationNet(loaded.config)};
  const DistanceStudy s = distance_study(learner, loaded.inits, tasks, a.omega, a.shots, a.repeats, a.c.seed);
  CsvWriter rows(out / "distances.csv", {"init_tag", "task_id", "repeat", "d1"});
  for (const auto& r : s.rows) rows.row(r.init_tag, r.task_id, r.repeat, r.d1);
  CsvWriter blocks(out / "distances_blocks.csv", {"init_tag", "block", "d2", "d3"});
  for (const auto& b : s.blocks) blocks.row(b.init_tag, b.block, b.d2 ? format_double(*b.d2) : "undefined", b.d3);
  CsvWriter summary(out / "distances_summary.csv", {"init_tag", "n", "mean_d1", "ci95"});
  for (const auto& [tag, m] : s.d1_summary) {
    summary.row(tag, m.n, m.mean, m.ci95_halfwidth);
    std::cout << tag << " d1 " << m.mean << " +/- " << m.ci95_halfwidth << " (n=" << m.n << ")\n";
  }
  return 0;
}

struct GapArgs {
  Common c;
  std::string checkpoint;
  UpdateHyperparams omega;
  std::size_t shots = 5;
  bool heldout_is_train = false;
  std::string task_set = "test";
};

int run_gen_gap(GapArgs a) {
  a.omega.validate();
  const Checkpoint ck = read_checkpoint(a.checkpoint);
  const Library lib = load_library(a.c.lib);
  const auto& tasks = task_set(lib, a.task_set);
  require_nonempty(tasks, a.task_set);
  require_nonempty(lib.train, "training");
  if (library_hw(lib) != ck.config.input_hw) throw UsageError("checkpoint image size differs from the task library");
  prepare_out(a.c.out);
  const fs::path out(a.c.out);

  const SegmentationLearner learner{SegmentationNet(ck.config)};
  const GapRegime regime{a.omega, a.shots};
  const GapReport g = generalization_gap(learner, ck.params, tasks, regime, a.c.seed, a.heldout_is_train);
  const TaskLevelGap tl = task_level_gap(learner, ck.params, lib.train, tasks, regime, a.c.seed);
  CsvWriter csv(out / "gap.csv", {"task_id", "gap"});
  for (const auto& [id, gap] : g.per_task) csv.row(id, gap);
  csv.row(std::string("summary"), g.summary.mean);
  CsvWriter summary(out / "gap_summary.csv", {"n", "mean_within_task_gap", "ci95", "train_tasks_loss",
                                              "heldout_tasks_loss", "task_level_gap"});
  summary.row(g.summary.n, g.summary.mean, g.summary.ci95_halfwidth, tl.train_tasks_loss, tl.heldout_tasks_loss,
              tl.gap);
  std::cout << "within-task gap " << g.summary.mean << " +/- " << g.summary.ci95_halfwidth
            << ", task-level gap " << tl.gap << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-shot segmentation meta-learning toolkit"};
  app.set_config("--config", "", "TOML/INI file with option values; command-line flags take precedence");
  app.allow_config_extras(false);
  app.require_subcommand(1);
  app.fallthrough();

  GenTasksArgs gen;
  auto* c_gen = app.add_subcommand("gen-tasks", "Write a synthetic task library as PGM files");
  add_common(c_gen, gen.c);

  MetaTrainArgs meta;
  auto* c_meta = app.add_subcommand("meta-train", "Meta-train an initialization (desk-scale default 2000 steps; 50000 at full scale)");
  add_common(c_meta, meta.c);
  add_model(c_meta, meta.model);
  c_meta->add_option("--algorithm", meta.algorithm, "reptile | fomaml_disjoint | fomaml_star")
      ->check(CLI::IsMember({"reptile", "fomaml_disjoint", "fomaml_star"}))
      ->capture_default_str();
  c_meta->add_option("--meta-steps", meta.meta.meta_steps, "Outer steps (desk-scale default)")->capture_default_str();
  c_meta->add_option("--meta-batch", meta.meta.meta_batch, "Tasks per outer step")->capture_default_str();
  c_meta->add_option("--meta-lr-initial", meta.meta.meta_lr_initial, "Outer step size at step 0")->capture_default_str();
  c_meta->add_option("--meta-lr-final", meta.meta.meta_lr_final, "Outer step size at the last step")->capture_default_str();
  c_meta->add_option("--train-shots", meta.meta.train_shots, "Examples per inner mini-set")->capture_default_str();
  c_meta->add_option("--checkpoint-every", meta.checkpoint_every, "Periodic checkpoint interval (0 = off)")
      ->capture_default_str();
  c_meta->add_option("--init", meta.init, "Start from this checkpoint instead of a fresh initialization");
  add_omega(c_meta, meta.meta.inner, "inner-");

  JointTrainArgs joint;
  auto* c_joint = app.add_subcommand("joint-train", "Multi-class joint-training baseline");
  add_common(c_joint, joint.c);
  add_model(c_joint, joint.model);
  c_joint->add_option("--epochs", joint.joint.epochs, "Passes over all training examples")->capture_default_str();
  c_joint->add_option("--batch", joint.joint.batch, "Batch size")->capture_default_str();
  c_joint->add_option("--lr", joint.joint.lr, "Initial learning rate (linear decay to 0)")->capture_default_str();
  c_joint->add_option("--l2", joint.joint.l2_lambda, "L2 coefficient")->capture_default_str();
  c_joint->add_option("--dropout", joint.joint.dropout_rate, "Head dropout")->capture_default_str();
  c_joint->add_option("--aug", joint.joint.aug_rate, "Augmentation rate")->capture_default_str();

  UhoArgs uho;
  auto* c_uho = app.add_subcommand("uho", "Tune the test-time update routine on validation tasks");
  add_common(c_uho, uho.c);
  c_uho->add_option("--checkpoint", uho.checkpoint, "Initialization to tune for")->required();
  c_uho->add_option("--budget", uho.options.budget, "Candidates (half random, half by expected improvement)")
      ->capture_default_str();
  c_uho->add_option("--episodes", uho.options.episodes, "Validation episodes per candidate")->capture_default_str();
  c_uho->add_option("--adapt-shots", uho.options.adapt_shots, "Adaptation examples per episode")->capture_default_str();
  c_uho->add_flag("--extended", uho.extended, "Also search dropout, augmentation and batch size");
  c_uho->add_option("--max-steps", uho.max_steps, "Early-stopping step cap (default 20, extended 80)");
  c_uho->add_option("--patience", uho.patience, "Early-stopping patience (default 5, extended 20)");
  c_uho->add_option("--task-set", uho.task_set, "Tasks to tune on")->capture_default_str();
  add_omega(c_uho, uho.base);

  EvaluateArgs ev;
  auto* c_eval = app.add_subcommand("evaluate", "k-shot adaptation and IoU on held-out examples");
  add_common(c_eval, ev.c);
  c_eval->add_option("--checkpoint", ev.checkpoint, "Initialization to evaluate")->required();
  c_eval->add_option("--omega", ev.omega_file, "Update routine file written by uho (overrides update flags)");
  c_eval->add_option("--shots", ev.shots, "Adaptation examples (k)")->capture_default_str();
  c_eval->add_option("--splits", ev.splits, "Random splits per task")->capture_default_str();
  c_eval->add_option("--task-set", ev.task_set, "Tasks to evaluate")->capture_default_str();
  add_omega(c_eval, ev.omega);

  FpkArgs fpk;
  auto* c_fpk = app.add_subcommand("fpk", "IoU as a function of the number of training examples k");
  add_common(c_fpk, fpk.c);
  c_fpk->add_option("--init", fpk.set.inits, "TAG=CHECKPOINT, repeatable")->required();
  c_fpk->add_option("--omega", fpk.set.omegas, "TAG=OMEGA_FILE used for small k, repeatable");
  c_fpk->add_option("--k", fpk.k, "Training-set sizes")->delimiter(',')->capture_default_str();
  c_fpk->add_option("--repeats", fpk.repeats, "Samples per task and k")->capture_default_str();
  c_fpk->add_option("--test-size", fpk.options.test_size, "Test examples per sample")->capture_default_str();
  c_fpk->add_option("--large-k-lr", fpk.options.large_k_lr, "Fixed learning rate for large k")->capture_default_str();
  c_fpk->add_option("--large-k-max-steps", fpk.options.large_k_max_steps, "Early-stopping cap for large k")
      ->capture_default_str();
  c_fpk->add_option("--large-k-patience", fpk.options.large_k_patience, "Early-stopping patience for large k")
      ->capture_default_str();
  c_fpk->add_option("--task-set", fpk.task_set, "Tasks to sample from")->capture_default_str();
  add_omega(c_fpk, fpk.omega);

  AnalyzeArgs an;
  auto* c_an = app.add_subcommand("analyze-weights", "Distances between initial and adapted weights");
  add_common(c_an, an.c);
  c_an->add_option("--init", an.set.inits, "TAG=CHECKPOINT, repeatable")->required();
  c_an->add_option("--shots", an.shots, "Adaptation examples")->capture_default_str();
  c_an->add_option("--repeats", an.repeats, "Random splits per task")->capture_default_str();
  c_an->add_option("--task-set", an.task_set, "Tasks to adapt on")->capture_default_str();
  add_omega(c_an, an.omega);

  GapArgs gap;
  auto* c_gap = app.add_subcommand("gen-gap", "Empirical within-task and task-level generalization gaps");
  add_common(c_gap, gap.c);
  c_gap->add_option("--checkpoint", gap.checkpoint, "Initialization to adapt")->required();
  c_gap->add_option("--shots", gap.shots, "Adaptation examples")->capture_default_str();
  c_gap->add_flag("--heldout-is-train", gap.heldout_is_train, "Score the adaptation examples on both sides");
  c_gap->add_option("--task-set", gap.task_set, "Held-out tasks")->capture_default_str();
  add_omega(c_gap, gap.omega);

  for (auto* sub : app.get_subcommands({})) sub->allow_config_extras(false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  auto* cmd = app.get_subcommands().front();
  const std::string name = cmd->get_name();
  const std::string& out = name == "gen-tasks" ? gen.c.out : name == "meta-train" ? meta.c.out
                         : name == "joint-train" ? joint.c.out : name == "uho" ? uho.c.out
                         : name == "evaluate" ? ev.c.out : name == "fpk" ? fpk.c.out
                         : name == "analyze-weights" ? an.c.out : gap.c.out;
  try {
    int rc = 0;
    if (name == "gen-tasks") rc = run_gen_tasks(gen);
    else if (name == "meta-train") rc = run_meta_train(meta);
    else if (name == "joint-train") rc = run_joint_train(joint);
    else if (name == "uho") rc = run_uho(uho);
    else if (name == "evaluate") rc = run_evaluate(ev);
    else if (name == "fpk") rc = run_fpk(fpk);
    else if (name == "analyze-weights") rc = run_analyze_weights(an);
    else rc = run_gen_gap(gap);
    if (rc == 0) write_run_metadata(out, name, argc, argv);
    return rc;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "runtime failure: " << e.what() << '\n';
    return 1;
  }
}
