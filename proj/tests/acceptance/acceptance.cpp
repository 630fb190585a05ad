// Copyright 2026 The MicroLab Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance run: criteria 1-9 at their stated tolerances and budgets. Prints
// one PASS/FAIL line per criterion and exits nonzero if any fails.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>

#include "gp_oracle.hpp"
#include "microlab/analysis.hpp"
#include "microlab/ops.hpp"
#include "microlab/tasks.hpp"
#include "microlab/uho.hpp"
#include "testing.hpp"

using namespace microlab;
using namespace microlab::testing;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

constexpr std::uint64_t kSeed = 2026;

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

class Verdict {
 public:
  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass_ = false;
      failures_.push_back(what);
    }
  }
  void note(const std::string& s) { notes_.push_back(s); }
  bool pass() const { return pass_; }
  const std::vector<std::string>& failures() const { return failures_; }
  const std::vector<std::string>& notes() const { return notes_; }

 private:
  bool pass_ = true;
  std::vector<std::string> failures_, notes_;
};

void log(const std::string& s) { std::cout << "  " << s << std::endl; }

// --- criterion 1 ---------------------------------------------------------

Verdict gradient_correctness() {
  Verdict v;
  constexpr double kLayer = 1e-5, kEndToEnd = 1e-4;
  double worst_layer = 0.0;
  auto layer = [&](const std::string& name, double err) {
    worst_layer = std::max(worst_layer, err);
    v.check(err < kLayer, name + " relative error " + fmt(err));
  };
  Rng rng(derive_seed(kSeed, 1));

  for (const ConvSpec spec : {ConvSpec{1, 1, Padding::same}, ConvSpec{2, 1, Padding::same},
                              ConvSpec{1, 2, Padding::same}, ConvSpec{1, 1, Padding::valid}}) {
    Tensor x = random_tensor({2, 2, 6, 5}, rng), k = random_tensor({3, 2, 3, 3}, rng), b = random_tensor({3}, rng);
    const Tensor w = random_tensor(conv2d(x, k, b, spec).shape(), rng);
    auto f = [&] { return dot(conv2d(x, k, b, spec), w); };
    const LayerGradients g = conv2d_backward(x, k, w, spec);
    layer("conv2d input", fd_check(x, g.grad_input, f));
    layer("conv2d kernel", fd_check(k, g.grad_params.at("kernel"), f));
    layer("conv2d bias", fd_check(b, g.grad_params.at("bias"), f));
  }
  for (Mode mode : {Mode::train, Mode::inference}) {
    Tensor x = random_tensor({3, 2, 4, 3}, rng);
    Tensor gamma = random_tensor({2}, rng, 0.5, 1.5), beta = random_tensor({2}, rng);
    const Tensor rm0 = random_tensor({2}, rng), rv0 = random_tensor({2}, rng, 0.5, 2.0);
    const Tensor w = random_tensor(x.shape(), rng);
    auto f = [&] {
      Tensor rm = rm0, rv = rv0;
      return dot(batchnorm(x, gamma, beta, rm, rv, mode, {}), w);
    };
    Tensor rm = rm0, rv = rv0;
    BatchNormCache cache;
    batchnorm(x, gamma, beta, rm, rv, mode, {}, &cache);
    const LayerGradients g = batchnorm_backward(cache, gamma, w);
    const std::string tag = mode == Mode::train ? "batchnorm(train)" : "batchnorm(inference)";
    layer(tag + " input", fd_check(x, g.grad_input, f));
    layer(tag + " gamma", fd_check(gamma, g.grad_params.at("gamma"), f));
    layer(tag + " beta", fd_check(beta, g.grad_params.at("beta"), f));
  }
  {
    Tensor x = random_tensor({2, 2, 3, 3}, rng);
    for (auto& e : x.data()) e += e > 0 ? 0.1 : -0.1;
    const Tensor w = random_tensor(x.shape(), rng);
    layer("relu", fd_check(x, relu_backward(x, w), [&] { return dot(relu(x), w); }));
  }
  {
    Tensor x = random_tensor({2, 3, 4, 5}, rng);
    const Tensor w = random_tensor({2, 3, 1, 1}, rng);
    layer("global_avgpool", fd_check(x, global_avgpool_backward(w, 4, 5), [&] { return dot(global_avgpool(x), w); }));
    Tensor p = random_tensor({2, 3, 1, 1}, rng);
    const Tensor wb = random_tensor({2, 3, 4, 5}, rng);
    layer("broadcast_spatial",
          fd_check(p, broadcast_spatial_backward(wb), [&] { return dot(broadcast_spatial(p, 4, 5), wb); }));
  }
  for (int factor : {2, 4}) {
    Tensor x = random_tensor({1, 2, 3, 4}, rng);
    const Tensor w = random_tensor(bilinear_upsample(x, factor).shape(), rng);
    layer("bilinear x" + std::to_string(factor), fd_check(x, bilinear_upsample_backward(w, factor),
                                                          [&] { return dot(bilinear_upsample(x, factor), w); }));
  }
  {
    Tensor x = random_tensor({2, 3, 4, 4}, rng), mask;
    Rng r(5);
    dropout(x, 0.3, Mode::train, r, &mask);
    const Tensor w = random_tensor(x.shape(), rng);
    layer("dropout", fd_check(x, dropout_backward(mask, w), [&] {
            Rng same(5);
            return dot(dropout(x, 0.3, Mode::train, same), w);
          }));
  }
  {
    Tensor x = random_tensor({2, 3, 2, 2}, rng, -4.0, 4.0);
    const Tensor p = softmax_channels(x);
    const Tensor w = random_tensor(x.shape(), rng);
    layer("softmax", fd_check(x, softmax_channels_backward(p, w), [&] { return dot(softmax_channels(x), w); }));
  }
  {
    Tensor y({2, 1, 4, 4});
    for (auto& e : y.data()) e = uniform01(rng) < 0.4 ? 1.0 : 0.0;
    Tensor p = random_tensor({2, 1, 4, 4}, rng, 0.02, 0.98);
    ParameterSet params;
    params.add_param("b", "w", random_tensor({3}, rng));
    const CompositeLoss l = composite_loss(y, p, &params, 0.1);
    auto f = [&] { return composite_loss_value(y, p, &params, 0.1).total; };
    layer("composite loss yhat", fd_check(p, l.grad_yhat, f));
    layer("composite loss l2", fd_check(params.param("w"), l.grad_params.at("w"), f));
    Tensor labels({2, 1, 3, 3});
    for (auto& e : labels.data()) e = static_cast<double>(uniform_index(rng, 4));
    Tensor probs = softmax_channels(random_tensor({2, 4, 3, 3}, rng, -2.0, 2.0));
    Tensor grad;
    categorical_cross_entropy(labels, probs, &grad);
    layer("cross entropy", fd_check(probs, grad, [&] { return categorical_cross_entropy(labels, probs, nullptr); }));
  }

  const SegmentationNet net(small_config());
  ParameterSet p = net.build(rng);
  {
    const ModelConfig& cfg = net.config();
    Tensor deep = random_tensor({2, cfg.stage_channels(cfg.encoder_stages), 8, 8}, rng);
    Tensor skip = random_tensor({2, cfg.stage_channels(cfg.rsd_skip_stage), 8, 8}, rng);
    ParameterSet scratch = p;
    const Tensor w = random_tensor(net.rsd_block(scratch, deep, skip, Mode::train).shape(), rng);
    auto f = [&] {
      ParameterSet s = p;
      return dot(net.rsd_block(s, deep, skip, Mode::train), w);
    };
    scratch = p;
    RsdCache cache;
    net.rsd_block(scratch, deep, skip, Mode::train, &cache);
    GradMap grads;
    auto [g_skip, g_deep] = net.rsd_backward(p, cache, w, grads);
    layer("rsd deep input", fd_check(deep, g_deep, f));
    layer("rsd skip input", fd_check(skip, g_skip, f));
    for (const auto& [name, g] : grads) layer("rsd " + name, fd_check(p.param(name), g, f, 16));
  }

  for (auto& e : p.params())
    for (auto& x : e.value.data()) x += 0.05 * normal01(rng);
  auto [images, masks] = random_batch(2, 16, rng);
  const EndToEnd e2e{net, images, masks};
  const GradMap g = e2e.grad(p);
  double worst_e2e = 0.0;
  for (auto& entry : p.params()) {
    const double err = fd_check(entry.value, g.at(entry.name), [&] { return e2e.loss(p); }, 24, kFdStepNetwork);
    worst_e2e = std::max(worst_e2e, err);
    v.check(err < kEndToEnd, "end-to-end " + entry.name + " relative error " + fmt(err));
  }
  v.note("worst per-layer " + fmt(worst_layer, 3) + " (< 1e-5), worst end-to-end " + fmt(worst_e2e, 3) +
         " (< 1e-4) at 16x16");
  return v;
}

// --- criterion 2 ---------------------------------------------------------

double max_abs(const GradMap& g) {
  double m = 0.0;
  for (const auto& [name, t] : g)
    for (double x : t.data()) m = std::max(m, std::abs(x));
  return m;
}

double quadratic_after(double w0, double c, double lr, std::size_t n) {
  return c + std::pow(1.0 - lr, static_cast<double>(n)) * (w0 - c);
}

Verdict meta_gradient_identities() {
  Verdict v;
  const SegmentationLearner net{SegmentationNet(small_config())};
  const auto lib = generate_task_library(4, 10, 16, derive_seed(kSeed, 2));
  Rng rng(derive_seed(kSeed, 2, 1));
  const ParameterSet theta = net.net().build(rng);

  UpdateHyperparams zero;
  zero.steps = 0;
  for (const Task& t : lib) {
    const MetaGradient g = reptile_meta_grad(net, theta, t, 5, zero, rng);
    v.check(max_abs(g.delta) == 0.0 && max_abs(g.stat_delta) == 0.0, "Reptile steps=0 update on " + t.id);
  }

  double worst_fomaml = 0.0;
  UpdateHyperparams w;
  w.steps = 3;
  w.inner_batch = 4;
  for (SamplingMode mode : {SamplingMode::disjoint, SamplingMode::with_replacement_union}) {
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
      const Task& task = lib[seed % lib.size()];
      Rng a(derive_seed(kSeed, 20, seed));
      const MetaGradient g = fomaml_meta_grad(net, theta, task, 5, w, mode, a);
      Rng replay(derive_seed(kSeed, 20, seed));
      const Episode ep = sample_episode(task, 5, 5, mode, replay);
      ParameterSet theta_tr = inner_update(net, theta, ep.train, w, replay);
      const ParameterSet at_tr = theta_tr;
      UpdateHyperparams one = w;
      one.steps = 1;
      const std::vector<Example> batch = sample_batch(ep.val, one, replay);
      GradMap grad;
      net.loss_and_grad(theta_tr, batch, one, replay, grad);
      for (const auto& e : at_tr.params()) {
        const Tensor& d = g.delta.at(e.name);
        for (std::size_t i = 0; i < d.size(); ++i)
          worst_fomaml = std::max(worst_fomaml,
                                  std::abs(d[i] + w.lr * (grad.at(e.name)[i] + 2.0 * w.l2_lambda * e.value[i])));
      }
    }
  }
  v.check(worst_fomaml < 1e-12, "FOMAML identity deviation " + fmt(worst_fomaml));

  const QuadraticLearner toy;
  double worst_toy = 0.0;
  const double c = 1.5, w0 = -0.5, alpha = 0.2;
  const Task t = constant_task("toy", c, 10);
  for (std::size_t n : {1u, 2u, 5u, 9u}) {
    Rng r(derive_seed(kSeed, 21, n));
    const MetaGradient rep = reptile_meta_grad(toy, scalar_params(w0), t, 5, plain_omega(alpha, n), r);
    worst_toy = std::max(worst_toy, std::abs(rep.delta.at("w")[0] - (quadratic_after(w0, c, alpha, n) - w0)));
    for (SamplingMode mode : {SamplingMode::disjoint, SamplingMode::with_replacement_union}) {
      const MetaGradient f = fomaml_meta_grad(toy, scalar_params(w0), t, 5, plain_omega(alpha, n), mode, r);
      worst_toy = std::max(worst_toy,
                           std::abs(f.delta.at("w")[0] + alpha * (quadratic_after(w0, c, alpha, n) - c)));
    }
  }
  MetaConfig mc;
  mc.algorithm = MetaAlgorithm::reptile;
  mc.meta_steps = 6;
  mc.meta_batch = 3;
  mc.meta_lr_initial = 0.5;
  mc.meta_lr_final = 0.1;
  mc.inner = plain_omega(alpha, 4);
  Rng r(derive_seed(kSeed, 22));
  const std::vector<Task> tasks{t};
  const double got = meta_train(toy, scalar_params(0.0), tasks, mc, r).param("w")[0];
  double want = 0.0;
  for (std::size_t s = 0; s < mc.meta_steps; ++s) want += mc.meta_lr(s) * (quadratic_after(want, c, alpha, 4) - want);
  worst_toy = std::max(worst_toy, std::abs(got - want));
  v.check(worst_toy < 1e-10, "toy closed-form deviation " + fmt(worst_toy));
  v.note("Reptile steps=0 exact zero; FOMAML identity " + fmt(worst_fomaml, 3) + " (< 1e-12); toy " +
         fmt(worst_toy, 3) + " (< 1e-10)");
  return v;
}

// --- criterion 3 ---------------------------------------------------------

Verdict reset_semantics() {
  Verdict v;
  const SegmentationLearner net{SegmentationNet(ModelConfig{})};
  const auto lib = generate_task_library(6, 10, 32, derive_seed(kSeed, 3));
  Rng rng(derive_seed(kSeed, 3, 1));
  ParameterSet theta = net.net().build(rng);
  for (auto& e : theta.stats())
    for (auto& x : e.value.data()) x += 0.1 * uniform01(rng);
  const ParameterSet snapshot = theta;
  std::size_t changed = 0;
  for (int call = 0; call < 100; ++call) {
    UpdateHyperparams w;
    w.lr = std::pow(10.0, uniform(rng, -3.5, -0.5));
    w.steps = uniform_index(rng, 6);
    w.inner_batch = 1 + uniform_index(rng, 10);
    w.dropout_rate = uniform(rng, 0.0, 0.5);
    w.aug_rate = uniform01(rng);
    w.l2_lambda = uniform(rng, 0.0, 0.01);
    const Task& t = lib[uniform_index(rng, lib.size())];
    auto [train, eval] = random_split(t, 1 + uniform_index(rng, 9), rng);
    adapt_and_eval(net, theta, train, eval, w, rng);
    if (!theta.identical(snapshot)) ++changed;
  }
  v.check(changed == 0, std::to_string(changed) + " of 100 calls changed theta");
  v.note("100 randomized adapt_and_eval calls, theta and running statistics bitwise unchanged");
  return v;
}

// --- criterion 4 ---------------------------------------------------------

Verdict gp_ei_oracles() {
  Verdict v;
  Rng rng(derive_seed(kSeed, 4));
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t dims = 1 + uniform_index(rng, 4);
    const std::size_t n = 1 + uniform_index(rng, 10);
    Matrix xs(n, std::vector<double>(dims));
    std::vector<double> ys(n);
    for (auto& x : xs)
      for (auto& e : x) e = uniform01(rng);
    for (auto& y : ys) y = uniform(rng, -2.0, 3.0);
    if (n == 1) ys[0] = 0.7;
    KernelHyper h;
    h.signal_var = uniform(rng, 0.5, 2.0);
    h.noise_var = std::pow(10.0, uniform(rng, -4.0, -1.0));
    for (std::size_t d = 0; d < dims; ++d) h.length_scales.push_back(uniform(rng, 0.1, 1.0));
    const GPModel gp = GPModel::fit(xs, ys, h);
    if (n < 2) continue;  // the dense oracle standardizes by the sample deviation
    for (int q = 0; q < 5; ++q) {
      std::vector<double> x(dims);
      for (auto& e : x) e = uniform01(rng);
      const DenseOracle want = dense_posterior(xs, ys, h, x);
      const Posterior got = gp.predict(x);
      worst = std::max({worst, std::abs(got.mean - want.mean), std::abs(got.var - want.var)});
    }
  }
  v.check(worst < 1e-8, "GP posterior deviation " + fmt(worst));

  const double phi0 = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  const double ei0 = expected_improvement(0.3, 1.0, 0.3);
  v.check(std::abs(ei0 - 0.3989422804014327) < 1e-12 && std::abs(ei0 - phi0) < 1e-15, "EI at z=0 " + fmt(ei0, 17));
  double worst_mc = 0.0;
  for (auto [mu, sigma, best] : {std::tuple{0.2, 0.5, 0.4}, std::tuple{1.0, 0.3, 0.0}, std::tuple{-1.0, 1.5, 0.5}}) {
    double s = 0.0;
    constexpr int n = 1000000;
    for (int i = 0; i < n; ++i) s += std::max(0.0, mu + sigma * normal01(rng) - best);
    worst_mc = std::max(worst_mc, std::abs(s / n - expected_improvement(mu, sigma, best)));
  }
  v.check(worst_mc < 1e-3, "EI Monte-Carlo deviation " + fmt(worst_mc));

  const SearchSpace space;
  std::size_t hits = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng plant(derive_seed(kSeed, 40, seed));
    const double target = uniform(plant, std::log10(space.lr_low) + 0.3, std::log10(space.lr_high) - 0.3);
    auto objective = [&](const std::vector<double>& x) {
      const double l = std::log10(space.decode(x, UpdateHyperparams{}).lr);
      return -(l - target) * (l - target);
    };
    Rng r(derive_seed(kSeed, 41, seed));
    const BayesOptResult res = bayes_optimize(space, 16, objective, r);
    const double got = std::log10(space.decode(res.xs[res.best_index], UpdateHyperparams{}).lr);
    if (std::abs(got - target) <= 0.3) ++hits;
  }
  v.check(hits >= 18, "planted optimum recovered in " + std::to_string(hits) + " of 20 seeds");
  v.note("GP vs dense " + fmt(worst, 3) + " (< 1e-8); EI(z=0) " + fmt(ei0, 10) + "; MC " + fmt(worst_mc, 3) +
         " (< 1e-3); BO " + std::to_string(hits) + "/20 within 0.3 log-units");
  return v;
}

// --- criteria 5-7: default synthetic pipeline -----------------------------

struct Pipeline {
  std::vector<Task> train, val, test;
  ModelConfig config;
  std::optional<SegmentationLearner> learner;
  ParameterSet random_init, meta, joint;
  UpdateHyperparams omega_default, omega_meta_uho;
  double seconds_meta = 0.0, seconds_joint = 0.0, seconds_uho = 0.0;
};

/// Mean 5-shot IoU over `splits` random splits per task; every init sees the same splits.
MeanCi kshot_iou(const Learner& learner, const ParameterSet& theta, std::span<const Task> tasks,
                 const UpdateHyperparams& omega, std::size_t splits, std::uint64_t seed) {
  std::vector<double> scores;
  for (std::size_t t = 0; t < tasks.size(); ++t)
    for (std::size_t s = 0; s < splits; ++s) {
      Rng rng(derive_seed(seed, t, s));
      auto [train, eval] = random_split(tasks[t], 5, rng);
      scores.push_back(adapt_and_eval(learner, theta, train, eval, omega, rng).iou);
    }
  return mean_iou_ci(scores);
}

std::string show(const MeanCi& m) { return fmt(m.mean) + " +/- " + fmt(m.ci95_halfwidth, 2); }

Verdict table2_ordering(Pipeline& p) {
  Verdict v;
  const auto t0 = Clock::now();
  const auto lib = generate_task_library(24, 10, 32, 1);
  const TaskSplit split = split_tasks(lib, {0.6, 0.2, 0.2}, 1);
  p.train = select_tasks(lib, split.train_tasks);
  p.val = select_tasks(lib, split.val_tasks);
  p.test = select_tasks(lib, split.test_tasks);
  p.config = ModelConfig{};
  p.learner.emplace(SegmentationNet(p.config));
  const Learner& L = *p.learner;

  Rng init_rng(derive_seed(kSeed, 5));
  p.random_init = p.learner->net().build(init_rng);

  auto t = Clock::now();
  MetaConfig mc;  // FOMAML*, 2000 steps, meta-batch 5, default inner omega
  Rng meta_rng(derive_seed(kSeed, 5, 1));
  MetaCallbacks cb;
  cb.on_step = [](std::size_t s, double, double loss) {
    if ((s + 1) % 500 == 0) log("meta-train step " + std::to_string(s + 1) + " loss " + fmt(loss));
  };
  p.meta = meta_train(L, p.random_init, p.train, mc, meta_rng, cb);
  p.seconds_meta = seconds_since(t);
  log("meta-training " + fmt(p.seconds_meta, 4) + " s");

  t = Clock::now();
  Rng joint_rng(derive_seed(kSeed, 5, 2));
  p.joint = joint_train(p.config, p.train, JointConfig{}, joint_rng).params;
  p.seconds_joint = seconds_since(t);
  log("joint training " + fmt(p.seconds_joint, 4) + " s");

  t = Clock::now();
  Rng uho_rng(derive_seed(kSeed, 5, 3));
  p.omega_meta_uho = uho_optimize(L, p.meta, p.val, SearchSpace{}, p.omega_default, UHOOptions{}, uho_rng).omega_test;
  p.seconds_uho = seconds_since(t);
  log("UHO " + fmt(p.seconds_uho, 4) + " s: lr " + fmt(p.omega_meta_uho.lr) + " steps " +
      std::to_string(p.omega_meta_uho.steps));

  constexpr std::size_t kSplits = 8;
  const std::uint64_t test_seed = derive_seed(kSeed, 50), val_seed = derive_seed(kSeed, 51);
  const MeanCi meta = kshot_iou(L, p.meta, p.test, p.omega_default, kSplits, test_seed);
  const MeanCi joint = kshot_iou(L, p.joint, p.test, p.omega_default, kSplits, test_seed);
  const MeanCi rnd = kshot_iou(L, p.random_init, p.test, p.omega_default, kSplits, test_seed);
  const MeanCi meta_uho_test = kshot_iou(L, p.meta, p.test, p.omega_meta_uho, kSplits, test_seed);
  const MeanCi val_default = kshot_iou(L, p.meta, p.val, p.omega_default, kSplits, val_seed);
  const MeanCi val_uho = kshot_iou(L, p.meta, p.val, p.omega_meta_uho, kSplits, val_seed);
  const double runtime = seconds_since(t0);

  log("test IoU (5-shot, default omega): meta " + show(meta) + ", joint " + show(joint) + ", random " + show(rnd));
  log("test IoU meta + UHO omega: " + show(meta_uho_test));
  log("val IoU meta: default omega " + show(val_default) + ", UHO omega " + show(val_uho));

  v.check(meta.mean >= joint.mean + 0.05, "meta " + fmt(meta.mean) + " < joint " + fmt(joint.mean) + " + 0.05");
  v.check(meta.mean >= rnd.mean + 0.10, "meta " + fmt(meta.mean) + " < random " + fmt(rnd.mean) + " + 0.10");
  v.check(val_uho.mean >= val_default.mean - 0.01,
          "UHO val " + fmt(val_uho.mean) + " < default val " + fmt(val_default.mean) + " - 0.01");
  v.check(runtime <= 30 * 60, "runtime " + fmt(runtime) + " s > 30 min");
  v.note("meta " + fmt(meta.mean) + ", joint " + fmt(joint.mean) + ", random " + fmt(rnd.mean) + "; val UHO " +
         fmt(val_uho.mean) + " vs default " + fmt(val_default.mean) + "; " + fmt(runtime / 60.0, 3) + " min");
  return v;
}

Verdict distance_ordering(const Pipeline& p) {
  Verdict v;
  const auto t0 = Clock::now();
  UpdateHyperparams w;
  w.lr = 0.005;
  w.steps = 5;
  const std::vector<TaggedInit> inits{{"meta", p.meta, w}, {"joint", p.joint, w}};
  const DistanceStudy s = distance_study(*p.learner, inits, p.test, w, 5, 8, derive_seed(kSeed, 6));
  const MeanCi& meta = s.d1_summary.at(0).second;
  const MeanCi& joint = s.d1_summary.at(1).second;
  const double runtime = seconds_since(t0);
  log("d1 meta " + show(meta) + " (n " + std::to_string(meta.n) + "), joint " + show(joint) + " (n " +
      std::to_string(joint.n) + ")");
  v.check(meta.n >= 40 && joint.n >= 40, "fewer than 40 samples");
  v.check(joint.mean > meta.mean, "E[d1 joint] " + fmt(joint.mean) + " <= E[d1 meta] " + fmt(meta.mean));
  v.check(joint.mean - joint.ci95_halfwidth > meta.mean + meta.ci95_halfwidth, "95% intervals overlap");
  v.check(runtime <= 5 * 60, "runtime " + fmt(runtime) + " s > 5 min");
  v.note("d1 joint " + show(joint) + " vs meta " + show(meta) + "; " + fmt(runtime, 3) + " s");
  return v;
}

Verdict kshot_trend(const Pipeline& p) {
  Verdict v;
  const auto t0 = Clock::now();
  Rng uho_rng(derive_seed(kSeed, 7));
  const UpdateHyperparams omega_joint =
      uho_optimize(*p.learner, p.joint, p.val, SearchSpace{}, p.omega_default, UHOOptions{}, uho_rng).omega_test;
  log("joint UHO: lr " + fmt(omega_joint.lr) + " steps " + std::to_string(omega_joint.steps));
  const std::vector<std::size_t> ks{1, 5, 10, 25};
  const KShotOptions opt;
  std::vector<Task> tasks;
  for (const Task& t : p.test) tasks.push_back(deepen_task(t, ks.back() + opt.test_size));
  const std::vector<TaggedInit> inits{{"meta", p.meta, p.omega_meta_uho}, {"joint", p.joint, omega_joint}};
  const KShotCurve c = kshot_curve(*p.learner, inits, tasks, ks, 4, p.omega_default, opt, derive_seed(kSeed, 70));
  std::vector<double> gap(ks.size());
  std::string line;
  for (std::size_t i = 0; i < ks.size(); ++i) {
    gap[i] = c.summary[i].stats.mean - c.summary[ks.size() + i].stats.mean;
    line += " k=" + std::to_string(ks[i]) + ": meta " + fmt(c.summary[i].stats.mean) + " joint " +
            fmt(c.summary[ks.size() + i].stats.mean) + " gap " + fmt(gap[i]) + ";";
  }
  const double runtime = seconds_since(t0);
  log("FP-k" + line);
  v.check(gap.back() <= gap.front(), "gap at k=25 " + fmt(gap.back()) + " > gap at k=1 " + fmt(gap.front()));
  v.check(runtime <= 20 * 60, "runtime " + fmt(runtime) + " s > 20 min");
  v.note("meta-joint gap k=1 " + fmt(gap.front()) + ", k=25 " + fmt(gap.back()) + "; " + fmt(runtime / 60.0, 3) +
         " min");
  return v;
}

// --- criterion 8 ---------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Every regular file under `root` except the run metadata sidecars, by relative path.
std::map<std::string, std::string> output_files(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    const std::string name = e.path().filename().string();
    if (name.rfind("run_", 0) == 0 && e.path().extension() == ".json") continue;
    out[fs::relative(e.path(), root).string()] = slurp(e.path());
  }
  return out;
}

Verdict cli_determinism(const std::string& cli) {
  Verdict v;
  if (cli.empty() || !fs::exists(cli)) {
    v.check(false, "CLI binary not found (pass --cli)");
    return v;
  }
  const fs::path base = fs::temp_directory_path() / "microlab_acceptance_cli";
  fs::remove_all(base);
  const std::string lib = " --families 6 --examples 12 --hw 16 --library-seed 3 --split 0.5,0.25,0.25";
  const std::string model = " --base-channels 2 --encoder-stages 2 --rsd-skip-stage 1 --rsd-out 4";
  struct Step {
    std::string name, args;
  };
  auto steps_for = [&](const fs::path& r) {
    const std::string d = r.string();
    return std::vector<Step>{
        {"gen-tasks", "gen-tasks --out " + d + "/data" + lib},
        {"meta-train", "meta-train --out " + d + "/meta --data " + d + "/data --split 0.5,0.25,0.25" + model +
                           " --meta-steps 4 --meta-batch 2 --inner-steps 2 --checkpoint-every 2 --seed 5"},
        {"joint-train", "joint-train --out " + d + "/joint" + lib + model + " --epochs 2 --seed 5"},
        {"uho", "uho --out " + d + "/uho" + lib + " --checkpoint " + d +
                    "/meta/meta_final.mlab --budget 3 --episodes 2 --max-steps 3 --patience 1 --seed 5"},
        {"evaluate", "evaluate --out " + d + "/eval" + lib + " --checkpoint " + d + "/meta/meta_final.mlab --omega " +
                         d + "/uho/omega_test.txt --seed 5"},
        {"fpk", "fpk --out " + d + "/fpk" + lib + " --init meta=" + d + "/meta/meta_final.mlab --init joint=" + d +
                    "/joint/joint_final.mlab --omega meta=" + d +
                    "/uho/omega_test.txt --k 1,5,12 --repeats 2 --test-size 4 --large-k-max-steps 4 "
                    "--large-k-patience 2 --seed 5"},
        {"analyze-weights", "analyze-weights --out " + d + "/weights" + lib + " --init meta=" + d +
                                "/meta/meta_final.mlab --init joint=" + d +
                                "/joint/joint_final.mlab --repeats 2 --steps 2 --seed 5"},
        {"gen-gap", "gen-gap --out " + d + "/gap" + lib + " --checkpoint " + d + "/meta/meta_final.mlab --seed 5"},
    };
  };
  std::vector<std::map<std::string, std::string>> runs;
  for (const char* run : {"run1", "run2"}) {
    const fs::path r = base / run;
    fs::create_directories(r);
    for (const Step& s : steps_for(r)) {
      const std::string cmd = "\"" + cli + "\" " + s.args + " > \"" + (r / (s.name + ".log")).string() + "\" 2>&1";
      const int rc = std::system(cmd.c_str());
      v.check(rc == 0, std::string(run) + " " + s.name + " exited with status " + std::to_string(rc));
      if (rc != 0) std::cout << slurp(r / (s.name + ".log"));
    }
    auto files = output_files(r);
    for (auto it = files.begin(); it != files.end();)
      it = it->first.ends_with(".log") ? files.erase(it) : std::next(it);
    runs.push_back(std::move(files));
  }
  std::size_t compared = 0, csvs = 0, ckpts = 0;
  for (const auto& [name, bytes] : runs[0]) {
    const auto it = runs[1].find(name);
    v.check(it != runs[1].end(), name + " missing from the second run");
    if (it == runs[1].end()) continue;
    v.check(it->second == bytes, name + " differs between runs");
    ++compared;
    if (name.ends_with(".csv")) ++csvs;
    if (name.ends_with(".mlab")) ++ckpts;
  }
  v.check(runs[0].size() == runs[1].size(), "runs produced different file sets");
  v.check(csvs >= 8 && ckpts >= 4, "too few outputs compared");
  v.note("8 commands run twice; " + std::to_string(compared) + " files byte-identical (" + std::to_string(csvs) +
         " CSV, " + std::to_string(ckpts) + " checkpoints)");
  fs::remove_all(base);
  return v;
}

// --- criterion 9 ---------------------------------------------------------

Verdict gap_sanity(const Pipeline* p) {
  Verdict v;
  std::optional<SegmentationLearner> own;
  std::vector<Task> tasks;
  ParameterSet theta;
  if (p != nullptr) {
    tasks = p->test;
    theta = p->meta;
  } else {
    const auto lib = generate_task_library(24, 10, 32, 1);
    tasks = select_tasks(lib, split_tasks(lib, {0.6, 0.2, 0.2}, 1).test_tasks);
    own.emplace(SegmentationNet(ModelConfig{}));
    Rng rng(derive_seed(kSeed, 9));
    theta = own->net().build(rng);
  }
  const Learner& L = p != nullptr ? static_cast<const Learner&>(*p->learner) : *own;
  const std::uint64_t seed = derive_seed(kSeed, 90);
  GapRegime regime;  // default omega, 5 shots
  const GapReport same = generalization_gap(L, theta, tasks, regime, seed, true);
  bool all_zero = same.summary.mean == 0.0;
  for (const auto& [id, g] : same.per_task) all_zero = all_zero && g == 0.0;
  v.check(all_zero, "held-out = train gap not exactly zero");
  const GapReport def = generalization_gap(L, theta, tasks, regime, seed);
  // Overfit regime: 200 steps on 1 shot with every regularizer off.
  GapRegime overfit;
  overfit.omega.steps = 200;
  overfit.omega.l2_lambda = 0.0;
  overfit.omega.aug_rate = 0.0;
  overfit.omega.dropout_rate = 0.0;
  overfit.shots = 1;
  const GapReport over = generalization_gap(L, theta, tasks, overfit, seed);
  v.check(over.summary.mean > def.summary.mean,
          "overfit gap " + fmt(over.summary.mean) + " <= default gap " + fmt(def.summary.mean));
  v.note("held-out = train gap exactly 0; overfit gap " + fmt(over.summary.mean) + ", default " +
         fmt(def.summary.mean) + (p != nullptr ? " (meta-trained init)" : " (random init)"));
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria 1-9"};
  std::string cli;
  std::vector<int> only;
  app.add_option("--cli", cli, "Path to the microlab executable (criterion 8)");
  app.add_option("--only", only, "Run a subset of criteria")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  const std::set<int> selected = only.empty() ? std::set<int>{1, 2, 3, 4, 5, 6, 7, 8, 9}
                                              : std::set<int>(only.begin(), only.end());

  const std::vector<std::string> titles{"",
                                        "gradient correctness",
                                        "meta-gradient identities",
                                        "reset semantics",
                                        "GP/EI oracles",
                                        "meta vs joint vs random ordering",
                                        "weight-distance ordering",
                                        "FP-k trend",
                                        "CLI determinism",
                                        "generalization-gap sanity"};
  // Criteria 5-7 check their own budgets; 3, 8 and 9 state none.
  const std::vector<double> budgets{0, 60, 60, 0, 120, 0, 0, 0, 0, 0};

  Pipeline pipeline;
  bool have_pipeline = false;
  std::vector<std::string> summary;
  bool all_pass = true;
  for (int id = 1; id <= 9; ++id) {
    if (!selected.count(id)) continue;
    const bool needs_pipeline = id == 6 || id == 7;
    if (needs_pipeline && !have_pipeline) {
      std::cout << "criterion " << id << " needs criterion 5's checkpoints; running it first" << std::endl;
      table2_ordering(pipeline);
      have_pipeline = true;
    }
    std::cout << "criterion " << id << ": " << titles[id] << std::endl;
    const auto t0 = Clock::now();
    Verdict v;
    try {
      switch (id) {
        case 1: v = gradient_correctness(); break;
        case 2: v = meta_gradient_identities(); break;
        case 3: v = reset_semantics(); break;
        case 4: v = gp_ei_oracles(); break;
        case 5:
          v = table2_ordering(pipeline);
          have_pipeline = true;
          break;
        case 6: v = distance_ordering(pipeline); break;
        case 7: v = kshot_trend(pipeline); break;
        case 8: v = cli_determinism(cli); break;
        case 9: v = gap_sanity(have_pipeline ? &pipeline : nullptr); break;
      }
    } catch (const std::exception& e) {
      v.check(false, std::string("exception: ") + e.what());
    }
    const double secs = seconds_since(t0);
    if (budgets[id] > 0) v.check(secs <= budgets[id], "runtime " + fmt(secs) + " s over budget");
    std::string line = std::string(v.pass() ? "PASS" : "FAIL") + " criterion " + std::to_string(id) + " (" +
                       titles[id] + ", " + fmt(secs, 3) + " s)";
    for (const auto& n : v.notes()) line += ": " + n;
    for (const auto& f : v.failures()) line += " | " + f;
    std::cout << line << std::endl;
    summary.push_back(line);
    all_pass = all_pass && v.pass();
  }
  std::cout << "\nsummary\n";
  for (const auto& s : summary) std::cout << s << "\n";
  return all_pass ? 0 : 1;
}
