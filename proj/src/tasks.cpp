// Copyright 2026 The MicroLab Authors
// SPDX-License-Identifier: Apache-2.0

#include "microlab/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "microlab/error.hpp"

namespace microlab {

namespace {

constexpr double kMinFgFraction = 0.02;
constexpr double kMaxFgFraction = 0.6;
constexpr ShapeKind kKinds[] = {ShapeKind::ellipse, ShapeKind::rectangle, ShapeKind::triangle,
                                ShapeKind::ring,    ShapeKind::cross,     ShapeKind::star};

struct Placement {
  double cx, cy, radius, aspect, rotation;
};

// Shape membership in the shape's own frame, coordinates scaled by 1/radius.
bool inside_unit_shape(ShapeKind kind, int star_points, double u, double v, double aspect) {
  switch (kind) {
    case ShapeKind::ellipse:
      return u * u + (v / aspect) * (v / aspect) <= 1.0;
    case ShapeKind::rectangle:
      return std::abs(u) <= 1.0 && std::abs(v) <= aspect;
    case ShapeKind::triangle: {
      // Equilateral, circumradius 1, apex up: three half-planes at distance 1/2.
      for (int k = 0; k < 3; ++k) {
        const double a = std::numbers::pi / 2.0 + std::numbers::pi + 2.0 * std::numbers::pi * k / 3.0;
        if (u * std::cos(a) + v * std::sin(a) > 0.5) return false;
      }
      return true;
    }
    case ShapeKind::ring: {
      const double r2 = u * u + v * v;
      return r2 <= 1.0 && r2 >= 0.55 * 0.55;
    }
    case ShapeKind::cross: {
      const double arm = 0.35;
      return (std::abs(u) <= 1.0 && std::abs(v) <= arm) || (std::abs(v) <= 1.0 && std::abs(u) <= arm);
    }
    case ShapeKind::star: {
      const double r = std::sqrt(u * u + v * v);
      if (r > 1.0) return false;
      const double phi = std::atan2(v, u) + std::numbers::pi;
      const double t = std::fmod(phi * star_points / (2.0 * std::numbers::pi), 1.0);
      const double inner = 0.45;
      const double boundary = inner + (1.0 - inner) * (1.0 - 2.0 * std::abs(t - 0.5));
      return r <= boundary;
    }
  }
  return false;
}

double texture_at(const Texture& t, double x, double y, double hw, double phase) {
  return t.level + t.amp * std::sin(2.0 * std::numbers::pi * t.freq *
                                        (x * std::cos(t.angle) + y * std::sin(t.angle)) / hw +
                                    phase);
}

Placement draw_placement(double size_min, double size_max, double side, double lo, double hi, Rng& rng) {
  Placement pl{};
  pl.cx = side * uniform(rng, lo, hi);
  pl.cy = side * uniform(rng, lo, hi);
  pl.radius = side * uniform(rng, size_min, size_max);
  pl.aspect = uniform(rng, 0.55, 1.0);
  pl.rotation = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  return pl;
}

// Writes 1 into `out` where the shape covers a pixel centre; returns the pixel count.
std::size_t rasterize(ShapeKind kind, int star_points, const Placement& pl, std::size_t hw,
                      std::vector<unsigned char>& out) {
  const double c = std::cos(pl.rotation), s = std::sin(pl.rotation);
  std::size_t n = 0;
  for (std::size_t yy = 0; yy < hw; ++yy) {
    for (std::size_t xx = 0; xx < hw; ++xx) {
      const double dx = static_cast<double>(xx) + 0.5 - pl.cx;
      const double dy = static_cast<double>(yy) + 0.5 - pl.cy;
      const double u = (c * dx + s * dy) / pl.radius;
      const double v = (-s * dx + c * dy) / pl.radius;
      const bool in = inside_unit_shape(kind, star_points, u, v, pl.aspect);
      out[yy * hw + xx] = in ? 1 : 0;
      n += in ? 1 : 0;
    }
  }
  return n;
}

// True when some pixel of `b` lies within one pixel (8-neighbourhood) of `a`.
bool touches(const std::vector<unsigned char>& a, const std::vector<unsigned char>& b, std::size_t hw) {
  const auto n = static_cast<std::ptrdiff_t>(hw);
  for (std::ptrdiff_t y = 0; y < n; ++y)
    for (std::ptrdiff_t x = 0; x < n; ++x) {
      if (!b[static_cast<std::size_t>(y * n + x)]) continue;
      for (std::ptrdiff_t dy = -1; dy <= 1; ++dy)
        for (std::ptrdiff_t dx = -1; dx <= 1; ++dx) {
          const std::ptrdiff_t yy = y + dy, xx = x + dx;
          if (yy >= 0 && xx >= 0 && yy < n && xx < n && a[static_cast<std::size_t>(yy * n + xx)]) return true;
        }
    }
  return false;
}

Example render_one(const FamilySpec& spec, std::size_t hw, Rng& rng) {
  const auto side = static_cast<double>(hw);
  const double total = static_cast<double>(hw * hw);
  std::vector<unsigned char> target(hw * hw), other(hw * hw, 0);
  bool placed = false;
  for (int attempt = 0; attempt <= 200 && !placed; ++attempt) {
    const Placement pt = draw_placement(spec.size_min, spec.size_max, side, 0.3, 0.7, rng);
    const double frac = static_cast<double>(rasterize(spec.kind, spec.star_points, pt, hw, target)) / total;
    if (frac < kMinFgFraction || frac > kMaxFgFraction) continue;
    if (!spec.has_distractor) {
      placed = true;
      break;
    }
    for (int d = 0; d < 50 && !placed; ++d) {
      const Placement pd =
          draw_placement(spec.distractor_size_min, spec.distractor_size_max, side, 0.12, 0.88, rng);
      const double dfrac = static_cast<double>(rasterize(spec.distractor_kind, spec.star_points, pd, hw, other)) / total;
      placed = dfrac >= kMinFgFraction / 2 && !touches(target, other, hw);
    }
  }
  if (!placed)
    throw ContractError("render_family: cannot place a " + to_string(spec.kind) + " at " + std::to_string(hw) +
                        "x" + std::to_string(hw));

  Tensor image({1, hw, hw}), mask({1, hw, hw});
  const double fg_phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  const double bg_phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  const double ds_phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  const double shade = uniform(rng, -0.05, 0.05);
  const double shade_angle = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  for (std::size_t yy = 0; yy < hw; ++yy) {
    for (std::size_t xx = 0; xx < hw; ++xx) {
      const auto x = static_cast<double>(xx), y = static_cast<double>(yy);
      const std::size_t i = yy * hw + xx;
      mask[i] = target[i] ? 1.0 : 0.0;
      double v = target[i]  ? texture_at(spec.foreground, x, y, side, fg_phase)
                 : other[i] ? texture_at(spec.distractor, x, y, side, ds_phase)
                            : texture_at(spec.background, x, y, side, bg_phase);
      v += shade * ((x - side / 2) * std::cos(shade_angle) + (y - side / 2) * std::sin(shade_angle)) / side;
      v += spec.noise_sigma * normal01(rng);
      v = std::clamp(v, 0.0, 1.0);
      image[i] = std::round(v * 255.0) / 255.0;
    }
  }
  return {std::move(image), std::move(mask)};
}

}  // namespace

std::string to_string(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::ellipse: return "ellipse";
    case ShapeKind::rectangle: return "rectangle";
    case ShapeKind::triangle: return "triangle";
    case ShapeKind::ring: return "ring";
    case ShapeKind::cross: return "cross";
    case ShapeKind::star: return "star";
  }
  return "unknown";
}

std::string to_string(SamplingMode mode) {
  return mode == SamplingMode::disjoint ? "disjoint" : "with_replacement_union";
}

SamplingMode sampling_mode_from_string(const std::string& s) {
  if (s == "disjoint") return SamplingMode::disjoint;
  if (s == "with_replacement_union") return SamplingMode::with_replacement_union;
  throw ContractError("unknown sampling mode: " + s);
}

std::vector<Example> render_family(const FamilySpec& spec, std::size_t first, std::size_t count,
                                   std::size_t hw) {
  require(hw >= 8, "render_family: image side " + std::to_string(hw) + " too small to render (min 8)");
  std::vector<Example> out;
  out.reserve(count);
  for (std::size_t j = first; j < first + count; ++j) {
    Rng rng(derive_seed(spec.seed, j));
    out.push_back(render_one(spec, hw, rng));
  }
  return out;
}

FamilySpec make_family(std::size_t index, std::uint64_t master_seed) {
  Rng rng(derive_seed(master_seed, 0xfa311e, index));
  FamilySpec f;
  f.kind = kKinds[index % std::size(kKinds)];
  f.star_points = 4 + static_cast<int>(uniform_index(rng, 4));
  f.size_min = uniform(rng, 0.26, 0.3);
  f.size_max = f.size_min + uniform(rng, 0.02, 0.06);
  f.distractor_size_min = uniform(rng, 0.14, 0.18);
  f.distractor_size_max = f.distractor_size_min + uniform(rng, 0.02, 0.05);
  f.has_distractor = true;
  f.distractor_kind = kKinds[(index % std::size(kKinds) + 1 + uniform_index(rng, std::size(kKinds) - 1)) %
                             std::size(kKinds)];
  // One brightness band per region (background, target, distractor), shuffled.
  const double bands[3][2] = {{0.12, 0.3}, {0.42, 0.58}, {0.7, 0.88}};
  const auto perm = sample_without_replacement(3, 3, rng);
  Texture* roles[3] = {&f.background, &f.foreground, &f.distractor};
  for (std::size_t r = 0; r < 3; ++r) {
    roles[r]->level = uniform(rng, bands[perm[r]][0], bands[perm[r]][1]);
    roles[r]->amp = uniform(rng, 0.0, 0.08);
    roles[r]->freq = uniform(rng, 1.0, 6.0);
    roles[r]->angle = uniform(rng, 0.0, std::numbers::pi);
  }
  f.noise_sigma = uniform(rng, 0.02, 0.06);
  f.seed = derive_seed(master_seed, 0xe8a, index);
  return f;
}

std::vector<Task> generate_task_library(std::size_t num_families, std::size_t examples_per_task,
                                        std::size_t hw, std::uint64_t master_seed) {
  require(num_families >= 4, "generate_task_library: need at least 4 families");
  require(examples_per_task >= 10, "generate_task_library: need at least 10 examples per task");
  std::vector<Task> tasks;
  tasks.reserve(num_families);
  for (std::size_t f = 0; f < num_families; ++f) {
    FamilySpec spec = make_family(f, master_seed);
    char id[64];
    std::snprintf(id, sizeof id, "family_%03zu_%s", f, to_string(spec.kind).c_str());
    tasks.push_back({id, render_family(spec, 0, examples_per_task, hw), spec});
  }
  return tasks;
}

Task deepen_task(const Task& task, std::size_t pool_size) {
  require(task.family.has_value(), "deepen_task: task " + task.id + " has no generator record");
  Task out = task;
  if (out.examples.size() >= pool_size) return out;
  const std::size_t hw = task.examples.front().image.dim(1);
  auto more = render_family(*task.family, out.examples.size(), pool_size - out.examples.size(), hw);
  for (auto& e : more) out.examples.push_back(std::move(e));
  return out;
}

std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, Rng& rng) {
  require(k <= n, "sample_without_replacement: k exceeds population");
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(uniform_index(rng, n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  return idx;
}

Episode sample_episode(const Task& task, std::size_t train_shots, std::size_t val_shots,
                       SamplingMode mode, Rng& rng) {
  const std::size_t pool = task.examples.size();
  require(pool > 0, "sample_episode: task " + task.id + " has no examples");
  Episode ep;
  ep.mode = mode;
  if (mode == SamplingMode::disjoint) {
    if (train_shots + val_shots > pool)
      throw ContractError("sample_episode: task " + task.id + " has " + std::to_string(pool) +
                          " examples, disjoint episode needs " +
                          std::to_string(train_shots + val_shots));
    auto idx = sample_without_replacement(pool, train_shots + val_shots, rng);
    ep.train_ids.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(train_shots));
    ep.val_ids.assign(idx.begin() + static_cast<std::ptrdiff_t>(train_shots), idx.end());
  } else {
    for (std::size_t i = 0; i < train_shots; ++i) ep.train_ids.push_back(uniform_index(rng, pool));
    for (std::size_t i = 0; i < val_shots; ++i) ep.val_ids.push_back(uniform_index(rng, pool));
  }
  for (auto i : ep.train_ids) ep.train.push_back(task.examples[i]);
  for (auto i : ep.val_ids) ep.val.push_back(task.examples[i]);
  return ep;
}

TaskSplit split_tasks(std::span<const Task> tasks, std::array<double, 3> fractions,
                      std::uint64_t seed) {
  double total = 0.0;
  for (double f : fractions) {
    require(f >= 0.0, "split_tasks: fractions must be nonnegative");
    total += f;
  }
  require(std::abs(total - 1.0) < 1e-9, "split_tasks: fractions must sum to 1");
  const std::size_t n = tasks.size();
  Rng rng(derive_seed(seed, 0x5b1d));
  auto order = sample_without_replacement(n, n, rng);
  const auto n_train = std::min<std::size_t>(n, static_cast<std::size_t>(std::llround(fractions[0] * n)));
  const auto n_val =
      std::min<std::size_t>(n - n_train, static_cast<std::size_t>(std::llround(fractions[1] * n)));
  TaskSplit split;
  for (std::size_t i = 0; i < n; ++i) {
    const std::string& id = tasks[order[i]].id;
    if (i < n_train)
      split.train_tasks.push_back(id);
    else if (i < n_train + n_val)
      split.val_tasks.push_back(id);
    else
      split.test_tasks.push_back(id);
  }
  return split;
}

std::vector<Task> select_tasks(std::span<const Task> tasks, std::span<const std::string> ids) {
  std::vector<Task> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = std::find_if(tasks.begin(), tasks.end(), [&](const Task& t) { return t.id == id; });
    if (it == tasks.end()) throw ContractError("select_tasks: unknown task id " + id);
    out.push_back(*it);
  }
  return out;
}

}  // namespace microlab
