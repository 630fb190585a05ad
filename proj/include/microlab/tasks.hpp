// Copyright 2026 The MicroLab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "microlab/rng.hpp"
#include "microlab/tensor.hpp"

namespace microlab {

/// One labeled example: grayscale image in [0,1] and binary mask, both (1, H, W).
struct Example {
  Tensor image;
  Tensor mask;
};

enum class ShapeKind { ellipse, rectangle, triangle, ring, cross, star };

std::string to_string(ShapeKind kind);

/// Texture = base level + amp * sin(2 pi freq (x cos a + y sin a) / hw + phase).
struct Texture {
  double level = 0.5;
  double amp = 0.0;
  double freq = 2.0;   // cycles per image width
  double angle = 0.0;  // radians
};

/// Parametric recipe for one synthetic segmentation concept. Every image holds
/// one target object and, when enabled, one non-overlapping distractor object;
/// only the target is foreground in the mask.
struct FamilySpec {
  ShapeKind kind = ShapeKind::ellipse;
  int star_points = 5;
  double size_min = 0.15;  // radius as a fraction of the image side
  double size_max = 0.3;
  Texture foreground;
  Texture background;
  bool has_distractor = false;
  ShapeKind distractor_kind = ShapeKind::rectangle;
  Texture distractor;
  double distractor_size_min = 0.12;
  double distractor_size_max = 0.2;
  double noise_sigma = 0.03;
  std::uint64_t seed = 0;  // example stream seed; example j uses derive_seed(seed, j)
};

struct Task {
  std::string id;
  std::vector<Example> examples;
  std::optional<FamilySpec> family;
};

enum class SamplingMode { disjoint, with_replacement_union };

std::string to_string(SamplingMode mode);
SamplingMode sampling_mode_from_string(const std::string& s);

struct Episode {
  std::vector<Example> train;
  std::vector<Example> val;
  std::vector<std::size_t> train_ids;  // indices into the task's example pool
  std::vector<std::size_t> val_ids;
  SamplingMode mode = SamplingMode::disjoint;
};

struct TaskSplit {
  std::vector<std::string> train_tasks;
  std::vector<std::string> val_tasks;
  std::vector<std::string> test_tasks;
};

// --- generation -----------------------------------------------------------

/// Render examples [first, first + count) of a family at hw x hw. Pixel values
/// are quantized to multiples of 1/255 so a PGM export round-trips exactly.
/// Every mask has foreground fraction in [0.02, 0.6].
std::vector<Example> render_family(const FamilySpec& spec, std::size_t first, std::size_t count,
                                   std::size_t hw);

/// Family recipe number `index` of a library seeded by `master_seed`.
FamilySpec make_family(std::size_t index, std::uint64_t master_seed);

/// num_families >= 4 synthetic tasks of examples_per_task >= 10 examples each.
std::vector<Task> generate_task_library(std::size_t num_families, std::size_t examples_per_task,
                                        std::size_t hw, std::uint64_t master_seed);

/// Extend a generated task's pool to at least `pool_size` examples (existing
/// examples are kept; new ones continue the family's example stream).
Task deepen_task(const Task& task, std::size_t pool_size);

// --- sampling ---------------------------------------------------------------

/// Disjoint mode draws train and val without overlap; with_replacement_union
/// draws both independently with replacement from the whole pool.
Episode sample_episode(const Task& task, std::size_t train_shots, std::size_t val_shots,
                       SamplingMode mode, Rng& rng);

/// k distinct indices from [0, n) in random order.
std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, Rng& rng);

struct AugmentLimits {
  double max_translate = 0.2;     // fraction of extent
  double max_rotate_deg = 25.0;
  double max_noise_sigma = 0.05;
  double max_brightness = 0.2;
  double max_erase_area = 0.25;
};

/// Each transform fires independently with probability aug_rate. Geometric
/// transforms move image and mask together; photometric ones touch the image only.
Example augment(const Example& ex, double aug_rate, Rng& rng, const AugmentLimits& limits = {});

/// Exact horizontal mirror of image and mask.
Example hflip(const Example& ex);

// --- disk format ------------------------------------------------------------

/// <root>/<task_id>/<k>.img.pgm and <k>.mask.pgm, binary P5 8-bit.
void save_dataset(std::span<const Task> tasks, const std::filesystem::path& root);
std::vector<Task> load_dataset(const std::filesystem::path& root);

/// Deterministic shuffle by seed, then partition by fractions (train, val, test).
TaskSplit split_tasks(std::span<const Task> tasks, std::array<double, 3> fractions,
                      std::uint64_t seed);

/// Look up tasks by id, in the order given.
std::vector<Task> select_tasks(std::span<const Task> tasks, std::span<const std::string> ids);

}  // namespace microlab
