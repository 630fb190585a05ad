// Copyright 2026 The MicroLab Authors
// SPDX-License-Identifier: Apache-2.0

// Binary checkpoint format (little-endian throughout):
//
//   magic "MLAB1" | u32 version
//   model config: u64 input_hw, base_channels, encoder_stages, rsd_skip_stage,
//                 rsd_out_channels, num_output_channels | f64 dropout_rate
//   u64 record count, then per record:
//     u8 kind (0 parameter, 1 running statistic) | str block | str name
//     u32 rank | u64 dims[rank] | f64 data[prod(dims)]
//   str is u32 length followed by the bytes.

#pragma once

#include <filesystem>

#include "microlab/meta.hpp"
#include "microlab/model.hpp"
#include "microlab/params.hpp"

namespace microlab {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  ParameterSet params;
};

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& config, const ParameterSet& params);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Update hyperparameters as `key=value` lines (lr, steps, inner_batch,
/// dropout_rate, aug_rate, l2_lambda, mode_tag). Unknown or missing keys are errors.
void save_omega(const std::filesystem::path& path, const UpdateHyperparams& omega);
UpdateHyperparams load_omega(const std::filesystem::path& path);

}  // namespace microlab
