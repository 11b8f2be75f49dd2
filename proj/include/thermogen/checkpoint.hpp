#pragma once

#include <torch/torch.h>

#include <string>

#include "thermogen/common.hpp"

namespace thermogen {

/// Content digest over all parameters and buffers of a module, in named
/// order. Stable across save/load round trips.
std::string parameter_digest(const torch::nn::Module& module);

/// Digest of a file's raw bytes.
std::string file_digest(const std::string& path);

/// Saves an archive via write-temp-then-rename so readers never observe a
/// partial checkpoint.
void save_archive_atomic(torch::serialize::OutputArchive& archive, const std::string& path);

/// True if two modules have bit-identical parameters and buffers.
bool modules_equal(const torch::nn::Module& a, const torch::nn::Module& b);

}  // namespace thermogen
