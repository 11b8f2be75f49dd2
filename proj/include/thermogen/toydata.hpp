#pragma once

#include <string>

#include "thermogen/data.hpp"

namespace thermogen {

struct ToyDataOptions {
    int num_frames = 64;
    int height = 64;
    int width = 64;
    long seed = 0;
    int min_ped_height = 14;
    int max_ped_height = 30;
    int max_peds_per_frame = 3;
};

/// Procedurally generated paired visible/thermal dataset: warm "pedestrian"
/// rectangles on structured backgrounds, with a deterministic
/// visible->thermal rendering rule. Writes PNGs and a manifest under dir and
/// returns the loaded manifest.
DatasetManifest generate_toy_dataset(const std::string& dir, const ToyDataOptions& options);

}  // namespace thermogen
