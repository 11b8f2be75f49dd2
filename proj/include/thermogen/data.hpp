#pragma once

#include <torch/torch.h>

#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "thermogen/common.hpp"

namespace thermogen {

enum class TimeOfDay { day, night };
enum class Origin { real, synthetic };

struct BoundingBox {
    float x = 0;  // left
    float y = 0;  // top
    float w = 0;
    float h = 0;
    bool occluded = false;

    bool operator==(const BoundingBox&) const = default;
};

struct FrameRecord {
    std::string frame_id;
    std::string visible_path;  // relative to the manifest directory
    std::string thermal_path;
    TimeOfDay time_of_day = TimeOfDay::day;
    std::vector<BoundingBox> boxes;
    Origin origin = Origin::real;
    long frame_index = 0;  // position within the source video

    bool operator==(const FrameRecord&) const = default;
};

std::ostream& operator<<(std::ostream& out, const BoundingBox& box);
std::ostream& operator<<(std::ostream& out, const FrameRecord& rec);

struct DatasetManifest {
    std::string name;
    std::vector<FrameRecord> frames;
    long image_height = 0;
    long image_width = 0;
    std::string base_dir;  // directory relative paths resolve against

    std::string resolve(const std::string& rel) const;
};

/// Reads a manifest file. Boxes are clamped to the declared image bounds;
/// frames whose visible/thermal files exist on disk are checked for matching
/// dimensions. Lines starting with `#` are metadata/comments.
DatasetManifest load_manifest(const std::string& path);

/// Writes a manifest plus an optional metadata header (config digest, seed).
void write_manifest(const DatasetManifest& manifest, const std::string& path,
                    const std::string& meta = "");

/// Keeps frames whose frame_index is a multiple of stride, preserving order.
DatasetManifest sample_frames(const DatasetManifest& manifest, long stride);

/// Drops boxes shorter than min_height and, optionally, occluded boxes.
/// Frames left without boxes are retained as negative frames.
DatasetManifest filter_annotations(const DatasetManifest& manifest, float min_height,
                                   bool drop_occluded);

/// Deterministic train/validation split; validation gets round(fraction * N)
/// frames, both halves keep the input's relative order.
std::pair<DatasetManifest, DatasetManifest> split_validation(const DatasetManifest& manifest,
                                                             double fraction, long seed);

/// Decodes an image file to a float CHW tensor in [0,1].
/// Visible images load as 3 channels, thermal as 1 (16-bit PNGs supported).
torch::Tensor load_image(const std::string& path, int channels);

/// Writes a [1,H,W] or [H,W] tensor in [0,1] as 16-bit grayscale PNG.
void save_thermal_png16(const torch::Tensor& img, const std::string& path);

/// Writes a [3,H,W] tensor in [0,1] as 8-bit color PNG.
void save_visible_png(const torch::Tensor& img, const std::string& path);

/// Stacks the visible and thermal images of the given frames into
/// [B,3,H,W] / [B,1,H,W] batches.
std::pair<torch::Tensor, torch::Tensor> load_pair_batch(const DatasetManifest& manifest,
                                                        const std::vector<size_t>& indices);

}  // namespace thermogen
