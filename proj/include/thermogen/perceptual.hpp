#pragma once

#include <torch/torch.h>

#include <string>

#include "thermogen/detector.hpp"

namespace thermogen {

/// Frozen loss network phi: a detector backbone used as a feature extractor.
/// Parameters are immutable after construction; gradients flow to the input
/// images only.
class FeatureExtractor {
public:
    /// Takes a private frozen copy of the source detector's parameters.
    FeatureExtractor(const DetectorNet& source, const DetectorConfig& cfg, std::string tap_layer);

    /// Loads the backbone from a detector checkpoint.
    static FeatureExtractor from_checkpoint(const std::string& path, const std::string& tap_layer);

    /// Tap-layer activation; differentiable w.r.t. img, never w.r.t. the
    /// backbone parameters.
    torch::Tensor extract(const torch::Tensor& img) const;

    /// Mean squared distance between tap features of the two images.
    torch::Tensor distance(const torch::Tensor& real, const torch::Tensor& fake) const;

    /// Digest of the frozen parameters; must never change.
    std::string digest() const;

    /// Writes features as a one-line text header (layer name, shape) plus
    /// raw little-endian float32 data, for external oracle checks.
    void dump_features(const torch::Tensor& img, const std::string& path) const;

    const std::string& tap_layer() const { return tap_; }
    const DetectorConfig& config() const { return cfg_; }

private:
    mutable DetectorNet backbone_{nullptr};
    DetectorConfig cfg_;
    std::string tap_;
};

}  // namespace thermogen
