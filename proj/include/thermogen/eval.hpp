#pragma once

#include <map>
#include <string>
#include <vector>

#include "thermogen/data.hpp"
#include "thermogen/detector.hpp"

namespace thermogen {

/// Intersection over union of two boxes, in [0,1].
double iou(const BoundingBox& a, const BoundingBox& b);

struct MatchResult {
    std::vector<std::pair<int, int>> true_positives;  // (detection idx, gt idx)
    std::vector<int> false_positives;                 // unmatched detection indices
    std::vector<int> false_negatives;                 // unmatched gt indices
};

/// Greedy matching: highest-confidence detection first, paired with the
/// unmatched ground truth of highest IoU >= threshold. Detections whose best
/// overlap is with an ignore box are discarded (neither TP nor FP).
MatchResult match_frame(std::vector<Detection> dets, const std::vector<BoundingBox>& gts,
                        double iou_threshold,
                        const std::vector<BoundingBox>& ignore = {});

struct MrFppiCurve {
    std::vector<std::pair<double, double>> points;  // (fppi, miss_rate), fppi ascending
};

struct EvalFrame {
    std::vector<Detection> dets;
    std::vector<BoundingBox> gts;
    std::vector<BoundingBox> ignore;
};

/// Sweeps the confidence threshold over all distinct detection confidences;
/// at each threshold miss_rate = FN/GT over the subset and fppi = FP/images.
MrFppiCurve mr_fppi_curve(const std::vector<EvalFrame>& frames, double iou_threshold);

/// Geometric mean of miss rates sampled at num_points log-spaced FPPI
/// reference points; the curve is read at the largest fppi <= reference
/// (miss rate 1 if none). Miss rates are floored at 1e-10 inside the log.
double log_average_miss_rate(const MrFppiCurve& curve, double fppi_min = 1e-2,
                             double fppi_max = 1.0, int num_points = 9);

struct EvalSettings {
    double iou_threshold = 0.5;
    float min_height = 50.0f;  // reasonable-setting height filter
    double fppi_min = 1e-2;
    double fppi_max = 1.0;
    int num_points = 9;
};

struct SubsetReport {
    MrFppiCurve curve;
    double lamr = 1.0;
    long num_images = 0;
    long num_gts = 0;
    long num_dets = 0;
};

struct EvalReport {
    SubsetReport all, day, night;
};

/// Applies reasonable-setting filtering (height >= min_height, non-occluded;
/// filtered boxes become ignore regions), then computes curves and
/// log-average miss rate for the all/day/night subsets.
EvalReport evaluate(const std::map<std::string, std::vector<Detection>>& detections,
                    const DatasetManifest& test_manifest, const EvalSettings& settings);

void write_report(const EvalReport& report, const std::string& path,
                  const std::string& meta = "");
void write_curve(const MrFppiCurve& curve, const std::string& path);

/// Detection overlays: true positives blue, false negatives green, false
/// positives red, drawn on the thermal frame.
void write_overlays(const std::map<std::string, std::vector<Detection>>& detections,
                    const DatasetManifest& manifest, const EvalSettings& settings,
                    double conf_threshold, const std::string& out_dir);

}  // namespace thermogen
