#pragma once

#include <torch/torch.h>

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "thermogen/common.hpp"
#include "thermogen/config.hpp"
#include "thermogen/data.hpp"
#include "thermogen/mixture.hpp"

namespace thermogen {

struct Detection {
    BoundingBox box;
    float confidence = 0;
};

struct DetectorConfig {
    int num_scales = 3;
    std::vector<int> strides = {8, 16, 32};
    // anchors_per_scale[s] holds (w,h) pairs in pixels, one entry per anchor
    std::vector<std::vector<std::pair<float, float>>> anchors = {
        {{4, 10}, {6, 14}, {8, 18}},
        {{10, 22}, {12, 26}, {14, 30}},
        {{16, 34}, {20, 40}, {24, 48}},
    };
    int num_classes = 1;  // pedestrian only; the head has no class channel
    int input_height = 64;
    int input_width = 64;
    int in_channels = 1;
    int width = 16;  // base channel width of the reduced backbone
    std::string tap_layer = "c5";

    void validate() const;
    static DetectorConfig from_config(const KeyValueConfig& cfg, const std::string& prefix = "det.");
    void to_config(KeyValueConfig& cfg, const std::string& prefix = "det.") const;
};

/// Reduced-depth convolutional backbone with three detection scales
/// (strides 8/16/32) and one (x,y,w,h,objectness)-per-anchor 1x1 head per
/// scale. No class probabilities: single-class detector.
class DetectorNetImpl : public torch::nn::Module {
public:
    explicit DetectorNetImpl(DetectorConfig cfg);

    /// Raw predictions, one [B, A*5, H/stride, W/stride] tensor per scale.
    std::vector<torch::Tensor> forward(const torch::Tensor& img);

    /// Activation of the named backbone stage (for the perceptual tap).
    torch::Tensor forward_to_tap(const torch::Tensor& img, const std::string& tap);

    std::vector<std::string> stage_names() const;
    const DetectorConfig& config() const { return cfg_; }

private:
    DetectorConfig cfg_;
    std::vector<std::pair<std::string, torch::nn::Sequential>> stages_;
    std::vector<torch::nn::Conv2d> heads_;
    std::vector<std::string> scale_taps_;  // stage feeding each head
};
TORCH_MODULE(DetectorNet);

struct FineTuneSchedule {
    int batch_size = 4;
    int input_height = 64;
    int input_width = 64;
    double init_lr_high = 1e-3;
    double init_lr_low = 1e-4;
    double real_fraction_threshold = 0.5;
    double decay_factor = 10.0;
    int decay_every_epochs = 3;
    int max_epochs = 10;
    double momentum = 0.9;      // SGD momentum (conventional default)
    double weight_decay = 5e-4;
    double val_fraction = 0.1;  // re-sampled each epoch with seed+epoch

    static FineTuneSchedule from_config(const KeyValueConfig& cfg, const std::string& prefix = "ft.");
    void to_config(KeyValueConfig& cfg, const std::string& prefix = "ft.") const;
};

/// Learning rate for an epoch under the fine-tuning schedule: the initial
/// rate is init_lr_high when the regime's real fraction reaches the
/// threshold, init_lr_low otherwise, divided by decay_factor every
/// decay_every_epochs epochs.
double learning_rate(int epoch, const MixtureSpec& mixture, const FineTuneSchedule& schedule);

struct TargetAssignment {
    int scale;
    int anchor;
    int gi;  // grid column
    int gj;  // grid row
    BoundingBox box;
};

/// Assigns each ground-truth box to the best-matching anchor (by shape IoU)
/// at the grid cell containing the box center.
std::vector<TargetAssignment> assign_targets(const std::vector<BoundingBox>& boxes,
                                             const DetectorConfig& cfg);

/// Multi-part detection loss: weighted coordinate MSE plus objectness BCE
/// (single class, so no classification term).
torch::Tensor detection_loss(const std::vector<torch::Tensor>& raw,
                             const std::vector<std::vector<BoundingBox>>& gt,
                             const DetectorConfig& cfg);

/// Decodes raw predictions of one image to absolute-pixel detections,
/// applies the confidence threshold and greedy NMS, and returns the
/// survivors sorted by descending confidence.
std::vector<Detection> decode_detections(const std::vector<torch::Tensor>& raw,
                                         const DetectorConfig& cfg, double conf_threshold,
                                         double nms_iou, int batch_index = 0);

std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold);

/// k-means (k anchors per scale) over training-set box dimensions; clusters
/// are sorted by area and split evenly across scales.
std::vector<std::vector<std::pair<float, float>>> kmeans_anchors(const DatasetManifest& manifest,
                                                                 int num_scales,
                                                                 int anchors_per_scale, long seed);

struct FineTuneResult {
    DetectorNet model{nullptr};
    std::vector<double> lr_trace;                       // one entry per epoch
    std::vector<std::pair<double, double>> epoch_loss;  // (train, val) per epoch
};

/// Fine-tuning procedure: SGD under the schedule, a fresh 10%
/// validation split each epoch, halted after max_epochs.
FineTuneResult fine_tune(DetectorNet init, const DatasetManifest& train, const DetectorConfig& cfg,
                         const FineTuneSchedule& schedule, const MixtureSpec& mixture, long seed);

void save_detector_checkpoint(const DetectorNet& model, const DetectorConfig& cfg,
                              const std::string& path, const std::string& config_digest = "",
                              long seed = 0);
std::pair<DetectorNet, DetectorConfig> load_detector_checkpoint(const std::string& path);

/// Runs inference over a manifest (thermal or visible input per config).
std::map<std::string, std::vector<Detection>> run_inference(DetectorNet model,
                                                            const DetectorConfig& cfg,
                                                            const DatasetManifest& manifest,
                                                            double conf_threshold,
                                                            double nms_iou);

/// Detection file: `frame_id TAB x TAB y TAB w TAB h TAB confidence`.
void write_detections(const std::map<std::string, std::vector<Detection>>& dets,
                      const std::string& path);
std::map<std::string, std::vector<Detection>> read_detections(const std::string& path);

}  // namespace thermogen
