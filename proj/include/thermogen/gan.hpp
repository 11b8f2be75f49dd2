#pragma once

#include <torch/torch.h>

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "thermogen/common.hpp"
#include "thermogen/config.hpp"
#include "thermogen/data.hpp"

namespace thermogen {

class FeatureExtractor;

struct GeneratorConfig {
    int base_channels = 64;
    int num_rrdb = 5;
    int dense_blocks_per_rrdb = 4;
    int convs_per_dense_block = 5;
    int growth_rate = 32;
    double residual_scale = 0.2;  // beta
    int downsample_factor = 4;    // power of 2
    int in_channels = 3;
    int out_channels = 1;

    void validate() const;
    static GeneratorConfig from_config(const KeyValueConfig& cfg, const std::string& prefix = "gan.");
    void to_config(KeyValueConfig& cfg, const std::string& prefix = "gan.") const;
};

struct DiscriminatorConfig {
    int num_layers = 5;
    int kernel_size = 4;
    int stride = 2;
    int base_features = 64;
    int num_scales = 3;
    int in_channels = 1;

    void validate() const;
    static DiscriminatorConfig from_config(const KeyValueConfig& cfg, const std::string& prefix = "disc.");
    void to_config(KeyValueConfig& cfg, const std::string& prefix = "disc.") const;
};

/// Dense block: convs_per_dense_block Conv-LReLU pairs, each layer fed the
/// concatenation of the block input and all previous layer outputs; the last
/// (fusion) conv maps back to the input channel count. No normalization
/// layers. The residual connection lives in the enclosing RRDB.
class DenseBlockImpl : public torch::nn::Module {
public:
    DenseBlockImpl(int channels, int growth_rate, int num_convs);
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::ModuleList convs;  // exposed for parameter-inventory checks

private:
    int channels_;
};
TORCH_MODULE(DenseBlock);

/// Residual-in-residual dense block: a chain of dense blocks, each scaled by
/// beta and summed back to its input, with the chain output again scaled by
/// beta and added to the block input.
class RRDBImpl : public torch::nn::Module {
public:
    RRDBImpl(int channels, int growth_rate, int num_dense_blocks, int convs_per_block,
             double beta);
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::ModuleList blocks;

private:
    double beta_;
};
TORCH_MODULE(RRDB);

/// Visible-to-thermal generator: stride-2 downsampling convs, an RRDB trunk,
/// nearest-upscale Conv-ReLU blocks back to input resolution and a bounded
/// [0,1] output head.
class GeneratorImpl : public torch::nn::Module {
public:
    explicit GeneratorImpl(GeneratorConfig cfg);
    torch::Tensor forward(const torch::Tensor& visible);

    const GeneratorConfig& config() const { return cfg_; }

private:
    GeneratorConfig cfg_;
    torch::nn::Conv2d conv_in{nullptr}, conv_trunk{nullptr}, conv_out{nullptr};
    torch::nn::ModuleList down_convs, up_convs, rrdbs;
};
TORCH_MODULE(Generator);

/// Multi-scale patch discriminator. One branch per scale, each a stack of
/// stride-2 4x4 convs with LReLU and a final 1x1 scoring conv; scale s sees
/// the input average-pooled by 2^s. Scores are raw (no sigmoid).
class MultiScaleDiscriminatorImpl : public torch::nn::Module {
public:
    explicit MultiScaleDiscriminatorImpl(DiscriminatorConfig cfg);
    std::vector<torch::Tensor> forward(const torch::Tensor& img);

    const DiscriminatorConfig& config() const { return cfg_; }

private:
    DiscriminatorConfig cfg_;
    std::vector<torch::nn::Sequential> branches_;
};
TORCH_MODULE(MultiScaleDiscriminator);

struct GanLossTerms {
    torch::Tensor adversarial;
    torch::Tensor mae;
    torch::Tensor perceptual;
    torch::Tensor total;  // unweighted sum of the three terms
};

/// Least-squares discriminator loss, averaged over scales and positions:
/// 1/2 mean((D(x)-real_label)^2) + 1/2 mean((D(G(z))-fake_label)^2).
torch::Tensor discriminator_loss(const std::vector<torch::Tensor>& real_scores,
                                 const std::vector<torch::Tensor>& fake_scores,
                                 double real_label, double fake_label);

/// Generator loss terms: least-squares adversarial term against target_label,
/// mean absolute pixel error, and the squared feature distance under phi
/// (0 when phi is null).
GanLossTerms generator_loss(const std::vector<torch::Tensor>& fake_scores,
                            const torch::Tensor& real_thermal, const torch::Tensor& fake_thermal,
                            const FeatureExtractor* phi, double target_label);

struct GanTrainOptions {
    double lr_g = 1e-4;
    double lr_d = 1e-4;
    int batch_size = 4;
    int epochs = 10;
    int max_steps = 0;  // when > 0, stop after this many generator updates
    int checkpoint_every_epochs = 0;
    std::string checkpoint_dir;
    long seed = 0;
    double real_label = 1.0;
    double fake_label = 0.0;
    int log_every = 0;  // print losses every n steps; 0 = silent
};

struct GanLossRow {
    long step;
    double adversarial, mae, perceptual, total, d_loss;
};

struct GanTrainState {
    Generator generator{nullptr};
    MultiScaleDiscriminator discriminator{nullptr};
    std::shared_ptr<torch::optim::Adam> opt_g, opt_d;
    long epoch = 0;
    long step = 0;
    std::vector<GanLossRow> history;
    std::vector<std::pair<long, double>> val_mae;  // (epoch, mean val MAE)
    GeneratorConfig gen_cfg;
    DiscriminatorConfig disc_cfg;
    GanTrainOptions options;
};

GanTrainState make_gan_state(const GeneratorConfig& gcfg, const DiscriminatorConfig& dcfg,
                             const GanTrainOptions& opts);

void save_gan_checkpoint(const GanTrainState& state, const std::string& path,
                         const std::string& config_digest = "");
GanTrainState load_gan_checkpoint(const std::string& path);

/// Alternating LSGAN training: one discriminator update then one generator
/// update per batch. phi (when given) stays frozen throughout.
GanTrainState train_gan(const DatasetManifest& train, const DatasetManifest& val,
                        const GeneratorConfig& gcfg, const DiscriminatorConfig& dcfg,
                        const GanTrainOptions& opts, const FeatureExtractor* phi,
                        const std::optional<std::string>& resume_from = std::nullopt);

/// Continues training an existing state in place (used by resume).
void train_gan_state(GanTrainState& state, const DatasetManifest& train,
                     const DatasetManifest& val, const FeatureExtractor* phi);

}  // namespace thermogen
