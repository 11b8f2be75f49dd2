#include "thermogen/gan.hpp"

#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>
#include <sstream>

#include "thermogen/checkpoint.hpp"
#include "thermogen/perceptual.hpp"

namespace fs = std::filesystem;

namespace thermogen {

namespace {

constexpr double kLReluSlope = 0.2;

torch::nn::Conv2d conv3x3(int in, int out, int stride = 1) {
    return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(stride).padding(1));
}

bool is_pow2(int v) { return v > 0 && (v & (v - 1)) == 0; }

// Residual-branch convs start small so fresh RRDBs stay near the identity.
void scale_down_weights(torch::nn::Module& m, double factor) {
    torch::NoGradGuard ng;
    for (auto& p : m.parameters()) p.mul_(factor);
}

}  // namespace

void GeneratorConfig::validate() const {
    if (base_channels < 1 || num_rrdb < 1 || dense_blocks_per_rrdb < 1 ||
        convs_per_dense_block < 2 || growth_rate < 1)
        throw ConfigError("generator config: counts must be positive");
    if (!(residual_scale > 0.0 && residual_scale <= 1.0) && residual_scale != 0.0)
        throw ConfigError("generator config: residual_scale must be in (0,1] (0 allowed for tests)");
    if (!is_pow2(downsample_factor))
        throw ConfigError("generator config: downsample_factor must be a power of 2");
    if (in_channels < 1 || out_channels < 1)
        throw ConfigError("generator config: channel counts must be positive");
}

GeneratorConfig GeneratorConfig::from_config(const KeyValueConfig& cfg, const std::string& p) {
    GeneratorConfig g;
    g.base_channels = static_cast<int>(cfg.get_int(p + "base_channels", g.base_channels));
    g.num_rrdb = static_cast<int>(cfg.get_int(p + "num_rrdb", g.num_rrdb));
    g.dense_blocks_per_rrdb =
        static_cast<int>(cfg.get_int(p + "dense_blocks_per_rrdb", g.dense_blocks_per_rrdb));
    g.convs_per_dense_block =
        static_cast<int>(cfg.get_int(p + "convs_per_dense_block", g.convs_per_dense_block));
    g.growth_rate = static_cast<int>(cfg.get_int(p + "growth_rate", g.growth_rate));
    g.residual_scale = cfg.get_double(p + "residual_scale", g.residual_scale);
    g.downsample_factor = static_cast<int>(cfg.get_int(p + "downsample_factor", g.downsample_factor));
    g.in_channels = static_cast<int>(cfg.get_int(p + "in_channels", g.in_channels));
    g.out_channels = static_cast<int>(cfg.get_int(p + "out_channels", g.out_channels));
    g.validate();
    return g;
}

void GeneratorConfig::to_config(KeyValueConfig& cfg, const std::string& p) const {
    cfg.set(p + "base_channels", std::to_string(base_channels));
    cfg.set(p + "num_rrdb", std::to_string(num_rrdb));
    cfg.set(p + "dense_blocks_per_rrdb", std::to_string(dense_blocks_per_rrdb));
    cfg.set(p + "convs_per_dense_block", std::to_string(convs_per_dense_block));
    cfg.set(p + "growth_rate", std::to_string(growth_rate));
    cfg.set(p + "residual_scale", std::to_string(residual_scale));
    cfg.set(p + "downsample_factor", std::to_string(downsample_factor));
    cfg.set(p + "in_channels", std::to_string(in_channels));
    cfg.set(p + "out_channels", std::to_string(out_channels));
}

void DiscriminatorConfig::validate() const {
    if (num_layers < 1 || kernel_size < 1 || stride < 1 || base_features < 1 || num_scales < 1 ||
        in_channels < 1)
        throw ConfigError("discriminator config: values must be positive");
}

DiscriminatorConfig DiscriminatorConfig::from_config(const KeyValueConfig& cfg,
                                                     const std::string& p) {
    DiscriminatorConfig d;
    d.num_layers = static_cast<int>(cfg.get_int(p + "num_layers", d.num_layers));
    d.kernel_size = static_cast<int>(cfg.get_int(p + "kernel_size", d.kernel_size));
    d.stride = static_cast<int>(cfg.get_int(p + "stride", d.stride));
    d.base_features = static_cast<int>(cfg.get_int(p + "base_features", d.base_features));
    d.num_scales = static_cast<int>(cfg.get_int(p + "num_scales", d.num_scales));
    d.in_channels = static_cast<int>(cfg.get_int(p + "in_channels", d.in_channels));
    d.validate();
    return d;
}

void DiscriminatorConfig::to_config(KeyValueConfig& cfg, const std::string& p) const {
    cfg.set(p + "num_layers", std::to_string(num_layers));
    cfg.set(p + "kernel_size", std::to_string(kernel_size));
    cfg.set(p + "stride", std::to_string(stride));
    cfg.set(p + "base_features", std::to_string(base_features));
    cfg.set(p + "num_scales", std::to_string(num_scales));
    cfg.set(p + "in_channels", std::to_string(in_channels));
}

DenseBlockImpl::DenseBlockImpl(int channels, int growth_rate, int num_convs)
    : channels_(channels) {
    for (int i = 0; i < num_convs - 1; ++i)
        convs->push_back(conv3x3(channels + i * growth_rate, growth_rate));
    convs->push_back(conv3x3(channels + (num_convs - 1) * growth_rate, channels));
    register_module("convs", convs);
    scale_down_weights(*this, 0.1);
}

torch::Tensor DenseBlockImpl::forward(const torch::Tensor& x) {
    if (x.size(1) != channels_)
        throw ShapeError("dense block: expected " + std::to_string(channels_) + " channels, got " +
                         std::to_string(x.size(1)));
    std::vector<torch::Tensor> features{x};
    for (size_t i = 0; i + 1 < convs->size(); ++i) {
        auto y = convs[i]->as<torch::nn::Conv2d>()->forward(torch::cat(features, 1));
        features.push_back(torch::leaky_relu(y, kLReluSlope));
    }
    return convs[convs->size() - 1]->as<torch::nn::Conv2d>()->forward(torch::cat(features, 1));
}

RRDBImpl::RRDBImpl(int channels, int growth_rate, int num_dense_blocks, int convs_per_block,
                   double beta)
    : beta_(beta) {
    for (int i = 0; i < num_dense_blocks; ++i)
        blocks->push_back(DenseBlock(channels, growth_rate, convs_per_block));
    register_module("blocks", blocks);
}

torch::Tensor RRDBImpl::forward(const torch::Tensor& x) {
    auto h = x;
    for (size_t i = 0; i < blocks->size(); ++i)
        h = h + beta_ * blocks[i]->as<DenseBlockImpl>()->forward(h);
    return x + beta_ * h;
}

GeneratorImpl::GeneratorImpl(GeneratorConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    conv_in = register_module("conv_in", conv3x3(cfg_.in_channels, cfg_.base_channels));
    int levels = static_cast<int>(std::log2(cfg_.downsample_factor));
    for (int i = 0; i < levels; ++i)
        down_convs->push_back(conv3x3(cfg_.base_channels, cfg_.base_channels, /*stride=*/2));
    register_module("down_convs", down_convs);
    for (int i = 0; i < cfg_.num_rrdb; ++i)
        rrdbs->push_back(RRDB(cfg_.base_channels, cfg_.growth_rate, cfg_.dense_blocks_per_rrdb,
                              cfg_.convs_per_dense_block, cfg_.residual_scale));
    register_module("rrdbs", rrdbs);
    conv_trunk = register_module("conv_trunk", conv3x3(cfg_.base_channels, cfg_.base_channels));
    for (int i = 0; i < levels; ++i)
        up_convs->push_back(conv3x3(cfg_.base_channels, cfg_.base_channels));
    register_module("up_convs", up_convs);
    conv_out = register_module("conv_out", conv3x3(cfg_.base_channels, cfg_.out_channels));
}

torch::Tensor GeneratorImpl::forward(const torch::Tensor& visible) {
    auto x = visible.dim() == 3 ? visible.unsqueeze(0) : visible;
    if (x.size(1) != cfg_.in_channels)
        throw ShapeError("generator: expected " + std::to_string(cfg_.in_channels) +
                         " input channels");
    if (x.size(2) % cfg_.downsample_factor != 0 || x.size(3) % cfg_.downsample_factor != 0)
        throw ShapeError("generator: input height and width must be divisible by " +
                         std::to_string(cfg_.downsample_factor));

    auto fea = torch::leaky_relu(conv_in->forward(x), kLReluSlope);
    for (size_t i = 0; i < down_convs->size(); ++i)
        fea = torch::leaky_relu(down_convs[i]->as<torch::nn::Conv2d>()->forward(fea), kLReluSlope);

    auto trunk = fea;
    for (size_t i = 0; i < rrdbs->size(); ++i) trunk = rrdbs[i]->as<RRDBImpl>()->forward(trunk);
    fea = fea + conv_trunk->forward(trunk);

    namespace F = torch::nn::functional;
    for (size_t i = 0; i < up_convs->size(); ++i) {
        fea = F::interpolate(fea, F::InterpolateFuncOptions()
                                      .scale_factor(std::vector<double>{2.0, 2.0})
                                      .mode(torch::kNearest));
        fea = torch::relu(up_convs[i]->as<torch::nn::Conv2d>()->forward(fea));
    }
    auto out = torch::sigmoid(conv_out->forward(fea));
    return visible.dim() == 3 ? out.squeeze(0) : out;
}

MultiScaleDiscriminatorImpl::MultiScaleDiscriminatorImpl(DiscriminatorConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    for (int s = 0; s < cfg_.num_scales; ++s) {
        torch::nn::Sequential branch;
        int in = cfg_.in_channels;
        int out = cfg_.base_features;
        for (int l = 0; l < cfg_.num_layers; ++l) {
            branch->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, cfg_.kernel_size)
                                                    .stride(cfg_.stride)
                                                    .padding(cfg_.kernel_size / 2 - 1)));
            branch->push_back(torch::nn::LeakyReLU(
                torch::nn::LeakyReLUOptions().negative_slope(kLReluSlope)));
            in = out;
            out *= 2;
        }
        branch->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(in, 1, 1)));
        branches_.push_back(register_module("scale_" + std::to_string(s), branch));
    }
}

std::vector<torch::Tensor> MultiScaleDiscriminatorImpl::forward(const torch::Tensor& img) {
    auto x = img.dim() == 3 ? img.unsqueeze(0) : img;
    if (x.size(1) != cfg_.in_channels)
        throw ShapeError("discriminator: expected " + std::to_string(cfg_.in_channels) +
                         " input channels");
    const long min_side = 1L << cfg_.num_layers;
    std::vector<torch::Tensor> scores;
    for (int s = 0; s < cfg_.num_scales; ++s) {
        auto scaled = x;
        if (s > 0) {
            int factor = 1 << s;
            scaled = torch::avg_pool2d(x, factor, factor);
        }
        if (scaled.size(2) < min_side || scaled.size(3) < min_side)
            throw ShapeError("discriminator: scale " + std::to_string(s) + " input " +
                             std::to_string(scaled.size(2)) + "x" + std::to_string(scaled.size(3)) +
                             " smaller than " + std::to_string(min_side));
        scores.push_back(branches_[static_cast<size_t>(s)]->forward(scaled));
    }
    return scores;
}

torch::Tensor discriminator_loss(const std::vector<torch::Tensor>& real_scores,
                                 const std::vector<torch::Tensor>& fake_scores, double real_label,
                                 double fake_label) {
    if (real_scores.empty() || real_scores.size() != fake_scores.size())
        throw ShapeError("discriminator_loss: score map lists differ in structure");
    torch::Tensor loss;
    for (size_t s = 0; s < real_scores.size(); ++s) {
        if (real_scores[s].sizes() != fake_scores[s].sizes())
            throw ShapeError("discriminator_loss: scale " + std::to_string(s) + " shapes differ");
        auto term = 0.5 * (real_scores[s] - real_label).square().mean() +
                    0.5 * (fake_scores[s] - fake_label).square().mean();
        loss = loss.defined() ? loss + term : term;
    }
    return loss / static_cast<double>(real_scores.size());
}

GanLossTerms generator_loss(const std::vector<torch::Tensor>& fake_scores,
                            const torch::Tensor& real_thermal, const torch::Tensor& fake_thermal,
                            const FeatureExtractor* phi, double target_label) {
    if (fake_scores.empty()) throw ShapeError("generator_loss: no score maps");
    if (real_thermal.sizes() != fake_thermal.sizes())
        throw ShapeError("generator_loss: real/fake thermal shapes differ");

    GanLossTerms t;
    for (const auto& s : fake_scores) {
        auto term = 0.5 * (s - target_label).square().mean();
        t.adversarial = t.adversarial.defined() ? t.adversarial + term : term;
    }
    t.adversarial = t.adversarial / static_cast<double>(fake_scores.size());
    t.mae = (real_thermal - fake_thermal).abs().mean();
    t.perceptual = phi != nullptr ? phi->distance(real_thermal, fake_thermal)
                                  : torch::zeros({}, real_thermal.options());
    if (!torch::isfinite(t.perceptual).all().item<bool>())
        throw NumericError("generator_loss: non-finite perceptual features");
    t.total = t.adversarial + t.mae + t.perceptual;
    return t;
}

GanTrainState make_gan_state(const GeneratorConfig& gcfg, const DiscriminatorConfig& dcfg,
                             const GanTrainOptions& opts) {
    torch::manual_seed(static_cast<uint64_t>(opts.seed));
    GanTrainState st;
    st.gen_cfg = gcfg;
    st.disc_cfg = dcfg;
    st.options = opts;
    st.generator = Generator(gcfg);
    st.discriminator = MultiScaleDiscriminator(dcfg);
    st.opt_g = std::make_shared<torch::optim::Adam>(
        st.generator->parameters(), torch::optim::AdamOptions(opts.lr_g).betas({0.9, 0.999}));
    st.opt_d = std::make_shared<torch::optim::Adam>(
        st.discriminator->parameters(), torch::optim::AdamOptions(opts.lr_d).betas({0.9, 0.999}));
    return st;
}

namespace {

std::string gan_config_echo(const GanTrainState& st) {
    KeyValueConfig cfg;
    st.gen_cfg.to_config(cfg);
    st.disc_cfg.to_config(cfg);
    cfg.set("train.lr_g", std::to_string(st.options.lr_g));
    cfg.set("train.lr_d", std::to_string(st.options.lr_d));
    cfg.set("train.batch_size", std::to_string(st.options.batch_size));
    cfg.set("train.seed", std::to_string(st.options.seed));
    cfg.set("train.real_label", std::to_string(st.options.real_label));
    cfg.set("train.fake_label", std::to_string(st.options.fake_label));
    return cfg.canonical();
}

torch::Tensor history_tensor(const std::vector<GanLossRow>& hist) {
    auto t = torch::zeros({static_cast<long>(hist.size()), 6}, torch::kFloat64);
    for (size_t i = 0; i < hist.size(); ++i) {
        auto row = t[static_cast<long>(i)];
        row[0] = static_cast<double>(hist[i].step);
        row[1] = hist[i].adversarial;
        row[2] = hist[i].mae;
        row[3] = hist[i].perceptual;
        row[4] = hist[i].total;
        row[5] = hist[i].d_loss;
    }
    return t;
}

std::vector<GanLossRow> history_from_tensor(const torch::Tensor& t) {
    std::vector<GanLossRow> hist;
    for (long i = 0; i < t.size(0); ++i) {
        auto a = t[i];
        hist.push_back({static_cast<long>(a[0].item<double>()), a[1].item<double>(),
                        a[2].item<double>(), a[3].item<double>(), a[4].item<double>(),
                        a[5].item<double>()});
    }
    return hist;
}

}  // namespace

void save_gan_checkpoint(const GanTrainState& state, const std::string& path,
                         const std::string& config_digest) {
    torch::serialize::OutputArchive root;
    root.write("format", std::string("thermogen-gan-v1"));
    root.write("config", gan_config_echo(state));
    root.write("config_digest", config_digest);
    root.write("epoch", state.epoch);
    root.write("step", state.step);
    root.write("seed", state.options.seed);
    root.write("loss_history", history_tensor(state.history));

    auto vm = torch::zeros({static_cast<long>(state.val_mae.size()), 2}, torch::kFloat64);
    for (size_t i = 0; i < state.val_mae.size(); ++i) {
        vm[static_cast<long>(i)][0] = static_cast<double>(state.val_mae[i].first);
        vm[static_cast<long>(i)][1] = state.val_mae[i].second;
    }
    root.write("val_mae", vm);

    torch::serialize::OutputArchive gen, disc, og, od;
    state.generator->save(gen);
    state.discriminator->save(disc);
    state.opt_g->save(og);
    state.opt_d->save(od);
    root.write("generator", gen);
    root.write("discriminator", disc);
    root.write("opt_g", og);
    root.write("opt_d", od);
    save_archive_atomic(root, path);
}

GanTrainState load_gan_checkpoint(const std::string& path) {
    torch::serialize::InputArchive root;
    try {
        root.load_from(path);
    } catch (const c10::Error& e) {
        throw ValidationError("cannot read checkpoint " + path + ": " + e.msg());
    }
    c10::IValue fmt;
    if (!root.try_read("format", fmt) || fmt.toStringRef() != "thermogen-gan-v1")
        throw ValidationError(path + ": not a thermogen GAN checkpoint");

    c10::IValue cfg_text, epoch, step, seed;
    root.read("config", cfg_text);
    root.read("epoch", epoch);
    root.read("step", step);
    root.read("seed", seed);
    auto cfg = KeyValueConfig::from_string(cfg_text.toStringRef());

    GanTrainOptions opts;
    opts.lr_g = cfg.get_double("train.lr_g", opts.lr_g);
    opts.lr_d = cfg.get_double("train.lr_d", opts.lr_d);
    opts.batch_size = static_cast<int>(cfg.get_int("train.batch_size", opts.batch_size));
    opts.seed = seed.toInt();
    opts.real_label = cfg.get_double("train.real_label", opts.real_label);
    opts.fake_label = cfg.get_double("train.fake_label", opts.fake_label);

    auto st = make_gan_state(GeneratorConfig::from_config(cfg),
                             DiscriminatorConfig::from_config(cfg), opts);
    st.epoch = epoch.toInt();
    st.step = step.toInt();

    torch::Tensor hist, vm;
    root.read("loss_history", hist);
    st.history = history_from_tensor(hist);
    root.read("val_mae", vm);
    for (long i = 0; i < vm.size(0); ++i)
        st.val_mae.emplace_back(static_cast<long>(vm[i][0].item<double>()), vm[i][1].item<double>());

    torch::serialize::InputArchive gen, disc, og, od;
    root.read("generator", gen);
    root.read("discriminator", disc);
    root.read("opt_g", og);
    root.read("opt_d", od);
    st.generator->load(gen);
    st.discriminator->load(disc);
    st.opt_g->load(og);
    st.opt_d->load(od);
    return st;
}

void train_gan_state(GanTrainState& state, const DatasetManifest& train,
                     const DatasetManifest& val, const FeatureExtractor* phi) {
    if (train.frames.empty()) throw std::invalid_argument("train_gan: empty training manifest");
    const auto& opts = state.options;

    std::string phi_digest = phi != nullptr ? phi->digest() : "";

    auto check_finite = [](const torch::Tensor& t, const char* name, long step) {
        if (!torch::isfinite(t).all().item<bool>())
            throw NumericError(std::string("train_gan: non-finite ") + name + " at step " +
                               std::to_string(step));
    };

    bool done = false;
    while (!done && state.epoch < opts.epochs) {
        std::vector<size_t> order(train.frames.size());
        std::iota(order.begin(), order.end(), 0);
        std::mt19937 rng(static_cast<std::uint32_t>(opts.seed + state.epoch));
        std::shuffle(order.begin(), order.end(), rng);

        for (size_t b = 0; b < order.size() && !done; b += opts.batch_size) {
            std::vector<size_t> batch(order.begin() + b,
                                      order.begin() + std::min(order.size(),
                                                               b + opts.batch_size));
            auto [vis, th] = load_pair_batch(train, batch);

            auto fake = state.generator->forward(vis);

            // discriminator update
            state.opt_d->zero_grad();
            auto real_scores = state.discriminator->forward(th);
            auto fake_scores = state.discriminator->forward(fake.detach());
            auto d_loss =
                discriminator_loss(real_scores, fake_scores, opts.real_label, opts.fake_label);
            check_finite(d_loss, "discriminator loss", state.step);
            d_loss.backward();
            state.opt_d->step();

            // generator update; the adversarial term targets the real label
            state.opt_g->zero_grad();
            auto gen_scores = state.discriminator->forward(fake);
            auto terms = generator_loss(gen_scores, th, fake, phi, opts.real_label);
            check_finite(terms.adversarial, "adversarial term", state.step);
            check_finite(terms.mae, "mae term", state.step);
            check_finite(terms.perceptual, "perceptual term", state.step);
            terms.total.backward();
            state.opt_g->step();

            ++state.step;
            state.history.push_back({state.step, terms.adversarial.item<double>(),
                                     terms.mae.item<double>(), terms.perceptual.item<double>(),
                                     terms.total.item<double>(), d_loss.item<double>()});
            if (opts.log_every > 0 && state.step % opts.log_every == 0) {
                const auto& r = state.history.back();
                std::printf("step %ld  G %.5f (adv %.5f mae %.5f per %.5f)  D %.5f\n", r.step,
                            r.total, r.adversarial, r.mae, r.perceptual, r.d_loss);
            }
            if (opts.max_steps > 0 && state.step >= opts.max_steps) done = true;
        }
        ++state.epoch;

        if (!val.frames.empty()) {
            torch::NoGradGuard ng;
            double sum = 0;
            for (size_t i = 0; i < val.frames.size(); ++i) {
                auto [vis, th] = load_pair_batch(val, {i});
                sum += (state.generator->forward(vis) - th).abs().mean().item<double>();
            }
            state.val_mae.emplace_back(state.epoch, sum / static_cast<double>(val.frames.size()));
        }

        if (opts.checkpoint_every_epochs > 0 && !opts.checkpoint_dir.empty() &&
            state.epoch % opts.checkpoint_every_epochs == 0) {
            fs::create_directories(opts.checkpoint_dir);
            save_gan_checkpoint(state, (fs::path(opts.checkpoint_dir) /
                                        ("gan_epoch_" + std::to_string(state.epoch) + ".pt"))
                                           .string());
        }
    }

    if (phi != nullptr && phi->digest() != phi_digest)
        throw NumericError("train_gan: frozen feature extractor parameters changed");
}

GanTrainState train_gan(const DatasetManifest& train, const DatasetManifest& val,
                        const GeneratorConfig& gcfg, const DiscriminatorConfig& dcfg,
                        const GanTrainOptions& opts, const FeatureExtractor* phi,
                        const std::optional<std::string>& resume_from) {
    GanTrainState state;
    if (resume_from) {
        state = load_gan_checkpoint(*resume_from);
        state.options = opts;
    } else {
        state = make_gan_state(gcfg, dcfg, opts);
    }
    train_gan_state(state, train, val, phi);
    return state;
}

}  // namespace thermogen
