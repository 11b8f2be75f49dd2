#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "thermogen/checkpoint.hpp"
#include "thermogen/config.hpp"
#include "thermogen/data.hpp"
#include "thermogen/detector.hpp"
#include "thermogen/eval.hpp"
#include "thermogen/gan.hpp"
#include "thermogen/mixture.hpp"
#include "thermogen/perceptual.hpp"
#include "thermogen/toydata.hpp"

namespace fs = std::filesystem;
using namespace thermogen;

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    long seed = -1;  // -1: take from config (default 0)
    std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "experiment config file");
    cmd->add_option("--seed", args.seed, "seed override");
    cmd->add_option("--out", args.out_dir, "output directory override");
    cmd->add_option("--set", args.overrides, "config override key=value")->take_all();
}

KeyValueConfig resolve_config(const CommonArgs& args) {
    auto cfg = args.config_path.empty() ? KeyValueConfig()
                                        : KeyValueConfig::from_file(args.config_path);
    for (const auto& o : args.overrides) cfg.apply_override(o);
    if (args.seed >= 0) cfg.set("seed", std::to_string(args.seed));
    if (!args.out_dir.empty()) cfg.set("out_dir", args.out_dir);
    return cfg;
}

std::string out_dir_of(const KeyValueConfig& cfg) {
    auto dir = cfg.get_string("out_dir");
    fs::create_directories(dir);
    return dir;
}

std::string artifact_meta(const KeyValueConfig& cfg) {
    return "config_digest=" + cfg.digest() + " seed=" + std::to_string(cfg.get_int("seed", 0));
}

GanTrainOptions gan_options(const KeyValueConfig& cfg) {
    GanTrainOptions o;
    o.lr_g = cfg.get_double("train.lr_g", o.lr_g);
    o.lr_d = cfg.get_double("train.lr_d", o.lr_d);
    o.batch_size = static_cast<int>(cfg.get_int("train.batch_size", o.batch_size));
    o.epochs = static_cast<int>(cfg.get_int("train.epochs", o.epochs));
    o.max_steps = static_cast<int>(cfg.get_int("train.max_steps", o.max_steps));
    o.checkpoint_every_epochs =
        static_cast<int>(cfg.get_int("train.checkpoint_every_epochs", o.checkpoint_every_epochs));
    o.seed = cfg.get_int("seed", 0);
    o.log_every = static_cast<int>(cfg.get_int("train.log_every", 10));
    return o;
}

std::optional<FeatureExtractor> load_phi(const KeyValueConfig& cfg) {
    if (!cfg.has("phi.checkpoint")) return std::nullopt;
    return FeatureExtractor::from_checkpoint(cfg.get_string("phi.checkpoint"),
                                             cfg.get_string("phi.tap_layer", "c5"));
}

void write_loss_csv(const std::vector<GanLossRow>& history, const std::string& path) {
    std::ofstream out(path);
    out << "step,adversarial,mae,perceptual,total,d_loss\n";
    for (const auto& r : history)
        out << r.step << ',' << r.adversarial << ',' << r.mae << ',' << r.perceptual << ','
            << r.total << ',' << r.d_loss << '\n';
}

int cmd_train_gan(const CommonArgs& args) {
    auto cfg = resolve_config(args);
    auto out = out_dir_of(cfg);
    auto train = load_manifest(cfg.get_string("data.train_manifest"));
    DatasetManifest val;
    if (cfg.has("data.val_manifest")) {
        val = load_manifest(cfg.get_string("data.val_manifest"));
    } else {
        double vf = cfg.get_double("data.val_fraction", 0.1);
        std::tie(train, val) = split_validation(train, vf, cfg.get_int("seed", 0));
    }
    auto gcfg = GeneratorConfig::from_config(cfg);
    auto dcfg = DiscriminatorConfig::from_config(cfg);
    auto opts = gan_options(cfg);
    opts.checkpoint_dir = out;
    auto phi = load_phi(cfg);

    auto state = train_gan(train, val, gcfg, dcfg, opts, phi ? &*phi : nullptr);
    save_gan_checkpoint(state, (fs::path(out) / "gan.pt").string(), cfg.digest());
    write_loss_csv(state.history, (fs::path(out) / "gan_losses.csv").string());
    std::cout << "trained " << state.step << " steps, checkpoint " << (fs::path(out) / "gan.pt").string()
              << "\n";
    return 0;
}

int cmd_synthesize(const CommonArgs& args) {
    auto cfg = resolve_config(args);
    auto out = out_dir_of(cfg);
    auto state = load_gan_checkpoint(cfg.get_string("gan.checkpoint"));
    auto source = load_manifest(cfg.get_string("data.source_manifest"));
    auto manifest = synthesize_dataset(*state.generator, source, out);
    write_manifest(manifest, (fs::path(out) / "manifest.txt").string(), artifact_meta(cfg));
    std::cout << "synthesized " << manifest.frames.size() << " thermal frames into " << out << "\n";
    return 0;
}

int cmd_build_mixture(const CommonArgs& args) {
    auto cfg = resolve_config(args);
    auto out = out_dir_of(cfg);
    auto real = load_manifest(cfg.get_string("data.real_manifest"));
    auto synth = load_manifest(cfg.get_string("data.synthetic_manifest"));
    auto spec = MixtureSpec::parse(cfg.get_string("mixture.regime"), cfg.get_int("seed", 0));
    auto mixed = build_mixture(real, synth, spec);
    auto path = fs::path(out) / (spec.label() + ".txt");
    write_manifest(mixed, path.string(), artifact_meta(cfg));
    std::cout << "wrote " << mixed.frames.size() << " frames to " << path.string() << "\n";
    return 0;
}

DetectorNet init_detector(const KeyValueConfig& cfg, const DetectorConfig& dcfg) {
    if (cfg.has("det.init_checkpoint")) {
        auto [model, loaded_cfg] = load_detector_checkpoint(cfg.get_string("det.init_checkpoint"));
        return model;
    }
    torch::manual_seed(static_cast<uint64_t>(cfg.get_int("seed", 0)));
    return DetectorNet(dcfg);
}

int cmd_train_detector(const CommonArgs& args) {
    auto cfg = resolve_config(args);
    auto out = out_dir_of(cfg);
    auto spec = MixtureSpec::parse(cfg.get_string("mixture.regime", "real"), cfg.get_int("seed", 0));

    DatasetManifest train;
    if (cfg.has("data.synthetic_manifest")) {
        auto real = load_manifest(cfg.get_string("data.real_manifest"));
        auto synth = load_manifest(cfg.get_string("data.synthetic_manifest"));
        train = build_mixture(real, synth, spec);
    } else {
        train = load_manifest(cfg.get_string("data.real_manifest"));
    }
    write_manifest(train, (fs::path(out) / ("train_" + spec.label() + ".txt")).string(),
                   artifact_meta(cfg));

    auto dcfg = DetectorConfig::from_config(cfg);
    auto schedule = FineTuneSchedule::from_config(cfg);
    auto model = init_detector(cfg, dcfg);
    auto result = fine_tune(model, train, dcfg, schedule, spec, cfg.get_int("seed", 0));

    save_detector_checkpoint(result.model, dcfg, (fs::path(out) / "detector.pt").string(),
                             cfg.digest(), cfg.get_int("seed", 0));
    std::ofstream lr_log(fs::path(out) / "lr_trace.csv");
    lr_log << "epoch,lr,train_loss,val_loss\n";
    for (size_t e = 0; e < result.lr_trace.size(); ++e)
        lr_log << e << ',' << result.lr_trace[e] << ',' << result.epoch_loss[e].first << ','
               << result.epoch_loss[e].second << '\n';
    std::cout << "trained " << spec.label() << " detector, checkpoint "
              << (fs::path(out) / "detector.pt").string() << "\n";
    return 0;
}

EvalSettings eval_settings(const KeyValueConfig& cfg) {
    EvalSettings s;
    s.iou_threshold = cfg.get_double("eval.iou_threshold", s.iou_threshold);
    s.min_height = static_cast<float>(cfg.get_double("eval.min_height", s.min_height));
    s.fppi_min = cfg.get_double("eval.fppi_min", s.fppi_min);
    s.fppi_max = cfg.get_double("eval.fppi_max", s.fppi_max);
    s.num_points = static_cast<int>(cfg.get_int("eval.num_points", s.num_points));
    return s;
}

int cmd_evaluate(const CommonArgs& args) {
    auto cfg = resolve_config(args);
    auto out = out_dir_of(cfg);
    auto test = load_manifest(cfg.get_string("data.test_manifest"));
    auto [model, dcfg] = load_detector_checkpoint(cfg.get_string("det.checkpoint"));
    auto settings = eval_settings(cfg);

    auto dets = run_inference(model, dcfg, test, cfg.get_double("eval.conf_threshold", 0.01),
                              cfg.get_double("eval.nms_iou", 0.45));
    write_detections(dets, (fs::path(out) / "detections.txt").string());

    auto report = evaluate(dets, test, settings);
    write_report(report, (fs::path(out) / "report.txt").string(), artifact_meta(cfg));
    write_curve(report.all.curve, (fs::path(out) / "curve_all.txt").string());
    write_curve(report.day.curve, (fs::path(out) / "curve_day.txt").string());
    write_curve(report.night.curve, (fs::path(out) / "curve_night.txt").string());
    if (cfg.get_bool("eval.overlays", false))
        write_overlays(dets, test, settings, cfg.get_double("eval.overlay_conf", 0.5),
                       (fs::path(out) / "overlays").string());

    std::cout << "lamr all " << report.all.lamr << "  day " << report.day.lamr << "  night "
              << report.night.lamr << "\n";
    return 0;
}

int cmd_ablation(const CommonArgs& args) {
    auto cfg = resolve_config(args);
    auto out = out_dir_of(cfg);
    auto real = load_manifest(cfg.get_string("data.real_manifest"));
    auto synth = load_manifest(cfg.get_string("data.synthetic_manifest"));
    auto test = load_manifest(cfg.get_string("data.test_manifest"));
    auto dcfg = DetectorConfig::from_config(cfg);
    auto schedule = FineTuneSchedule::from_config(cfg);
    auto settings = eval_settings(cfg);
    const long seed = cfg.get_int("seed", 0);

    std::ofstream table(fs::path(out) / "ablation.txt");
    table << "# " << artifact_meta(cfg) << "\nregime\tlamr_all\tlamr_day\tlamr_night\n";
    for (const auto& spec : ablation_regimes(seed)) {
        auto train = build_mixture(real, synth, spec);
        auto model = init_detector(cfg, dcfg);
        auto result = fine_tune(model, train, dcfg, schedule, spec, seed);
        auto dets = run_inference(result.model, dcfg, test,
                                  cfg.get_double("eval.conf_threshold", 0.01),
                                  cfg.get_double("eval.nms_iou", 0.45));
        auto report = evaluate(dets, test, settings);
        table << spec.label() << '\t' << report.all.lamr << '\t' << report.day.lamr << '\t'
              << report.night.lamr << '\n';
        table.flush();
        std::cout << spec.label() << "\tlamr all " << report.all.lamr << "\n";
    }
    std::cout << "ablation table written to " << (fs::path(out) / "ablation.txt").string() << "\n";
    return 0;
}

int cmd_make_toy_data(const CommonArgs& args) {
    auto cfg = resolve_config(args);
    auto out = out_dir_of(cfg);
    ToyDataOptions opt;
    opt.num_frames = static_cast<int>(cfg.get_int("toy.num_frames", opt.num_frames));
    opt.height = static_cast<int>(cfg.get_int("toy.height", opt.height));
    opt.width = static_cast<int>(cfg.get_int("toy.width", opt.width));
    opt.seed = cfg.get_int("seed", 0);
    auto manifest = generate_toy_dataset(out, opt);
    std::cout << "generated " << manifest.frames.size() << " toy frames in " << out << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"visible-to-thermal translation GAN and pedestrian detection toolkit"};
    app.require_subcommand(1);

    struct Sub {
        const char* name;
        const char* help;
        int (*run)(const CommonArgs&);
    };
    const std::vector<Sub> subs = {
        {"train-gan", "train the visible-to-thermal LSGAN", cmd_train_gan},
        {"synthesize", "generate synthetic thermal images with a trained GAN", cmd_synthesize},
        {"build-mixture", "build a training-regime manifest", cmd_build_mixture},
        {"train-detector", "fine-tune the pedestrian detector on a regime", cmd_train_detector},
        {"evaluate", "run detection and report log-average miss rate", cmd_evaluate},
        {"ablation", "run all 12 regimes and emit a consolidated table", cmd_ablation},
        {"make-toy-data", "generate the procedural paired toy dataset", cmd_make_toy_data},
    };

    std::vector<CommonArgs> cargs(subs.size());
    std::vector<CLI::App*> cmds;
    for (size_t i = 0; i < subs.size(); ++i) {
        auto* cmd = app.add_subcommand(subs[i].name, subs[i].help);
        add_common(cmd, cargs[i]);
        cmds.push_back(cmd);
    }

    CLI11_PARSE(app, argc, argv);

    try {
        for (size_t i = 0; i < subs.size(); ++i)
            if (cmds[i]->parsed()) return subs[i].run(cargs[i]);
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const ParseError& e) {
        std::cerr << "parse error: " << e.what() << "\n";
        return 2;
    } catch (const ValidationError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "argument error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
