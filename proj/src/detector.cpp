#include "thermogen/detector.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "thermogen/checkpoint.hpp"
#include "thermogen/eval.hpp"

namespace fs = std::filesystem;

namespace thermogen {

namespace {

constexpr double kLReluSlope = 0.1;
constexpr double kCoordWeight = 5.0;
constexpr double kNoObjWeight = 0.5;

torch::nn::Sequential conv_block(int in, int out, int stride) {
    return torch::nn::Sequential(
        torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(stride).padding(1)),
        torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(kLReluSlope)));
}

double shape_iou(float w1, float h1, float w2, float h2) {
    double inter = std::min(w1, w2) * static_cast<double>(std::min(h1, h2));
    double uni = static_cast<double>(w1) * h1 + static_cast<double>(w2) * h2 - inter;
    return uni > 0 ? inter / uni : 0.0;
}

}  // namespace

void DetectorConfig::validate() const {
    if (num_classes != 1) throw ConfigError("detector config: num_classes must be 1");
    if (num_scales < 1 || static_cast<int>(strides.size()) != num_scales ||
        static_cast<int>(anchors.size()) != num_scales)
        throw ConfigError("detector config: strides/anchors must match num_scales");
    for (const auto& scale : anchors)
        for (const auto& [w, h] : scale)
            if (w <= 0 || h <= 0) throw ConfigError("detector config: anchors must be positive");
    if (in_channels != 1 && in_channels != 3)
        throw ConfigError("detector config: in_channels must be 1 or 3");
}

DetectorConfig DetectorConfig::from_config(const KeyValueConfig& cfg, const std::string& p) {
    DetectorConfig d;
    d.input_height = static_cast<int>(cfg.get_int(p + "input_height", d.input_height));
    d.input_width = static_cast<int>(cfg.get_int(p + "input_width", d.input_width));
    d.in_channels = static_cast<int>(cfg.get_int(p + "in_channels", d.in_channels));
    d.width = static_cast<int>(cfg.get_int(p + "width", d.width));
    d.tap_layer = cfg.get_string(p + "tap_layer", d.tap_layer);
    if (cfg.has(p + "anchors")) {
        // format: "w,h w,h w,h | w,h w,h w,h | w,h w,h w,h"
        d.anchors.clear();
        std::istringstream in(cfg.get_string(p + "anchors"));
        std::string tok;
        std::vector<std::pair<float, float>> scale;
        while (in >> tok) {
            if (tok == "|") {
                d.anchors.push_back(scale);
                scale.clear();
            } else {
                auto comma = tok.find(',');
                if (comma == std::string::npos)
                    throw ConfigError("detector config: bad anchor token '" + tok + "'");
                scale.emplace_back(std::stof(tok.substr(0, comma)), std::stof(tok.substr(comma + 1)));
            }
        }
        d.anchors.push_back(scale);
        d.num_scales = static_cast<int>(d.anchors.size());
        if (d.num_scales != static_cast<int>(d.strides.size()))
            throw ConfigError("detector config: anchor scale count must be 3");
    }
    d.validate();
    return d;
}

void DetectorConfig::to_config(KeyValueConfig& cfg, const std::string& p) const {
    cfg.set(p + "input_height", std::to_string(input_height));
    cfg.set(p + "input_width", std::to_string(input_width));
    cfg.set(p + "in_channels", std::to_string(in_channels));
    cfg.set(p + "width", std::to_string(width));
    cfg.set(p + "tap_layer", tap_layer);
    std::ostringstream a;
    for (size_t s = 0; s < anchors.size(); ++s) {
        if (s) a << " | ";
        for (size_t i = 0; i < anchors[s].size(); ++i) {
            if (i) a << ' ';
            a << anchors[s][i].first << ',' << anchors[s][i].second;
        }
    }
    cfg.set(p + "anchors", a.str());
}

DetectorNetImpl::DetectorNetImpl(DetectorConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const int w = cfg_.width;
    auto add = [&](const std::string& name, torch::nn::Sequential seq) {
        stages_.emplace_back(name, register_module(name, std::move(seq)));
    };
    add("stem", conv_block(cfg_.in_channels, w, 1));
    add("down1", conv_block(w, 2 * w, 2));
    add("down2", conv_block(2 * w, 4 * w, 2));
    add("down3", conv_block(4 * w, 8 * w, 2));
    add("c3", conv_block(8 * w, 8 * w, 1));  // stride 8
    add("down4", conv_block(8 * w, 8 * w, 2));
    add("c4", conv_block(8 * w, 8 * w, 1));  // stride 16
    add("down5", conv_block(8 * w, 16 * w, 2));
    add("c5", conv_block(16 * w, 16 * w, 1));  // stride 32, last backbone conv
    scale_taps_ = {"c3", "c4", "c5"};

    const int head_out = static_cast<int>(cfg_.anchors[0].size()) * 5;
    std::vector<int> head_in = {8 * w, 8 * w, 16 * w};
    for (int s = 0; s < cfg_.num_scales; ++s) {
        heads_.push_back(register_module(
            "head" + std::to_string(s),
            torch::nn::Conv2d(torch::nn::Conv2dOptions(head_in[static_cast<size_t>(s)], head_out, 1))));
    }
}

std::vector<torch::Tensor> DetectorNetImpl::forward(const torch::Tensor& img) {
    auto x = img.dim() == 3 ? img.unsqueeze(0) : img;
    if (x.size(1) != cfg_.in_channels)
        throw ShapeError("detector: expected " + std::to_string(cfg_.in_channels) +
                         " input channels, got " + std::to_string(x.size(1)));
    const int coarsest = cfg_.strides.back();
    if (x.size(2) % coarsest != 0 || x.size(3) % coarsest != 0)
        throw ShapeError("detector: input dimensions must be divisible by " +
                         std::to_string(coarsest));

    std::vector<torch::Tensor> raw;
    size_t next_tap = 0;
    for (auto& [name, stage] : stages_) {
        x = stage->forward(x);
        if (next_tap < scale_taps_.size() && name == scale_taps_[next_tap]) {
            raw.push_back(heads_[next_tap]->forward(x));
            ++next_tap;
        }
    }
    return raw;
}

torch::Tensor DetectorNetImpl::forward_to_tap(const torch::Tensor& img, const std::string& tap) {
    auto x = img.dim() == 3 ? img.unsqueeze(0) : img;
    if (x.size(1) != cfg_.in_channels)
        throw ShapeError("detector: expected " + std::to_string(cfg_.in_channels) +
                         " input channels");
    for (auto& [name, stage] : stages_) {
        x = stage->forward(x);
        if (name == tap) return x;
    }
    throw ConfigError("unknown tap layer: " + tap);
}

std::vector<std::string> DetectorNetImpl::stage_names() const {
    std::vector<std::string> names;
    for (const auto& [name, _] : stages_) names.push_back(name);
    return names;
}

FineTuneSchedule FineTuneSchedule::from_config(const KeyValueConfig& cfg, const std::string& p) {
    FineTuneSchedule s;
    s.batch_size = static_cast<int>(cfg.get_int(p + "batch_size", s.batch_size));
    s.input_height = static_cast<int>(cfg.get_int(p + "input_height", s.input_height));
    s.input_width = static_cast<int>(cfg.get_int(p + "input_width", s.input_width));
    s.init_lr_high = cfg.get_double(p + "init_lr_high", s.init_lr_high);
    s.init_lr_low = cfg.get_double(p + "init_lr_low", s.init_lr_low);
    s.real_fraction_threshold = cfg.get_double(p + "real_fraction_threshold", s.real_fraction_threshold);
    s.decay_factor = cfg.get_double(p + "decay_factor", s.decay_factor);
    s.decay_every_epochs = static_cast<int>(cfg.get_int(p + "decay_every_epochs", s.decay_every_epochs));
    s.max_epochs = static_cast<int>(cfg.get_int(p + "max_epochs", s.max_epochs));
    s.momentum = cfg.get_double(p + "momentum", s.momentum);
    s.weight_decay = cfg.get_double(p + "weight_decay", s.weight_decay);
    s.val_fraction = cfg.get_double(p + "val_fraction", s.val_fraction);
    return s;
}

void FineTuneSchedule::to_config(KeyValueConfig& cfg, const std::string& p) const {
    cfg.set(p + "batch_size", std::to_string(batch_size));
    cfg.set(p + "init_lr_high", std::to_string(init_lr_high));
    cfg.set(p + "init_lr_low", std::to_string(init_lr_low));
    cfg.set(p + "real_fraction_threshold", std::to_string(real_fraction_threshold));
    cfg.set(p + "decay_factor", std::to_string(decay_factor));
    cfg.set(p + "decay_every_epochs", std::to_string(decay_every_epochs));
    cfg.set(p + "max_epochs", std::to_string(max_epochs));
    cfg.set(p + "momentum", std::to_string(momentum));
    cfg.set(p + "weight_decay", std::to_string(weight_decay));
    cfg.set(p + "val_fraction", std::to_string(val_fraction));
}

double learning_rate(int epoch, const MixtureSpec& mixture, const FineTuneSchedule& schedule) {
    if (epoch < 0 || epoch >= schedule.max_epochs)
        throw std::invalid_argument("learning_rate: epoch out of range");
    double base = real_fraction_of(mixture) >= schedule.real_fraction_threshold
                      ? schedule.init_lr_high
                      : schedule.init_lr_low;
    return base / std::pow(schedule.decay_factor, epoch / schedule.decay_every_epochs);
}

std::vector<TargetAssignment> assign_targets(const std::vector<BoundingBox>& boxes,
                                             const DetectorConfig& cfg) {
    std::vector<TargetAssignment> out;
    for (const auto& b : boxes) {
        int best_scale = 0, best_anchor = 0;
        double best = -1;
        for (int s = 0; s < cfg.num_scales; ++s) {
            for (size_t a = 0; a < cfg.anchors[static_cast<size_t>(s)].size(); ++a) {
                auto [aw, ah] = cfg.anchors[static_cast<size_t>(s)][a];
                double v = shape_iou(b.w, b.h, aw, ah);
                if (v > best) {
                    best = v;
                    best_scale = s;
                    best_anchor = static_cast<int>(a);
                }
            }
        }
        const int stride = cfg.strides[static_cast<size_t>(best_scale)];
        const float cx = b.x + b.w / 2, cy = b.y + b.h / 2;
        TargetAssignment t;
        t.scale = best_scale;
        t.anchor = best_anchor;
        t.gi = std::clamp(static_cast<int>(cx / stride), 0, cfg.input_width / stride - 1);
        t.gj = std::clamp(static_cast<int>(cy / stride), 0, cfg.input_height / stride - 1);
        t.box = b;
        out.push_back(t);
    }
    return out;
}

torch::Tensor detection_loss(const std::vector<torch::Tensor>& raw,
                             const std::vector<std::vector<BoundingBox>>& gt,
                             const DetectorConfig& cfg) {
    const long B = raw.front().size(0);
    if (static_cast<long>(gt.size()) != B)
        throw ShapeError("detection_loss: batch size mismatch");

    torch::Tensor coord_loss = torch::zeros({}, raw.front().options());
    torch::Tensor obj_loss = torch::zeros({}, raw.front().options());
    long num_pos = 0;

    for (int s = 0; s < cfg.num_scales; ++s) {
        const auto& r = raw[static_cast<size_t>(s)];
        const long A = static_cast<long>(cfg.anchors[static_cast<size_t>(s)].size());
        const long H = r.size(2), W = r.size(3);
        // [B, A, 5, H, W]
        auto pred = r.view({B, A, 5, H, W});
        auto obj_logit = pred.select(2, 4);
        auto obj_target = torch::zeros_like(obj_logit);
        auto obj_weight = torch::full_like(obj_logit, kNoObjWeight);
        const int stride = cfg.strides[static_cast<size_t>(s)];

        for (long b = 0; b < B; ++b) {
            for (const auto& t : assign_targets(gt[static_cast<size_t>(b)], cfg)) {
                if (t.scale != s) continue;
                auto [aw, ah] = cfg.anchors[static_cast<size_t>(s)][static_cast<size_t>(t.anchor)];
                const float cx = t.box.x + t.box.w / 2, cy = t.box.y + t.box.h / 2;
                double tx = cx / stride - t.gi, ty = cy / stride - t.gj;
                double tw = std::log(t.box.w / aw), th = std::log(t.box.h / ah);

                auto p = pred.index({b, t.anchor, torch::indexing::Slice(), t.gj, t.gi});
                auto xy = torch::sigmoid(p.slice(0, 0, 2));
                auto wh = p.slice(0, 2, 4);
                auto target_xy = torch::tensor({tx, ty}, r.options());
                auto target_wh = torch::tensor({tw, th}, r.options());
                coord_loss = coord_loss + kCoordWeight * ((xy - target_xy).square().sum() +
                                                          (wh - target_wh).square().sum());
                obj_target.index_put_({b, t.anchor, t.gj, t.gi}, 1.0);
                obj_weight.index_put_({b, t.anchor, t.gj, t.gi}, 1.0);
                ++num_pos;
            }
        }
        obj_loss = obj_loss + (torch::binary_cross_entropy_with_logits(
                                   obj_logit, obj_target, obj_weight, {},
                                   torch::Reduction::Sum));
    }

    auto denom = static_cast<double>(std::max(num_pos, 1L));
    auto num_cells = static_cast<double>(B);
    return coord_loss / denom + obj_loss / std::max(num_cells, 1.0);
}

std::vector<Detection> decode_detections(const std::vector<torch::Tensor>& raw,
                                         const DetectorConfig& cfg, double conf_threshold,
                                         double nms_iou, int batch_index) {
    if (conf_threshold < 0 || conf_threshold > 1 || nms_iou < 0 || nms_iou > 1)
        throw std::invalid_argument("decode_detections: thresholds must be in [0,1]");
    std::vector<Detection> dets;
    torch::NoGradGuard ng;
    for (int s = 0; s < cfg.num_scales; ++s) {
        const auto& r = raw[static_cast<size_t>(s)];
        const long A = static_cast<long>(cfg.anchors[static_cast<size_t>(s)].size());
        const long H = r.size(2), W = r.size(3);
        const int stride = cfg.strides[static_cast<size_t>(s)];
        auto pred = r.view({r.size(0), A, 5, H, W})[batch_index].to(torch::kFloat64);
        auto acc = pred.accessor<double, 4>();
        for (long a = 0; a < A; ++a) {
            auto [aw, ah] = cfg.anchors[static_cast<size_t>(s)][static_cast<size_t>(a)];
            for (long j = 0; j < H; ++j) {
                for (long i = 0; i < W; ++i) {
                    double conf = 1.0 / (1.0 + std::exp(-acc[a][4][j][i]));
                    if (conf < conf_threshold || conf_threshold >= 1.0) continue;
                    double bx = (i + 1.0 / (1.0 + std::exp(-acc[a][0][j][i]))) * stride;
                    double by = (j + 1.0 / (1.0 + std::exp(-acc[a][1][j][i]))) * stride;
                    double bw = aw * std::exp(acc[a][2][j][i]);
                    double bh = ah * std::exp(acc[a][3][j][i]);
                    Detection d;
                    d.box = {static_cast<float>(bx - bw / 2), static_cast<float>(by - bh / 2),
                             static_cast<float>(bw), static_cast<float>(bh), false};
                    d.confidence = static_cast<float>(conf);
                    dets.push_back(d);
                }
            }
        }
    }
    return nms(std::move(dets), nms_iou);
}

std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold) {
    std::stable_sort(dets.begin(), dets.end(),
                     [](const Detection& a, const Detection& b) { return a.confidence > b.confidence; });
    std::vector<Detection> kept;
    for (const auto& d : dets) {
        bool suppressed = false;
        for (const auto& k : kept) {
            if (iou(d.box, k.box) >= iou_threshold) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) kept.push_back(d);
    }
    return kept;
}

std::vector<std::vector<std::pair<float, float>>> kmeans_anchors(const DatasetManifest& manifest,
                                                                 int num_scales,
                                                                 int anchors_per_scale, long seed) {
    std::vector<std::pair<float, float>> dims;
    for (const auto& f : manifest.frames)
        for (const auto& b : f.boxes) dims.emplace_back(b.w, b.h);
    const int k = num_scales * anchors_per_scale;
    if (static_cast<int>(dims.size()) < k)
        throw std::invalid_argument("kmeans_anchors: fewer boxes than clusters");

    std::mt19937 rng(static_cast<std::uint32_t>(seed));
    std::vector<std::pair<float, float>> centers;
    std::sample(dims.begin(), dims.end(), std::back_inserter(centers), k, rng);

    std::vector<int> assign(dims.size(), 0);
    for (int iter = 0; iter < 50; ++iter) {
        for (size_t i = 0; i < dims.size(); ++i) {
            double best = -1;
            for (int c = 0; c < k; ++c) {
                double v = shape_iou(dims[i].first, dims[i].second, centers[static_cast<size_t>(c)].first,
                                     centers[static_cast<size_t>(c)].second);
                if (v > best) {
                    best = v;
                    assign[i] = c;
                }
            }
        }
        for (int c = 0; c < k; ++c) {
            double sw = 0, sh = 0;
            long n = 0;
            for (size_t i = 0; i < dims.size(); ++i) {
                if (assign[i] != c) continue;
                sw += dims[i].first;
                sh += dims[i].second;
                ++n;
            }
            if (n > 0)
                centers[static_cast<size_t>(c)] = {static_cast<float>(sw / n),
                                                   static_cast<float>(sh / n)};
        }
    }
    std::sort(centers.begin(), centers.end(), [](const auto& a, const auto& b) {
        return a.first * a.second < b.first * b.second;
    });
    std::vector<std::vector<std::pair<float, float>>> out;
    for (int s = 0; s < num_scales; ++s)
        out.emplace_back(centers.begin() + s * anchors_per_scale,
                         centers.begin() + (s + 1) * anchors_per_scale);
    return out;
}

namespace {

torch::Tensor load_detector_input(const DatasetManifest& m, const FrameRecord& rec,
                                  const DetectorConfig& cfg) {
    const auto& path = cfg.in_channels == 3 ? rec.visible_path : rec.thermal_path;
    return load_image(m.resolve(path), cfg.in_channels);
}

}  // namespace

FineTuneResult fine_tune(DetectorNet init, const DatasetManifest& train, const DetectorConfig& cfg,
                         const FineTuneSchedule& schedule, const MixtureSpec& mixture, long seed) {
    if (train.frames.empty()) throw std::invalid_argument("fine_tune: empty training manifest");

    FineTuneResult result;
    result.model = init;
    torch::optim::SGD opt(result.model->parameters(),
                          torch::optim::SGDOptions(schedule.init_lr_low)
                              .momentum(schedule.momentum)
                              .weight_decay(schedule.weight_decay));

    for (int epoch = 0; epoch < schedule.max_epochs; ++epoch) {
        const double lr = learning_rate(epoch, mixture, schedule);
        result.lr_trace.push_back(lr);
        for (auto& group : opt.param_groups())
            static_cast<torch::optim::SGDOptions&>(group.options()).lr(lr);

        // fresh validation split each epoch
        auto [tr, val] = split_validation(train, schedule.val_fraction, seed + epoch);
        if (tr.frames.empty()) tr = train;

        std::vector<size_t> order(tr.frames.size());
        std::iota(order.begin(), order.end(), 0);
        std::mt19937 rng(static_cast<std::uint32_t>(seed + 1000 + epoch));
        std::shuffle(order.begin(), order.end(), rng);

        double train_sum = 0;
        long train_batches = 0;
        result.model->train();
        for (size_t b = 0; b < order.size(); b += schedule.batch_size) {
            std::vector<torch::Tensor> imgs;
            std::vector<std::vector<BoundingBox>> gts;
            for (size_t i = b; i < std::min(order.size(), b + schedule.batch_size); ++i) {
                const auto& rec = tr.frames[order[i]];
                imgs.push_back(load_detector_input(tr, rec, cfg));
                gts.push_back(rec.boxes);
            }
            auto batch = torch::stack(imgs);
            opt.zero_grad();
            auto loss = detection_loss(result.model->forward(batch), gts, cfg);
            if (!torch::isfinite(loss).all().item<bool>())
                throw NumericError("fine_tune: non-finite loss at epoch " + std::to_string(epoch) +
                                   " batch " + std::to_string(b / schedule.batch_size));
            loss.backward();
            opt.step();
            train_sum += loss.item<double>();
            ++train_batches;
        }

        double val_loss = 0;
        if (!val.frames.empty()) {
            torch::NoGradGuard ng;
            result.model->eval();
            long n = 0;
            for (const auto& rec : val.frames) {
                auto img = load_detector_input(val, rec, cfg).unsqueeze(0);
                val_loss += detection_loss(result.model->forward(img), {rec.boxes}, cfg)
                                .item<double>();
                ++n;
            }
            val_loss /= static_cast<double>(std::max(n, 1L));
        }
        result.epoch_loss.emplace_back(train_sum / std::max(train_batches, 1L), val_loss);
    }
    return result;
}

void save_detector_checkpoint(const DetectorNet& model, const DetectorConfig& cfg,
                              const std::string& path, const std::string& config_digest,
                              long seed) {
    torch::serialize::OutputArchive root;
    root.write("format", std::string("thermogen-detector-v1"));
    KeyValueConfig kv;
    cfg.to_config(kv);
    root.write("config", kv.canonical());
    root.write("config_digest", config_digest);
    root.write("seed", seed);
    torch::serialize::OutputArchive m;
    const_cast<DetectorNetImpl&>(*model).save(m);
    root.write("model", m);
    save_archive_atomic(root, path);
}

std::pair<DetectorNet, DetectorConfig> load_detector_checkpoint(const std::string& path) {
    torch::serialize::InputArchive root;
    try {
        root.load_from(path);
    } catch (const c10::Error& e) {
        throw ValidationError("cannot read checkpoint " + path + ": " + e.msg());
    }
    c10::IValue fmt;
    if (!root.try_read("format", fmt) || fmt.toStringRef() != "thermogen-detector-v1")
        throw ValidationError(path + ": not a thermogen detector checkpoint");
    c10::IValue cfg_text;
    root.read("config", cfg_text);
    auto cfg = DetectorConfig::from_config(KeyValueConfig::from_string(cfg_text.toStringRef()));
    DetectorNet model(cfg);
    torch::serialize::InputArchive m;
    root.read("model", m);
    model->load(m);
    return {model, cfg};
}

std::map<std::string, std::vector<Detection>> run_inference(DetectorNet model,
                                                            const DetectorConfig& cfg,
                                                            const DatasetManifest& manifest,
                                                            double conf_threshold,
                                                            double nms_iou) {
    std::map<std::string, std::vector<Detection>> out;
    torch::NoGradGuard ng;
    model->eval();
    for (const auto& rec : manifest.frames) {
        auto img = load_detector_input(manifest, rec, cfg).unsqueeze(0);
        out[rec.frame_id] = decode_detections(model->forward(img), cfg, conf_threshold, nms_iou);
    }
    return out;
}

void write_detections(const std::map<std::string, std::vector<Detection>>& dets,
                      const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write detections: " + path);
    out.precision(9);
    for (const auto& [frame_id, list] : dets)
        for (const auto& d : list)
            out << frame_id << '\t' << d.box.x << '\t' << d.box.y << '\t' << d.box.w << '\t'
                << d.box.h << '\t' << d.confidence << '\n';
}

std::map<std::string, std::vector<Detection>> read_detections(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open detections: " + path);
    std::map<std::string, std::vector<Detection>> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line.front() == '#') continue;
        std::istringstream ls(line);
        std::string id;
        Detection d;
        if (!(ls >> id >> d.box.x >> d.box.y >> d.box.w >> d.box.h >> d.confidence))
            throw ParseError(path + ":" + std::to_string(lineno) + ": bad detection row");
        out[id].push_back(d);
    }
    return out;
}

}  // namespace thermogen
