#include "thermogen/perceptual.hpp"

#include <fstream>

#include "thermogen/checkpoint.hpp"

namespace thermogen {

FeatureExtractor::FeatureExtractor(const DetectorNet& source, const DetectorConfig& cfg,
                                   std::string tap_layer)
    : cfg_(cfg), tap_(std::move(tap_layer)) {
    backbone_ = DetectorNet(cfg_);
    {
        torch::NoGradGuard ng;
        auto src = source->named_parameters(true);
        if (src.size() > 0) backbone_->to(src.begin()->value().scalar_type());
        for (auto& p : backbone_->named_parameters(true)) {
            auto* s = src.find(p.key());
            if (s == nullptr)
                throw ValidationError("feature extractor: missing source parameter " + p.key());
            p.value().copy_(*s);
        }
    }
    for (auto& p : backbone_->parameters()) p.set_requires_grad(false);
    backbone_->eval();

    auto names = backbone_->stage_names();
    if (std::find(names.begin(), names.end(), tap_) == names.end())
        throw ConfigError("feature extractor: unknown tap layer '" + tap_ + "'");
}

FeatureExtractor FeatureExtractor::from_checkpoint(const std::string& path,
                                                   const std::string& tap_layer) {
    auto [model, cfg] = load_detector_checkpoint(path);
    return FeatureExtractor(model, cfg, tap_layer);
}

torch::Tensor FeatureExtractor::extract(const torch::Tensor& img) const {
    return backbone_->forward_to_tap(img, tap_);
}

torch::Tensor FeatureExtractor::distance(const torch::Tensor& real,
                                         const torch::Tensor& fake) const {
    if (real.sizes() != fake.sizes())
        throw ShapeError("perceptual_distance: image shapes differ");
    return (extract(real) - extract(fake)).square().mean();
}

std::string FeatureExtractor::digest() const { return parameter_digest(*backbone_); }

void FeatureExtractor::dump_features(const torch::Tensor& img, const std::string& path) const {
    torch::NoGradGuard ng;
    auto f = extract(img).to(torch::kFloat32).contiguous();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write feature dump: " + path);
    out << tap_;
    for (auto s : f.sizes()) out << ' ' << s;
    out << '\n';
    out.write(static_cast<const char*>(f.data_ptr()),
              static_cast<std::streamsize>(f.numel() * sizeof(float)));
}

}  // namespace thermogen
