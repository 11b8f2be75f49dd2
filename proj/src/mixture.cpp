#include "thermogen/mixture.hpp"

#include <algorithm>
#include <filesystem>
#include <numeric>
#include <random>
#include <set>

#include "thermogen/gan.hpp"

namespace fs = std::filesystem;

namespace thermogen {

void MixtureSpec::validate() const {
    if (!(real_fraction >= 0.0 && real_fraction <= 1.0))
        throw std::invalid_argument("mixture spec: real_fraction must be in [0,1]");
    if (kind == MixtureKind::real && real_fraction != 1.0)
        throw std::invalid_argument("mixture spec: kind=real requires real_fraction 1.0");
    if (kind == MixtureKind::synthesized && real_fraction != 0.0)
        throw std::invalid_argument("mixture spec: kind=synthesized requires real_fraction 0.0");
}

std::string MixtureSpec::label() const {
    switch (kind) {
        case MixtureKind::real: return "real";
        case MixtureKind::synthesized: return "synthesized";
        case MixtureKind::combined: return "combined";
        case MixtureKind::mixed: {
            int r = static_cast<int>(round_even(real_fraction * 100));
            return "mixed_" + std::to_string(r) + "_" + std::to_string(100 - r);
        }
    }
    return "?";
}

MixtureSpec MixtureSpec::parse(const std::string& text, long seed) {
    MixtureSpec s;
    s.seed = seed;
    if (text == "real") {
        s.kind = MixtureKind::real;
        s.real_fraction = 1.0;
    } else if (text == "synthesized") {
        s.kind = MixtureKind::synthesized;
        s.real_fraction = 0.0;
    } else if (text == "combined") {
        s.kind = MixtureKind::combined;
        s.real_fraction = 0.5;
    } else if (text.rfind("mixed_", 0) == 0) {
        // mixed_R_S with R+S == 100, e.g. mixed_80_20
        auto rest = text.substr(6);
        auto us = rest.find('_');
        if (us == std::string::npos)
            throw std::invalid_argument("mixture spec: expected mixed_R_S, got " + text);
        s.kind = MixtureKind::mixed;
        s.real_fraction = std::stod(rest.substr(0, us)) / 100.0;
        if (std::abs(s.real_fraction * 100.0 + std::stod(rest.substr(us + 1)) - 100.0) > 1e-9)
            throw std::invalid_argument("mixture spec: R and S must sum to 100 in " + text);
    } else {
        throw std::invalid_argument("mixture spec: unknown regime '" + text + "'");
    }
    s.validate();
    return s;
}

double real_fraction_of(const MixtureSpec& spec) {
    switch (spec.kind) {
        case MixtureKind::real: return 1.0;
        case MixtureKind::synthesized: return 0.0;
        case MixtureKind::combined: return 0.5;  // N real out of 2N
        case MixtureKind::mixed: return spec.real_fraction;
    }
    return 0.0;
}

std::vector<MixtureSpec> ablation_regimes(long seed) {
    std::vector<MixtureSpec> regimes;
    regimes.push_back({MixtureKind::real, 1.0, seed});
    regimes.push_back({MixtureKind::synthesized, 0.0, seed});
    regimes.push_back({MixtureKind::combined, 0.5, seed});
    for (int r = 10; r <= 90; r += 10)
        regimes.push_back({MixtureKind::mixed, r / 100.0, seed});
    return regimes;
}

DatasetManifest synthesize_dataset(GeneratorImpl& generator, const DatasetManifest& rgb_source,
                                   const std::string& output_dir) {
    fs::create_directories(output_dir);
    DatasetManifest out = rgb_source;
    out.name = rgb_source.name + "_synth";
    out.base_dir = output_dir;

    torch::NoGradGuard ng;
    generator.eval();
    for (size_t i = 0; i < out.frames.size(); ++i) {
        auto& rec = out.frames[i];
        torch::Tensor vis = load_image(rgb_source.resolve(rgb_source.frames[i].visible_path), 3);
        torch::Tensor fake;
        try {
            fake = generator.forward(vis.unsqueeze(0)).squeeze(0);
        } catch (const ShapeError& e) {
            throw ShapeError("synthesize_dataset: frame " + rec.frame_id + ": " + e.what());
        }
        auto fname = rec.frame_id + "_synth.png";
        save_thermal_png16(fake, (fs::path(output_dir) / fname).string());
        // boxes and day/night tag are inherited from the source record
        rec.thermal_path = fname;
        rec.visible_path = fs::relative(fs::absolute(rgb_source.resolve(rec.visible_path)),
                                        fs::absolute(output_dir))
                               .string();
        rec.origin = Origin::synthetic;
    }
    return out;
}

namespace {

// Regime manifests mix records from two source directories, so their paths
// must survive being written to (and reloaded from) a third location.
std::string absolute_path(const DatasetManifest& m, const std::string& rel) {
    return fs::absolute(m.resolve(rel)).lexically_normal().string();
}

}  // namespace

DatasetManifest build_mixture(const DatasetManifest& real, const DatasetManifest& synthetic,
                              const MixtureSpec& spec) {
    spec.validate();
    if (real.frames.size() != synthetic.frames.size())
        throw std::invalid_argument("build_mixture: real and synthetic manifests differ in size");
    std::set<std::string> real_ids, synth_ids;
    for (const auto& f : real.frames) real_ids.insert(f.frame_id);
    for (const auto& f : synthetic.frames) synth_ids.insert(f.frame_id);
    if (real_ids != synth_ids)
        throw std::invalid_argument("build_mixture: frame_id sets do not match");

    auto absolutized = [](const DatasetManifest& src) {
        DatasetManifest out = src;
        out.base_dir.clear();
        for (auto& rec : out.frames) {
            rec.visible_path = absolute_path(src, rec.visible_path);
            rec.thermal_path = absolute_path(src, rec.thermal_path);
        }
        return out;
    };

    switch (spec.kind) {
        case MixtureKind::real:
            return absolutized(real);
        case MixtureKind::synthesized:
            return absolutized(synthetic);
        case MixtureKind::combined: {
            DatasetManifest out = real;
            out.name = "combined";
            for (auto rec : synthetic.frames) {
                rec.frame_id += "#synth";
                rec.visible_path = absolute_path(synthetic, rec.visible_path);
                rec.thermal_path = absolute_path(synthetic, rec.thermal_path);
                out.frames.push_back(std::move(rec));
            }
            for (auto& rec : out.frames)
                if (rec.frame_id.find("#synth") == std::string::npos) {
                    rec.visible_path = absolute_path(real, rec.visible_path);
                    rec.thermal_path = absolute_path(real, rec.thermal_path);
                }
            out.base_dir.clear();
            return out;
        }
        case MixtureKind::mixed: {
            const size_t n = real.frames.size();
            const size_t n_real = static_cast<size_t>(
                round_even(spec.real_fraction * static_cast<double>(n)));
            std::vector<size_t> idx(n);
            std::iota(idx.begin(), idx.end(), 0);
            std::mt19937 rng(static_cast<std::uint32_t>(spec.seed));
            std::shuffle(idx.begin(), idx.end(), rng);
            std::vector<bool> take_real(n, false);
            for (size_t i = 0; i < n_real; ++i) take_real[idx[i]] = true;

            std::map<std::string, const FrameRecord*> synth_by_id;
            for (const auto& f : synthetic.frames) synth_by_id[f.frame_id] = &f;

            DatasetManifest out = real;
            out.name = spec.label();
            out.base_dir.clear();
            for (size_t i = 0; i < n; ++i) {
                auto& rec = out.frames[i];
                if (take_real[i]) {
                    rec.visible_path = absolute_path(real, rec.visible_path);
                    rec.thermal_path = absolute_path(real, rec.thermal_path);
                } else {
                    // the synthetic counterpart of this frame, never both
                    rec = *synth_by_id.at(rec.frame_id);
                    rec.visible_path = absolute_path(synthetic, rec.visible_path);
                    rec.thermal_path = absolute_path(synthetic, rec.thermal_path);
                }
            }
            return out;
        }
    }
    throw std::logic_error("build_mixture: unreachable");
}

}  // namespace thermogen
