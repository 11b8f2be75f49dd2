#include "thermogen/toydata.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

namespace fs = std::filesystem;

namespace thermogen {

namespace {

// Thermal rendering rule: background radiates a fraction of its visible
// luminance, pedestrians are uniformly warm. Pedestrians are drawn in a
// distinctive warm red so the mapping is recoverable from the visible image.
constexpr float kBgBase = 0.12f;
constexpr float kBgLumGain = 0.30f;
constexpr float kPedHeat = 0.62f;

}  // namespace

DatasetManifest generate_toy_dataset(const std::string& dir, const ToyDataOptions& opt) {
    fs::create_directories(dir);
    const int H = opt.height, W = opt.width;

    DatasetManifest manifest;
    manifest.name = "toy";
    manifest.base_dir = dir;
    manifest.image_height = H;
    manifest.image_width = W;

    std::mt19937 rng(static_cast<std::uint32_t>(opt.seed));
    std::uniform_real_distribution<float> unit(0.0f, 1.0f);

    for (int n = 0; n < opt.num_frames; ++n) {
        const bool night = n % 2 == 1;

        auto visible = torch::zeros({3, H, W});
        auto ped_mask = torch::zeros({H, W});
        auto va = visible.accessor<float, 3>();
        auto ma = ped_mask.accessor<float, 2>();

        // structured background: smooth gradient plus two sinusoidal textures
        const float gx = 0.3f + 0.4f * unit(rng), gy = 0.3f + 0.4f * unit(rng);
        const float fx = 2.0f + 6.0f * unit(rng), fy = 2.0f + 6.0f * unit(rng);
        const float phase = 6.28f * unit(rng);
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                float base = 0.25f + gx * x / W * 0.5f + gy * y / H * 0.5f;
                float tex = 0.08f * std::sin(fx * 6.28f * x / W + phase) +
                            0.08f * std::cos(fy * 6.28f * y / H);
                float v = std::clamp(base + tex, 0.0f, 1.0f);
                va[0][y][x] = v * 0.8f;
                va[1][y][x] = v;
                va[2][y][x] = v * 0.9f;
            }
        }

        // a few rectangular "buildings" for clutter
        int n_rects = 1 + static_cast<int>(unit(rng) * 3);
        for (int r = 0; r < n_rects; ++r) {
            int rw = 6 + static_cast<int>(unit(rng) * 12);
            int rh = 6 + static_cast<int>(unit(rng) * 12);
            int rx = static_cast<int>(unit(rng) * (W - rw));
            int ry = static_cast<int>(unit(rng) * (H - rh));
            float shade = 0.2f + 0.5f * unit(rng);
            for (int y = ry; y < ry + rh; ++y)
                for (int x = rx; x < rx + rw; ++x) {
                    va[0][y][x] = shade * 0.9f;
                    va[1][y][x] = shade;
                    va[2][y][x] = shade * 1.1f > 1 ? 1.0f : shade * 1.1f;
                }
        }

        // pedestrians: warm red vertical rectangles
        FrameRecord rec;
        int n_peds = 1 + static_cast<int>(unit(rng) * opt.max_peds_per_frame);
        n_peds = std::min(n_peds, opt.max_peds_per_frame);
        for (int p = 0; p < n_peds; ++p) {
            int ph = opt.min_ped_height +
                     static_cast<int>(unit(rng) * (opt.max_ped_height - opt.min_ped_height));
            int pw = std::max(3, ph / 3);
            int px = static_cast<int>(unit(rng) * (W - pw));
            int py = static_cast<int>(unit(rng) * (H - ph));
            for (int y = py; y < py + ph; ++y)
                for (int x = px; x < px + pw; ++x) {
                    va[0][y][x] = 0.85f;
                    va[1][y][x] = 0.25f;
                    va[2][y][x] = 0.20f;
                    ma[y][x] = 1.0f;
                }
            BoundingBox b;
            b.x = static_cast<float>(px);
            b.y = static_cast<float>(py);
            b.w = static_cast<float>(pw);
            b.h = static_cast<float>(ph);
            b.occluded = false;
            rec.boxes.push_back(b);
        }

        if (night) visible = visible * 0.45f;

        auto lum = 0.299f * visible[0] + 0.587f * visible[1] + 0.114f * visible[2];
        auto thermal =
            (kBgBase + kBgLumGain * lum) * (1.0f - ped_mask) + kPedHeat * ped_mask;
        thermal = thermal.clamp(0, 1);

        char id[32];
        std::snprintf(id, sizeof(id), "frame_%04d", n);
        rec.frame_id = id;
        rec.frame_index = n;
        rec.time_of_day = night ? TimeOfDay::night : TimeOfDay::day;
        rec.origin = Origin::real;
        rec.visible_path = std::string(id) + "_vis.png";
        rec.thermal_path = std::string(id) + "_th.png";
        save_visible_png(visible, (fs::path(dir) / rec.visible_path).string());
        save_thermal_png16(thermal.unsqueeze(0), (fs::path(dir) / rec.thermal_path).string());
        manifest.frames.push_back(std::move(rec));
    }

    write_manifest(manifest, (fs::path(dir) / "manifest.txt").string(),
                   "toy dataset seed=" + std::to_string(opt.seed));
    return manifest;
}

}  // namespace thermogen
