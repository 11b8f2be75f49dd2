#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "thermogen/data.hpp"
#include "thermogen/detector.hpp"
#include "thermogen/eval.hpp"

namespace thermogen::testsupport {

namespace fs = std::filesystem;

/// Scratch directory removed on destruction.
struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() /
               ("thermogen_" + tag + "_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    std::string str() const { return path.string(); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

inline FrameRecord make_frame(const std::string& id, long index, TimeOfDay tod,
                              std::vector<BoundingBox> boxes) {
    FrameRecord r;
    r.frame_id = id;
    r.frame_index = index;
    r.time_of_day = tod;
    r.visible_path = id + "_vis.png";
    r.thermal_path = id + "_th.png";
    r.boxes = std::move(boxes);
    return r;
}

/// Random in-memory manifest for property tests (no files on disk).
inline DatasetManifest random_manifest(std::mt19937& rng, int max_frames = 20) {
    std::uniform_int_distribution<int> nframes(1, max_frames);
    std::uniform_real_distribution<float> coord(0.0f, 50.0f);
    std::uniform_real_distribution<float> dim(1.0f, 40.0f);
    std::uniform_int_distribution<int> nboxes(0, 4);
    std::uniform_int_distribution<int> coin(0, 1);

    DatasetManifest m;
    m.image_height = 96;
    m.image_width = 96;
    int n = nframes(rng);
    for (int i = 0; i < n; ++i) {
        std::vector<BoundingBox> boxes;
        int nb = nboxes(rng);
        for (int b = 0; b < nb; ++b) {
            BoundingBox box;
            box.x = coord(rng);
            box.y = coord(rng);
            // stay strictly inside the image so the loader's bounds clamp
            // never fires on re-read
            box.w = std::min(dim(rng), 95.0f - box.x);
            box.h = std::min(dim(rng), 95.0f - box.y);
            if (box.w <= 0 || box.h <= 0) continue;
            box.occluded = coin(rng) == 1;
            boxes.push_back(box);
        }
        m.frames.push_back(make_frame("f" + std::to_string(i), i,
                                      coin(rng) ? TimeOfDay::night : TimeOfDay::day,
                                      std::move(boxes)));
    }
    return m;
}

// --- independent evaluation oracles -------------------------------------

/// Greedy matching recomputed directly from its definition, O(n^3):
/// repeatedly take the highest-confidence unprocessed detection and search
/// all unmatched ground truths for its best overlap.
inline MatchResult oracle_match(const std::vector<Detection>& dets_in,
                                const std::vector<BoundingBox>& gts, double thr,
                                const std::vector<BoundingBox>& ignore = {}) {
    MatchResult r;
    std::vector<bool> det_done(dets_in.size(), false), gt_done(gts.size(), false);
    for (size_t round = 0; round < dets_in.size(); ++round) {
        int best_det = -1;
        for (size_t i = 0; i < dets_in.size(); ++i)
            if (!det_done[i] &&
                (best_det < 0 ||
                 dets_in[i].confidence > dets_in[static_cast<size_t>(best_det)].confidence))
                best_det = static_cast<int>(i);
        if (best_det < 0) break;
        det_done[static_cast<size_t>(best_det)] = true;

        int best_gt = -1;
        double best_v = 0;
        for (size_t g = 0; g < gts.size(); ++g) {
            if (gt_done[g]) continue;
            double v = iou(dets_in[static_cast<size_t>(best_det)].box, gts[g]);
            if (v >= thr && v > best_v) {
                best_v = v;
                best_gt = static_cast<int>(g);
            }
        }
        if (best_gt >= 0) {
            gt_done[static_cast<size_t>(best_gt)] = true;
            r.true_positives.emplace_back(best_det, best_gt);
        } else {
            bool ig = false;
            for (const auto& box : ignore)
                if (iou(dets_in[static_cast<size_t>(best_det)].box, box) >= thr) ig = true;
            if (!ig) r.false_positives.push_back(best_det);
        }
    }
    for (size_t g = 0; g < gts.size(); ++g)
        if (!gt_done[g]) r.false_negatives.push_back(static_cast<int>(g));
    return r;
}

/// Exhaustive threshold sweep: every distinct confidence, full recount.
inline MrFppiCurve oracle_curve(const std::vector<EvalFrame>& frames, double thr) {
    std::vector<double> thresholds{std::numeric_limits<double>::infinity()};
    long total_gts = 0;
    for (const auto& f : frames) {
        total_gts += static_cast<long>(f.gts.size());
        for (const auto& d : f.dets) thresholds.push_back(d.confidence);
    }
    std::sort(thresholds.begin(), thresholds.end());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

    MrFppiCurve curve;
    for (auto it = thresholds.rbegin(); it != thresholds.rend(); ++it) {
        long fp = 0, fn = 0;
        for (const auto& f : frames) {
            std::vector<Detection> kept;
            for (const auto& d : f.dets)
                if (d.confidence >= *it) kept.push_back(d);
            std::stable_sort(kept.begin(), kept.end(), [](const Detection& a, const Detection& b) {
                return a.confidence > b.confidence;
            });
            auto m = oracle_match(kept, f.gts, thr, f.ignore);
            fp += static_cast<long>(m.false_positives.size());
            fn += static_cast<long>(m.false_negatives.size());
        }
        curve.points.emplace_back(static_cast<double>(fp) / frames.size(),
                                  static_cast<double>(fn) / total_gts);
    }
    std::stable_sort(curve.points.begin(), curve.points.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    return curve;
}

/// Reference lamr computed step by step.
inline double oracle_lamr(const MrFppiCurve& curve, double lo, double hi, int n) {
    double sum = 0;
    for (int i = 0; i < n; ++i) {
        double ref = std::pow(10.0, std::log10(lo) + (std::log10(hi) - std::log10(lo)) * i / (n - 1));
        double mr = 1.0;
        for (const auto& [fppi, m] : curve.points)
            if (fppi <= ref + 1e-12) mr = m;
        sum += std::log(std::max(mr, 1e-10));
    }
    return std::exp(sum / n);
}

}  // namespace thermogen::testsupport
