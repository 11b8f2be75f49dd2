#include "thermogen/eval.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace fs = std::filesystem;

namespace thermogen {

double iou(const BoundingBox& a, const BoundingBox& b) {
    const double ix = std::max(0.0f, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
    const double iy = std::max(0.0f, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
    const double inter = ix * iy;
    const double uni = static_cast<double>(a.w) * a.h + static_cast<double>(b.w) * b.h - inter;
    return uni > 0 ? inter / uni : 0.0;
}

MatchResult match_frame(std::vector<Detection> dets, const std::vector<BoundingBox>& gts,
                        double iou_threshold, const std::vector<BoundingBox>& ignore) {
    std::stable_sort(dets.begin(), dets.end(),
                     [](const Detection& a, const Detection& b) { return a.confidence > b.confidence; });

    MatchResult r;
    std::vector<bool> gt_taken(gts.size(), false);
    for (size_t di = 0; di < dets.size(); ++di) {
        int best_gt = -1;
        double best_iou = 0;
        for (size_t gi = 0; gi < gts.size(); ++gi) {
            if (gt_taken[gi]) continue;
            double v = iou(dets[di].box, gts[gi]);
            if (v >= iou_threshold && v > best_iou) {
                best_iou = v;
                best_gt = static_cast<int>(gi);
            }
        }
        if (best_gt >= 0) {
            gt_taken[static_cast<size_t>(best_gt)] = true;
            r.true_positives.emplace_back(static_cast<int>(di), best_gt);
            continue;
        }
        // a detection falling on an ignore region is neither TP nor FP
        bool ignored = false;
        for (const auto& ig : ignore) {
            if (iou(dets[di].box, ig) >= iou_threshold) {
                ignored = true;
                break;
            }
        }
        if (!ignored) r.false_positives.push_back(static_cast<int>(di));
    }
    for (size_t gi = 0; gi < gts.size(); ++gi)
        if (!gt_taken[gi]) r.false_negatives.push_back(static_cast<int>(gi));
    return r;
}

MrFppiCurve mr_fppi_curve(const std::vector<EvalFrame>& frames, double iou_threshold) {
    if (frames.empty()) throw std::invalid_argument("mr_fppi_curve: empty subset");
    long total_gts = 0;
    std::set<float, std::greater<float>> thresholds;
    for (const auto& f : frames) {
        total_gts += static_cast<long>(f.gts.size());
        for (const auto& d : f.dets) thresholds.insert(d.confidence);
    }
    if (total_gts == 0)
        throw ValidationError("mr_fppi_curve: no ground truths in subset, miss rate undefined");

    MrFppiCurve curve;
    auto eval_at = [&](double thr) {
        long fp = 0, fn = 0;
        for (const auto& f : frames) {
            std::vector<Detection> kept;
            for (const auto& d : f.dets)
                if (d.confidence >= thr) kept.push_back(d);
            auto m = match_frame(std::move(kept), f.gts, iou_threshold, f.ignore);
            fp += static_cast<long>(m.false_positives.size());
            fn += static_cast<long>(m.false_negatives.size());
        }
        double fppi = static_cast<double>(fp) / static_cast<double>(frames.size());
        double mr = static_cast<double>(fn) / static_cast<double>(total_gts);
        curve.points.emplace_back(fppi, mr);
    };

    // descending thresholds give ascending fppi
    eval_at(std::numeric_limits<double>::infinity());
    for (float t : thresholds) eval_at(t);
    std::stable_sort(curve.points.begin(), curve.points.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    return curve;
}

double log_average_miss_rate(const MrFppiCurve& curve, double fppi_min, double fppi_max,
                             int num_points) {
    if (curve.points.empty()) throw std::invalid_argument("log_average_miss_rate: empty curve");
    if (!(fppi_min < fppi_max) || fppi_min <= 0 || num_points < 1)
        throw std::invalid_argument("log_average_miss_rate: invalid reference range");

    const double lmin = std::log10(fppi_min), lmax = std::log10(fppi_max);
    double log_sum = 0;
    for (int i = 0; i < num_points; ++i) {
        double ref = std::pow(10.0, num_points == 1
                                        ? lmin
                                        : lmin + (lmax - lmin) * i / (num_points - 1));
        // curve point with the largest fppi <= ref; all missed if none
        double mr = 1.0;
        bool found = false;
        for (const auto& [fppi, m] : curve.points) {
            if (fppi <= ref + 1e-12) {
                mr = m;
                found = true;
            } else {
                break;
            }
        }
        if (!found) mr = 1.0;
        log_sum += std::log(std::max(mr, 1e-10));
    }
    return std::exp(log_sum / num_points);
}

namespace {

SubsetReport eval_subset(const std::vector<EvalFrame>& frames, const EvalSettings& s) {
    SubsetReport r;
    r.num_images = static_cast<long>(frames.size());
    for (const auto& f : frames) {
        r.num_gts += static_cast<long>(f.gts.size());
        r.num_dets += static_cast<long>(f.dets.size());
    }
    r.curve = mr_fppi_curve(frames, s.iou_threshold);
    r.lamr = log_average_miss_rate(r.curve, s.fppi_min, s.fppi_max, s.num_points);
    return r;
}

EvalFrame make_eval_frame(const FrameRecord& rec, const std::vector<Detection>& dets,
                          const EvalSettings& s) {
    EvalFrame f;
    f.dets = dets;
    for (const auto& b : rec.boxes) {
        // reasonable setting: short or occluded boxes become ignore regions
        if (b.h >= s.min_height && !b.occluded)
            f.gts.push_back(b);
        else
            f.ignore.push_back(b);
    }
    return f;
}

}  // namespace

EvalReport evaluate(const std::map<std::string, std::vector<Detection>>& detections,
                    const DatasetManifest& test_manifest, const EvalSettings& settings) {
    std::set<std::string> known;
    for (const auto& rec : test_manifest.frames) known.insert(rec.frame_id);
    std::string offenders;
    for (const auto& [id, _] : detections)
        if (!known.count(id)) offenders += (offenders.empty() ? "" : ", ") + id;
    if (!offenders.empty())
        throw ValidationError("evaluate: detections reference unknown frame_ids: " + offenders);

    std::vector<EvalFrame> all, day, night;
    static const std::vector<Detection> kNone;
    for (const auto& rec : test_manifest.frames) {
        auto it = detections.find(rec.frame_id);
        auto f = make_eval_frame(rec, it == detections.end() ? kNone : it->second, settings);
        all.push_back(f);
        (rec.time_of_day == TimeOfDay::day ? day : night).push_back(f);
    }

    EvalReport report;
    report.all = eval_subset(all, settings);
    if (!day.empty()) report.day = eval_subset(day, settings);
    if (!night.empty()) report.night = eval_subset(night, settings);
    return report;
}

void write_report(const EvalReport& report, const std::string& path, const std::string& meta) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write report: " + path);
    if (!meta.empty()) out << "# " << meta << "\n";
    auto line = [&](const char* name, const SubsetReport& s) {
        out << name << "\tlamr " << s.lamr << "\timages " << s.num_images << "\tgts " << s.num_gts
            << "\tdets " << s.num_dets << "\n";
    };
    line("all", report.all);
    line("day", report.day);
    line("night", report.night);
}

void write_curve(const MrFppiCurve& curve, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write curve: " + path);
    for (const auto& [fppi, mr] : curve.points) out << fppi << '\t' << mr << '\n';
}

void write_overlays(const std::map<std::string, std::vector<Detection>>& detections,
                    const DatasetManifest& manifest, const EvalSettings& settings,
                    double conf_threshold, const std::string& out_dir) {
    fs::create_directories(out_dir);
    const cv::Scalar kBlue(255, 0, 0), kGreen(0, 255, 0), kRed(0, 0, 255);  // BGR
    for (const auto& rec : manifest.frames) {
        auto it = detections.find(rec.frame_id);
        std::vector<Detection> dets;
        if (it != detections.end())
            for (const auto& d : it->second)
                if (d.confidence >= conf_threshold) dets.push_back(d);

        auto f = make_eval_frame(rec, dets, settings);
        auto match = match_frame(f.dets, f.gts, settings.iou_threshold, f.ignore);

        cv::Mat img = cv::imread(manifest.resolve(rec.thermal_path), cv::IMREAD_UNCHANGED);
        if (img.empty()) throw ValidationError("cannot read " + manifest.resolve(rec.thermal_path));
        if (img.depth() == CV_16U) img.convertTo(img, CV_8U, 255.0 / 65535.0);
        if (img.channels() == 1) cv::cvtColor(img, img, cv::COLOR_GRAY2BGR);

        auto draw = [&](const BoundingBox& b, const cv::Scalar& color) {
            cv::rectangle(img, cv::Rect2f(b.x, b.y, b.w, b.h), color, 1);
        };
        auto sorted = f.dets;
        std::stable_sort(sorted.begin(), sorted.end(), [](const Detection& a, const Detection& b) {
            return a.confidence > b.confidence;
        });
        for (const auto& [di, gi] : match.true_positives) draw(sorted[static_cast<size_t>(di)].box, kBlue);
        for (int di : match.false_positives) draw(sorted[static_cast<size_t>(di)].box, kRed);
        for (int gi : match.false_negatives) draw(f.gts[static_cast<size_t>(gi)], kGreen);

        cv::imwrite((fs::path(out_dir) / (rec.frame_id + "_overlay.png")).string(), img);
    }
}

}  // namespace thermogen
