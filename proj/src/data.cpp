#include "thermogen/data.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace fs = std::filesystem;

namespace thermogen {

std::ostream& operator<<(std::ostream& out, const BoundingBox& box) {
    return out << "[x=" << box.x << " y=" << box.y << " w=" << box.w << " h=" << box.h
               << (box.occluded ? " occluded" : "") << "]";
}

std::ostream& operator<<(std::ostream& out, const FrameRecord& rec) {
    out << rec.frame_id << " idx=" << rec.frame_index
        << (rec.time_of_day == TimeOfDay::day ? " day" : " night")
        << (rec.origin == Origin::real ? " real" : " synthetic") << " boxes=" << rec.boxes.size();
    return out;
}

std::string DatasetManifest::resolve(const std::string& rel) const {
    if (rel.empty() || rel.front() == '/' || base_dir.empty()) return rel;
    return (fs::path(base_dir) / rel).string();
}

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

void clamp_box(BoundingBox& b, long width, long height, const std::string& where) {
    // adjust only what lies outside so in-bounds boxes stay bit-identical
    if (b.x < 0) {
        b.w += b.x;
        b.x = 0;
    }
    if (b.y < 0) {
        b.h += b.y;
        b.y = 0;
    }
    if (b.x + b.w > static_cast<float>(width)) b.w = static_cast<float>(width) - b.x;
    if (b.y + b.h > static_cast<float>(height)) b.h = static_cast<float>(height) - b.y;
    if (b.w <= 0 || b.h <= 0)
        throw ValidationError(where + ": box lies outside image bounds");
}

std::pair<long, long> image_dims(const std::string& path) {
    cv::Mat m = cv::imread(path, cv::IMREAD_UNCHANGED);
    if (m.empty()) throw ValidationError("cannot read image: " + path);
    return {m.rows, m.cols};
}

}  // namespace

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open manifest: " + path);

    DatasetManifest m;
    m.name = fs::path(path).stem().string();
    m.base_dir = fs::path(path).parent_path().string();

    std::string line;
    int lineno = 0;
    std::set<std::string> seen_ids;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line.front() == '#') {
            // optional metadata header: "# image_size WxH"
            std::istringstream hs(line.substr(1));
            std::string tag;
            hs >> tag;
            if (tag == "image_size") {
                char x;
                hs >> m.image_width >> x >> m.image_height;
            }
            continue;
        }
        auto where = [&] { return path + ":" + std::to_string(lineno); };
        auto fields = split(line, '\t');
        if (fields.size() < 6 || fields.size() > 7)
            throw ParseError(where() + ": expected 6 or 7 tab-separated fields, got " +
                             std::to_string(fields.size()));
        FrameRecord rec;
        rec.frame_id = fields[0];
        try {
            rec.frame_index = std::stol(fields[1]);
        } catch (const std::exception&) {
            throw ParseError(where() + ": bad frame_index '" + fields[1] + "'");
        }
        if (fields[2] == "day")
            rec.time_of_day = TimeOfDay::day;
        else if (fields[2] == "night")
            rec.time_of_day = TimeOfDay::night;
        else
            throw ParseError(where() + ": time_of_day must be day|night, got '" + fields[2] + "'");
        rec.visible_path = fields[3];
        rec.thermal_path = fields[4];
        if (!fields[5].empty()) {
            for (const auto& bs : split(fields[5], ';')) {
                auto parts = split(bs, ',');
                if (parts.size() != 5)
                    throw ParseError(where() + ": box must be x,y,w,h,occ, got '" + bs + "'");
                BoundingBox b;
                try {
                    b.x = std::stof(parts[0]);
                    b.y = std::stof(parts[1]);
                    b.w = std::stof(parts[2]);
                    b.h = std::stof(parts[3]);
                } catch (const std::exception&) {
                    throw ParseError(where() + ": non-numeric box field in '" + bs + "'");
                }
                if (parts[4] == "0")
                    b.occluded = false;
                else if (parts[4] == "1")
                    b.occluded = true;
                else
                    throw ParseError(where() + ": occlusion flag must be 0|1");
                if (b.w <= 0 || b.h <= 0)
                    throw ParseError(where() + ": box width/height must be positive");
                rec.boxes.push_back(b);
            }
        }
        if (fields.size() == 7) {
            if (fields[6] == "real")
                rec.origin = Origin::real;
            else if (fields[6] == "synthetic")
                rec.origin = Origin::synthetic;
            else
                throw ParseError(where() + ": origin must be real|synthetic");
        }
        if (!seen_ids.insert(rec.frame_id).second)
            throw ValidationError(where() + ": duplicate frame_id '" + rec.frame_id + "'");
        m.frames.push_back(std::move(rec));
    }

    // Determine image dimensions from the header or the first readable pair,
    // then validate every pair that is present on disk.
    for (auto& rec : m.frames) {
        auto vis = m.resolve(rec.visible_path);
        auto th = m.resolve(rec.thermal_path);
        if (!fs::exists(vis) || !fs::exists(th)) continue;
        auto [vh, vw] = image_dims(vis);
        auto [th_h, th_w] = image_dims(th);
        if (vh != th_h || vw != th_w)
            throw ValidationError(path + ": frame " + rec.frame_id +
                                  " visible/thermal dimensions differ");
        if (m.image_height == 0) {
            m.image_height = vh;
            m.image_width = vw;
        } else if (vh != m.image_height || vw != m.image_width) {
            throw ValidationError(path + ": frame " + rec.frame_id +
                                  " does not match manifest image size");
        }
    }

    if (m.image_height > 0) {
        for (auto& rec : m.frames)
            for (auto& b : rec.boxes)
                clamp_box(b, m.image_width, m.image_height, path + " frame " + rec.frame_id);
    }
    return m;
}

void write_manifest(const DatasetManifest& manifest, const std::string& path,
                    const std::string& meta) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write manifest: " + path);
    out.precision(9);  // lossless float round trip
    if (!meta.empty()) out << "# " << meta << "\n";
    if (manifest.image_width > 0)
        out << "# image_size " << manifest.image_width << "x" << manifest.image_height << "\n";
    for (const auto& rec : manifest.frames) {
        out << rec.frame_id << '\t' << rec.frame_index << '\t'
            << (rec.time_of_day == TimeOfDay::day ? "day" : "night") << '\t' << rec.visible_path
            << '\t' << rec.thermal_path << '\t';
        for (size_t i = 0; i < rec.boxes.size(); ++i) {
            const auto& b = rec.boxes[i];
            if (i) out << ';';
            out << b.x << ',' << b.y << ',' << b.w << ',' << b.h << ',' << (b.occluded ? 1 : 0);
        }
        out << '\t' << (rec.origin == Origin::real ? "real" : "synthetic") << '\n';
    }
}

DatasetManifest sample_frames(const DatasetManifest& manifest, long stride) {
    if (stride < 1) throw std::invalid_argument("sample_frames: stride must be >= 1");
    DatasetManifest out = manifest;
    out.frames.clear();
    for (const auto& rec : manifest.frames)
        if (rec.frame_index % stride == 0) out.frames.push_back(rec);
    return out;
}

DatasetManifest filter_annotations(const DatasetManifest& manifest, float min_height,
                                   bool drop_occluded) {
    if (min_height < 0) throw std::invalid_argument("filter_annotations: min_height must be >= 0");
    DatasetManifest out = manifest;
    for (auto& rec : out.frames) {
        std::erase_if(rec.boxes, [&](const BoundingBox& b) {
            return b.h < min_height || (drop_occluded && b.occluded);
        });
    }
    return out;
}

std::pair<DatasetManifest, DatasetManifest> split_validation(const DatasetManifest& manifest,
                                                             double fraction, long seed) {
    if (!(fraction > 0.0 && fraction < 1.0))
        throw std::invalid_argument("split_validation: fraction must be in (0,1)");
    const size_t n = manifest.frames.size();
    const size_t n_val = static_cast<size_t>(round_even(fraction * static_cast<double>(n)));

    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937 rng(static_cast<std::uint32_t>(seed));
    std::shuffle(idx.begin(), idx.end(), rng);

    std::vector<bool> in_val(n, false);
    for (size_t i = 0; i < n_val; ++i) in_val[idx[i]] = true;

    DatasetManifest train = manifest, val = manifest;
    train.frames.clear();
    val.frames.clear();
    for (size_t i = 0; i < n; ++i)
        (in_val[i] ? val : train).frames.push_back(manifest.frames[i]);
    return {train, val};
}

torch::Tensor load_image(const std::string& path, int channels) {
    cv::Mat m = cv::imread(path, cv::IMREAD_UNCHANGED);
    if (m.empty()) throw ValidationError("cannot read image: " + path);
    double maxval = m.depth() == CV_16U ? 65535.0 : 255.0;
    if (channels == 3) {
        if (m.channels() == 1) cv::cvtColor(m, m, cv::COLOR_GRAY2BGR);
        cv::cvtColor(m, m, cv::COLOR_BGR2RGB);
    } else if (channels == 1) {
        if (m.channels() == 3) cv::cvtColor(m, m, cv::COLOR_BGR2GRAY);
        else if (m.channels() == 4) cv::cvtColor(m, m, cv::COLOR_BGRA2GRAY);
    } else {
        throw std::invalid_argument("load_image: channels must be 1 or 3");
    }
    cv::Mat f;
    m.convertTo(f, CV_32F, 1.0 / maxval);
    auto t = torch::from_blob(f.data, {f.rows, f.cols, channels}, torch::kFloat32).clone();
    return t.permute({2, 0, 1}).contiguous();
}

void save_thermal_png16(const torch::Tensor& img, const std::string& path) {
    auto t = img.detach().to(torch::kFloat32).cpu();
    if (t.dim() == 3) {
        if (t.size(0) != 1) throw ShapeError("save_thermal_png16: expected 1 channel");
        t = t.squeeze(0);
    }
    t = t.clamp(0, 1).contiguous();
    cv::Mat f(static_cast<int>(t.size(0)), static_cast<int>(t.size(1)), CV_32F,
              t.data_ptr<float>());
    cv::Mat u16;
    f.convertTo(u16, CV_16U, 65535.0);
    if (!cv::imwrite(path, u16)) throw ValidationError("cannot write image: " + path);
}

void save_visible_png(const torch::Tensor& img, const std::string& path) {
    auto t = img.detach().to(torch::kFloat32).cpu();
    if (t.dim() != 3 || t.size(0) != 3) throw ShapeError("save_visible_png: expected [3,H,W]");
    t = t.clamp(0, 1).permute({1, 2, 0}).contiguous();
    cv::Mat f(static_cast<int>(t.size(0)), static_cast<int>(t.size(1)), CV_32FC3,
              t.data_ptr<float>());
    cv::Mat u8, bgr;
    f.convertTo(u8, CV_8UC3, 255.0);
    cv::cvtColor(u8, bgr, cv::COLOR_RGB2BGR);
    if (!cv::imwrite(path, bgr)) throw ValidationError("cannot write image: " + path);
}

std::pair<torch::Tensor, torch::Tensor> load_pair_batch(const DatasetManifest& manifest,
                                                        const std::vector<size_t>& indices) {
    std::vector<torch::Tensor> vis, th;
    vis.reserve(indices.size());
    th.reserve(indices.size());
    for (size_t i : indices) {
        const auto& rec = manifest.frames.at(i);
        vis.push_back(load_image(manifest.resolve(rec.visible_path), 3));
        th.push_back(load_image(manifest.resolve(rec.thermal_path), 1));
    }
    return {torch::stack(vis), torch::stack(th)};
}

}  // namespace thermogen
