#include "nflba/dataset.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "nflba/png_io.hpp"

namespace nflba {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_json_file(const fs::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << j.dump(2) << "\n";
    if (!out) throw IoError("write failed for " + path.string());
}

json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw SchemaError(path.string() + ": " + e.what());
    }
}

double require_number(const json& j, const char* key, const std::string& where) {
    if (!j.contains(key) || !j[key].is_number())
        throw SchemaError(where + ": missing numeric field '" + key + "'");
    return j[key].get<double>();
}

json pose_to_json(const Pose& pose) {
    Mat4 m = Mat4::Identity();
    m.topLeftCorner<3, 3>() = pose.rotation;
    m.topRightCorner<3, 1>() = pose.translation;
    json flat = json::array();
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) flat.push_back(m(r, c));
    return flat;
}

Pose pose_from_json(const json& flat, size_t index) {
    if (!flat.is_array() || flat.size() != 16)
        throw SchemaError("poses_gt.json entry " + std::to_string(index) +
                          " is not a 16-element array");
    Mat4 m;
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) m(r, c) = flat[static_cast<size_t>(r) * 4 + c].get<double>();
    Pose pose;
    pose.rotation = m.topLeftCorner<3, 3>();
    pose.translation = m.topRightCorner<3, 1>();
    return pose;
}

}  // namespace

std::string frame_file_name(size_t index) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04zu.png", index);
    return buf;
}

void write_dataset(const std::string& dir, const std::vector<FrameData>& frames,
                   const Intrinsics& intrinsics, const std::vector<Pose>& poses_gt,
                   const DatasetMeta& meta) {
    intrinsics.validate();
    if (frames.size() != poses_gt.size())
        throw InvalidArgumentError("write_dataset: frame/pose count mismatch");
    if (!(meta.depth_scale > 0.0))
        throw InvalidArgumentError("write_dataset: depth_scale must be positive");

    const fs::path root(dir);
    fs::create_directories(root / "images");
    const bool any_gt = std::any_of(frames.begin(), frames.end(),
                                    [](const FrameData& f) { return !f.depth_gt_mm.empty(); });
    const bool any_noisy = std::any_of(frames.begin(), frames.end(),
                                       [](const FrameData& f) { return !f.depth_noisy_mm.empty(); });
    if (any_gt) fs::create_directories(root / "depth_gt");
    if (any_noisy) fs::create_directories(root / "depth_noisy");

    write_json_file(root / "intrinsics.json", json{{"fx", intrinsics.fx},
                                                   {"fy", intrinsics.fy},
                                                   {"cx", intrinsics.cx},
                                                   {"cy", intrinsics.cy},
                                                   {"width", intrinsics.width},
                                                   {"height", intrinsics.height}});

    json poses = json::array();
    for (const Pose& p : poses_gt) poses.push_back(pose_to_json(p));
    write_json_file(root / "poses_gt.json", poses);

    write_json_file(root / "meta.json", json{{"seed", meta.seed},
                                             {"depth_scale", meta.depth_scale},
                                             {"generator_version", meta.generator_version},
                                             {"lighting", meta.lighting},
                                             {"noise_cfg", meta.noise_cfg}});

    for (size_t i = 0; i < frames.size(); ++i) {
        const std::string name = frame_file_name(i);
        write_png_rgb8((root / "images" / name).string(), frames[i].image_srgb);
        if (!frames[i].depth_gt_mm.empty())
            write_png_gray16((root / "depth_gt" / name).string(), frames[i].depth_gt_mm,
                             meta.depth_scale);
        if (!frames[i].depth_noisy_mm.empty())
            write_png_gray16((root / "depth_noisy" / name).string(), frames[i].depth_noisy_mm,
                             meta.depth_scale);
    }
}

Dataset read_dataset(const std::string& dir, DepthMode mode) {
    const fs::path root(dir);
    if (!fs::is_directory(root)) throw IoError("dataset directory not found: " + dir);

    Dataset d;
    const json jk = read_json_file(root / "intrinsics.json");
    d.intrinsics.fx = require_number(jk, "fx", "intrinsics.json");
    d.intrinsics.fy = require_number(jk, "fy", "intrinsics.json");
    d.intrinsics.cx = require_number(jk, "cx", "intrinsics.json");
    d.intrinsics.cy = require_number(jk, "cy", "intrinsics.json");
    d.intrinsics.width = static_cast<int>(require_number(jk, "width", "intrinsics.json"));
    d.intrinsics.height = static_cast<int>(require_number(jk, "height", "intrinsics.json"));
    d.intrinsics.validate();

    const json jp = read_json_file(root / "poses_gt.json");
    if (!jp.is_array()) throw SchemaError("poses_gt.json: expected an array of matrices");
    for (size_t i = 0; i < jp.size(); ++i) d.poses_gt.push_back(pose_from_json(jp[i], i));

    const json jm = read_json_file(root / "meta.json");
    d.meta.depth_scale = require_number(jm, "depth_scale", "meta.json");
    if (!(d.meta.depth_scale > 0.0)) throw SchemaError("meta.json: depth_scale must be positive");
    if (jm.contains("seed")) d.meta.seed = jm["seed"].get<std::uint64_t>();
    if (jm.contains("generator_version"))
        d.meta.generator_version = jm["generator_version"].get<std::string>();
    if (jm.contains("lighting")) d.meta.lighting = jm["lighting"];
    if (jm.contains("noise_cfg")) d.meta.noise_cfg = jm["noise_cfg"];

    const char* depth_dir = nullptr;
    if (mode == DepthMode::GroundTruth) depth_dir = "depth_gt";
    if (mode == DepthMode::Noisy) depth_dir = "depth_noisy";
    if (depth_dir && !fs::is_directory(root / depth_dir))
        throw SchemaError("dataset has no " + std::string(depth_dir) +
                          "/ directory but depth was requested");

    d.frames.resize(d.poses_gt.size());
    for (size_t i = 0; i < d.frames.size(); ++i) {
        const std::string name = frame_file_name(i);
        d.frames[i].image_srgb = read_png_rgb8((root / "images" / name).string());
        if (!d.frames[i].image_srgb.same_shape(d.intrinsics.width, d.intrinsics.height))
            throw SchemaError("image " + name + " does not match intrinsics resolution");
        if (mode == DepthMode::GroundTruth)
            d.frames[i].depth_gt_mm =
                read_png_gray16((root / "depth_gt" / name).string(), d.meta.depth_scale);
        if (mode == DepthMode::Noisy)
            d.frames[i].depth_noisy_mm =
                read_png_gray16((root / "depth_noisy" / name).string(), d.meta.depth_scale);
    }
    return d;
}

}  // namespace nflba
