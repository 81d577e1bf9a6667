#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "nflba/geometry.hpp"

namespace nflba {

// Which depth channel read_dataset must load. Monocular tolerates a missing
// depth directory; the other two raise SchemaError when theirs is absent.
enum class DepthMode { Monocular, GroundTruth, Noisy };

struct FrameData {
    Image3 image_srgb;       // gamma-encoded RGB in [0, 1]
    Image1 depth_gt_mm;      // empty when absent
    Image1 depth_noisy_mm;   // empty when absent
};

struct DatasetMeta {
    std::uint64_t seed = 0;
    double depth_scale = 0.01;  // millimeters per stored 16-bit unit
    std::string generator_version = "nflba-sim-1";
    nlohmann::json lighting = nlohmann::json::object();
    nlohmann::json noise_cfg = nlohmann::json::object();
};

struct Dataset {
    Intrinsics intrinsics;
    std::vector<Pose> poses_gt;  // world-to-camera
    std::vector<FrameData> frames;
    DatasetMeta meta;

    size_t size() const { return frames.size(); }
};

// Writes intrinsics.json, poses_gt.json (16-element row-major world-to-camera
// matrices), meta.json, images/NNNN.png, and depth_gt//depth_noisy/NNNN.png
// for frames that carry the respective channel.
void write_dataset(const std::string& dir, const std::vector<FrameData>& frames,
                   const Intrinsics& intrinsics, const std::vector<Pose>& poses_gt,
                   const DatasetMeta& meta);

// Loads a dataset directory. Poses and intrinsics round-trip bit-exactly;
// depth round-trips to within depth_scale / 2 per pixel.
Dataset read_dataset(const std::string& dir, DepthMode mode);

std::string frame_file_name(size_t index);

}  // namespace nflba
