#pragma once

#include <string>
#include <vector>

#include "nflba/geometry.hpp"

namespace nflba {

// Estimated or ground-truth camera path, indexed by frame. Indices must be
// strictly increasing.
struct Trajectory {
    std::vector<long> frame_indices;
    std::vector<Pose> poses;  // world-to-camera

    void push(long frame_index, const Pose& pose);
    size_t size() const { return poses.size(); }
};

// Rigid (optionally similarity) map x -> scale * rotation * x + translation.
struct AlignResult {
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();
    double scale = 1.0;

    Vec3 apply(const Vec3& x) const { return scale * (rotation * x) + translation; }
};

// Least-squares alignment of estimated camera centers onto ground truth
// (centroid + SVD of the cross-covariance). Scale stays 1 unless with_scale.
// Throws RankDeficiencyError when the centers are collinear and the rotation
// about the line is unobservable.
AlignResult align_rigid(const Trajectory& est, const Trajectory& gt, bool with_scale = false);

struct AteResult {
    double ate_t_mm = 0.0;
    double ate_r_deg = 0.0;
};

// RMSE of camera-center distances and of geodesic rotation angles, after
// optional alignment of the estimate onto the ground truth. Alignment is
// rigid unless with_scale asks for a similarity fit.
AteResult ate(const Trajectory& est, const Trajectory& gt, bool aligned, bool with_scale = false);

struct ImageMetrics {
    double psnr_db = 0.0;
    double ssim = 0.0;
    double rmse = 0.0;
};

// PSNR = 10 log10(1 / MSE) capped at 100 dB, single-scale SSIM with an 11x11
// Gaussian window (sigma 1.5, k1 = 0.01, k2 = 0.03) averaged over channels,
// and root mean squared error. Inputs are gamma-encoded images in [0, 1].
ImageMetrics image_metrics(const Image3& rendered, const Image3& target);

// RMSE in mm over pixels where the target depth is valid (> 0).
double depth_rmse_mm(const Image1& rendered, const Image1& target);

// Mean over ground-truth points of the distance to the nearest estimated
// point (one-directional). Exact nearest neighbors via a uniform grid.
double chamfer_gt_to_est(const std::vector<Vec3>& gt_cloud, const std::vector<Vec3>& est_cloud);

// Binary little-endian PLY with float32 positions (mm) and uint8 colors from
// gamma-encoding the linear input colors. Refuses empty input before touching
// the file.
void export_ply(const std::string& path, const std::vector<Vec3>& points,
                const std::vector<Vec3>& colors_linear, double gamma = 2.2);
void export_ply(const std::string& path, const GaussianScene& scene, double gamma = 2.2);

struct PlyCloud {
    std::vector<Vec3> points;
    std::vector<Vec3> colors;  // as stored, in [0, 1] gamma-encoded
};

PlyCloud load_ply(const std::string& path);

struct FrameMetrics {
    long frame_index = 0;
    double psnr_db = 0.0;
    double ssim = 0.0;
    double rmse = 0.0;
    double depth_rmse_mm = 0.0;
};

struct MetricsReport {
    double ate_t_mm = 0.0;
    double ate_r_deg = 0.0;
    double psnr_db_mean = 0.0;
    double ssim_mean = 0.0;
    double depth_rmse_mm = 0.0;
    double chamfer_mm = 0.0;
    std::vector<FrameMetrics> per_frame;
    std::string config_digest;
};

void write_metrics_json(const std::string& path, const MetricsReport& report);
MetricsReport read_metrics_json(const std::string& path);

}  // namespace nflba
