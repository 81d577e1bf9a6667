#pragma once

#include <string>
#include <vector>

#include "nflba/dataset.hpp"
#include "nflba/evalkit.hpp"
#include "nflba/losses.hpp"

namespace nflba {

enum class DepthProvenance { None, GroundTruth, Noisy };

struct Frame {
    long index = 0;
    Image3 image_srgb;  // values in [0, 1]
    Image1 depth;       // mm, >= 0; empty when provenance == None
    DepthProvenance provenance = DepthProvenance::None;
    double timestamp = 0.0;
};

struct SlamConfig {
    LossWeights weights;
    double gamma = 2.2;
    double tau = 0.95;            // specular mask threshold
    double crop_fraction = 0.75;  // near-field crop window
    double near_plane_mm = 1.0;
    // Pixels beyond this range are dropped from the masks: the co-located
    // light cannot expose them, so they contribute depth residuals without
    // usable texture.
    double far_plane_mm = 100.0;
    // Tracking masks tighten the far plane by this margin: targets near the
    // mapping far plane sit in territory no keyframe has supervised yet, and
    // their residuals would drag the pose estimate backward.
    double tracking_far_margin_mm = 25.0;
    // Depth targets at grazing incidence move several mm per pixel; the
    // rendered depth there mixes splats across that whole range, so the
    // residual is dominated by blending bias rather than pose error. Pixels
    // whose target gradient exceeds this are dropped from valid_depth
    // (0 disables the filter).
    double max_depth_grad_mm_px = 0.0;
    double beta = 0.0;

    int tracking_iters = 50;
    // Optionally restrict tracking to pixels the map already covers. The gated
    // set depends on the pose under evaluation, so the optimizer can game it
    // by pushing poor pixels out of coverage; the far-plane margin makes it
    // redundant in the default setup.
    bool tracking_coverage_gate = false;
    int mapping_iters = 60;
    int window = 10;  // keyframes per map update
    int keyframe_every = 5;
    double keyframe_dist_mm = 8.0;
    bool mapping_refines_poses = false;

    int densify_stride = 4;
    double init_scale_factor = 0.05;  // isotropic stddev = depth * factor
    double init_opacity = 0.5;
    double prune_opacity = 0.05;
    int prune_every = 5;  // keyframes between prune passes

    // Per-group step sizes; the mean step additionally scales with the
    // current scene extent.
    double lr_means_factor = 1.6e-4;
    double lr_log_scales = 5e-3;
    double lr_quaternions = 1e-3;
    double lr_colors = 2.5e-3;
    double lr_opacities = 5e-2;
    double lr_pose_trans_mm = 0.6;
    double lr_pose_rot_rad = 2e-3;

    SplatOptions splat;
    std::uint64_t seed = 0;
};

// Raised when the tracking objective turns non-finite or its inputs
// degenerate; carries the best pose seen so far.
struct TrackingFailure : Error {
    TrackingFailure(const std::string& msg, const Pose& best) : Error(msg), best_pose(best) {}
    Pose best_pose;
};

// Per-keyframe data retained for map updates.
struct Keyframe {
    long frame_index = 0;
    PreparedFrame prepared;
    MaskSet masks;
};

struct SlamState {
    GaussianScene scene;
    Trajectory trajectory;  // strictly increasing frame indices
    std::vector<long> keyframes;
    std::vector<Keyframe> keyframe_data;
    std::vector<LossReport> tracking_logs;
    std::vector<LossReport> mapping_logs;
    Intrinsics intrinsics;
    long densify_calls = 0;
    bool aborted = false;
};

// First-order adaptive optimizer (decaying first/second moments with bias
// correction) over a flat parameter vector.
class Adam {
public:
    Adam(size_t size, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    void begin_step();
    // Bias-corrected update direction for parameter i given its gradient.
    double direction(size_t i, double grad);
    void resize(size_t size);  // preserves existing moments, zeros new ones
    size_t size() const { return m_.size(); }

private:
    std::vector<double> m_, v_;
    double beta1_, beta2_, eps_;
    long t_ = 0;
};

// Prepares a frame for optimization: linearized image plus the mask stack,
// with the far-plane and depth-gradient filters from the config applied.
Keyframe make_keyframe(const Frame& frame, const SlamConfig& cfg);

// Pose optimization of one frame against the current map. Initializes with a
// constant-velocity extrapolation of the trajectory, descends the tracking
// objective on the se(3) perturbation, and returns the pose with the lowest
// recorded objective.
Pose track_frame(SlamState& state, const Frame& frame, const SlamConfig& cfg);

// Index rule OR travelled distance since the last keyframe.
bool select_keyframe(const SlamState& state, const Frame& frame, const Pose& pose,
                     const SlamConfig& cfg);

// Optimizes Gaussian parameters (optionally window poses) for
// cfg.mapping_iters steps, cycling the last cfg.window keyframes round-robin.
void map_update(SlamState& state, const SlamConfig& cfg);

// Inserts Gaussians on a stride grid where coverage is poor and valid depth
// exists; prunes low-opacity Gaussians every cfg.prune_every keyframes. An
// empty render (before the first map exists) counts as zero coverage.
void densify_and_prune(SlamState& state, const Frame& frame, const Pose& pose,
                       const RenderOutput& render, const SlamConfig& cfg);

// Full alternation over a dataset. Frame 0 fixes the world frame and seeds
// the map; later frames run track / keyframe / map update. Artifacts
// (trajectory.csv, run.json, pointcloud.ply, renders/) are written to
// out_dir when it is non-empty. A tracking failure writes partial artifacts
// flagged as aborted, then rethrows.
SlamState run_slam(const Dataset& dataset, const SlamConfig& cfg, const std::string& out_dir);

// Builds Frame objects from whichever depth channel the dataset carries.
std::vector<Frame> frames_of_dataset(const Dataset& dataset);

// Renders the final map along the estimated trajectory and assembles the
// metric report against ground truth.
MetricsReport evaluate_run(const Dataset& dataset, const SlamState& state, const SlamConfig& cfg,
                           bool sim3 = false);

void write_trajectory_csv(const std::string& path, const Trajectory& trajectory);
Trajectory read_trajectory_csv(const std::string& path);

}  // namespace nflba
