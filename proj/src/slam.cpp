#include "nflba/slam.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "nflba/png_io.hpp"

namespace nflba {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

Adam::Adam(size_t size, double beta1, double beta2, double eps)
    : m_(size, 0.0), v_(size, 0.0), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::begin_step() { ++t_; }

double Adam::direction(size_t i, double grad) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad * grad;
    const double m_hat = m_[i] / (1.0 - std::pow(beta1_, t_));
    const double v_hat = v_[i] / (1.0 - std::pow(beta2_, t_));
    return m_hat / (std::sqrt(v_hat) + eps_);
}

void Adam::resize(size_t size) {
    m_.resize(size, 0.0);
    v_.resize(size, 0.0);
}

// ---------------------------------------------------------------------------
// Frame preparation
// ---------------------------------------------------------------------------

Keyframe make_keyframe(const Frame& frame, const SlamConfig& cfg) {
    Keyframe kf;
    kf.frame_index = frame.index;
    kf.prepared = prepare_frame(frame.image_srgb, frame.depth, cfg.gamma);
    kf.masks = build_mask_set(kf.prepared.image_linear, frame.depth, cfg.tau, cfg.crop_fraction,
                              cfg.near_plane_mm);
    if (!frame.depth.empty() && cfg.far_plane_mm > 0.0) {
        for (int y = 0; y < frame.depth.height(); ++y)
            for (int x = 0; x < frame.depth.width(); ++x)
                if (frame.depth(x, y) > cfg.far_plane_mm) kf.masks.valid_depth(x, y) = 0;
        kf.masks.rebuild_combined();
    }
    if (!frame.depth.empty() && cfg.max_depth_grad_mm_px > 0.0) {
        const Image1& d = frame.depth;
        const int w = d.width(), h = d.height();
        auto grad = [&](int x, int y) {
            const int xl = std::max(x - 1, 0), xr = std::min(x + 1, w - 1);
            const int yl = std::max(y - 1, 0), yr = std::min(y + 1, h - 1);
            const double gx = (d(xr, y) - d(xl, y)) / (xr - xl);
            const double gy = (d(x, yr) - d(x, yl)) / (yr - yl);
            return std::sqrt(gx * gx + gy * gy);
        };
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                if (grad(x, y) > cfg.max_depth_grad_mm_px) kf.masks.valid_depth(x, y) = 0;
        kf.masks.rebuild_combined();
    }
    return kf;
}

namespace {

ObjectiveContext objective_context(const SlamState& state, const SlamConfig& cfg) {
    ObjectiveContext ctx;
    ctx.intrinsics = state.intrinsics;
    ctx.splat = cfg.splat;
    ctx.beta = cfg.beta;
    return ctx;
}

size_t trajectory_position(const Trajectory& t, long frame_index) {
    for (size_t i = t.frame_indices.size(); i-- > 0;)
        if (t.frame_indices[i] == frame_index) return i;
    throw InvalidArgumentError("frame " + std::to_string(frame_index) + " not in trajectory");
}

// Applies one optimizer step to every Gaussian parameter. Layout per
// Gaussian: mean(3), log-scale(3), quaternion(4), color(3), opacity(1).
constexpr size_t kParamsPerGaussian = 14;

void apply_gaussian_step(GaussianScene& scene, const GradientSet& grads, Adam& adam,
                         const SlamConfig& cfg, double lr_means) {
    for (size_t gi = 0; gi < scene.size(); ++gi) {
        Gaussian3D& g = scene.gaussians[gi];
        const GaussianGrad& d = grads.gaussians[gi];
        const size_t base = gi * kParamsPerGaussian;

        for (int k = 0; k < 3; ++k)
            g.mean[k] -= lr_means * adam.direction(base + k, d.mean[k]);
        for (int k = 0; k < 3; ++k) {
            const double step = cfg.lr_log_scales * adam.direction(base + 3 + k, d.log_scale[k]);
            g.scale[k] = std::clamp(g.scale[k] * std::exp(-step), 1e-3, 500.0);
        }
        Vec4 q(g.rotation.w(), g.rotation.x(), g.rotation.y(), g.rotation.z());
        for (int k = 0; k < 4; ++k)
            q[k] -= cfg.lr_quaternions * adam.direction(base + 6 + k, d.quaternion[k]);
        if (q.norm() > 1e-12) {
            q.normalize();
            g.rotation = Eigen::Quaterniond(q[0], q[1], q[2], q[3]);
        }
        for (int k = 0; k < 3; ++k)
            g.color[k] = clamp01(g.color[k] - cfg.lr_colors * adam.direction(base + 10 + k,
                                                                             d.color[k]));
        g.opacity = std::clamp(
            g.opacity - cfg.lr_opacities * adam.direction(base + 13, d.opacity), 1e-3, 0.999);
    }
}

// Freshly densified Gaussians are isotropic, so their normal direction is
// undefined and the splatted normal field can be identically zero. The
// shading model then carries no information and its natural limit is a zero
// term; the evaluation falls back to the remaining terms instead of aborting.
ObjectiveResult evaluate_objective(const PreparedFrame& prepared, const GaussianScene& scene,
                                   const Pose& pose, const MaskSet& masks,
                                   const LossWeights& weights, Phase phase,
                                   const ObjectiveContext& ctx) {
    try {
        return total_objective(prepared, scene, pose, masks, weights, phase, ctx);
    } catch (const DegenerateModelError&) {
        LossWeights w = weights;
        if (phase == Phase::Mapping)
            w.lambda_nfl_mapping = 0.0;
        else
            w.lambda_nfl_tracking = 0.0;
        return total_objective(prepared, scene, pose, masks, w, phase, ctx);
    }
}

Pose apply_pose_step(const Pose& pose, const Vec6& grad, Adam& adam, const SlamConfig& cfg) {
    // xi = (translation mm, rotation rad); the two blocks live on different
    // scales so each gets its own step size.
    Vec6 step;
    for (int k = 0; k < 3; ++k) step[k] = -cfg.lr_pose_trans_mm * adam.direction(k, grad[k]);
    for (int k = 3; k < 6; ++k) step[k] = -cfg.lr_pose_rot_rad * adam.direction(k, grad[k]);
    return se3_exp(step) * pose;
}

}  // namespace

// ---------------------------------------------------------------------------
// Tracking
// ---------------------------------------------------------------------------

Pose track_frame(SlamState& state, const Frame& frame, const SlamConfig& cfg) {
    if (state.scene.empty())
        throw InvalidArgumentError("track_frame: the map has not been initialized");

    // Constant-velocity initialization from the last two poses.
    Pose pose;
    const size_t n = state.trajectory.size();
    if (n >= 2) {
        const Pose& last = state.trajectory.poses[n - 1];
        const Pose& prev = state.trajectory.poses[n - 2];
        pose = (last * prev.inverse()) * last;
    } else if (n == 1) {
        pose = state.trajectory.poses[n - 1];
    }

    Keyframe kf = make_keyframe(frame, cfg);
    if (!frame.depth.empty() && cfg.far_plane_mm > 0.0 && cfg.tracking_far_margin_mm > 0.0) {
        const double limit = cfg.far_plane_mm - cfg.tracking_far_margin_mm;
        for (int y = 0; y < frame.depth.height(); ++y)
            for (int x = 0; x < frame.depth.width(); ++x)
                if (frame.depth(x, y) > limit) kf.masks.valid_depth(x, y) = 0;
        kf.masks.rebuild_combined();
    }
    ObjectiveContext ctx = objective_context(state, cfg);
    ctx.coverage_gate = cfg.tracking_coverage_gate;

    Adam adam(6);
    Pose best_pose = pose;
    double best_total = std::numeric_limits<double>::infinity();
    LossReport best_report;

    for (int it = 0; it < cfg.tracking_iters; ++it) {
        ObjectiveResult res;
        try {
            res = evaluate_objective(kf.prepared, state.scene, pose, kf.masks, cfg.weights,
                                     Phase::Tracking, ctx);
        } catch (const DegenerateMaskError& e) {
            throw TrackingFailure(std::string("tracking degenerated: ") + e.what(), best_pose);
        }
        if (!std::isfinite(res.report.total))
            throw TrackingFailure("tracking objective is non-finite", best_pose);

        if (res.report.total < best_total) {
            best_total = res.report.total;
            best_pose = pose;
            best_report = res.report;
        }
        adam.begin_step();
        pose = apply_pose_step(pose, res.grads.pose, adam, cfg);
    }

    state.tracking_logs.push_back(best_report);
    return best_pose;
}

// ---------------------------------------------------------------------------
// Keyframing and map maintenance
// ---------------------------------------------------------------------------

bool select_keyframe(const SlamState& state, const Frame& frame, const Pose& pose,
                     const SlamConfig& cfg) {
    if (state.keyframes.empty()) return true;
    if (cfg.keyframe_every > 0 && frame.index % cfg.keyframe_every == 0) return true;

    const size_t last_pos = trajectory_position(state.trajectory, state.keyframes.back());
    const double dist =
        (pose.camera_center() - state.trajectory.poses[last_pos].camera_center()).norm();
    return dist > cfg.keyframe_dist_mm;
}

void map_update(SlamState& state, const SlamConfig& cfg) {
    if (state.keyframe_data.empty()) throw InvalidArgumentError("map_update: no keyframes");

    const size_t wsize = std::min<size_t>(cfg.window, state.keyframe_data.size());
    const size_t wstart = state.keyframe_data.size() - wsize;
    const ObjectiveContext ctx = objective_context(state, cfg);
    const double lr_means = cfg.lr_means_factor * std::max(state.scene.extent(), 1.0);

    Adam gauss_adam(state.scene.size() * kParamsPerGaussian);
    std::vector<Adam> pose_adams(wsize, Adam(6));

    for (int it = 0; it < cfg.mapping_iters; ++it) {
        const size_t slot = wstart + static_cast<size_t>(it) % wsize;
        const Keyframe& kf = state.keyframe_data[slot];
        const size_t pos = trajectory_position(state.trajectory, kf.frame_index);
        const Pose pose = state.trajectory.poses[pos];

        ObjectiveResult res;
        try {
            res = evaluate_objective(kf.prepared, state.scene, pose, kf.masks, cfg.weights,
                                     Phase::Mapping, ctx);
        } catch (const DegenerateMaskError&) {
            continue;  // an all-masked keyframe cannot drive this step
        }
        if (!std::isfinite(res.report.total)) continue;

        gauss_adam.begin_step();
        apply_gaussian_step(state.scene, res.grads, gauss_adam, cfg, lr_means);
        // Frame 0 anchors the world frame and is never re-estimated.
        if (cfg.mapping_refines_poses && kf.frame_index != 0) {
            pose_adams[slot - wstart].begin_step();
            state.trajectory.poses[pos] =
                apply_pose_step(pose, res.grads.pose, pose_adams[slot - wstart], cfg);
        }
        state.mapping_logs.push_back(res.report);
    }
}

void densify_and_prune(SlamState& state, const Frame& frame, const Pose& pose,
                       const RenderOutput& render, const SlamConfig& cfg) {
    const Image1* depth_src = nullptr;
    if (!frame.depth.empty())
        depth_src = &frame.depth;
    else if (!render.depth.empty())
        depth_src = &render.depth;  // monocular mode densifies from the map's own depth
    if (!depth_src)
        throw InvalidArgumentError("densify_and_prune: no depth source available");

    const Intrinsics& k = state.intrinsics;
    const Pose cam_to_world = pose.inverse();
    bool changed = false;

    for (int y = 0; y < k.height; y += cfg.densify_stride) {
        for (int x = 0; x < k.width; x += cfg.densify_stride) {
            const bool covered =
                !render.accum_alpha.empty() && render.accum_alpha(x, y) >= 0.5;
            if (covered) continue;
            const double d = (*depth_src)(x, y);
            if (!(d > cfg.near_plane_mm)) continue;
            // Geometry past the far plane would never get supervised (those
            // pixels are masked out of every loss), so inserting it would only
            // leave stale primitives polluting novel views.
            if (cfg.far_plane_mm > 0.0 && d > cfg.far_plane_mm) continue;

            Gaussian3D g;
            g.mean = cam_to_world.transform(
                Vec3(d * (x - k.cx) / k.fx, d * (y - k.cy) / k.fy, d));
            g.scale = Vec3::Constant(std::max(d * cfg.init_scale_factor, 1e-3));
            const Vec3& srgb = frame.image_srgb(x, y);
            for (int c = 0; c < 3; ++c) g.color[c] = std::pow(clamp01(srgb[c]), cfg.gamma);
            g.opacity = cfg.init_opacity;
            state.scene.gaussians.push_back(g);
            changed = true;
        }
    }

    ++state.densify_calls;
    if (cfg.prune_every > 0 && state.densify_calls % cfg.prune_every == 0) {
        auto& gs = state.scene.gaussians;
        const size_t before = gs.size();
        gs.erase(std::remove_if(gs.begin(), gs.end(),
                                [&](const Gaussian3D& g) { return g.opacity < cfg.prune_opacity; }),
                 gs.end());
        changed |= gs.size() != before;
    }
    if (changed) ++state.scene.generation;
}

// ---------------------------------------------------------------------------
// Trajectory file
// ---------------------------------------------------------------------------

void write_trajectory_csv(const std::string& path, const Trajectory& trajectory) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "# frame_index,tx,ty,tz,qw,qx,qy,qz (world-to-camera)\n";
    char line[256];
    for (size_t i = 0; i < trajectory.size(); ++i) {
        const Pose& p = trajectory.poses[i];
        Eigen::Quaterniond q(p.rotation);
        if (q.w() < 0.0) q.coeffs() *= -1.0;
        std::snprintf(line, sizeof(line),
                      "%ld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                      trajectory.frame_indices[i], p.translation.x(), p.translation.y(),
                      p.translation.z(), q.w(), q.x(), q.y(), q.z());
        out << line;
    }
    if (!out) throw IoError("write failed for " + path);
}

Trajectory read_trajectory_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    Trajectory t;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        long index;
        double tx, ty, tz, qw, qx, qy, qz;
        if (std::sscanf(line.c_str(), "%ld,%lf,%lf,%lf,%lf,%lf,%lf,%lf", &index, &tx, &ty, &tz,
                        &qw, &qx, &qy, &qz) != 8)
            throw SchemaError("trajectory.csv: malformed line: " + line);
        Pose p;
        p.rotation = Eigen::Quaterniond(qw, qx, qy, qz).normalized().toRotationMatrix();
        p.translation = Vec3(tx, ty, tz);
        t.push(index, p);
    }
    return t;
}

// ---------------------------------------------------------------------------
// Full pipeline
// ---------------------------------------------------------------------------

std::vector<Frame> frames_of_dataset(const Dataset& dataset) {
    std::vector<Frame> frames(dataset.size());
    for (size_t i = 0; i < dataset.size(); ++i) {
        frames[i].index = static_cast<long>(i);
        frames[i].image_srgb = dataset.frames[i].image_srgb;
        frames[i].timestamp = static_cast<double>(i) / 30.0;
        if (!dataset.frames[i].depth_gt_mm.empty()) {
            frames[i].depth = dataset.frames[i].depth_gt_mm;
            frames[i].provenance = DepthProvenance::GroundTruth;
        } else if (!dataset.frames[i].depth_noisy_mm.empty()) {
            frames[i].depth = dataset.frames[i].depth_noisy_mm;
            frames[i].provenance = DepthProvenance::Noisy;
        }
    }
    return frames;
}

namespace {

void write_run_artifacts(const SlamState& state, const SlamConfig& cfg,
                         const std::string& out_dir) {
    if (out_dir.empty()) return;
    const fs::path root(out_dir);
    fs::create_directories(root / "renders");

    write_trajectory_csv((root / "trajectory.csv").string(), state.trajectory);
    if (!state.scene.empty()) export_ply((root / "pointcloud.ply").string(), state.scene, cfg.gamma);

    SplatOptions opts = cfg.splat;
    opts.normalized_depth = true;
    for (const long kf_index : state.keyframes) {
        const size_t pos = trajectory_position(state.trajectory, kf_index);
        if (state.scene.empty()) break;
        const RenderOutput render =
            nflba::render(state.scene, state.trajectory.poses[pos], state.intrinsics, opts);
        const Image3 srgb = linear_to_srgb(render.color, cfg.gamma);
        write_png_rgb8((root / "renders" / frame_file_name(static_cast<size_t>(kf_index))).string(),
                       srgb);
    }

    json run = {{"frames_tracked", state.trajectory.size()},
                {"keyframes", state.keyframes},
                {"gaussians", state.scene.size()},
                {"aborted", state.aborted},
                {"seed", cfg.seed},
                {"tracking_evaluations", state.tracking_logs.size()},
                {"mapping_evaluations", state.mapping_logs.size()}};
    if (!state.tracking_logs.empty()) {
        const LossReport& last = state.tracking_logs.back();
        run["last_tracking"] = {{"total", last.total},
                                {"rgb", last.rgb_term},
                                {"depth", last.depth_term},
                                {"nfl", last.nfl_term}};
    }
    std::ofstream out(root / "run.json");
    if (!out) throw IoError("cannot open run.json for writing");
    out << run.dump(2) << "\n";
}

}  // namespace

SlamState run_slam(const Dataset& dataset, const SlamConfig& cfg, const std::string& out_dir) {
    if (dataset.size() < 2) throw InvalidArgumentError("run_slam: need at least 2 frames");
    cfg.weights.validate();
    dataset.intrinsics.validate();

    const std::vector<Frame> frames = frames_of_dataset(dataset);
    SlamState state;
    state.intrinsics = dataset.intrinsics;

    // Frame 0 pins the world frame and seeds the map.
    state.trajectory.push(0, Pose{});
    densify_and_prune(state, frames[0], Pose{}, RenderOutput{}, cfg);
    state.keyframes.push_back(0);
    state.keyframe_data.push_back(make_keyframe(frames[0], cfg));
    map_update(state, cfg);

    SplatOptions render_opts = cfg.splat;
    render_opts.normalized_depth = true;

    try {
        for (size_t i = 1; i < frames.size(); ++i) {
            const Pose pose = track_frame(state, frames[i], cfg);
            state.trajectory.push(frames[i].index, pose);

            if (!select_keyframe(state, frames[i], pose, cfg)) continue;
            const RenderOutput render =
                nflba::render(state.scene, pose, state.intrinsics, render_opts);
            densify_and_prune(state, frames[i], pose, render, cfg);
            state.keyframes.push_back(frames[i].index);
            state.keyframe_data.push_back(make_keyframe(frames[i], cfg));
            map_update(state, cfg);
        }
    } catch (const TrackingFailure&) {
        state.aborted = true;
        write_run_artifacts(state, cfg, out_dir);
        throw;
    }

    write_run_artifacts(state, cfg, out_dir);
    return state;
}

MetricsReport evaluate_run(const Dataset& dataset, const SlamState& state, const SlamConfig& cfg,
                           bool sim3) {
    if (state.trajectory.size() == 0) throw InvalidArgumentError("evaluate_run: empty trajectory");

    Trajectory gt;
    for (size_t i = 0; i < state.trajectory.size(); ++i) {
        const long idx = state.trajectory.frame_indices[i];
        if (idx < 0 || static_cast<size_t>(idx) >= dataset.size())
            throw InvalidArgumentError("evaluate_run: trajectory index outside the dataset");
        gt.push(idx, dataset.poses_gt[static_cast<size_t>(idx)]);
    }

    MetricsReport report;
    const AteResult a = ate(state.trajectory, gt, true, sim3);
    report.ate_t_mm = a.ate_t_mm;
    report.ate_r_deg = a.ate_r_deg;

    SplatOptions opts = cfg.splat;
    opts.normalized_depth = true;
    double psnr_sum = 0, ssim_sum = 0, depth_sum = 0;
    long depth_frames = 0;
    for (size_t i = 0; i < state.trajectory.size(); ++i) {
        const long idx = state.trajectory.frame_indices[i];
        const RenderOutput render =
            nflba::render(state.scene, state.trajectory.poses[i], state.intrinsics, opts);
        const Image3 srgb = linear_to_srgb(render.color, cfg.gamma);
        const ImageMetrics m = image_metrics(srgb, dataset.frames[static_cast<size_t>(idx)].image_srgb);

        FrameMetrics fm;
        fm.frame_index = idx;
        fm.psnr_db = m.psnr_db;
        fm.ssim = m.ssim;
        fm.rmse = m.rmse;
        const Image1& gt_depth = dataset.frames[static_cast<size_t>(idx)].depth_gt_mm;
        if (!gt_depth.empty()) {
            fm.depth_rmse_mm = depth_rmse_mm(render.depth, gt_depth);
            depth_sum += fm.depth_rmse_mm;
            ++depth_frames;
        }
        report.per_frame.push_back(fm);
        psnr_sum += m.psnr_db;
        ssim_sum += m.ssim;
    }
    const double nf = static_cast<double>(report.per_frame.size());
    report.psnr_db_mean = psnr_sum / nf;
    report.ssim_mean = ssim_sum / nf;
    report.depth_rmse_mm = depth_frames > 0 ? depth_sum / depth_frames : 0.0;

    // Surface cloud from ground-truth depth, compared against the estimated
    // Gaussian centers mapped into the ground-truth world frame.
    const AlignResult align = align_rigid(state.trajectory, gt, sim3);
    std::vector<Vec3> gt_cloud;
    for (size_t i = 0; i < state.trajectory.size(); i += 5) {
        const long idx = state.trajectory.frame_indices[i];
        const Image1& depth = dataset.frames[static_cast<size_t>(idx)].depth_gt_mm;
        if (depth.empty()) continue;
        const Pose cam_to_world = dataset.poses_gt[static_cast<size_t>(idx)].inverse();
        for (int y = 0; y < depth.height(); y += 2) {
            for (int x = 0; x < depth.width(); x += 2) {
                const double d = depth(x, y);
                if (d <= 0.0) continue;
                gt_cloud.push_back(cam_to_world.transform(
                    Vec3(d * (x - state.intrinsics.cx) / state.intrinsics.fx,
                         d * (y - state.intrinsics.cy) / state.intrinsics.fy, d)));
            }
        }
    }
    if (!gt_cloud.empty() && !state.scene.empty()) {
        std::vector<Vec3> est_cloud;
        est_cloud.reserve(state.scene.size());
        for (const Gaussian3D& g : state.scene.gaussians) est_cloud.push_back(align.apply(g.mean));
        report.chamfer_mm = chamfer_gt_to_est(gt_cloud, est_cloud);
    }
    return report;
}

}  // namespace nflba
