#include "nflba/simulator.hpp"

#include <cmath>

namespace nflba {

namespace {

constexpr double kMarchLipschitz = 1.05;  // safe step divisor, matches the surface bound
constexpr double kHitTolMm = 0.25e-3;     // accept a hit below this SDF magnitude
constexpr int kMaxSteps = 512;
constexpr double kMaxRangeMm = 2000.0;    // beyond the light's reach; treated as a miss
constexpr double kNormalStepMm = 1e-3;

}  // namespace

// ---------------------------------------------------------------------------
// Tube surface
// ---------------------------------------------------------------------------

TubeSurface::TubeSurface(const TubeCfg& cfg, std::uint64_t seed) : cfg_(cfg) {
    if (!(cfg.radius0 > 0.0) || !(cfg.ridge_amplitude >= 0.0) ||
        !(cfg.ridge_amplitude < cfg.radius0))
        throw InvalidArgumentError("tube surface: need radius0 > ridge_amplitude >= 0");
    if (!(cfg.ridge_wavelength > 0.0) || !(cfg.curve_wavelength > 0.0) || cfg.ridge_lobes < 0)
        throw InvalidArgumentError("tube surface: wavelengths must be positive");
    if (!(cfg.mottle_amplitude >= 0.0) || !(cfg.mottle_amplitude <= 0.75) ||
        !(cfg.mottle_wavelength > 0.0) || cfg.mottle_lobes < 0)
        throw InvalidArgumentError("tube surface: mottle amplitude in [0, 0.75], wavelength > 0");

    Rng rng(seed);
    phase_curve_ = rng.uniform(0.0, 2.0 * M_PI);
    phase_ridge_ = rng.uniform(0.0, 2.0 * M_PI);
    phase_mottle_g_ = rng.uniform(0.0, 2.0 * M_PI);
    phase_mottle_b_ = rng.uniform(0.0, 2.0 * M_PI);
}

Vec3 TubeSurface::centerline(double z) const {
    // sin/cos quadrature keeps |dc/dz| constant, which keeps the SDF Lipschitz
    // bound tight.
    const double k = 2.0 * M_PI / cfg_.curve_wavelength;
    return Vec3(cfg_.curve_amplitude * std::sin(k * z + phase_curve_),
                cfg_.curve_amplitude * std::cos(k * z + phase_curve_), z);
}

Vec3 TubeSurface::centerline_tangent(double z) const {
    const double k = 2.0 * M_PI / cfg_.curve_wavelength;
    return Vec3(cfg_.curve_amplitude * k * std::cos(k * z + phase_curve_),
                -cfg_.curve_amplitude * k * std::sin(k * z + phase_curve_), 1.0)
        .normalized();
}

double TubeSurface::sdf(const Vec3& p) const {
    const Vec3 c = centerline(p.z());
    const double lx = p.x() - c.x();
    const double ly = p.y() - c.y();
    const double rho = std::sqrt(lx * lx + ly * ly);

    // The angular ridge term is faded out near the centerline, where the
    // theta gradient would otherwise blow up and break the Lipschitz bound.
    const double fade_radius = 0.6 * cfg_.radius0;
    const double fade = std::min(rho / fade_radius, 1.0);
    const double theta = std::atan2(ly, lx);
    const double kz = 2.0 * M_PI / cfg_.ridge_wavelength;
    const double ridge = cfg_.ridge_amplitude * std::sin(kz * p.z() + phase_ridge_) *
                         std::cos(cfg_.ridge_lobes * theta) * fade;
    return rho - (cfg_.radius0 + ridge);
}

Vec3 TubeSurface::albedo(const Vec3& p) const {
    if (cfg_.mottle_amplitude == 0.0) return cfg_.albedo;

    // Smooth chromatic variation in the tube's own (theta, z) coordinates.
    // Only the green and blue channels are modulated, so the maximum channel
    // (red) and the chroma normalization of the base tone are preserved.
    const Vec3 c = centerline(p.z());
    const double theta = std::atan2(p.y() - c.y(), p.x() - c.x());
    const double km = 2.0 * M_PI / cfg_.mottle_wavelength;
    const double pat_g = std::sin(km * p.z() + phase_mottle_g_) * std::cos(cfg_.mottle_lobes * theta);
    const double pat_b = std::sin(km * p.z() + phase_mottle_b_) *
                         std::sin(cfg_.mottle_lobes * theta + 0.5 * phase_mottle_b_);
    Vec3 a = cfg_.albedo;
    a[1] *= 1.0 + cfg_.mottle_amplitude * pat_g;
    a[2] *= 1.0 + cfg_.mottle_amplitude * pat_b;
    return a;
}

SdfSurface TubeSurface::as_surface() const {
    SdfSurface s;
    s.sdf = [this](const Vec3& p) { return sdf(p); };
    s.albedo = [this](const Vec3& p) { return albedo(p); };
    return s;
}

TubeSurface make_tube_surface(const TubeCfg& cfg, std::uint64_t seed) {
    return TubeSurface(cfg, seed);
}

// ---------------------------------------------------------------------------
// Trajectory
// ---------------------------------------------------------------------------

std::vector<Pose> make_trajectory(const TubeSurface& surface, int n_frames,
                                  const TrajectoryCfg& cfg) {
    if (n_frames < 2) throw InvalidArgumentError("trajectory needs at least 2 frames");

    Rng rng(cfg.seed);
    const Vec3 up(0.0, 1.0, 0.0);
    std::vector<Pose> poses;
    poses.reserve(n_frames);

    for (int i = 0; i < n_frames; ++i) {
        const double t = static_cast<double>(i) / (n_frames - 1);
        const double z = cfg.axial_start + t * cfg.axial_length;
        const double a = 2.0 * M_PI * cfg.lateral_waves * t;
        const Vec3 center = surface.centerline(z) +
                            cfg.lateral_amplitude * Vec3(std::sin(a), 0.6 * std::cos(a), 0.0);

        if (!(surface.sdf(center) < -1.0))
            throw GenerationError("trajectory leaves the lumen at frame " + std::to_string(i));

        Vec3 forward = surface.centerline(z + cfg.look_ahead) - center;
        if (forward.norm() < 1e-9) forward = surface.centerline_tangent(z);
        forward.normalize();

        const Vec3 x_axis = up.cross(forward).normalized();
        const Vec3 y_axis = forward.cross(x_axis);
        Mat3 cam_to_world;
        cam_to_world.col(0) = x_axis;
        cam_to_world.col(1) = y_axis;
        cam_to_world.col(2) = forward;

        // Jitter values are always drawn so the stream layout does not depend
        // on the jitter amplitude.
        Vec3 axis(rng.normal(), rng.normal(), rng.normal());
        const double angle = cfg.jitter_deg * M_PI / 180.0 * rng.normal();
        if (cfg.jitter_deg > 0.0 && axis.norm() > 1e-12)
            cam_to_world = cam_to_world * Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();

        Pose pose;
        pose.rotation = cam_to_world.transpose();
        pose.translation = -(pose.rotation * center);
        poses.push_back(pose);
    }
    return poses;
}

// ---------------------------------------------------------------------------
// Ray-marched reference renderer
// ---------------------------------------------------------------------------

GtFrame render_ground_truth(const SdfSurface& surface, const Pose& pose, const Intrinsics& k,
                            const LightingSpec& lighting, std::uint64_t noise_seed, int threads) {
    k.validate();
    if (!(lighting.intensity > 0.0) || !(lighting.gamma > 0.0))
        throw InvalidArgumentError("lighting: intensity and gamma must be positive");
    const Vec3 cam_center = pose.camera_center();
    if (!(surface.sdf(cam_center) < 0.0))
        throw InvalidArgumentError("render_ground_truth: camera is not inside the lumen");

    GtFrame frame;
    frame.image_srgb = Image3(k.width, k.height, Vec3::Zero());
    frame.depth_gt = Image1(k.width, k.height, 0.0);
    frame.normal_cam = Image3(k.width, k.height, Vec3::Zero());

    const Mat3 cam_to_world = pose.rotation.transpose();
    const double inv_gamma = 1.0 / lighting.gamma;

    parallel_for(static_cast<size_t>(k.height), threads, [&](size_t row) {
        const int y = static_cast<int>(row);
        for (int x = 0; x < k.width; ++x) {
            const Vec3 dir_cam =
                Vec3((x - k.cx) / k.fx, (y - k.cy) / k.fy, 1.0).normalized();
            const Vec3 dir_world = cam_to_world * dir_cam;

            // Sphere trace on the negated SDF; the camera side of the wall is
            // the negative region.
            double t = 0.0;
            bool hit = false;
            for (int step = 0; step < kMaxSteps; ++step) {
                const double dist = -surface.sdf(cam_center + t * dir_world);
                if (dist < kHitTolMm) {
                    hit = true;
                    break;
                }
                t += dist / kMarchLipschitz;
                if (t > kMaxRangeMm) break;
            }
            if (!hit || t > kMaxRangeMm) continue;

            const Vec3 hit_world = cam_center + t * dir_world;
            const double h = kNormalStepMm;
            Vec3 grad(surface.sdf(hit_world + Vec3(h, 0, 0)) - surface.sdf(hit_world - Vec3(h, 0, 0)),
                      surface.sdf(hit_world + Vec3(0, h, 0)) - surface.sdf(hit_world - Vec3(0, h, 0)),
                      surface.sdf(hit_world + Vec3(0, 0, h)) - surface.sdf(hit_world - Vec3(0, 0, h)));
            if (grad.norm() < 1e-12) continue;
            // The gradient points out of the lumen; the shading normal faces
            // the camera.
            const Vec3 normal_cam = pose.rotation * (-grad.normalized());

            frame.depth_gt(x, y) = t * dir_cam.z();
            frame.normal_cam(x, y) = normal_cam;

            // Inverse-square point light at the camera origin, aligned with
            // the optical axis: intensity * albedo * (x_hat . axis)^beta / d^2
            // * max(0, -x_hat . n), plus an optional Blinn-Phong lobe whose
            // half vector collapses to -x_hat because light and eye coincide.
            const double axial = dir_cam.z();
            const double angular = lighting.beta == 0.0 ? 1.0 : std::pow(axial, lighting.beta);
            const double lambert = std::max(0.0, -dir_cam.dot(normal_cam));
            const Vec3 albedo = surface.albedo(hit_world);
            Vec3 linear = lighting.intensity * angular / (t * t) * lambert * albedo;
            if (lighting.specular_strength > 0.0 && lambert > 0.0)
                linear.array() +=
                    lighting.specular_strength * std::pow(lambert, lighting.specular_shininess);

            Vec3 encoded;
            for (int c = 0; c < 3; ++c) encoded[c] = std::pow(clamp01(linear[c]), inv_gamma);
            frame.image_srgb(x, y) = encoded;
        }
    });

    if (lighting.sigma_img > 0.0) {
        Rng rng(noise_seed);
        for (size_t i = 0; i < frame.image_srgb.size(); ++i) {
            Vec3& c = frame.image_srgb.at_index(i);
            for (int ch = 0; ch < 3; ++ch)
                c[ch] = clamp01(c[ch] + lighting.sigma_img * rng.normal());
        }
    }
    return frame;
}

// ---------------------------------------------------------------------------
// Depth corruption
// ---------------------------------------------------------------------------

Image1 corrupt_depth(const Image1& depth_gt, const DepthNoiseCfg& noise_cfg, std::uint64_t seed) {
    if (depth_gt.empty()) throw InvalidArgumentError("corrupt_depth: empty depth");

    Rng rng(seed);
    const double fx = 1.0 + std::floor(rng.uniform() * 2.0);  // 1 or 2 cycles across
    const double fy = 1.0 + std::floor(rng.uniform() * 2.0);
    const double px = rng.uniform(0.0, 2.0 * M_PI);
    const double py = rng.uniform(0.0, 2.0 * M_PI);

    const int w = depth_gt.width();
    const int h = depth_gt.height();
    Image1 out(w, h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double field = 1.0 + noise_cfg.bias *
                                           std::sin(2.0 * M_PI * fx * x / w + px) *
                                           std::sin(2.0 * M_PI * fy * y / h + py);
            const double d = depth_gt(x, y);
            const double noise = noise_cfg.sigma_frac * d * rng.normal();
            out(x, y) = std::max(0.0, d * field + noise);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Full sequence
// ---------------------------------------------------------------------------

GeneratedSequence simulate_sequence(const SimulatorCfg& cfg, std::uint64_t seed) {
    Rng master(seed);
    const std::uint64_t surface_seed = master.next_u64();
    const std::uint64_t traj_seed = master.next_u64();

    const TubeSurface tube = make_tube_surface(cfg.tube, surface_seed);
    TrajectoryCfg tcfg = cfg.trajectory;
    tcfg.seed = traj_seed;

    GeneratedSequence seq;
    seq.intrinsics = cfg.intrinsics;
    seq.poses_gt = make_trajectory(tube, cfg.n_frames, tcfg);

    const SdfSurface surf = tube.as_surface();
    seq.frames.reserve(seq.poses_gt.size());
    seq.depth_noisy.reserve(seq.poses_gt.size());
    for (const Pose& pose : seq.poses_gt) {
        const std::uint64_t image_noise_seed = master.next_u64();
        const std::uint64_t depth_noise_seed = master.next_u64();
        seq.frames.push_back(render_ground_truth(surf, pose, cfg.intrinsics, cfg.lighting,
                                                 image_noise_seed, cfg.threads));
        seq.depth_noisy.push_back(
            corrupt_depth(seq.frames.back().depth_gt, cfg.depth_noise, depth_noise_seed));
    }
    return seq;
}

void write_sequence(const std::string& dir, const GeneratedSequence& seq, const SimulatorCfg& cfg,
                    std::uint64_t seed) {
    std::vector<FrameData> frames(seq.frames.size());
    for (size_t i = 0; i < seq.frames.size(); ++i) {
        frames[i].image_srgb = seq.frames[i].image_srgb;
        frames[i].depth_gt_mm = seq.frames[i].depth_gt;
        frames[i].depth_noisy_mm = seq.depth_noisy[i];
    }

    DatasetMeta meta;
    meta.seed = seed;
    meta.depth_scale = 0.04;  // 16-bit range then covers the 2 m render horizon
    meta.lighting = {{"intensity", cfg.lighting.intensity},
                     {"beta", cfg.lighting.beta},
                     {"specular_strength", cfg.lighting.specular_strength},
                     {"specular_shininess", cfg.lighting.specular_shininess},
                     {"gamma", cfg.lighting.gamma},
                     {"sigma_img", cfg.lighting.sigma_img}};
    meta.noise_cfg = {{"bias", cfg.depth_noise.bias}, {"sigma_frac", cfg.depth_noise.sigma_frac}};
    write_dataset(dir, frames, seq.intrinsics, seq.poses_gt, meta);
}

}  // namespace nflba
