#pragma once

#include <functional>
#include <string>
#include <vector>

#include "nflba/dataset.hpp"
#include "nflba/geometry.hpp"

namespace nflba {

// Procedural colon-like tube: a laterally drifting centerline swept by a
// circular section whose radius carries a sinusoidal ridge pattern in the
// axial and angular coordinates. All lengths in millimeters.
struct TubeCfg {
    double radius0 = 20.0;
    double ridge_amplitude = 0.4;     // must satisfy 0 <= amplitude < radius0
    double ridge_wavelength = 90.0;   // axial period of the ridges
    int ridge_lobes = 2;              // angular frequency
    double curve_amplitude = 2.0;     // lateral centerline drift
    double curve_wavelength = 150.0;
    Vec3 albedo = Vec3(1.0, 0.56, 0.50);  // uniform tissue tone, max channel 1
    // Optional vascular-style mottling of the green/blue channels around the
    // base tone; the red channel stays at albedo[0] so the max channel is
    // unchanged. Amplitude is relative, in [0, 0.75].
    double mottle_amplitude = 0.0;
    double mottle_wavelength = 25.0;  // axial period of the mottle pattern
    int mottle_lobes = 3;             // angular frequency of the mottle
};

// Surface with a signed distance (negative inside the lumen) and an albedo
// field; the ray marcher only needs these two callables, so tests can
// substitute planes or spheres.
struct SdfSurface {
    std::function<double(const Vec3&)> sdf;
    std::function<Vec3(const Vec3&)> albedo;
};

class TubeSurface {
public:
    TubeSurface(const TubeCfg& cfg, std::uint64_t seed);

    double sdf(const Vec3& p) const;
    Vec3 albedo(const Vec3& p) const;

    // Centerline point at axial coordinate z.
    Vec3 centerline(double z) const;
    // Unit tangent of the centerline at z.
    Vec3 centerline_tangent(double z) const;

    const TubeCfg& cfg() const { return cfg_; }
    SdfSurface as_surface() const;

private:
    TubeCfg cfg_;
    double phase_curve_ = 0, phase_ridge_ = 0;
    double phase_mottle_g_ = 0, phase_mottle_b_ = 0;
};

TubeSurface make_tube_surface(const TubeCfg& cfg, std::uint64_t seed);

struct TrajectoryCfg {
    double axial_start = 10.0;
    double axial_length = 100.0;     // total advance along the tube
    double lateral_amplitude = 3.0;  // oscillation around the centerline
    double lateral_waves = 1.5;      // oscillation cycles over the run
    double look_ahead = 25.0;        // aim point this far down the centerline
    double jitter_deg = 0.3;         // per-frame rotational jitter, seeded
    std::uint64_t seed = 0;
};

// Fly-through along the lumen. Camera centers must stay at SDF < -1 mm;
// a path that leaves the lumen raises GenerationError.
std::vector<Pose> make_trajectory(const TubeSurface& surface, int n_frames,
                                  const TrajectoryCfg& cfg);

// Point light co-located with the camera and aligned with the optical axis.
// Intensity is in arbitrary radiometric units times mm^2.
struct LightingSpec {
    double intensity = 300.0;
    double beta = 0.0;                // angular falloff exponent
    double specular_strength = 0.0;   // Blinn-Phong lobe, 0 disables
    double specular_shininess = 16.0;
    double gamma = 2.2;
    double sigma_img = 0.0;           // additive noise after encoding
};

struct GtFrame {
    Image3 image_srgb;   // gamma-encoded, in [0, 1]
    Image1 depth_gt;     // z-depth in mm, 0 where the ray missed
    Image3 normal_cam;   // camera-frame surface normal, zero where missed
};

// Ray-marched reference render. Per pixel: sphere-trace the SDF, shade with
// inverse-square plus cosine near-field light and an optional specular lobe,
// clamp, gamma-encode, then add seeded Gaussian noise.
GtFrame render_ground_truth(const SdfSurface& surface, const Pose& pose, const Intrinsics& k,
                            const LightingSpec& lighting, std::uint64_t noise_seed = 0,
                            int threads = 0);

struct DepthNoiseCfg {
    double bias = 0.1;        // amplitude of the smooth multiplicative field
    double sigma_frac = 0.05; // per-pixel sigma as a fraction of depth
};

// Stand-in for an estimated-depth front end: smooth multiplicative bias plus
// depth-proportional Gaussian noise, clamped at 0.
Image1 corrupt_depth(const Image1& depth_gt, const DepthNoiseCfg& noise_cfg, std::uint64_t seed);

struct SimulatorCfg {
    TubeCfg tube;
    TrajectoryCfg trajectory;
    LightingSpec lighting;
    DepthNoiseCfg depth_noise;
    int n_frames = 30;
    Intrinsics intrinsics{32.0, 32.0, 32.0, 32.0, 64, 64};
    int threads = 0;
};

struct GeneratedSequence {
    Intrinsics intrinsics;
    std::vector<Pose> poses_gt;
    std::vector<GtFrame> frames;
    std::vector<Image1> depth_noisy;
};

// Full pipeline: surface, trajectory, per-frame renders, corrupted depth.
// Pure function of (cfg, seed).
GeneratedSequence simulate_sequence(const SimulatorCfg& cfg, std::uint64_t seed);

// Serializes a generated sequence through the dataset layout.
void write_sequence(const std::string& dir, const GeneratedSequence& seq, const SimulatorCfg& cfg,
                    std::uint64_t seed);

}  // namespace nflba
