#pragma once

#include <vector>

#include "nflba/common.hpp"
#include "nflba/geometry.hpp"

namespace nflba {

struct SplatOptions {
    double lowpass = 0.3;       // px^2 added to the projected covariance diagonal
    double near_plane = 0.1;    // mm; closer centers are culled
    double cull_sigma = 3.0;    // footprint radius in sigmas; <= 0 disables culling
    double alpha_cutoff = 1.0 / 255.0;      // contributions below this are skipped
    double transmittance_cutoff = 1e-4;     // compositing stops below this
    bool normalized_depth = false;          // divide depth by accum_alpha where > accum_eps
    double accum_eps = 1e-3;
    int tile_size = 16;
    int threads = 0;  // 0 = auto
};

// A Gaussian projected into pixel space (EWA linearization).
struct Splat2D {
    Vec2 mean2d = Vec2::Zero();    // px
    Mat2 cov2d = Mat2::Zero();     // px^2, after low-pass regularization
    Mat2 cov2d_inv = Mat2::Zero();
    double depth = 0.0;            // camera-space z of the center, mm
    Vec3 cam_center = Vec3::Zero();  // full camera-space center
    Vec3 normal_cam = Vec3::Zero();  // camera-facing unit normal; zero when degenerate
    Vec3 color = Vec3::Zero();
    double opacity = 0.0;
    int source_index = -1;
    bool culled = false;
    bool normal_valid = false;
    double normal_sign = 1.0;  // flip applied to R_t * shortest_axis
};

// One alpha-compositing term at a pixel, kept for the backward pass.
struct Contribution {
    int source_index;
    double alpha;          // splatted opacity at this pixel
    double transmittance;  // product of (1 - alpha_j) over nearer contributions
};

struct RenderOutput {
    Image3 color;
    Image1 depth;   // raw alpha-weighted sum, or normalized by accum per opts
    Image3 normal;  // unit length where the blended norm > 1e-6, else zero
    Image1 accum_alpha;

    // Backward-pass state.
    Image1 depth_raw;
    Image3 normal_raw;
    std::vector<std::vector<Contribution>> contributions;  // per pixel, near-to-far
    std::vector<Splat2D> splats;                           // indexed by source gaussian
    SplatOptions opts;
    int width = 0, height = 0;

    const std::vector<Contribution>& pixel_contributions(int x, int y) const {
        return contributions[static_cast<size_t>(y) * width + x];
    }
};

struct GaussianGrad {
    Vec3 mean = Vec3::Zero();
    Vec3 log_scale = Vec3::Zero();
    Vec4 quaternion = Vec4::Zero();  // (w, x, y, z), tangent to the unit sphere
    Vec3 color = Vec3::Zero();
    double opacity = 0.0;
};

struct GradientSet {
    std::vector<GaussianGrad> gaussians;
    Vec6 pose = Vec6::Zero();  // left-multiplied se(3) perturbation, translation-first
};

// Per-map loss gradients fed into render_backward. Empty images are treated
// as zero. `depth` is w.r.t. RenderOutput::depth in whichever mode it was
// rendered; `depth_raw` always targets the unnormalized weighted sum;
// `normal` is w.r.t. the re-normalized unit normal map.
struct RenderUpstream {
    Image3 color;
    Image1 depth;
    Image1 depth_raw;
    Image3 normal;
    Image1 accum_alpha;
};

Splat2D project_gaussian(const Gaussian3D& g, const Pose& pose, const Intrinsics& k,
                         const SplatOptions& opts);

// Front-to-back alpha compositing of the scene into color/depth/normal maps.
// Gaussians are sorted near-to-far by center depth (ties by source index), so
// the result is invariant to the input ordering. Throws EmptySceneError.
RenderOutput render(const GaussianScene& scene, const Pose& pose, const Intrinsics& k,
                    const SplatOptions& opts);

// Analytic reverse pass over the contribution log. Returns exact gradients of
// sum(upstream .* maps) w.r.t. every Gaussian parameter and the camera pose.
// Accumulation order is fixed (tile-major), so results are bit-reproducible
// for a given tile size regardless of the thread count.
GradientSet render_backward(const GaussianScene& scene, const Pose& pose, const Intrinsics& k,
                            const RenderOutput& output, const RenderUpstream& upstream);

}  // namespace nflba
