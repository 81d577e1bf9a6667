#pragma once

#include <optional>

#include "nflba/shading.hpp"
#include "nflba/splatter.hpp"

namespace nflba {

struct LossWeights {
    double lambda_depth = 0.4;
    double lambda_nfl_tracking = 0.001;
    double lambda_nfl_mapping = 0.001;
    double lambda_reg = 0.0;

    void validate() const;
    double lambda_nfl(bool mapping) const {
        return mapping ? lambda_nfl_mapping : lambda_nfl_tracking;
    }
};

struct LossReport {
    double total = 0.0;
    double rgb_term = 0.0;
    double depth_term = 0.0;
    double nfl_term = 0.0;
    double reg_term = 0.0;
    double optimal_scale_s = 0.0;
    long masked_pixel_count = 0;  // pixels active in the photometric mask
};

enum class Phase { Tracking, Mapping };

// Mean L1 color and depth residuals over the photometric mask
// (specular AND valid_depth; the crop window applies only to the
// near-field term). Depth compares against the raw alpha-weighted sum.
struct PhotoResult {
    double rgb_term = 0.0;
    double depth_term = 0.0;
    Image3 rgb_residual;    // rendered minus target, zero outside the mask
    Image1 depth_residual;  // raw rendered depth minus target, zero outside
    long masked_count = 0;
};

PhotoResult photometric_ba(const RenderOutput& render, const Image3& target_linear,
                           const Image1& target_depth, const MaskSet& masks);

// Single least-squares scale over all masked pixels and channels:
// s = sum(I * P) / sum(P^2) with P = model.
double optimal_scale(const Image3& intensity, const Image3& model, const MaskImage& mask);

// Scale-invariant near-field term: mean over masked pixels of the per-pixel
// L2 norm of I - s * albedo * shading, with s refit by optimal_scale unless
// fixed_s pins it (s is a constant in differentiation either way).
struct NflResult {
    double loss = 0.0;
    double s = 1.0;
    Image3 residual;  // I - s * albedo * shading, zero outside the mask
    long masked_count = 0;
};

NflResult nfl_ba(const Image3& image_linear, const Image3& albedo, const ShadingField& shading,
                 const MaskSet& masks, std::optional<double> fixed_s = std::nullopt);

// Mean over Gaussians of (max(scale)/min(scale) - 1)^2.
double scale_regularizer(const GaussianScene& scene);

// Per-frame inputs with the gamma handling already applied.
struct PreparedFrame {
    Image3 image_linear;
    Image3 albedo;
    Image1 depth;  // mm; empty when the frame has no depth source
};

PreparedFrame prepare_frame(const Image3& image_srgb, const Image1& depth_mm, double gamma);

struct ObjectiveContext {
    Intrinsics intrinsics;
    SplatOptions splat;  // normalized_depth is forced on for the render
    double beta = 0.0;
    std::optional<double> fixed_scale;  // pin the near-field scale (testing)
    // Restrict all terms to pixels the current model actually covers
    // (accumulated alpha >= threshold). Used by tracking, where pixels beyond
    // the mapped region would otherwise dominate the residuals; the gate is
    // held fixed within an evaluation, like the masks themselves.
    bool coverage_gate = false;
    double coverage_threshold = 0.5;
};

struct ObjectiveResult {
    LossReport report;
    GradientSet grads;
    RenderOutput render;
};

// total = rgb + lambda_depth * depth + lambda_nfl(phase) * nfl
//       + lambda_reg * reg, with gradients for the Gaussian parameters and
// the pose tangent. Tracking returns pose gradients only.
ObjectiveResult total_objective(const PreparedFrame& frame, const GaussianScene& scene,
                                const Pose& pose, const MaskSet& masks, const LossWeights& weights,
                                Phase phase, const ObjectiveContext& ctx);

}  // namespace nflba
