#include "nflba/losses.hpp"

#include <cmath>

namespace nflba {

namespace {

double sign_of(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

MaskImage photometric_mask(const MaskSet& masks) {
    MaskImage m(masks.specular.width(), masks.specular.height(), 0);
    for (size_t i = 0; i < m.size(); ++i)
        m.at_index(i) = (masks.specular.at_index(i) && masks.valid_depth.at_index(i)) ? 1 : 0;
    return m;
}

}  // namespace

void LossWeights::validate() const {
    for (double v : {lambda_depth, lambda_nfl_tracking, lambda_nfl_mapping, lambda_reg})
        if (!std::isfinite(v) || v < 0.0)
            throw InvalidArgumentError("LossWeights: weights must be finite and non-negative");
}

PhotoResult photometric_ba(const RenderOutput& render, const Image3& target_linear,
                           const Image1& target_depth, const MaskSet& masks) {
    const int w = render.width, h = render.height;
    if (!target_linear.same_shape(w, h))
        throw InvalidArgumentError("photometric_ba: image shape mismatch");
    const bool with_depth = !target_depth.empty();
    if (with_depth && !target_depth.same_shape(w, h))
        throw InvalidArgumentError("photometric_ba: depth shape mismatch");

    const MaskImage mask = photometric_mask(masks);
    PhotoResult r;
    r.rgb_residual = Image3(w, h, Vec3::Zero());
    r.depth_residual = Image1(w, h, 0.0);
    double rgb_sum = 0.0, depth_sum = 0.0;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (!mask(x, y)) continue;
            ++r.masked_count;
            const Vec3 diff = render.color(x, y) - target_linear(x, y);
            r.rgb_residual(x, y) = diff;
            rgb_sum += diff.cwiseAbs().sum();
            if (with_depth) {
                const double dd = render.depth_raw(x, y) - target_depth(x, y);
                r.depth_residual(x, y) = dd;
                depth_sum += std::abs(dd);
            }
        }
    }
    if (r.masked_count == 0) throw DegenerateMaskError("photometric_ba: mask is empty");
    r.rgb_term = rgb_sum / r.masked_count;
    r.depth_term = with_depth ? depth_sum / r.masked_count : 0.0;
    return r;
}

double optimal_scale(const Image3& intensity, const Image3& model, const MaskImage& mask) {
    if (!intensity.same_shape(model.width(), model.height()) ||
        !mask.same_shape(model.width(), model.height()))
        throw InvalidArgumentError("optimal_scale: shape mismatch");
    double num = 0.0, den = 0.0;
    long count = 0;
    for (size_t i = 0; i < mask.size(); ++i) {
        if (!mask.at_index(i)) continue;
        ++count;
        num += intensity.at_index(i).dot(model.at_index(i));
        den += model.at_index(i).squaredNorm();
    }
    if (count == 0) throw DegenerateMaskError("optimal_scale: mask is empty");
    if (den < 1e-12)
        throw DegenerateModelError("optimal_scale: shading model is zero on the mask");
    return num / den;
}

NflResult nfl_ba(const Image3& image_linear, const Image3& albedo, const ShadingField& shading,
                 const MaskSet& masks, std::optional<double> fixed_s) {
    const int w = image_linear.width(), h = image_linear.height();
    if (!albedo.same_shape(w, h) || !shading.shading.same_shape(w, h) ||
        !masks.combined.same_shape(w, h))
        throw InvalidArgumentError("nfl_ba: shape mismatch");

    Image3 model(w, h, Vec3::Zero());
    for (size_t i = 0; i < model.size(); ++i)
        model.at_index(i) = albedo.at_index(i) * shading.shading.at_index(i);

    NflResult r;
    r.s = fixed_s ? *fixed_s : optimal_scale(image_linear, model, masks.combined);
    r.residual = Image3(w, h, Vec3::Zero());
    double sum = 0.0;
    for (size_t i = 0; i < model.size(); ++i) {
        if (!masks.combined.at_index(i)) continue;
        ++r.masked_count;
        const Vec3 res = image_linear.at_index(i) - r.s * model.at_index(i);
        r.residual.at_index(i) = res;
        sum += res.norm();
    }
    if (r.masked_count == 0) throw DegenerateMaskError("nfl_ba: mask is empty");
    r.loss = sum / r.masked_count;
    return r;
}

double scale_regularizer(const GaussianScene& scene) {
    if (scene.empty()) return 0.0;
    double sum = 0.0;
    for (const Gaussian3D& g : scene.gaussians) {
        const double ratio = g.scale.maxCoeff() / g.scale.minCoeff();
        sum += sq(ratio - 1.0);
    }
    return sum / static_cast<double>(scene.size());
}

PreparedFrame prepare_frame(const Image3& image_srgb, const Image1& depth_mm, double gamma) {
    PreparedFrame f;
    f.image_linear = srgb_to_linear(image_srgb, gamma);
    f.albedo = estimate_albedo(image_srgb, gamma);
    f.depth = depth_mm;
    return f;
}

ObjectiveResult total_objective(const PreparedFrame& frame, const GaussianScene& scene,
                                const Pose& pose, const MaskSet& masks, const LossWeights& weights,
                                Phase phase, const ObjectiveContext& ctx) {
    weights.validate();
    const double lambda_nfl = weights.lambda_nfl(phase == Phase::Mapping);

    SplatOptions opts = ctx.splat;
    opts.normalized_depth = true;

    ObjectiveResult result;
    result.render = render(scene, pose, ctx.intrinsics, opts);
    const RenderOutput& out = result.render;
    const int w = out.width, h = out.height;

    MaskSet gated;
    const MaskSet* active = &masks;
    if (ctx.coverage_gate) {
        gated = masks;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                if (out.accum_alpha(x, y) < ctx.coverage_threshold)
                    gated.valid_depth(x, y) = 0;
        gated.rebuild_combined();
        active = &gated;
    }

    const bool with_depth = !frame.depth.empty();
    const PhotoResult photo = photometric_ba(out, frame.image_linear, frame.depth, *active);

    RenderUpstream up;
    up.color = Image3(w, h, Vec3::Zero());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const Vec3& res = photo.rgb_residual(x, y);
            up.color(x, y) = Vec3(sign_of(res.x()), sign_of(res.y()), sign_of(res.z())) /
                             static_cast<double>(photo.masked_count);
        }
    if (with_depth && weights.lambda_depth > 0.0) {
        up.depth_raw = Image1(w, h, 0.0);
        for (size_t i = 0; i < up.depth_raw.size(); ++i)
            up.depth_raw.at_index(i) = weights.lambda_depth *
                                       sign_of(photo.depth_residual.at_index(i)) /
                                       static_cast<double>(photo.masked_count);
    }

    NflResult nfl;
    if (lambda_nfl > 0.0) {
        const Image3 points = backproject(out.depth, ctx.intrinsics);
        const ShadingField field = shading_field(points, out.normal, ctx.beta);
        nfl = nfl_ba(frame.image_linear, frame.albedo, field, *active, ctx.fixed_scale);

        up.depth = Image1(w, h, 0.0);
        up.normal = Image3(w, h, Vec3::Zero());
        const Intrinsics& k = ctx.intrinsics;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                if (!active->combined(x, y)) continue;
                const Vec3& res = nfl.residual(x, y);
                const double rn = res.norm();
                if (rn < 1e-12) continue;
                const Vec3 X = points(x, y);
                const double d = X.norm();
                if (d < 1e-6) continue;
                const Vec3 n = out.normal(x, y);
                if (n.isZero(0)) continue;
                const Vec3 xhat = X / d;
                const double lam = -xhat.dot(n);  // Lambert term along -X
                const double a = xhat.dot(field.axis);
                if (lam <= 0.0 || (ctx.beta > 0.0 && a <= 0.0)) continue;

                // dL/dS for the per-pixel L2 residual with s held fixed.
                const double g_s = -(nfl.s / nfl.masked_count) *
                                   (res / rn).dot(frame.albedo(x, y));

                const double inv_d2 = 1.0 / (d * d);
                const double ang = ctx.beta > 0.0 ? std::pow(a, ctx.beta) : 1.0;
                const Vec3 d_lam = -(n - xhat * xhat.dot(n)) / d;
                Vec3 dS_dX = ang * (-2.0 * X / sq(sq(d))) * lam + ang * inv_d2 * d_lam;
                if (ctx.beta > 0.0) {
                    const Vec3 d_ang =
                        ctx.beta * std::pow(a, ctx.beta - 1.0) * (field.axis - xhat * a) / d;
                    dS_dX += d_ang * inv_d2 * lam;
                }
                const Vec3 dS_dn = -ang * inv_d2 * xhat;

                const Vec3 ray((x - k.cx) / k.fx, (y - k.cy) / k.fy, 1.0);
                up.depth(x, y) = lambda_nfl * g_s * dS_dX.dot(ray);
                up.normal(x, y) = lambda_nfl * g_s * dS_dn;
            }
        }
    }

    result.grads = render_backward(scene, pose, ctx.intrinsics, out, up);

    double reg = 0.0;
    if (weights.lambda_reg > 0.0) {
        reg = scale_regularizer(scene);
        const double n = static_cast<double>(scene.size());
        for (size_t i = 0; i < scene.size(); ++i) {
            const Vec3& s = scene.gaussians[i].scale;
            int imax = 0, imin = 0;
            for (int ax = 1; ax < 3; ++ax) {
                if (s(ax) > s(imax)) imax = ax;
                if (s(ax) < s(imin)) imin = ax;
            }
            if (imax == imin) continue;
            const double ratio = s(imax) / s(imin);
            const double base = 2.0 * (ratio - 1.0) * weights.lambda_reg / n;
            // d/d(log s) = s * d/ds on each extremal axis.
            result.grads.gaussians[i].log_scale(imax) += base * ratio;
            result.grads.gaussians[i].log_scale(imin) += -base * ratio;
        }
    }

    if (phase == Phase::Tracking)
        for (auto& g : result.grads.gaussians) g = GaussianGrad{};

    LossReport& rep = result.report;
    rep.rgb_term = photo.rgb_term;
    rep.depth_term = photo.depth_term;
    rep.nfl_term = nfl.loss;
    rep.reg_term = reg;
    rep.optimal_scale_s = nfl.s;
    rep.masked_pixel_count = photo.masked_count;
    rep.total = rep.rgb_term + weights.lambda_depth * rep.depth_term + lambda_nfl * rep.nfl_term +
                weights.lambda_reg * rep.reg_term;
    return result;
}

}  // namespace nflba
