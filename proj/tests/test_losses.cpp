#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fd_utils.hpp"
#include "nflba/losses.hpp"

using namespace nflba;
using namespace testutil;

namespace {

MaskSet all_ones_masks(int w, int h) {
    MaskSet m;
    m.specular = MaskImage(w, h, 1);
    m.crop = MaskImage(w, h, 1);
    m.valid_depth = MaskImage(w, h, 1);
    m.rebuild_combined();
    return m;
}

// Random frontal shading field with a comfortable Lambert margin.
ShadingField random_field(uint64_t seed, int w, int h) {
    Rng rng(seed);
    Image3 pts(w, h, Vec3::Zero());
    Image3 normals(w, h, Vec3::Zero());
    for (size_t i = 0; i < pts.size(); ++i) {
        pts.at_index(i) = Vec3(0.3 * rng.normal(), 0.3 * rng.normal(), 1.8 + 0.6 * rng.uniform());
        normals.at_index(i) =
            Vec3(0.3 * rng.normal(), 0.3 * rng.normal(), -1.0 - rng.uniform()).normalized();
    }
    return shading_field(pts, normals, 0.0);
}

Image3 random_albedo(uint64_t seed, int w, int h) {
    Rng rng(seed);
    Image3 alb(w, h, Vec3::Ones());
    for (size_t i = 0; i < alb.size(); ++i)
        alb.at_index(i) = Vec3(1.0, 0.4 + 0.6 * rng.uniform(), 0.4 + 0.6 * rng.uniform());
    return alb;
}

}  // namespace

TEST_CASE("weights must be finite and non-negative") {
    LossWeights w;
    CHECK_NOTHROW(w.validate());
    w.lambda_depth = -0.1;
    CHECK_THROWS_AS(w.validate(), InvalidArgumentError);
    w.lambda_depth = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(w.validate(), InvalidArgumentError);
}

TEST_CASE("photometric terms vanish when the render equals the target") {
    const Intrinsics k = small_camera();
    const Pose pose;
    const GaussianScene scene = random_scene(61, 4, pose);
    const RenderOutput out = render(scene, pose, k, SplatOptions{});
    const PhotoResult r =
        photometric_ba(out, out.color, out.depth_raw, all_ones_masks(k.width, k.height));
    CHECK(r.rgb_term == 0.0);
    CHECK(r.depth_term == 0.0);
    CHECK(r.masked_count == k.width * k.height);
}

TEST_CASE("a constant channel offset yields an L1 term of three times the offset") {
    const Intrinsics k = small_camera();
    const Pose pose;
    const GaussianScene scene = random_scene(62, 4, pose);
    const RenderOutput out = render(scene, pose, k, SplatOptions{});
    Image3 target = out.color;
    for (size_t i = 0; i < target.size(); ++i) target.at_index(i).array() -= 0.1;
    const PhotoResult r = photometric_ba(out, target, Image1(), all_ones_masks(k.width, k.height));
    CHECK(r.rgb_term == doctest::Approx(0.3).epsilon(1e-9));
    CHECK(r.depth_term == 0.0);
}

TEST_CASE("photometric terms match a direct summation oracle") {
    const Intrinsics k = small_camera(4, 20);
    const Pose pose;
    const GaussianScene scene = random_scene(63, 3, pose);
    const RenderOutput out = render(scene, pose, k, SplatOptions{});
    Rng rng(64);
    Image3 target(4, 4, Vec3::Zero());
    Image1 target_depth(4, 4, 0.0);
    MaskSet masks = all_ones_masks(4, 4);
    for (size_t i = 0; i < target.size(); ++i) {
        target.at_index(i) = Vec3(rng.uniform(), rng.uniform(), rng.uniform());
        target_depth.at_index(i) = 2.0 * rng.uniform();
    }
    masks.specular(1, 2) = 0;
    masks.valid_depth(3, 0) = 0;
    masks.rebuild_combined();
    const PhotoResult r = photometric_ba(out, target, target_depth, masks);

    double rgb = 0.0, depth = 0.0;
    long count = 0;
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) {
            if (!masks.specular(x, y) || !masks.valid_depth(x, y)) continue;
            ++count;
            rgb += (out.color(x, y) - target(x, y)).cwiseAbs().sum();
            depth += std::abs(out.depth_raw(x, y) - target_depth(x, y));
        }
    CHECK(r.masked_count == count);
    CHECK(r.rgb_term == doctest::Approx(rgb / count).epsilon(1e-12));
    CHECK(r.depth_term == doctest::Approx(depth / count).epsilon(1e-12));
}

TEST_CASE("an all-zero mask is rejected") {
    const Intrinsics k = small_camera(4, 20);
    const Pose pose;
    const GaussianScene scene = random_scene(65, 2, pose);
    const RenderOutput out = render(scene, pose, k, SplatOptions{});
    MaskSet masks = all_ones_masks(4, 4);
    masks.specular.fill(0);
    masks.rebuild_combined();
    CHECK_THROWS_AS(photometric_ba(out, out.color, Image1(), masks), DegenerateMaskError);
}

TEST_CASE("optimal scale recovers exact proportionality") {
    Rng rng(66);
    Image3 model(3, 3, Vec3::Zero());
    Image3 intensity(3, 3, Vec3::Zero());
    for (size_t i = 0; i < model.size(); ++i) {
        model.at_index(i) = Vec3(rng.uniform(), rng.uniform(), rng.uniform());
        intensity.at_index(i) = 2.0 * model.at_index(i);
    }
    const MaskImage mask(3, 3, 1);
    CHECK(optimal_scale(intensity, model, mask) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("optimal scale matches the two-sample closed form") {
    Image3 intensity(2, 1, Vec3::Zero());
    Image3 model(2, 1, Vec3::Zero());
    intensity(0, 0) = Vec3(0.2, 0.2, 0.2);
    intensity(1, 0) = Vec3(0.4, 0.4, 0.4);
    model(0, 0) = Vec3(0.1, 0.1, 0.1);
    model(1, 0) = Vec3(0.2, 0.2, 0.2);
    CHECK(optimal_scale(intensity, model, MaskImage(2, 1, 1)) == doctest::Approx(2.0));
}

TEST_CASE("optimal scale agrees with a dense grid scan of the squared misfit") {
    Rng rng(67);
    Image3 model(8, 8, Vec3::Zero());
    Image3 intensity(8, 8, Vec3::Zero());
    MaskImage mask(8, 8, 0);
    for (size_t i = 0; i < model.size(); ++i) {
        model.at_index(i) = Vec3(0.1 + rng.uniform(), 0.1 + rng.uniform(), 0.1 + rng.uniform());
        intensity.at_index(i) =
            3.0 * model.at_index(i) + 0.1 * Vec3(rng.normal(), rng.normal(), rng.normal());
        mask.at_index(i) = rng.uniform() < 0.7 ? 1 : 0;
    }
    if (count_nonzero(mask) == 0) mask(0, 0) = 1;
    const double s = optimal_scale(intensity, model, mask);

    double best_s = 0.0, best = std::numeric_limits<double>::infinity();
    for (double cand = 0.0; cand <= 10.0; cand += 1e-4) {
        double sum = 0.0;
        for (size_t i = 0; i < model.size(); ++i)
            if (mask.at_index(i))
                sum += (intensity.at_index(i) - cand * model.at_index(i)).squaredNorm();
        if (sum < best) {
            best = sum;
            best_s = cand;
        }
    }
    CHECK(std::abs(s - best_s) < 1e-3);
}

TEST_CASE("optimal scale rejects degenerate inputs") {
    Image3 intensity(2, 2, Vec3(0.5, 0.5, 0.5));
    Image3 model(2, 2, Vec3::Zero());
    CHECK_THROWS_AS(optimal_scale(intensity, model, MaskImage(2, 2, 1)), DegenerateModelError);
    CHECK_THROWS_AS(optimal_scale(intensity, model, MaskImage(2, 2, 0)), DegenerateMaskError);
}

TEST_CASE("near-field loss is zero for a perfectly explained image") {
    const int w = 6, h = 6;
    const ShadingField field = random_field(68, w, h);
    const Image3 albedo = random_albedo(69, w, h);
    Image3 image(w, h, Vec3::Zero());
    for (size_t i = 0; i < image.size(); ++i)
        image.at_index(i) = albedo.at_index(i) * field.shading.at_index(i);
    const MaskSet masks = all_ones_masks(w, h);
    const NflResult r = nfl_ba(image, albedo, field, masks);
    CHECK(r.s == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.loss < 1e-12);

    for (size_t i = 0; i < image.size(); ++i) image.at_index(i) *= 3.5;
    const NflResult scaled = nfl_ba(image, albedo, field, masks);
    CHECK(scaled.s == doctest::Approx(3.5).epsilon(1e-12));
    CHECK(scaled.loss < 1e-12);
}

TEST_CASE("near-field loss matches a brute-force summation at the scanned scale") {
    const int w = 6, h = 6;
    const ShadingField field = random_field(70, w, h);
    const Image3 albedo = random_albedo(71, w, h);
    Rng rng(72);
    Image3 image(w, h, Vec3::Zero());
    for (size_t i = 0; i < image.size(); ++i)
        image.at_index(i) = (2.0 * albedo.at_index(i) * field.shading.at_index(i)).cwiseMax(0.0) +
                            0.02 * Vec3(rng.uniform(), rng.uniform(), rng.uniform());
    MaskSet masks = all_ones_masks(w, h);
    masks.crop(0, 0) = 0;
    masks.rebuild_combined();

    Image3 model(w, h, Vec3::Zero());
    for (size_t i = 0; i < model.size(); ++i)
        model.at_index(i) = albedo.at_index(i) * field.shading.at_index(i);
    double best_s = 0.0, best = std::numeric_limits<double>::infinity();
    for (double cand = 0.0; cand <= 10.0; cand += 1e-4) {
        double sum = 0.0;
        for (size_t i = 0; i < model.size(); ++i)
            if (masks.combined.at_index(i))
                sum += (image.at_index(i) - cand * model.at_index(i)).squaredNorm();
        if (sum < best) {
            best = sum;
            best_s = cand;
        }
    }

    double direct = 0.0;
    long count = 0;
    for (size_t i = 0; i < model.size(); ++i) {
        if (!masks.combined.at_index(i)) continue;
        ++count;
        direct += (image.at_index(i) - best_s * model.at_index(i)).norm();
    }
    direct /= count;

    const NflResult pinned = nfl_ba(image, albedo, field, masks, best_s);
    CHECK(pinned.loss == doctest::Approx(direct).epsilon(1e-9));
    const NflResult fit = nfl_ba(image, albedo, field, masks);
    CHECK(std::abs(fit.s - best_s) < 1e-3);
    CHECK(fit.masked_count == count);
}

TEST_CASE("near-field loss is homogeneous in the image intensity") {
    const int w = 5, h = 5;
    const ShadingField field = random_field(73, w, h);
    const Image3 albedo = random_albedo(74, w, h);
    Rng rng(75);
    Image3 image(w, h, Vec3::Zero());
    for (size_t i = 0; i < image.size(); ++i)
        image.at_index(i) = Vec3(0.1 + rng.uniform(), 0.1 + rng.uniform(), 0.1 + rng.uniform());
    const MaskSet masks = all_ones_masks(w, h);
    const NflResult base = nfl_ba(image, albedo, field, masks);
    Image3 scaled = image;
    for (size_t i = 0; i < scaled.size(); ++i) scaled.at_index(i) *= 4.0;
    const NflResult big = nfl_ba(scaled, albedo, field, masks);
    CHECK(big.s == doctest::Approx(4.0 * base.s).epsilon(1e-12));
    CHECK(big.loss == doctest::Approx(4.0 * base.loss).epsilon(1e-12));
}

TEST_CASE("scale regularizer measures anisotropy") {
    GaussianScene scene;
    Gaussian3D g;
    g.scale = Vec3(1, 1, 1);
    scene.gaussians.push_back(g);
    CHECK(scale_regularizer(scene) == 0.0);
    g.scale = Vec3(2, 1, 1);
    scene.gaussians.push_back(g);
    CHECK(scale_regularizer(scene) == doctest::Approx(0.5));
    g.scale = Vec3(0.5, 1.5, 1.0);
    scene.gaussians.push_back(g);
    const double expected = (0.0 + 1.0 + sq(3.0 - 1.0)) / 3.0;
    CHECK(scale_regularizer(scene) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("objective with only the color term is zero at the optimum") {
    const Intrinsics k = small_camera();
    const Pose pose;
    const GaussianScene scene = random_scene(76, 4, pose);
    ObjectiveContext ctx;
    ctx.intrinsics = k;
    ctx.splat = smooth_options();
    const RenderOutput ref = render(scene, pose, k, [&] {
        SplatOptions o = ctx.splat;
        o.normalized_depth = true;
        return o;
    }());

    PreparedFrame frame;
    frame.image_linear = ref.color;
    frame.albedo = Image3(k.width, k.height, Vec3::Ones());
    LossWeights w;
    w.lambda_depth = 0.0;
    w.lambda_nfl_tracking = 0.0;
    w.lambda_nfl_mapping = 0.0;
    const ObjectiveResult res = total_objective(frame, scene, pose, all_ones_masks(8, 8), w,
                                                Phase::Mapping, ctx);
    CHECK(res.report.total == 0.0);
    CHECK(res.grads.pose.norm() == 0.0);
    for (const auto& g : res.grads.gaussians) {
        CHECK(g.mean.norm() == 0.0);
        CHECK(g.color.norm() == 0.0);
    }
}

TEST_CASE("objective without the near-field term reduces to photometric adjustment") {
    const Intrinsics k = small_camera();
    const Pose pose;
    const GaussianScene scene = random_scene(77, 4, pose);
    Rng rng(78);
    PreparedFrame frame;
    frame.image_linear = Image3(k.width, k.height, Vec3::Zero());
    frame.depth = Image1(k.width, k.height, 0.0);
    for (size_t i = 0; i < frame.image_linear.size(); ++i) {
        frame.image_linear.at_index(i) = Vec3(rng.uniform(), rng.uniform(), rng.uniform());
        frame.depth.at_index(i) = 1.5 + rng.uniform();
    }
    frame.albedo = Image3(k.width, k.height, Vec3::Ones());
    const MaskSet masks = all_ones_masks(k.width, k.height);
    ObjectiveContext ctx;
    ctx.intrinsics = k;
    ctx.splat = smooth_options();
    LossWeights w;
    w.lambda_nfl_tracking = 0.0;
    w.lambda_nfl_mapping = 0.0;
    const ObjectiveResult res =
        total_objective(frame, scene, pose, masks, w, Phase::Mapping, ctx);
    const PhotoResult photo = photometric_ba(res.render, frame.image_linear, frame.depth, masks);
    CHECK(res.report.nfl_term == 0.0);
    CHECK(res.report.total ==
          doctest::Approx(photo.rgb_term + w.lambda_depth * photo.depth_term).epsilon(1e-12));
}

TEST_CASE("objective report satisfies the decomposition identity") {
    const Intrinsics k = small_camera();
    const Pose pose;
    const GaussianScene scene = random_scene(79, 4, pose, true);
    Rng rng(80);
    Image3 srgb(k.width, k.height, Vec3::Zero());
    Image1 depth(k.width, k.height, 0.0);
    for (size_t i = 0; i < srgb.size(); ++i) {
        srgb.at_index(i) = Vec3(0.2 + 0.6 * rng.uniform(), 0.2 + 0.5 * rng.uniform(),
                                0.2 + 0.5 * rng.uniform());
        depth.at_index(i) = 1.5 + rng.uniform();
    }
    const PreparedFrame frame = prepare_frame(srgb, depth, 2.2);
    const MaskSet masks = build_mask_set(frame.image_linear, frame.depth, 0.95, 0.75, 0.1);
    ObjectiveContext ctx;
    ctx.intrinsics = k;
    ctx.splat = smooth_options();
    LossWeights w;
    w.lambda_depth = 0.4;
    w.lambda_nfl_mapping = 0.05;
    w.lambda_reg = 0.1;
    const ObjectiveResult res =
        total_objective(frame, scene, pose, masks, w, Phase::Mapping, ctx);
    const double recomposed = res.report.rgb_term + w.lambda_depth * res.report.depth_term +
                              w.lambda_nfl_mapping * res.report.nfl_term +
                              w.lambda_reg * res.report.reg_term;
    CHECK(res.report.total == doctest::Approx(recomposed).epsilon(1e-9));
    CHECK(res.report.reg_term == doctest::Approx(scale_regularizer(scene)).epsilon(1e-12));
}

TEST_CASE("full objective gradients match finite differences with the scale pinned") {
    const Intrinsics k = small_camera();
    const Pose pose;
    const GaussianScene scene = random_scene(81, 4, pose, true);

    ObjectiveContext ctx;
    ctx.intrinsics = k;
    ctx.splat = smooth_options();

    // Target: the render of a slightly jittered model, offset so every
    // residual keeps a stable sign under the probe steps. The jitter is kept
    // well below the offsets so no residual sits near an L1 kink.
    GaussianScene jittered = scene;
    Rng rng(82);
    for (auto& g : jittered.gaussians) {
        g.mean += 0.004 * Vec3(rng.normal(), rng.normal(), rng.normal());
        g.color = (g.color + 0.02 * Vec3(rng.normal(), rng.normal(), rng.normal()))
                      .cwiseMax(0.1)
                      .cwiseMin(0.9);
    }
    SplatOptions ropts = ctx.splat;
    ropts.normalized_depth = true;
    const RenderOutput ref = render(jittered, pose, k, ropts);
    Image3 target_linear = ref.color;
    Image1 target_depth = ref.depth_raw;
    for (size_t i = 0; i < target_linear.size(); ++i) {
        const double flip = (i % 2 == 0) ? 1.0 : -1.0;
        target_linear.at_index(i) =
            (target_linear.at_index(i).array() + flip * 0.07).cwiseMax(0.03).cwiseMin(0.9).matrix();
        target_depth.at_index(i) = std::max(0.5, target_depth.at_index(i) + flip * 1.5);
    }
    const PreparedFrame frame = prepare_frame(linear_to_srgb(target_linear, 2.2), target_depth, 2.2);
    const MaskSet masks = build_mask_set(frame.image_linear, frame.depth, 0.95, 0.75, 0.1);

    {
        // Preconditions keeping central differences valid at the probe steps.
        SplatOptions popts = ctx.splat;
        popts.normalized_depth = true;
        const RenderOutput probe = render(scene, pose, k, popts);
        double min_abs_rgb = 1e9, min_abs_depth = 1e9;
        for (int y = 0; y < k.height; ++y)
            for (int x = 0; x < k.width; ++x) {
                if (!masks.specular(x, y) || !masks.valid_depth(x, y)) continue;
                min_abs_rgb = std::min(
                    min_abs_rgb,
                    (probe.color(x, y) - frame.image_linear(x, y)).cwiseAbs().minCoeff());
                min_abs_depth = std::min(
                    min_abs_depth, std::abs(probe.depth_raw(x, y) - frame.depth(x, y)));
            }
        REQUIRE(min_abs_rgb > 5e-3);
        REQUIRE(min_abs_depth > 0.5);
    }

    LossWeights w;
    w.lambda_depth = 0.4;
    w.lambda_nfl_mapping = 0.05;
    w.lambda_nfl_tracking = 0.05;
    w.lambda_reg = 0.1;

    const ObjectiveResult pilot =
        total_objective(frame, scene, pose, masks, w, Phase::Mapping, ctx);
    ctx.fixed_scale = pilot.report.optimal_scale_s;

    const ObjectiveResult base =
        total_objective(frame, scene, pose, masks, w, Phase::Mapping, ctx);
    auto objective = [&](const GaussianScene& s, const Pose& p) {
        return total_objective(frame, s, p, masks, w, Phase::Mapping, ctx).report.total;
    };
    const FdReport rep = check_gradients(scene, pose, objective, base.grads);
    CHECK(rep.checked == 5 * 14 + 6);
    CHECK(rep.failures == 0);

    // Tracking keeps only the pose direction.
    const ObjectiveResult track =
        total_objective(frame, scene, pose, masks, w, Phase::Tracking, ctx);
    CHECK((track.grads.pose - base.grads.pose).norm() == 0.0);
    for (const auto& g : track.grads.gaussians) {
        CHECK(g.mean.norm() == 0.0);
        CHECK(g.opacity == 0.0);
    }
}

TEST_CASE("targets at masked pixels leave gradients untouched") {
    const Intrinsics k = small_camera();
    const Pose pose;
    const GaussianScene scene = random_scene(83, 4, pose, true);
    Rng rng(84);
    Image3 srgb(k.width, k.height, Vec3::Zero());
    Image1 depth(k.width, k.height, 0.0);
    for (size_t i = 0; i < srgb.size(); ++i) {
        srgb.at_index(i) = Vec3(0.2 + 0.4 * rng.uniform(), 0.2 + 0.4 * rng.uniform(),
                                0.2 + 0.4 * rng.uniform());
        depth.at_index(i) = 1.5 + rng.uniform();
    }
    srgb(4, 4) = Vec3(0.99, 0.99, 0.99);  // specular-hot, masked everywhere

    ObjectiveContext ctx;
    ctx.intrinsics = k;
    ctx.splat = smooth_options();
    LossWeights w;
    w.lambda_nfl_mapping = 0.05;

    const PreparedFrame f1 = prepare_frame(srgb, depth, 2.2);
    const MaskSet m1 = build_mask_set(f1.image_linear, f1.depth, 0.9, 1.0, 0.1);
    REQUIRE(m1.specular(4, 4) == 0);
    const ObjectiveResult r1 = total_objective(f1, scene, pose, m1, w, Phase::Mapping, ctx);

    Image3 srgb2 = srgb;
    srgb2(4, 4) = Vec3(0.995, 0.99, 0.992);
    const PreparedFrame f2 = prepare_frame(srgb2, depth, 2.2);
    const MaskSet m2 = build_mask_set(f2.image_linear, f2.depth, 0.9, 1.0, 0.1);
    const ObjectiveResult r2 = total_objective(f2, scene, pose, m2, w, Phase::Mapping, ctx);

    CHECK(r1.report.total == r2.report.total);
    CHECK((r1.grads.pose - r2.grads.pose).norm() == 0.0);
    for (size_t i = 0; i < scene.size(); ++i) {
        CHECK((r1.grads.gaussians[i].mean - r2.grads.gaussians[i].mean).norm() == 0.0);
        CHECK((r1.grads.gaussians[i].color - r2.grads.gaussians[i].color).norm() == 0.0);
    }
}
