#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "nflba/shading.hpp"

using namespace nflba;

namespace {

// Independent HSV conversion pair used as an oracle, written with the
// offset-modulo formulation rather than the sector switch used in the library.
Vec3 reference_rgb_to_hsv(const Vec3& rgb) {
    const double v = rgb.maxCoeff();
    const double c = v - rgb.minCoeff();
    double h = 0.0;
    if (c > 0.0) {
        if (v == rgb.x())
            h = std::fmod((rgb.y() - rgb.z()) / c, 6.0);
        else if (v == rgb.y())
            h = (rgb.z() - rgb.x()) / c + 2.0;
        else
            h = (rgb.x() - rgb.y()) / c + 4.0;
        h *= 60.0;
        if (h < 0.0) h += 360.0;
    }
    const double s = v > 0.0 ? c / v : 0.0;
    return Vec3(h, s, v);
}

Vec3 reference_hsv_to_rgb(const Vec3& hsv) {
    auto f = [&](double n) {
        const double k = std::fmod(n + hsv.x() / 60.0, 6.0);
        return hsv.z() - hsv.z() * hsv.y() * std::max(0.0, std::min({k, 4.0 - k, 1.0}));
    };
    return Vec3(f(5.0), f(3.0), f(1.0));
}

Intrinsics test_camera() { return Intrinsics{100, 100, 32, 32, 64, 64}; }

}  // namespace

TEST_CASE("backprojection inverts the pinhole model") {
    const Intrinsics k{100, 100, 128, 128, 256, 256};
    Image1 depth(256, 256, 0.0);
    depth(128, 128) = 3.0;
    depth(128 + 100, 128) = 2.0;
    const Image3 pts = backproject(depth, k);
    CHECK((pts(128, 128) - Vec3(0, 0, 3)).norm() < 1e-12);
    CHECK((pts(228, 128) - Vec3(2, 0, 2)).norm() < 1e-12);
    CHECK(pts(0, 0).norm() == 0.0);
}

TEST_CASE("shading of a frontal surface follows the inverse square law") {
    Image3 pts(1, 1, Vec3(0, 0, 2));
    Image3 normals(1, 1, Vec3(0, 0, -1));
    const ShadingField f = shading_field(pts, normals, 0.0);
    CHECK((f.light_dir(0, 0) - Vec3(0, 0, -1)).norm() < 1e-12);
    CHECK(f.attenuation(0, 0) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(f.shading(0, 0) == doctest::Approx(0.25).epsilon(1e-12));

    for (double d : {0.5, 1.0, 2.0, 5.0, 37.0}) {
        Image3 p(1, 1, Vec3(0, 0, d));
        const ShadingField fd = shading_field(p, normals, 0.0);
        CHECK(fd.shading(0, 0) * d * d == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("shading follows the cosine of the surface tilt") {
    Image3 pts(1, 1, Vec3(0, 0, 2));
    const double a = M_PI / 3.0;
    Image3 normals(1, 1, Vec3(std::sin(a), 0, -std::cos(a)));
    const ShadingField f = shading_field(pts, normals, 0.0);
    CHECK(f.shading(0, 0) == doctest::Approx(0.125).epsilon(1e-12));
}

TEST_CASE("back-facing surfaces receive no light") {
    Image3 pts(1, 1, Vec3(0, 0, 2));
    Image3 normals(1, 1, Vec3(0, 0, 1));
    const ShadingField f = shading_field(pts, normals, 0.0);
    CHECK(f.shading(0, 0) == 0.0);
}

TEST_CASE("angular falloff applies only with a positive exponent") {
    Image3 pts(1, 1, Vec3(1, 0, 1));
    Image3 normals(1, 1, Vec3(0, 0, -1));
    const ShadingField flat = shading_field(pts, normals, 0.0);
    CHECK(flat.attenuation(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
    const ShadingField beta2 = shading_field(pts, normals, 2.0);
    CHECK(beta2.attenuation(0, 0) == doctest::Approx(0.25).epsilon(1e-9));
}

TEST_CASE("points at the camera origin are masked out of the field") {
    Image3 pts(2, 1, Vec3::Zero());
    pts(1, 0) = Vec3(0, 0, 1);
    Image3 normals(2, 1, Vec3(0, 0, -1));
    const ShadingField f = shading_field(pts, normals, 0.0);
    CHECK(f.light_dir(0, 0).norm() == 0.0);
    CHECK(f.attenuation(0, 0) == 0.0);
    CHECK(f.shading(0, 0) == 0.0);
    CHECK(f.shading(1, 0) == doctest::Approx(1.0));
}

TEST_CASE("shading field stays well formed on random geometry") {
    Rng rng(29);
    Image3 pts(8, 8, Vec3::Zero());
    Image3 normals(8, 8, Vec3::Zero());
    for (size_t i = 0; i < pts.size(); ++i) {
        pts.at_index(i) = Vec3(rng.normal(), rng.normal(), 2.0 + rng.uniform());
        normals.at_index(i) = Vec3(rng.normal(), rng.normal(), rng.normal()).normalized();
    }
    const ShadingField f = shading_field(pts, normals, 0.0);
    for (size_t i = 0; i < pts.size(); ++i) {
        CHECK(std::abs(f.light_dir.at_index(i).norm() - 1.0) < 1e-6);
        CHECK(f.attenuation.at_index(i) > 0.0);
        CHECK(f.shading.at_index(i) >= 0.0);
    }
}

TEST_CASE("doubling all points quarters the shading exactly") {
    Rng rng(31);
    Image3 pts(4, 4, Vec3::Zero());
    Image3 normals(4, 4, Vec3::Zero());
    for (size_t i = 0; i < pts.size(); ++i) {
        pts.at_index(i) = Vec3(rng.normal(), rng.normal(), 1.5 + rng.uniform());
        normals.at_index(i) = Vec3(rng.normal(), rng.normal(), -1.0 - rng.uniform()).normalized();
    }
    Image3 scaled = pts;
    for (size_t i = 0; i < scaled.size(); ++i) scaled.at_index(i) *= 2.0;
    const ShadingField f1 = shading_field(pts, normals, 0.0);
    const ShadingField f2 = shading_field(scaled, normals, 0.0);
    for (size_t i = 0; i < pts.size(); ++i)
        CHECK(f2.shading.at_index(i) == f1.shading.at_index(i) / 4.0);
}

TEST_CASE("gamma expansion fixes endpoints and matches the power law") {
    Image3 img(2, 2, Vec3::Zero());
    img(0, 0) = Vec3(0, 0.5, 1);
    const Image3 lin = srgb_to_linear(img, 2.2);
    CHECK(lin(0, 0).x() == 0.0);
    CHECK(lin(0, 0).y() == doctest::Approx(std::pow(0.5, 2.2)).epsilon(1e-12));
    CHECK(lin(0, 0).y() == doctest::Approx(0.21764).epsilon(1e-4));
    CHECK(lin(0, 0).z() == 1.0);

    const Image3 same = srgb_to_linear(img, 1.0);
    for (size_t i = 0; i < img.size(); ++i) CHECK((same.at_index(i) - img.at_index(i)).norm() == 0.0);
}

TEST_CASE("gamma expansion clamps and counts out-of-range values") {
    Image3 img(2, 1, Vec3::Zero());
    img(0, 0) = Vec3(-0.2, 0.5, 1.5);
    size_t clamped = 0;
    const Image3 lin = srgb_to_linear(img, 2.2, &clamped);
    CHECK(clamped == 2);
    CHECK(lin(0, 0).x() == 0.0);
    CHECK(lin(0, 0).z() == 1.0);
}

TEST_CASE("gamma compression inverts expansion") {
    Rng rng(37);
    Image3 img(4, 4, Vec3::Zero());
    for (size_t i = 0; i < img.size(); ++i)
        img.at_index(i) = Vec3(rng.uniform(), rng.uniform(), rng.uniform());
    const Image3 round = linear_to_srgb(srgb_to_linear(img, 2.2), 2.2);
    for (size_t i = 0; i < img.size(); ++i)
        CHECK((round.at_index(i) - img.at_index(i)).norm() < 1e-12);
}

TEST_CASE("hsv conversions agree with an independent formulation") {
    Rng rng(41);
    for (int trial = 0; trial < 200; ++trial) {
        const Vec3 rgb(rng.uniform(), rng.uniform(), rng.uniform());
        const Vec3 hsv = rgb_to_hsv(rgb);
        const Vec3 ref = reference_rgb_to_hsv(rgb);
        CHECK(std::abs(hsv.y() - ref.y()) < 1e-9);
        CHECK(std::abs(hsv.z() - ref.z()) < 1e-9);
        const double dh = std::abs(hsv.x() - ref.x());
        CHECK(std::min(dh, 360.0 - dh) < 1e-6);
        CHECK((hsv_to_rgb(hsv) - rgb).norm() < 1e-12);
        CHECK((reference_hsv_to_rgb(hsv) - rgb).norm() < 1e-9);
    }
}

TEST_CASE("albedo of a gray pixel is white") {
    Image3 img(1, 1, Vec3(0.3, 0.3, 0.3));
    const Image3 alb = estimate_albedo(img, 2.2);
    CHECK((alb(0, 0) - Vec3(1, 1, 1)).norm() < 1e-12);
}

TEST_CASE("albedo rescales the value channel to one before linearization") {
    Image3 img(1, 1, Vec3(0.5, 0.25, 0.25));
    const Image3 alb = estimate_albedo(img, 2.2);
    CHECK(alb(0, 0).x() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(alb(0, 0).y() == doctest::Approx(std::pow(0.5, 2.2)).epsilon(1e-9));
    CHECK(alb(0, 0).z() == doctest::Approx(std::pow(0.5, 2.2)).epsilon(1e-9));
}

TEST_CASE("albedo of black pixels falls back to white") {
    Image3 img(1, 1, Vec3::Zero());
    const Image3 alb = estimate_albedo(img, 2.2);
    CHECK((alb(0, 0) - Vec3(1, 1, 1)).norm() == 0.0);
}

TEST_CASE("albedo max channel is exactly one for any non-black pixel") {
    Rng rng(43);
    Image3 img(16, 1, Vec3::Zero());
    for (size_t i = 0; i < img.size(); ++i)
        img.at_index(i) = Vec3(0.05 + 0.95 * rng.uniform(), 0.05 + 0.95 * rng.uniform(),
                               0.05 + 0.95 * rng.uniform());
    const Image3 alb = estimate_albedo(img, 2.2);
    for (size_t i = 0; i < alb.size(); ++i) CHECK(alb.at_index(i).maxCoeff() == 1.0);
}

TEST_CASE("specular mask keeps moderate images untouched") {
    Image3 img(5, 5, Vec3(0.5, 0.5, 0.5));
    const MaskImage m = specular_mask(img, 0.9);
    CHECK(count_nonzero(m) == 25);
}

TEST_CASE("specular mask removes a highlight and its ring") {
    Image3 img(5, 5, Vec3(0.5, 0.5, 0.5));
    img(2, 2) = Vec3(1, 1, 1);
    const MaskImage m = specular_mask(img, 0.9);
    CHECK(count_nonzero(m) == 25 - 9);
    for (int y = 1; y <= 3; ++y)
        for (int x = 1; x <= 3; ++x) CHECK(m(x, y) == 0);
    CHECK(m(0, 0) == 1);
}

TEST_CASE("specular mask with an unreachable threshold keeps everything") {
    Rng rng(47);
    Image3 img(6, 6, Vec3::Zero());
    for (size_t i = 0; i < img.size(); ++i)
        img.at_index(i) = Vec3(rng.uniform(), rng.uniform(), rng.uniform());
    CHECK(count_nonzero(specular_mask(img, 1.0 + 1e-9)) == 36);
}

TEST_CASE("specular mask grows monotonically with the threshold") {
    Rng rng(53);
    Image3 img(8, 8, Vec3::Zero());
    for (size_t i = 0; i < img.size(); ++i)
        img.at_index(i) = Vec3(rng.uniform(), rng.uniform(), rng.uniform());
    const MaskImage lo = specular_mask(img, 0.6);
    const MaskImage hi = specular_mask(img, 0.8);
    for (size_t i = 0; i < lo.size(); ++i)
        if (lo.at_index(i)) CHECK(hi.at_index(i) == 1);
}

TEST_CASE("center crop covers the whole image at fraction one") {
    CHECK(count_nonzero(center_crop_mask(9, 5, 1.0)) == 45);
}

TEST_CASE("center crop of an even image keeps the inner half") {
    const MaskImage m = center_crop_mask(8, 8, 0.5);
    CHECK(count_nonzero(m) == 16);
    for (int y = 2; y < 6; ++y)
        for (int x = 2; x < 6; ++x) CHECK(m(x, y) == 1);
    CHECK(m(1, 2) == 0);
}

TEST_CASE("center crop of an odd image matches the enumerated window") {
    // side = round-to-even(0.5 * 7) = 4, start = (7 - 4) / 2 = 1.
    const MaskImage m = center_crop_mask(7, 7, 0.5);
    for (int y = 0; y < 7; ++y)
        for (int x = 0; x < 7; ++x) {
            const bool inside = x >= 1 && x <= 4 && y >= 1 && y <= 4;
            CHECK(m(x, y) == (inside ? 1 : 0));
        }
}

TEST_CASE("center crop rejects fractions outside the unit interval") {
    CHECK_THROWS_AS(center_crop_mask(8, 8, 0.0), InvalidArgumentError);
    CHECK_THROWS_AS(center_crop_mask(8, 8, -0.5), InvalidArgumentError);
    CHECK_THROWS_AS(center_crop_mask(8, 8, 1.2), InvalidArgumentError);
}

TEST_CASE("mask set combines its channels with a logical and") {
    Rng rng(59);
    Image3 img(16, 16, Vec3(0.4, 0.3, 0.3));
    img(8, 8) = Vec3(0.99, 0.99, 0.99);
    Image1 depth(16, 16, 5.0);
    depth(1, 1) = 0.0;
    const MaskSet m = build_mask_set(srgb_to_linear(img, 2.2), depth, 0.9, 0.75, 0.1);
    CHECK(m.valid_depth(1, 1) == 0);
    CHECK(m.specular(8, 8) == 0);
    for (size_t i = 0; i < m.combined.size(); ++i) {
        const uint8_t expected =
            (m.specular.at_index(i) && m.crop.at_index(i) && m.valid_depth.at_index(i)) ? 1 : 0;
        CHECK(m.combined.at_index(i) == expected);
    }

    const MaskSet mono = build_mask_set(srgb_to_linear(img, 2.2), Image1(), 0.9, 1.0, 0.1);
    CHECK(count_nonzero(mono.valid_depth) == 256);
}
