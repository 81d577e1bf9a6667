#pragma once

#include "nflba/common.hpp"
#include "nflba/geometry.hpp"

namespace nflba {

// Per-pixel near-field lighting quantities for a light co-located with the
// camera at the origin of camera coordinates:
//   d(p)      = |X(p)|
//   light_dir = -X(p) / d(p)                 (surface -> light, unit)
//   angular   = max(0, (-light_dir) . axis)^beta   (1 when beta == 0)
//   atten     = angular / d(p)^2
//   shading   = atten * max(0, light_dir . N(p))
// Pixels with d(p) < 1e-6 or no geometry are zero-filled.
struct ShadingField {
    Image3 points;       // camera-space positions, mm
    Image3 light_dir;    // unit where valid, zero elsewhere
    Image1 attenuation;  // mm^-2
    Image1 shading;
    double beta = 0.0;
    Vec3 axis = Vec3(0, 0, 1);  // optical axis in camera coordinates
};

struct MaskSet {
    MaskImage specular;     // 0 on dilated saturated highlights
    MaskImage crop;         // 1 inside the central crop window
    MaskImage valid_depth;  // 1 where depth > near plane
    MaskImage combined;     // AND of the three above

    void rebuild_combined();
};

// X(p) = depth(p) * K^-1 [p_x, p_y, 1]^T. Zero-depth pixels map to the origin.
Image3 backproject(const Image1& depth, const Intrinsics& k);

ShadingField shading_field(const Image3& points, const Image3& normals, double beta,
                           const Vec3& axis = Vec3(0, 0, 1));

// Elementwise power gamma-expansion; out-of-range inputs are clamped first and
// counted in *clamped_count when provided.
Image3 srgb_to_linear(const Image3& image, double gamma, size_t* clamped_count = nullptr);
Image3 linear_to_srgb(const Image3& image, double gamma);

// HSV value-channel normalization: converts each pixel to HSV, forces V = 1,
// converts back to RGB, then gamma-linearizes. Black pixels map to white.
Image3 estimate_albedo(const Image3& image_srgb, double gamma);

Vec3 rgb_to_hsv(const Vec3& rgb);
Vec3 hsv_to_rgb(const Vec3& hsv);

// Zero where any channel exceeds tau, after one 3x3 dilation of the
// masked-out region.
MaskImage specular_mask(const Image3& image_linear, double tau);

// Assembles all mask channels for one frame. An empty depth image yields an
// all-ones valid_depth mask (monocular input).
MaskSet build_mask_set(const Image3& image_linear, const Image1& depth_mm, double tau,
                       double crop_fraction, double near_plane_mm);

// Centered rectangle of side round-to-even(fraction * dimension).
MaskImage center_crop_mask(int width, int height, double fraction);

}  // namespace nflba
