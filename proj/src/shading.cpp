#include "nflba/shading.hpp"

namespace nflba {

void MaskSet::rebuild_combined() {
    combined = MaskImage(specular.width(), specular.height(), 0);
    for (size_t i = 0; i < combined.size(); ++i) {
        combined.at_index(i) =
            (specular.at_index(i) && crop.at_index(i) && valid_depth.at_index(i)) ? 1 : 0;
    }
}

Image3 backproject(const Image1& depth, const Intrinsics& k) {
    Image3 points(depth.width(), depth.height(), Vec3::Zero());
    for (int y = 0; y < depth.height(); ++y) {
        for (int x = 0; x < depth.width(); ++x) {
            const double d = depth(x, y);
            if (d <= 0.0) continue;
            points(x, y) = Vec3(d * (x - k.cx) / k.fx, d * (y - k.cy) / k.fy, d);
        }
    }
    return points;
}

ShadingField shading_field(const Image3& points, const Image3& normals, double beta,
                           const Vec3& axis) {
    const int w = points.width(), h = points.height();
    ShadingField f;
    f.points = points;
    f.light_dir = Image3(w, h, Vec3::Zero());
    f.attenuation = Image1(w, h, 0.0);
    f.shading = Image1(w, h, 0.0);
    f.beta = beta;
    f.axis = axis.normalized();
    for (size_t i = 0; i < points.size(); ++i) {
        const Vec3& x = points.at_index(i);
        const double d = x.norm();
        if (d < 1e-6) continue;  // singular at the camera; stays zero-filled
        const Vec3 ld = -x / d;
        double angular = 1.0;
        if (beta > 0.0) angular = std::pow(std::max(0.0, (-ld).dot(f.axis)), beta);
        const double atten = angular / (d * d);
        f.light_dir.at_index(i) = ld;
        f.attenuation.at_index(i) = atten;
        f.shading.at_index(i) = atten * std::max(0.0, ld.dot(normals.at_index(i)));
    }
    return f;
}

Image3 srgb_to_linear(const Image3& image, double gamma, size_t* clamped_count) {
    Image3 out(image.width(), image.height());
    size_t clamped = 0;
    for (size_t i = 0; i < image.size(); ++i) {
        Vec3 v = image.at_index(i);
        for (int c = 0; c < 3; ++c) {
            if (v[c] < 0.0 || v[c] > 1.0) {
                v[c] = clamp01(v[c]);
                ++clamped;
            }
            v[c] = std::pow(v[c], gamma);
        }
        out.at_index(i) = v;
    }
    if (clamped_count) *clamped_count = clamped;
    return out;
}

Image3 linear_to_srgb(const Image3& image, double gamma) {
    Image3 out(image.width(), image.height());
    const double inv = 1.0 / gamma;
    for (size_t i = 0; i < image.size(); ++i) {
        Vec3 v = image.at_index(i);
        for (int c = 0; c < 3; ++c) v[c] = std::pow(clamp01(v[c]), inv);
        out.at_index(i) = v;
    }
    return out;
}

Vec3 rgb_to_hsv(const Vec3& rgb) {
    const double mx = rgb.maxCoeff();
    const double mn = rgb.minCoeff();
    const double delta = mx - mn;
    double h = 0.0;
    if (delta > 0.0) {
        if (mx == rgb.x())
            h = 60.0 * std::fmod((rgb.y() - rgb.z()) / delta, 6.0);
        else if (mx == rgb.y())
            h = 60.0 * ((rgb.z() - rgb.x()) / delta + 2.0);
        else
            h = 60.0 * ((rgb.x() - rgb.y()) / delta + 4.0);
        if (h < 0.0) h += 360.0;
    }
    const double s = mx > 0.0 ? delta / mx : 0.0;
    return Vec3(h, s, mx);
}

Vec3 hsv_to_rgb(const Vec3& hsv) {
    const double h = hsv.x(), s = hsv.y(), v = hsv.z();
    const double c = v * s;
    const double hp = h / 60.0;
    const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    Vec3 rgb;
    if (hp < 1.0)
        rgb = Vec3(c, x, 0);
    else if (hp < 2.0)
        rgb = Vec3(x, c, 0);
    else if (hp < 3.0)
        rgb = Vec3(0, c, x);
    else if (hp < 4.0)
        rgb = Vec3(0, x, c);
    else if (hp < 5.0)
        rgb = Vec3(x, 0, c);
    else
        rgb = Vec3(c, 0, x);
    return rgb.array() + (v - c);
}

Image3 estimate_albedo(const Image3& image_srgb, double gamma) {
    Image3 out(image_srgb.width(), image_srgb.height());
    for (size_t i = 0; i < image_srgb.size(); ++i) {
        Vec3 hsv = rgb_to_hsv(image_srgb.at_index(i));
        hsv.z() = 1.0;  // V = 1; black pixels (S = 0) become white
        Vec3 rgb = hsv_to_rgb(hsv);
        for (int c = 0; c < 3; ++c) rgb[c] = std::pow(clamp01(rgb[c]), gamma);
        out.at_index(i) = rgb;
    }
    return out;
}

MaskImage specular_mask(const Image3& image_linear, double tau) {
    const int w = image_linear.width(), h = image_linear.height();
    MaskImage hot(w, h, 0);
    for (size_t i = 0; i < image_linear.size(); ++i)
        hot.at_index(i) = image_linear.at_index(i).maxCoeff() > tau ? 1 : 0;
    MaskImage mask(w, h, 1);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (!hot(x, y)) continue;
            for (int dy = -1; dy <= 1; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                    const int nx = x + dx, ny = y + dy;
                    if (nx >= 0 && nx < w && ny >= 0 && ny < h) mask(nx, ny) = 0;
                }
            }
        }
    }
    return mask;
}

MaskImage center_crop_mask(int width, int height, double fraction) {
    if (!(fraction > 0.0) || fraction > 1.0)
        throw InvalidArgumentError("center_crop_mask: fraction must be in (0, 1]");
    auto side = [fraction](int dim) {
        int s = 2 * static_cast<int>(std::lround(fraction * dim / 2.0));
        return std::min(s, dim);
    };
    const int sw = side(width), sh = side(height);
    const int x0 = (width - sw) / 2, y0 = (height - sh) / 2;
    MaskImage mask(width, height, 0);
    for (int y = y0; y < y0 + sh; ++y)
        for (int x = x0; x < x0 + sw; ++x) mask(x, y) = 1;
    return mask;
}

MaskSet build_mask_set(const Image3& image_linear, const Image1& depth_mm, double tau,
                       double crop_fraction, double near_plane_mm) {
    const int w = image_linear.width(), h = image_linear.height();
    MaskSet m;
    m.specular = specular_mask(image_linear, tau);
    m.crop = center_crop_mask(w, h, crop_fraction);
    m.valid_depth = MaskImage(w, h, 1);
    if (!depth_mm.empty()) {
        if (!depth_mm.same_shape(w, h))
            throw InvalidArgumentError("build_mask_set: depth shape mismatch");
        for (size_t i = 0; i < m.valid_depth.size(); ++i)
            m.valid_depth.at_index(i) = depth_mm.at_index(i) > near_plane_mm ? 1 : 0;
    }
    m.rebuild_combined();
    return m;
}

}  // namespace nflba
