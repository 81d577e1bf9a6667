#include "nflba/splatter.hpp"

#include <algorithm>
#include <numeric>

namespace nflba {

namespace {

using Mat23 = Eigen::Matrix<double, 2, 3>;

// Jacobian of the perspective projection at camera-space point m.
Mat23 projection_jacobian(const Vec3& m, const Intrinsics& k) {
    const double z = m.z();
    const double z2 = z * z;
    Mat23 j;
    j << k.fx / z, 0.0, -k.fx * m.x() / z2, 0.0, k.fy / z, -k.fy * m.y() / z2;
    return j;
}

// Linearization point for the EWA Jacobian. Centers far outside the frustum
// but barely past the near plane otherwise produce an unbounded x/z term that
// inflates the footprint across the whole image; clamping the view-space
// tangents bounds the Jacobian without moving the projected center.
Vec3 clamp_linearization(const Vec3& m, const Intrinsics& k, bool* cx, bool* cy) {
    const double limx = 1.3 * 0.5 * k.width / k.fx;
    const double limy = 1.3 * 0.5 * k.height / k.fy;
    const double tx = m.x() / m.z(), ty = m.y() / m.z();
    const double txc = std::clamp(tx, -limx, limx);
    const double tyc = std::clamp(ty, -limy, limy);
    if (cx) *cx = txc != tx;
    if (cy) *cy = tyc != ty;
    return Vec3(txc * m.z(), tyc * m.z(), m.z());
}

// The shortest-axis index, or -1 when the two smallest scales coincide and
// the normal direction is undefined.
int shortest_axis(const Vec3& scale) {
    Vec3 ev = scale.cwiseProduct(scale);
    int idx = 0;
    if (ev(1) < ev(idx)) idx = 1;
    if (ev(2) < ev(idx)) idx = 2;
    double second = std::numeric_limits<double>::infinity();
    for (int i = 0; i < 3; ++i)
        if (i != idx) second = std::min(second, ev(i));
    const double tol = 1e-9 * std::max(1.0, ev.maxCoeff());
    if (second - ev(idx) <= tol) return -1;
    return idx;
}

// d(R(q))/dq_j for a unit quaternion q = (w, x, y, z).
std::array<Mat3, 4> rotation_quat_jacobian(const Eigen::Quaterniond& q) {
    const double w = q.w(), x = q.x(), y = q.y(), z = q.z();
    std::array<Mat3, 4> d;
    d[0] << 0, -z, y, z, 0, -x, -y, x, 0;
    d[1] << 0, y, z, y, -2 * x, -w, z, w, -2 * x;
    d[2] << -2 * y, x, w, x, 0, z, -w, z, -2 * y;
    d[3] << -2 * z, -w, x, w, -2 * z, y, x, y, 0;
    for (auto& m : d) m *= 2.0;
    return d;
}

struct SplatAccum {
    Vec2 d_mu = Vec2::Zero();
    Mat2 d_cov = Mat2::Zero();
    double d_z = 0.0;
    Vec3 d_n = Vec3::Zero();
    Vec3 d_col = Vec3::Zero();
    double d_op = 0.0;

    bool zero() const {
        return d_mu.isZero(0) && d_cov.isZero(0) && d_z == 0.0 && d_n.isZero(0) &&
               d_col.isZero(0) && d_op == 0.0;
    }
};

struct TileGrid {
    int tiles_x = 0, tiles_y = 0, tile_size = 16;
    int count() const { return tiles_x * tiles_y; }
};

TileGrid make_grid(int w, int h, int tile_size) {
    TileGrid g;
    g.tile_size = std::max(1, tile_size);
    g.tiles_x = (w + g.tile_size - 1) / g.tile_size;
    g.tiles_y = (h + g.tile_size - 1) / g.tile_size;
    return g;
}

}  // namespace

Splat2D project_gaussian(const Gaussian3D& g, const Pose& pose, const Intrinsics& k,
                         const SplatOptions& opts) {
    Splat2D s;
    s.color = g.color;
    s.opacity = g.opacity;

    const Vec3 m = pose.transform(g.mean);
    s.cam_center = m;
    s.depth = m.z();
    if (m.z() < opts.near_plane) {
        s.culled = true;
        return s;
    }

    s.mean2d = Vec2(k.fx * m.x() / m.z() + k.cx, k.fy * m.y() / m.z() + k.cy);

    const Mat3 sigma_cam = pose.rotation * g.covariance() * pose.rotation.transpose();
    const Mat23 j = projection_jacobian(clamp_linearization(m, k, nullptr, nullptr), k);
    Mat2 cov = j * sigma_cam * j.transpose();
    cov(0, 0) += opts.lowpass;
    cov(1, 1) += opts.lowpass;
    s.cov2d = cov;

    const double det = cov(0, 0) * cov(1, 1) - cov(0, 1) * cov(1, 0);
    if (!(det > 1e-14)) {
        s.culled = true;
        return s;
    }
    s.cov2d_inv << cov(1, 1) / det, -cov(0, 1) / det, -cov(1, 0) / det, cov(0, 0) / det;

    if (opts.cull_sigma > 0.0) {
        // Conservative bound: 3-sigma circle of the major axis.
        const double half_trace = 0.5 * (cov(0, 0) + cov(1, 1));
        const double disc = std::sqrt(std::max(0.0, half_trace * half_trace - det));
        const double radius = opts.cull_sigma * std::sqrt(half_trace + disc);
        if (s.mean2d.x() + radius < -0.5 || s.mean2d.x() - radius > k.width - 0.5 ||
            s.mean2d.y() + radius < -0.5 || s.mean2d.y() - radius > k.height - 0.5) {
            s.culled = true;
            return s;
        }
    }

    const int axis = shortest_axis(g.scale);
    if (axis >= 0) {
        const Vec3 n_world = g.rotation.normalized().toRotationMatrix().col(axis);
        Vec3 n_cam = pose.rotation * n_world;
        s.normal_sign = n_cam.z() > 0.0 ? -1.0 : 1.0;
        s.normal_cam = s.normal_sign * n_cam;
        s.normal_valid = true;
    }
    return s;
}

RenderOutput render(const GaussianScene& scene, const Pose& pose, const Intrinsics& k,
                    const SplatOptions& opts) {
    if (scene.empty()) throw EmptySceneError("render: empty scene");
    const int w = k.width, h = k.height;

    RenderOutput out;
    out.width = w;
    out.height = h;
    out.opts = opts;
    out.color = Image3(w, h, Vec3::Zero());
    out.depth_raw = Image1(w, h, 0.0);
    out.normal_raw = Image3(w, h, Vec3::Zero());
    out.accum_alpha = Image1(w, h, 0.0);
    out.contributions.resize(static_cast<size_t>(w) * h);
    out.splats.resize(scene.size());

    const int threads = resolve_thread_count(opts.threads);
    parallel_for(scene.size(), threads, [&](size_t i) {
        out.splats[i] = project_gaussian(scene.gaussians[i], pose, k, opts);
        out.splats[i].source_index = static_cast<int>(i);
    });

    // Global near-to-far order, ties broken by source index.
    std::vector<int> order;
    order.reserve(scene.size());
    for (size_t i = 0; i < out.splats.size(); ++i)
        if (!out.splats[i].culled) order.push_back(static_cast<int>(i));
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (out.splats[a].depth != out.splats[b].depth)
            return out.splats[a].depth < out.splats[b].depth;
        return a < b;
    });

    const TileGrid grid = make_grid(w, h, opts.tile_size);
    std::vector<std::vector<int>> tile_lists(grid.count());
    for (int idx : order) {
        const Splat2D& s = out.splats[idx];
        int x0 = 0, x1 = w - 1, y0 = 0, y1 = h - 1;
        if (opts.cull_sigma > 0.0) {
            const double det = s.cov2d(0, 0) * s.cov2d(1, 1) - s.cov2d(0, 1) * s.cov2d(1, 0);
            const double half_trace = 0.5 * (s.cov2d(0, 0) + s.cov2d(1, 1));
            const double disc = std::sqrt(std::max(0.0, half_trace * half_trace - det));
            const double radius = opts.cull_sigma * std::sqrt(half_trace + disc);
            x0 = std::max(0, static_cast<int>(std::floor(s.mean2d.x() - radius)));
            x1 = std::min(w - 1, static_cast<int>(std::ceil(s.mean2d.x() + radius)));
            y0 = std::max(0, static_cast<int>(std::floor(s.mean2d.y() - radius)));
            y1 = std::min(h - 1, static_cast<int>(std::ceil(s.mean2d.y() + radius)));
            if (x0 > x1 || y0 > y1) continue;
        }
        for (int ty = y0 / grid.tile_size; ty <= y1 / grid.tile_size; ++ty)
            for (int tx = x0 / grid.tile_size; tx <= x1 / grid.tile_size; ++tx)
                tile_lists[ty * grid.tiles_x + tx].push_back(idx);
    }

    parallel_for(static_cast<size_t>(grid.count()), threads, [&](size_t t) {
        const int tx = static_cast<int>(t) % grid.tiles_x;
        const int ty = static_cast<int>(t) / grid.tiles_x;
        const int px0 = tx * grid.tile_size, px1 = std::min(w, px0 + grid.tile_size);
        const int py0 = ty * grid.tile_size, py1 = std::min(h, py0 + grid.tile_size);
        const auto& list = tile_lists[t];
        for (int py = py0; py < py1; ++py) {
            for (int px = px0; px < px1; ++px) {
                const Vec2 p(px, py);
                double transmittance = 1.0;
                Vec3 color = Vec3::Zero();
                double depth = 0.0;
                Vec3 normal = Vec3::Zero();
                auto& log = out.contributions[static_cast<size_t>(py) * w + px];
                for (int idx : list) {
                    const Splat2D& s = out.splats[idx];
                    const Vec2 d = p - s.mean2d;
                    const double power = 0.5 * d.dot(s.cov2d_inv * d);
                    const double alpha = s.opacity * std::exp(-power);
                    if (alpha < opts.alpha_cutoff) continue;
                    const double weight = alpha * transmittance;
                    color += weight * s.color;
                    depth += weight * s.depth;
                    if (s.normal_valid) normal += weight * s.normal_cam;
                    log.push_back({idx, alpha, transmittance});
                    transmittance *= 1.0 - alpha;
                    if (transmittance < opts.transmittance_cutoff) break;
                }
                out.color(px, py) = color;
                out.depth_raw(px, py) = depth;
                out.normal_raw(px, py) = normal;
                out.accum_alpha(px, py) = 1.0 - transmittance;
            }
        }
    });

    out.normal = Image3(w, h, Vec3::Zero());
    for (size_t i = 0; i < out.normal_raw.size(); ++i) {
        const Vec3& n = out.normal_raw.at_index(i);
        const double len = n.norm();
        if (len > 1e-6) out.normal.at_index(i) = n / len;
    }
    if (opts.normalized_depth) {
        out.depth = Image1(w, h, 0.0);
        for (size_t i = 0; i < out.depth_raw.size(); ++i) {
            const double a = out.accum_alpha.at_index(i);
            if (a > opts.accum_eps) out.depth.at_index(i) = out.depth_raw.at_index(i) / a;
        }
    } else {
        out.depth = out.depth_raw;
    }
    return out;
}

GradientSet render_backward(const GaussianScene& scene, const Pose& pose, const Intrinsics& k,
                            const RenderOutput& out, const RenderUpstream& up) {
    const int w = out.width, h = out.height;
    auto check_shape = [&](const auto& img, const char* name) {
        if (!img.empty() && !img.same_shape(w, h))
            throw InvalidArgumentError(std::string("render_backward: upstream shape mismatch: ") + name);
    };
    check_shape(up.color, "color");
    check_shape(up.depth, "depth");
    check_shape(up.depth_raw, "depth_raw");
    check_shape(up.normal, "normal");
    check_shape(up.accum_alpha, "accum_alpha");
    if (scene.size() != out.splats.size())
        throw InvalidArgumentError("render_backward: scene size does not match render output");

    const size_t n = scene.size();
    const SplatOptions& opts = out.opts;
    const int threads = resolve_thread_count(opts.threads);
    const TileGrid grid = make_grid(w, h, opts.tile_size);

    // Stage 1: per-pixel reverse compositing into per-tile splat accumulators,
    // merged in tile order for determinism.
    std::vector<std::vector<SplatAccum>> tile_accums(grid.count());
    parallel_for(static_cast<size_t>(grid.count()), threads, [&](size_t t) {
        const int tx = static_cast<int>(t) % grid.tiles_x;
        const int ty = static_cast<int>(t) / grid.tiles_x;
        const int px0 = tx * grid.tile_size, px1 = std::min(w, px0 + grid.tile_size);
        const int py0 = ty * grid.tile_size, py1 = std::min(h, py0 + grid.tile_size);
        std::vector<SplatAccum> acc(n);
        bool touched = false;
        for (int py = py0; py < py1; ++py) {
            for (int px = px0; px < px1; ++px) {
                const auto& log = out.contributions[static_cast<size_t>(py) * w + px];
                if (log.empty()) continue;

                const Vec3 u_color = up.color.empty() ? Vec3::Zero() : up.color(px, py);
                double u_depth_raw = up.depth_raw.empty() ? 0.0 : up.depth_raw(px, py);
                double u_accum = up.accum_alpha.empty() ? 0.0 : up.accum_alpha(px, py);
                if (!up.depth.empty()) {
                    const double ud = up.depth(px, py);
                    if (opts.normalized_depth) {
                        const double a = out.accum_alpha(px, py);
                        if (a > opts.accum_eps) {
                            u_depth_raw += ud / a;
                            u_accum -= ud * out.depth_raw(px, py) / (a * a);
                        }
                    } else {
                        u_depth_raw += ud;
                    }
                }
                Vec3 u_normal_raw = Vec3::Zero();
                if (!up.normal.empty()) {
                    const Vec3& raw = out.normal_raw(px, py);
                    const double len = raw.norm();
                    if (len > 1e-6) {
                        const Vec3 unit = raw / len;
                        const Vec3& un = up.normal(px, py);
                        u_normal_raw = (un - unit * unit.dot(un)) / len;
                    }
                }
                if (u_color.isZero(0) && u_depth_raw == 0.0 && u_normal_raw.isZero(0) &&
                    u_accum == 0.0)
                    continue;
                touched = true;

                const Vec2 p(px, py);
                // Suffix compositing state: what the terms behind contribution
                // k add per unit of entering transmittance.
                Vec3 behind_color = Vec3::Zero();
                double behind_depth = 0.0;
                Vec3 behind_normal = Vec3::Zero();
                double behind_accum = 0.0;
                for (size_t c = log.size(); c-- > 0;) {
                    const Contribution& ct = log[c];
                    const Splat2D& s = out.splats[ct.source_index];
                    SplatAccum& a = acc[ct.source_index];
                    const double weight = ct.alpha * ct.transmittance;

                    double d_alpha =
                        ct.transmittance *
                        (u_color.dot(s.color - behind_color) +
                         u_depth_raw * (s.depth - behind_depth) + u_accum * (1.0 - behind_accum));
                    if (s.normal_valid)
                        d_alpha += ct.transmittance * u_normal_raw.dot(s.normal_cam - behind_normal);
                    else
                        d_alpha += ct.transmittance * u_normal_raw.dot(-behind_normal);

                    a.d_col += weight * u_color;
                    a.d_z += weight * u_depth_raw;
                    if (s.normal_valid) a.d_n += weight * u_normal_raw;
                    a.d_op += (ct.alpha / s.opacity) * d_alpha;

                    const Vec2 diff = p - s.mean2d;
                    const Vec2 v = s.cov2d_inv * diff;
                    a.d_mu += (d_alpha * ct.alpha) * v;
                    a.d_cov += (0.5 * d_alpha * ct.alpha) * (v * v.transpose());

                    behind_color = ct.alpha * s.color + (1.0 - ct.alpha) * behind_color;
                    behind_depth = ct.alpha * s.depth + (1.0 - ct.alpha) * behind_depth;
                    if (s.normal_valid)
                        behind_normal = ct.alpha * s.normal_cam + (1.0 - ct.alpha) * behind_normal;
                    else
                        behind_normal = (1.0 - ct.alpha) * behind_normal;
                    behind_accum = ct.alpha + (1.0 - ct.alpha) * behind_accum;
                }
            }
        }
        if (touched) tile_accums[t] = std::move(acc);
    });

    std::vector<SplatAccum> total(n);
    for (const auto& acc : tile_accums) {
        if (acc.empty()) continue;
        for (size_t i = 0; i < n; ++i) {
            total[i].d_mu += acc[i].d_mu;
            total[i].d_cov += acc[i].d_cov;
            total[i].d_z += acc[i].d_z;
            total[i].d_n += acc[i].d_n;
            total[i].d_col += acc[i].d_col;
            total[i].d_op += acc[i].d_op;
        }
    }

    // Stage 2: chain splat-space gradients to Gaussian parameters and the
    // pose tangent.
    GradientSet grads;
    grads.gaussians.resize(n);
    std::vector<Vec6> pose_contrib(n, Vec6::Zero());
    parallel_for(n, threads, [&](size_t i) {
        const SplatAccum& a = total[i];
        const Splat2D& s = out.splats[i];
        if (s.culled || a.zero()) return;
        const Gaussian3D& g = scene.gaussians[i];
        GaussianGrad& gg = grads.gaussians[i];

        gg.color = a.d_col;
        gg.opacity = a.d_op;

        const Vec3 m = s.cam_center;
        const double z = m.z(), z2 = z * z, z3 = z2 * z;
        bool clx = false, cly = false;
        const Vec3 ml = clamp_linearization(m, k, &clx, &cly);
        const Mat23 jp = projection_jacobian(m, k);
        const Mat23 j = projection_jacobian(ml, k);
        const Mat3 rq = g.rotation.normalized().toRotationMatrix();
        const Mat3 sigma = rq * g.scale.cwiseProduct(g.scale).asDiagonal() * rq.transpose();
        const Mat3 sigma_cam = pose.rotation * sigma * pose.rotation.transpose();

        Vec3 d_mc = jp.transpose() * a.d_mu;
        d_mc.z() += a.d_z;

        // EWA covariance: both through Sigma_cam and through the Jacobian's
        // dependence on the camera-space center. When the linearization point
        // is clamped, x_lin = +-lim * z, so d/dx vanishes and the z chain
        // picks up one power of x_lin/z instead of two.
        const Mat2 g2 = a.d_cov;
        const Mat3 d_sigma_cam = j.transpose() * g2 * j;
        const Mat23 dj = 2.0 * g2 * j * sigma_cam;
        if (!clx) d_mc.x() += dj(0, 2) * (-k.fx / z2);
        if (!cly) d_mc.y() += dj(1, 2) * (-k.fy / z2);
        d_mc.z() += dj(0, 0) * (-k.fx / z2) + dj(1, 1) * (-k.fy / z2) +
                    dj(0, 2) * ((clx ? 1.0 : 2.0) * k.fx * ml.x() / z3) +
                    dj(1, 2) * ((cly ? 1.0 : 2.0) * k.fy * ml.y() / z3);

        gg.mean = pose.rotation.transpose() * d_mc;

        Vec6 dpose = Vec6::Zero();
        dpose.head<3>() = d_mc;
        dpose.tail<3>() = m.cross(d_mc);
        for (int ax = 0; ax < 3; ++ax) {
            const Mat3 e = skew(Vec3::Unit(ax));
            const Mat3 comm = e * sigma_cam - sigma_cam * e;
            dpose(3 + ax) += d_sigma_cam.cwiseProduct(comm).sum();
        }

        Mat3 d_rq = Mat3::Zero();
        const Mat3 d_sigma = pose.rotation.transpose() * d_sigma_cam * pose.rotation;
        const Mat3 gs = 0.5 * (d_sigma + d_sigma.transpose());
        d_rq = 2.0 * gs * rq * g.scale.cwiseProduct(g.scale).asDiagonal();
        for (int ax = 0; ax < 3; ++ax) {
            const Vec3 col = rq.col(ax);
            gg.log_scale(ax) = 2.0 * g.scale(ax) * g.scale(ax) * col.dot(gs * col);
        }

        if (s.normal_valid && !a.d_n.isZero(0)) {
            dpose.tail<3>() += s.normal_cam.cross(a.d_n);
            const int axis = shortest_axis(g.scale);
            d_rq.col(axis) += s.normal_sign * (pose.rotation.transpose() * a.d_n);
        }

        const auto dr_dq = rotation_quat_jacobian(g.rotation.normalized());
        Vec4 dq_raw;
        for (int qi = 0; qi < 4; ++qi) dq_raw(qi) = d_rq.cwiseProduct(dr_dq[qi]).sum();
        const Eigen::Quaterniond qn = g.rotation.normalized();
        const Vec4 qv(qn.w(), qn.x(), qn.y(), qn.z());
        gg.quaternion = dq_raw - qv * qv.dot(dq_raw);

        pose_contrib[i] = dpose;
    });

    for (size_t i = 0; i < n; ++i) grads.pose += pose_contrib[i];
    return grads;
}

}  // namespace nflba
