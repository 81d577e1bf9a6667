#include "nflba/evalkit.hpp"

#include <Eigen/SVD>

#include <array>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

namespace nflba {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Trajectories and alignment
// ---------------------------------------------------------------------------

void Trajectory::push(long frame_index, const Pose& pose) {
    if (!frame_indices.empty() && frame_index <= frame_indices.back())
        throw InvalidArgumentError("trajectory indices must be strictly increasing");
    frame_indices.push_back(frame_index);
    poses.push_back(pose);
}

namespace {

void check_matched(const Trajectory& est, const Trajectory& gt, size_t min_size) {
    if (est.size() != gt.size()) throw InvalidArgumentError("trajectory length mismatch");
    if (est.size() < min_size)
        throw InvalidArgumentError("need at least " + std::to_string(min_size) + " poses");
    for (size_t i = 0; i < est.size(); ++i)
        if (est.frame_indices[i] != gt.frame_indices[i])
            throw InvalidArgumentError("trajectory frame indices do not match");
}

}  // namespace

AlignResult align_rigid(const Trajectory& est, const Trajectory& gt, bool with_scale) {
    check_matched(est, gt, 3);
    const size_t n = est.size();

    Vec3 mu_e = Vec3::Zero(), mu_g = Vec3::Zero();
    std::vector<Vec3> ce(n), cg(n);
    for (size_t i = 0; i < n; ++i) {
        ce[i] = est.poses[i].camera_center();
        cg[i] = gt.poses[i].camera_center();
        mu_e += ce[i];
        mu_g += cg[i];
    }
    mu_e /= static_cast<double>(n);
    mu_g /= static_cast<double>(n);

    Mat3 cross = Mat3::Zero();
    double var_e = 0.0;
    for (size_t i = 0; i < n; ++i) {
        cross += (cg[i] - mu_g) * (ce[i] - mu_e).transpose();
        var_e += (ce[i] - mu_e).squaredNorm();
    }
    cross /= static_cast<double>(n);
    var_e /= static_cast<double>(n);

    Eigen::JacobiSVD<Mat3> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Vec3 d = svd.singularValues();
    // Collinear centers leave the rotation about the common line free; the
    // cross-covariance then has rank <= 1.
    if (d(1) <= 1e-9 * std::max(1.0, d(0)))
        throw RankDeficiencyError("camera centers are (near) collinear; alignment is ambiguous");

    Mat3 s_fix = Mat3::Identity();
    if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) s_fix(2, 2) = -1.0;

    AlignResult out;
    out.rotation = svd.matrixU() * s_fix * svd.matrixV().transpose();
    if (with_scale) {
        if (!(var_e > 1e-18)) throw RankDeficiencyError("estimated centers are coincident");
        out.scale = (d.asDiagonal().toDenseMatrix() * s_fix).trace() / var_e;
    }
    out.translation = mu_g - out.scale * (out.rotation * mu_e);
    return out;
}

AteResult ate(const Trajectory& est, const Trajectory& gt, bool aligned, bool with_scale) {
    check_matched(est, gt, 1);

    AlignResult a;  // identity unless alignment is requested
    if (aligned) a = align_rigid(est, gt, with_scale);

    double sum_t = 0.0, sum_r = 0.0;
    for (size_t i = 0; i < est.size(); ++i) {
        const Vec3 c = a.apply(est.poses[i].camera_center());
        sum_t += (c - gt.poses[i].camera_center()).squaredNorm();

        // Transforming the estimate's world frame by (R, t) turns its
        // world-to-camera rotation R_e into R_e * R^T.
        const Mat3 rel =
            est.poses[i].rotation * a.rotation.transpose() * gt.poses[i].rotation.transpose();
        const double c_angle = std::clamp((rel.trace() - 1.0) / 2.0, -1.0, 1.0);
        sum_r += sq(std::acos(c_angle));
    }
    const double n = static_cast<double>(est.size());
    return {std::sqrt(sum_t / n), std::sqrt(sum_r / n) * 180.0 / M_PI};
}

// ---------------------------------------------------------------------------
// Image metrics
// ---------------------------------------------------------------------------

namespace {

std::array<double, 11> ssim_window_1d() {
    std::array<double, 11> w;
    double sum = 0.0;
    for (int i = 0; i < 11; ++i) {
        w[i] = std::exp(-sq(i - 5.0) / (2.0 * sq(1.5)));
        sum += w[i];
    }
    for (double& v : w) v /= sum;
    return w;
}

// Mean SSIM of one channel over the fully-covered (valid) region.
double ssim_channel(const Image3& a, const Image3& b, int ch) {
    static const std::array<double, 11> w1 = ssim_window_1d();
    const double c1 = sq(0.01), c2 = sq(0.03);  // dynamic range 1
    const int w = a.width(), h = a.height();

    double total = 0.0;
    long count = 0;
    for (int y = 5; y < h - 5; ++y) {
        for (int x = 5; x < w - 5; ++x) {
            double mx = 0, my = 0, mxx = 0, myy = 0, mxy = 0;
            for (int dy = -5; dy <= 5; ++dy) {
                for (int dx = -5; dx <= 5; ++dx) {
                    const double wt = w1[dy + 5] * w1[dx + 5];
                    const double va = a(x + dx, y + dy)[ch];
                    const double vb = b(x + dx, y + dy)[ch];
                    mx += wt * va;
                    my += wt * vb;
                    mxx += wt * va * va;
                    myy += wt * vb * vb;
                    mxy += wt * va * vb;
                }
            }
            const double sx = mxx - mx * mx;
            const double sy = myy - my * my;
            const double sxy = mxy - mx * my;
            total += ((2 * mx * my + c1) * (2 * sxy + c2)) /
                     ((mx * mx + my * my + c1) * (sx + sy + c2));
            ++count;
        }
    }
    return total / static_cast<double>(count);
}

}  // namespace

ImageMetrics image_metrics(const Image3& rendered, const Image3& target) {
    if (!rendered.same_shape(target) || rendered.empty())
        throw InvalidArgumentError("image_metrics: shape mismatch or empty input");
    if (rendered.width() < 11 || rendered.height() < 11)
        throw InvalidArgumentError("image_metrics: image smaller than the SSIM window");

    double se = 0.0;
    for (size_t i = 0; i < rendered.size(); ++i)
        se += (rendered.at_index(i) - target.at_index(i)).squaredNorm();
    const double mse = se / (3.0 * static_cast<double>(rendered.size()));

    ImageMetrics out;
    out.rmse = std::sqrt(mse);
    out.psnr_db = mse < 1e-10 ? 100.0 : 10.0 * std::log10(1.0 / mse);
    out.ssim = (ssim_channel(rendered, target, 0) + ssim_channel(rendered, target, 1) +
                ssim_channel(rendered, target, 2)) /
               3.0;
    return out;
}

double depth_rmse_mm(const Image1& rendered, const Image1& target) {
    if (!rendered.same_shape(target) || rendered.empty())
        throw InvalidArgumentError("depth_rmse: shape mismatch or empty input");
    double se = 0.0;
    long count = 0;
    for (size_t i = 0; i < rendered.size(); ++i) {
        if (target.at_index(i) <= 0.0) continue;
        se += sq(rendered.at_index(i) - target.at_index(i));
        ++count;
    }
    if (count == 0) throw InvalidArgumentError("depth_rmse: target has no valid pixels");
    return std::sqrt(se / static_cast<double>(count));
}

// ---------------------------------------------------------------------------
// Chamfer distance
// ---------------------------------------------------------------------------

namespace {

struct CellKey {
    long x, y, z;
    bool operator==(const CellKey& o) const { return x == o.x && y == o.y && z == o.z; }
};

struct CellHash {
    size_t operator()(const CellKey& k) const {
        return static_cast<size_t>(k.x * 73856093L ^ k.y * 19349663L ^ k.z * 83492791L);
    }
};

}  // namespace

double chamfer_gt_to_est(const std::vector<Vec3>& gt_cloud, const std::vector<Vec3>& est_cloud) {
    if (gt_cloud.empty() || est_cloud.empty())
        throw InvalidArgumentError("chamfer: point clouds must be non-empty");

    Vec3 lo = est_cloud[0], hi = est_cloud[0];
    for (const Vec3& p : est_cloud) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    const double diag = (hi - lo).norm();

    // Tiny or degenerate estimates are cheaper brute force, and a collapsed
    // bounding box would make the grid cells meaningless anyway.
    if (est_cloud.size() < 512 || diag < 1e-9) {
        double total = 0.0;
        for (const Vec3& q : gt_cloud) {
            double best_sq = std::numeric_limits<double>::infinity();
            for (const Vec3& p : est_cloud) best_sq = std::min(best_sq, (p - q).squaredNorm());
            total += std::sqrt(best_sq);
        }
        return total / static_cast<double>(gt_cloud.size());
    }

    const double cell = diag / std::cbrt(static_cast<double>(est_cloud.size()));

    std::unordered_map<CellKey, std::vector<int>, CellHash> grid;
    auto key_of = [&](const Vec3& p) {
        return CellKey{static_cast<long>(std::floor(p.x() / cell)),
                       static_cast<long>(std::floor(p.y() / cell)),
                       static_cast<long>(std::floor(p.z() / cell))};
    };
    for (size_t i = 0; i < est_cloud.size(); ++i)
        grid[key_of(est_cloud[i])].push_back(static_cast<int>(i));
    const CellKey kmin = key_of(lo);
    const CellKey kmax = key_of(hi);

    double total = 0.0;
    for (const Vec3& q : gt_cloud) {
        const CellKey c = key_of(q);
        // Rings closer than the occupied cell range are empty; start there.
        const long ring_start =
            std::max({0L, kmin.x - c.x, c.x - kmax.x, kmin.y - c.y, c.y - kmax.y, kmin.z - c.z,
                      c.z - kmax.z});
        const long ring_last = ring_start + std::max({kmax.x - kmin.x, kmax.y - kmin.y,
                                                      kmax.z - kmin.z}) +
                               1;

        double best_sq = std::numeric_limits<double>::infinity();
        // Expanding Chebyshev shells. After rings 0..r-1 every unexamined
        // point is at least (r-1) * cell away, so the best candidate is exact
        // once it is within that bound.
        for (long ring = ring_start; ring <= ring_last; ++ring) {
            if (best_sq <= sq(static_cast<double>(ring - 1) * cell)) break;
            for (long dz = -ring; dz <= ring; ++dz) {
                for (long dy = -ring; dy <= ring; ++dy) {
                    for (long dx = -ring; dx <= ring; ++dx) {
                        if (std::max({std::labs(dx), std::labs(dy), std::labs(dz)}) != ring)
                            continue;
                        const auto it = grid.find(CellKey{c.x + dx, c.y + dy, c.z + dz});
                        if (it == grid.end()) continue;
                        for (const int idx : it->second)
                            best_sq = std::min(best_sq, (est_cloud[idx] - q).squaredNorm());
                    }
                }
            }
        }
        total += std::sqrt(best_sq);
    }
    return total / static_cast<double>(gt_cloud.size());
}

// ---------------------------------------------------------------------------
// PLY export
// ---------------------------------------------------------------------------

void export_ply(const std::string& path, const std::vector<Vec3>& points,
                const std::vector<Vec3>& colors_linear, double gamma) {
    if (points.empty()) throw InvalidArgumentError("export_ply: empty point set");
    if (points.size() != colors_linear.size())
        throw InvalidArgumentError("export_ply: point/color count mismatch");

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");

    out << "ply\nformat binary_little_endian 1.0\n"
        << "element vertex " << points.size() << "\n"
        << "property float x\nproperty float y\nproperty float z\n"
        << "property uchar red\nproperty uchar green\nproperty uchar blue\n"
        << "end_header\n";

    for (size_t i = 0; i < points.size(); ++i) {
        const float xyz[3] = {static_cast<float>(points[i].x()),
                              static_cast<float>(points[i].y()),
                              static_cast<float>(points[i].z())};
        out.write(reinterpret_cast<const char*>(xyz), sizeof(xyz));
        unsigned char rgb[3];
        for (int c = 0; c < 3; ++c)
            rgb[c] = static_cast<unsigned char>(
                std::lround(std::pow(clamp01(colors_linear[i][c]), 1.0 / gamma) * 255.0));
        out.write(reinterpret_cast<const char*>(rgb), sizeof(rgb));
    }
    if (!out) throw IoError("write failed for " + path);
}

void export_ply(const std::string& path, const GaussianScene& scene, double gamma) {
    if (scene.empty()) throw InvalidArgumentError("export_ply: empty scene");
    std::vector<Vec3> points, colors;
    points.reserve(scene.size());
    colors.reserve(scene.size());
    for (const Gaussian3D& g : scene.gaussians) {
        points.push_back(g.mean);
        colors.push_back(g.color);
    }
    export_ply(path, points, colors, gamma);
}

PlyCloud load_ply(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);

    std::string line;
    size_t vertex_count = 0;
    bool header_done = false;
    std::vector<std::string> properties;
    while (std::getline(in, line)) {
        std::istringstream ss(line);
        std::string word;
        ss >> word;
        if (word == "element") {
            std::string what;
            ss >> what >> vertex_count;
            if (what != "vertex") throw SchemaError("load_ply: unsupported element " + what);
        } else if (word == "property") {
            std::string type, name;
            ss >> type >> name;
            properties.push_back(name);
        } else if (word == "end_header") {
            header_done = true;
            break;
        } else if (word == "format" && line != "format binary_little_endian 1.0") {
            throw SchemaError("load_ply: unsupported format line: " + line);
        }
    }
    const std::vector<std::string> expected = {"x", "y", "z", "red", "green", "blue"};
    if (!header_done || properties != expected)
        throw SchemaError("load_ply: unexpected header layout");

    PlyCloud cloud;
    cloud.points.resize(vertex_count);
    cloud.colors.resize(vertex_count);
    for (size_t i = 0; i < vertex_count; ++i) {
        float xyz[3];
        unsigned char rgb[3];
        in.read(reinterpret_cast<char*>(xyz), sizeof(xyz));
        in.read(reinterpret_cast<char*>(rgb), sizeof(rgb));
        if (!in) throw IoError("load_ply: truncated vertex data");
        cloud.points[i] = Vec3(xyz[0], xyz[1], xyz[2]);
        cloud.colors[i] = Vec3(rgb[0], rgb[1], rgb[2]) / 255.0;
    }
    return cloud;
}

// ---------------------------------------------------------------------------
// metrics.json
// ---------------------------------------------------------------------------

void write_metrics_json(const std::string& path, const MetricsReport& report) {
    json per_frame = json::array();
    for (const FrameMetrics& f : report.per_frame)
        per_frame.push_back({{"frame_index", f.frame_index},
                             {"psnr_db", f.psnr_db},
                             {"ssim", f.ssim},
                             {"rmse", f.rmse},
                             {"depth_rmse_mm", f.depth_rmse_mm}});
    const json j = {{"ate_t_mm", report.ate_t_mm},
                    {"ate_r_deg", report.ate_r_deg},
                    {"psnr_db_mean", report.psnr_db_mean},
                    {"ssim_mean", report.ssim_mean},
                    {"depth_rmse_mm", report.depth_rmse_mm},
                    {"chamfer_mm", report.chamfer_mm},
                    {"per_frame", per_frame},
                    {"config_digest", report.config_digest},
                    {"metadata", {{"psnr_space", "gamma-encoded"}}}};
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << j.dump(2) << "\n";
    if (!out) throw IoError("write failed for " + path);
}

MetricsReport read_metrics_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw SchemaError(path + ": " + e.what());
    }
    MetricsReport r;
    try {
        r.ate_t_mm = j.at("ate_t_mm").get<double>();
        r.ate_r_deg = j.at("ate_r_deg").get<double>();
        r.psnr_db_mean = j.at("psnr_db_mean").get<double>();
        r.ssim_mean = j.at("ssim_mean").get<double>();
        r.depth_rmse_mm = j.at("depth_rmse_mm").get<double>();
        r.chamfer_mm = j.at("chamfer_mm").get<double>();
        r.config_digest = j.at("config_digest").get<std::string>();
        for (const json& f : j.at("per_frame")) {
            FrameMetrics fm;
            fm.frame_index = f.at("frame_index").get<long>();
            fm.psnr_db = f.at("psnr_db").get<double>();
            fm.ssim = f.at("ssim").get<double>();
            fm.rmse = f.at("rmse").get<double>();
            fm.depth_rmse_mm = f.at("depth_rmse_mm").get<double>();
            r.per_frame.push_back(fm);
        }
    } catch (const json::exception& e) {
        throw SchemaError(path + ": " + e.what());
    }
    return r;
}

}  // namespace nflba
