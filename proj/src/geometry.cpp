#include "nflba/geometry.hpp"

#include <Eigen/Eigenvalues>

namespace nflba {

Mat3 Gaussian3D::covariance() const { return covariance_of(scale, rotation); }

double GaussianScene::extent() const {
    if (gaussians.empty()) return 0.0;
    Vec3 lo = gaussians.front().mean;
    Vec3 hi = lo;
    for (const auto& g : gaussians) {
        lo = lo.cwiseMin(g.mean);
        hi = hi.cwiseMax(g.mean);
    }
    return (hi - lo).norm();
}

void Intrinsics::validate() const {
    if (!(fx > 0) || !(fy > 0)) throw InvalidArgumentError("intrinsics: focal lengths must be positive");
    if (!(cx > 0 && cx < width) || !(cy > 0 && cy < height))
        throw InvalidArgumentError("intrinsics: principal point outside image");
    if (width <= 0 || height <= 0) throw InvalidArgumentError("intrinsics: non-positive image size");
}

Mat3 Intrinsics::matrix() const {
    Mat3 k = Mat3::Identity();
    k(0, 0) = fx;
    k(1, 1) = fy;
    k(0, 2) = cx;
    k(1, 2) = cy;
    return k;
}

Mat3 covariance_of(const Vec3& scale, const Eigen::Quaterniond& rotation) {
    if (!scale.allFinite() || !rotation.coeffs().allFinite())
        throw InvalidArgumentError("covariance_of: non-finite input");
    if (!(scale.minCoeff() > 0.0)) throw InvalidArgumentError("covariance_of: scale must be positive");
    if (!(rotation.norm() > 0.0)) throw InvalidArgumentError("covariance_of: zero quaternion");
    const Mat3 r = rotation.normalized().toRotationMatrix();
    return r * scale.cwiseProduct(scale).asDiagonal() * r.transpose();
}

Vec3 gaussian_normal(const Mat3& covariance) {
    Eigen::SelfAdjointEigenSolver<Mat3> eig(covariance);
    const Vec3 evals = eig.eigenvalues();  // ascending
    const double tol = 1e-9 * std::max(1.0, evals(2));
    if (evals(1) - evals(0) <= tol)
        throw DegenerateNormalError("gaussian_normal: shortest axis is not unique");
    Vec3 n = eig.eigenvectors().col(0).normalized();
    // Deterministic sign: prefer z <= 0, fall back to lexicographic rules when
    // the normal is perpendicular to the optical axis.
    if (n.z() > 1e-12) {
        n = -n;
    } else if (n.z() >= -1e-12) {
        if (n.x() < -1e-12 || (std::abs(n.x()) <= 1e-12 && n.y() < 0.0)) n = -n;
    }
    return n;
}

Mat3 skew(const Vec3& v) {
    Mat3 m;
    m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
    return m;
}

namespace {

// Rotation left Jacobian and its inverse, with series fallbacks near zero.
Mat3 so3_left_jacobian(const Vec3& phi) {
    const double theta = phi.norm();
    const Mat3 k = skew(phi);
    if (theta < 1e-8) return Mat3::Identity() + 0.5 * k + (1.0 / 6.0) * k * k;
    const double t2 = theta * theta;
    return Mat3::Identity() + ((1.0 - std::cos(theta)) / t2) * k +
           ((theta - std::sin(theta)) / (t2 * theta)) * k * k;
}

Mat3 so3_left_jacobian_inv(const Vec3& phi) {
    const double theta = phi.norm();
    const Mat3 k = skew(phi);
    if (theta < 1e-8) return Mat3::Identity() - 0.5 * k + (1.0 / 12.0) * k * k;
    const double t2 = theta * theta;
    const double coef = 1.0 / t2 - (1.0 + std::cos(theta)) / (2.0 * theta * std::sin(theta));
    return Mat3::Identity() - 0.5 * k + coef * k * k;
}

}  // namespace

Pose se3_exp(const Vec6& xi) {
    const Vec3 rho = xi.head<3>();
    const Vec3 phi = xi.tail<3>();
    const double theta = phi.norm();
    Pose out;
    if (theta < 1e-8) {
        const Mat3 k = skew(phi);
        out.rotation = Mat3::Identity() + k + 0.5 * k * k;
    } else {
        const Vec3 axis = phi / theta;
        const Mat3 k = skew(axis);
        out.rotation = Mat3::Identity() + std::sin(theta) * k + (1.0 - std::cos(theta)) * k * k;
    }
    out.translation = so3_left_jacobian(phi) * rho;
    return out;
}

Vec6 se3_log(const Pose& pose) {
    const Mat3& r = pose.rotation;
    const double cos_theta = std::clamp((r.trace() - 1.0) * 0.5, -1.0, 1.0);
    const double theta = std::acos(cos_theta);
    if (theta >= M_PI - 1e-6) throw CutLocusError("se3_log: rotation angle too close to pi");

    Vec3 phi;
    const Vec3 w(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
    if (theta < 1e-8) {
        phi = 0.5 * (1.0 + theta * theta / 6.0) * w;
    } else {
        phi = (theta / (2.0 * std::sin(theta))) * w;
    }
    Vec6 xi;
    xi.head<3>() = so3_left_jacobian_inv(phi) * pose.translation;
    xi.tail<3>() = phi;
    return xi;
}

}  // namespace nflba
