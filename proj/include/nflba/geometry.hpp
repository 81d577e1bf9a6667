#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Geometry>

#include "nflba/common.hpp"

namespace nflba {

// A single anisotropic 3D Gaussian. The covariance is kept factored as
// (scale, rotation) so that Sigma = R * diag(scale^2) * R^T stays symmetric
// positive definite by construction while the factors are optimized.
struct Gaussian3D {
    Vec3 mean = Vec3::Zero();                                 // world, mm
    Vec3 scale = Vec3::Ones();                                // axis std-devs, mm, > 0
    Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
    Vec3 color = Vec3::Zero();                                // linear RGB in [0,1]
    double opacity = 1.0;                                     // (0, 1]

    Mat3 covariance() const;
};

struct GaussianScene {
    std::vector<Gaussian3D> gaussians;
    std::uint64_t generation = 0;  // bumped on densify/prune for cache invalidation

    bool empty() const { return gaussians.empty(); }
    size_t size() const { return gaussians.size(); }

    // Diagonal of the bounding box of the means (used for step-size scaling).
    double extent() const;
};

// World-to-camera rigid transform: x_cam = rotation * x_world + translation.
struct Pose {
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    Vec3 transform(const Vec3& x_world) const { return rotation * x_world + translation; }
    Vec3 camera_center() const { return -rotation.transpose() * translation; }

    Pose inverse() const {
        Pose out;
        out.rotation = rotation.transpose();
        out.translation = -(rotation.transpose() * translation);
        return out;
    }

    // Composition: (a * b).transform(x) == a.transform(b.transform(x)).
    friend Pose operator*(const Pose& a, const Pose& b) {
        Pose out;
        out.rotation = a.rotation * b.rotation;
        out.translation = a.rotation * b.translation + a.translation;
        return out;
    }
};

struct Intrinsics {
    double fx = 0, fy = 0;
    double cx = 0, cy = 0;
    int width = 0, height = 0;

    void validate() const;
    Mat3 matrix() const;
};

// Sigma = R(q) * diag(scale^2) * R(q)^T. Throws InvalidArgumentError on
// non-finite or non-positive inputs.
Mat3 covariance_of(const Vec3& scale, const Eigen::Quaterniond& rotation);

// Unit eigenvector of the smallest eigenvalue of an SPD matrix, with a
// deterministic sign (z-component <= 0 where that disambiguates). Throws
// DegenerateNormalError when the two smallest eigenvalues coincide and the
// shortest axis is not unique.
Vec3 gaussian_normal(const Mat3& covariance);

Mat3 skew(const Vec3& v);

// SE(3) exponential with translation-first tangent ordering:
// xi = (rho, phi), R = exp([phi]_x), t = leftJacobian(phi) * rho.
Pose se3_exp(const Vec6& xi);

// Inverse of se3_exp. Throws CutLocusError for rotation angles >= pi - 1e-6.
Vec6 se3_log(const Pose& pose);

}  // namespace nflba
