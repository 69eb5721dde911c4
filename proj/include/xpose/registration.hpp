#pragma once

#include <Eigen/Dense>
#include <span>

#include "xpose/errors.hpp"
#include "xpose/geometry.hpp"

namespace xpose {

struct RegistrationResult {
    RigidTransform transform;  ///< maps source points onto target points
    double residual_rms_mm = 0.0;
};

namespace detail {

/// Least-squares rotation + translation aligning source onto target
/// (Kabsch). Assumes both spans have equal, sufficient size; callers check.
inline RegistrationResult kabsch(std::span<const Point3> source, std::span<const Point3> target) {
    const auto n = static_cast<double>(source.size());
    Point3 centroid_src = Point3::Zero();
    Point3 centroid_dst = Point3::Zero();
    for (std::size_t i = 0; i < source.size(); ++i) {
        centroid_src += source[i];
        centroid_dst += target[i];
    }
    centroid_src /= n;
    centroid_dst /= n;

    Eigen::Matrix3d cross = Eigen::Matrix3d::Zero();
    for (std::size_t i = 0; i < source.size(); ++i)
        cross += (source[i] - centroid_src) * (target[i] - centroid_dst).transpose();

    Eigen::JacobiSVD<Eigen::Matrix3d> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d u = svd.matrixU();
    const Eigen::Matrix3d v = svd.matrixV();
    // Reflection case: flip the smallest singular direction to stay in SO(3).
    if ((v * u.transpose()).determinant() < 0.0) u.col(2) *= -1.0;
    const Eigen::Matrix3d rotation = v * u.transpose();

    RegistrationResult result;
    result.transform = {rotation, centroid_dst - rotation * centroid_src};
    double sum_sq = 0.0;
    for (std::size_t i = 0; i < source.size(); ++i)
        sum_sq += (result.transform.apply(source[i]) - target[i]).squaredNorm();
    result.residual_rms_mm = std::sqrt(sum_sq / n);
    return result;
}

/// Eigenvalues of the scatter matrix, descending. Used for rank checks.
inline Eigen::Vector3d scatter_eigenvalues(std::span<const Point3> points) {
    Point3 centroid = Point3::Zero();
    for (const auto& p : points) centroid += p;
    centroid /= static_cast<double>(points.size());
    Eigen::Matrix3d scatter = Eigen::Matrix3d::Zero();
    for (const auto& p : points) scatter += (p - centroid) * (p - centroid).transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(scatter);
    return eig.eigenvalues().reverse();  // descending
}

}  // namespace detail

/// Least-squares rigid registration of paired point sets (target ~ R*source + t).
/// det(R) = +1 is enforced; reflected inputs register with a positive residual
/// instead of flipping orientation.
inline RegistrationResult register_point_sets(std::span<const Point3> source,
                                              std::span<const Point3> target) {
    if (source.size() != target.size())
        throw ShapeMismatchError("point sets differ in size: " + std::to_string(source.size()) +
                                 " vs " + std::to_string(target.size()));
    if (source.size() < 3)
        throw DegenerateConfigurationError("rigid registration needs at least 3 points, got " +
                                           std::to_string(source.size()));
    const Eigen::Vector3d eig = detail::scatter_eigenvalues(source);
    if (eig(1) <= eig(0) * 1e-12)
        throw DegenerateConfigurationError("source points are collinear");
    return detail::kabsch(source, target);
}

}  // namespace xpose
