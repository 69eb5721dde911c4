#pragma once

#include "xpose/geometry.hpp"
#include "xpose/rng.hpp"

namespace xpose::testing {

inline Eigen::Matrix3d random_rotation(Rng& rng) {
    const Eigen::Vector3d axis =
        Eigen::Vector3d(rng.gaussian(), rng.gaussian(), rng.gaussian()).normalized();
    return Eigen::AngleAxisd(rng.uniform(-kPi, kPi), axis).toRotationMatrix();
}

inline RigidTransform random_pose(Rng& rng, double translation_scale = 100.0) {
    return {random_rotation(rng),
            {rng.uniform(-translation_scale, translation_scale),
             rng.uniform(-translation_scale, translation_scale),
             rng.uniform(-translation_scale, translation_scale)}};
}

/// Pose with positive depth, suitable for projection tests.
inline RigidTransform random_view_pose(Rng& rng, double z_min = 500.0, double z_max = 1500.0) {
    return {random_rotation(rng),
            {rng.uniform(-50.0, 50.0), rng.uniform(-50.0, 50.0), rng.uniform(z_min, z_max)}};
}

inline double max_abs_diff(const Eigen::Matrix3d& a, const Eigen::Matrix3d& b) {
    return (a - b).cwiseAbs().maxCoeff();
}

}  // namespace xpose::testing
