#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "xpose/errors.hpp"

namespace xpose {

using Point2 = Eigen::Vector2d;
using Point3 = Eigen::Vector3d;

constexpr double kPi = 3.14159265358979323846;

inline double deg_to_rad(double deg) { return deg * kPi / 180.0; }
inline double rad_to_deg(double rad) { return rad * 180.0 / kPi; }

// ---------------------------------------------------------------------------
// Acquisition geometry
// ---------------------------------------------------------------------------

/// Per-frame X-ray acquisition parameters. All lengths in millimetres, image
/// coordinates in pixels; the pixel densities carry the conversion. The
/// principal point (x0, y0) is stored in mm from the image origin so that the
/// intrinsic matrix uses it directly.
struct AcquisitionGeometry {
    double focal_length_mm = 1000.0;  ///< source-image distance (SID)
    double pixel_density_u = 1.0;     ///< pixels per mm, horizontal
    double pixel_density_v = 1.0;     ///< pixels per mm, vertical
    double principal_x0_mm = 0.0;
    double principal_y0_mm = 0.0;
    int image_width_px = 960;
    int image_height_px = 742;

    void validate() const {
        if (!(focal_length_mm > 0.0))
            throw InvalidGeometryError("focal length must be positive, got " +
                                       std::to_string(focal_length_mm));
        if (!(pixel_density_u > 0.0) || !(pixel_density_v > 0.0))
            throw InvalidGeometryError("pixel densities must be positive");
        if (image_width_px <= 0 || image_height_px <= 0)
            throw InvalidGeometryError("image size must be positive");
        if (!std::isfinite(principal_x0_mm) || !std::isfinite(principal_y0_mm))
            throw InvalidGeometryError("principal point must be finite");
    }
};

/// Intrinsic matrix mapping source-frame mm to pixels. The v-axis focal entry
/// is negative; downstream solvers accept that convention as-is.
inline Eigen::Matrix3d build_intrinsics(const AcquisitionGeometry& g) {
    g.validate();
    Eigen::Matrix3d k;
    k << g.pixel_density_u * g.focal_length_mm, 0.0, g.pixel_density_u * g.principal_x0_mm,
        0.0, -g.pixel_density_v * g.focal_length_mm, g.pixel_density_v * g.principal_y0_mm,
        0.0, 0.0, 1.0;
    return k;
}

// ---------------------------------------------------------------------------
// Rigid transforms
// ---------------------------------------------------------------------------

/// Element of SE(3): p_out = rotation * p_in + translation.
struct RigidTransform {
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();

    Point3 apply(const Point3& p) const { return rotation * p + translation; }

    bool is_valid(double tol = 1e-9) const {
        const Eigen::Matrix3d delta = rotation.transpose() * rotation - Eigen::Matrix3d::Identity();
        return delta.cwiseAbs().maxCoeff() <= tol && std::abs(rotation.determinant() - 1.0) <= tol &&
               translation.allFinite();
    }

    static RigidTransform identity() { return {}; }
};

/// (a o b): apply b first, then a.
inline RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
    return {a.rotation * b.rotation, a.rotation * b.translation + a.translation};
}

inline RigidTransform invert(const RigidTransform& t) {
    const Eigen::Matrix3d rt = t.rotation.transpose();
    return {rt, -(rt * t.translation)};
}

inline RigidTransform rotation_about_axis(const Eigen::Vector3d& axis, double angle_deg) {
    return {Eigen::AngleAxisd(deg_to_rad(angle_deg), axis.normalized()).toRotationMatrix(),
            Eigen::Vector3d::Zero()};
}

/// R = Rz(rz) * Ry(ry) * Rx(rx), angles in degrees.
inline Eigen::Matrix3d rotation_xyz_deg(double rx, double ry, double rz) {
    return (Eigen::AngleAxisd(deg_to_rad(rz), Eigen::Vector3d::UnitZ()) *
            Eigen::AngleAxisd(deg_to_rad(ry), Eigen::Vector3d::UnitY()) *
            Eigen::AngleAxisd(deg_to_rad(rx), Eigen::Vector3d::UnitX()))
        .toRotationMatrix();
}

/// Inverse of rotation_xyz_deg: recovers (rx, ry, rz) in degrees. Valid away
/// from the ry = +-90 gimbal configuration.
inline Eigen::Vector3d euler_xyz_deg(const Eigen::Matrix3d& r) {
    const double ry = std::asin(std::clamp(-r(2, 0), -1.0, 1.0));
    const double rx = std::atan2(r(2, 1), r(2, 2));
    const double rz = std::atan2(r(1, 0), r(0, 0));
    return {rad_to_deg(rx), rad_to_deg(ry), rad_to_deg(rz)};
}

/// Geodesic angle between two rotations, degrees. Computed from both the
/// skew part and the trace so tiny angles keep full precision where the bare
/// arccos saturates.
inline double rotation_angle_deg(const Eigen::Matrix3d& a, const Eigen::Matrix3d& b) {
    const Eigen::Matrix3d rel = a.transpose() * b;
    const Eigen::Vector3d skew{rel(2, 1) - rel(1, 2), rel(0, 2) - rel(2, 0), rel(1, 0) - rel(0, 1)};
    const double sin_theta = 0.5 * skew.norm();
    const double cos_theta = std::clamp((rel.trace() - 1.0) / 2.0, -1.0, 1.0);
    return rad_to_deg(std::atan2(sin_theta, cos_theta));
}

/// Nearest orthonormal matrix with det +1.
inline Eigen::Matrix3d orthonormalize(const Eigen::Matrix3d& m) {
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d r = svd.matrixU() * svd.matrixV().transpose();
    if (r.determinant() < 0.0) {
        Eigen::Matrix3d u = svd.matrixU();
        u.col(2) *= -1.0;
        r = u * svd.matrixV().transpose();
    }
    return r;
}

// ---------------------------------------------------------------------------
// Projection
// ---------------------------------------------------------------------------

/// Projects a source-frame point through an arbitrary pinhole matrix.
inline Point2 project_with_intrinsics(const Point3& p_source, const Eigen::Matrix3d& k) {
    const Eigen::Vector3d h = k * p_source;
    return {h.x() / h.z(), h.y() / h.z()};
}

/// Perspective projection of object-frame points. Every transformed point must
/// have positive depth; z <= 0 raises BehindSourceError with the offending index.
inline std::vector<Point2> project_points(std::span<const Point3> points, const RigidTransform& pose,
                                          const AcquisitionGeometry& geom) {
    const Eigen::Matrix3d k = build_intrinsics(geom);
    std::vector<Point2> out;
    out.reserve(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
        const Point3 q = pose.apply(points[i]);
        if (!(q.z() > 0.0)) throw BehindSourceError(i, q.z());
        out.push_back(project_with_intrinsics(q, k));
    }
    return out;
}

/// Inverts the projection at a known source-frame depth; returns the
/// source-frame point on the ray through (u, v).
inline Point3 back_project(const Point2& uv, double depth_mm, const AcquisitionGeometry& geom) {
    geom.validate();
    if (!(depth_mm > 0.0)) throw InvalidGeometryError("back-projection depth must be positive");
    const double x = depth_mm * (uv.x() / geom.pixel_density_u - geom.principal_x0_mm) / geom.focal_length_mm;
    const double y = depth_mm * (geom.principal_y0_mm - uv.y() / geom.pixel_density_v) / geom.focal_length_mm;
    return {x, y, depth_mm};
}

// ---------------------------------------------------------------------------
// Frame chains
// ---------------------------------------------------------------------------

/// Named rigid links between coordinate frames, e.g. object -> board ->
/// optical camera -> X-ray source. A link (from, to, T) maps `from`-frame
/// coordinates into the `to` frame.
struct FrameChain {
    struct Link {
        std::string from;
        std::string to;
        RigidTransform transform;
    };

    std::vector<Link> links;

    void add(std::string from, std::string to, const RigidTransform& t) {
        links.push_back({std::move(from), std::move(to), t});
    }
};

/// Resolves the composite transform mapping `from`-frame coordinates into the
/// `to` frame, inverting links traversed against their stored direction.
inline RigidTransform chain_resolve(const FrameChain& chain, const std::string& from,
                                    const std::string& to) {
    bool from_seen = false;
    bool to_seen = false;
    for (const auto& link : chain.links) {
        from_seen = from_seen || link.from == from || link.to == from;
        to_seen = to_seen || link.from == to || link.to == to;
    }
    if (!from_seen) throw FrameChainError("unknown frame '" + from + "'");
    if (!to_seen) throw FrameChainError("unknown frame '" + to + "'");
    if (from == to) return RigidTransform::identity();

    // Breadth-first search over the (small) link graph.
    struct Node {
        std::string frame;
        RigidTransform accumulated;  // maps `from` coords into this frame
    };
    std::vector<Node> queue{{from, RigidTransform::identity()}};
    std::vector<std::string> visited{from};
    const auto seen = [&visited](const std::string& f) {
        for (const auto& v : visited)
            if (v == f) return true;
        return false;
    };

    for (std::size_t head = 0; head < queue.size(); ++head) {
        const Node node = queue[head];
        for (const auto& link : chain.links) {
            std::string next;
            RigidTransform step;
            if (link.from == node.frame) {
                next = link.to;
                step = link.transform;
            } else if (link.to == node.frame) {
                next = link.from;
                step = invert(link.transform);
            } else {
                continue;
            }
            if (seen(next)) continue;
            const RigidTransform acc = compose(step, node.accumulated);
            if (next == to) return acc;
            visited.push_back(next);
            queue.push_back({next, acc});
        }
    }
    throw FrameChainError("frames '" + from + "' and '" + to + "' are not connected");
}

}  // namespace xpose
