#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "xpose/errors.hpp"
#include "xpose/geometry.hpp"
#include "xpose/registration.hpp"

namespace xpose {

// ---------------------------------------------------------------------------
// Problem & solution types
// ---------------------------------------------------------------------------

/// Paired 2D/3D observations plus the pinhole matrix they were imaged with.
/// The matrix may carry the negative v-axis focal entry produced by
/// build_intrinsics or a conventional all-positive pinhole; the solvers
/// canonicalize internally.
struct CorrespondenceSet {
    std::vector<Point3> object_points;
    std::vector<Point2> image_points;
    Eigen::Matrix3d camera_matrix = Eigen::Matrix3d::Identity();

    static CorrespondenceSet from_geometry(std::vector<Point3> object, std::vector<Point2> image,
                                           const AcquisitionGeometry& geom) {
        return {std::move(object), std::move(image), build_intrinsics(geom)};
    }

    std::size_t size() const { return object_points.size(); }

    void validate() const {
        if (object_points.size() != image_points.size())
            throw ShapeMismatchError("correspondence sets differ in size");
        if (!camera_matrix.allFinite() || !(camera_matrix(0, 0) > 0.0) ||
            camera_matrix(1, 1) == 0.0)
            throw InvalidGeometryError("camera matrix is not a valid pinhole matrix");
    }
};

struct PnPSolution {
    RigidTransform pose;  ///< object frame -> source frame
    double mean_reprojection_error_px = 0.0;
    int refinement_iterations = 0;
};

/// Raised when a refinement iterate turns non-finite; carries the last finite
/// solution so callers can still use it.
class NumericalFailureError : public NumericError {
public:
    NumericalFailureError(const std::string& msg, PnPSolution last_valid)
        : NumericError(msg), last_valid_(std::move(last_valid)) {}
    const PnPSolution& last_valid() const noexcept { return last_valid_; }

private:
    PnPSolution last_valid_;
};

namespace detail {

/// Pinhole parameters with fv > 0 plus v-coordinates mirrored accordingly.
/// Mirroring v through the principal row (v' = 2*cy - v) converts the negative
/// v-axis convention into a conventional pinhole without moving the pose.
struct CanonicalPinhole {
    double fu, fv, uc, vc;
    std::vector<Point2> image_points;

    CanonicalPinhole(const Eigen::Matrix3d& k, std::span<const Point2> image) {
        fu = k(0, 0);
        uc = k(0, 2);
        vc = k(1, 2);
        const bool mirrored = k(1, 1) < 0.0;
        fv = mirrored ? -k(1, 1) : k(1, 1);
        image_points.reserve(image.size());
        for (const auto& p : image)
            image_points.push_back(mirrored ? Point2(p.x(), 2.0 * vc - p.y()) : p);
    }

    double mean_reprojection_error(std::span<const Point3> object, const RigidTransform& pose) const {
        double sum = 0.0;
        for (std::size_t i = 0; i < object.size(); ++i) {
            const Point3 q = pose.apply(object[i]);
            if (!(q.z() > 0.0) || !q.allFinite()) return std::numeric_limits<double>::infinity();
            const double u = fu * q.x() / q.z() + uc;
            const double v = fv * q.y() / q.z() + vc;
            sum += (Point2(u, v) - image_points[i]).norm();
        }
        return sum / static_cast<double>(object.size());
    }
};

struct ControlPointFrame {
    std::vector<Point3> control_points;           // 3 (planar) or 4
    std::vector<Eigen::VectorXd> barycentric;     // per correspondence, size nc
    bool planar = false;
};

inline ControlPointFrame choose_control_points(std::span<const Point3> object) {
    const auto n = static_cast<double>(object.size());
    Point3 centroid = Point3::Zero();
    for (const auto& p : object) centroid += p;
    centroid /= n;

    Eigen::Matrix3d scatter = Eigen::Matrix3d::Zero();
    for (const auto& p : object) scatter += (p - centroid) * (p - centroid).transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(scatter);
    const Eigen::Vector3d lambda = eig.eigenvalues().reverse();
    const Eigen::Matrix3d axes = eig.eigenvectors().rowwise().reverse();

    if (lambda(1) <= lambda(0) * 1e-12)
        throw DegenerateConfigurationError("3D points are collinear");

    ControlPointFrame frame;
    frame.planar = lambda(2) <= lambda(0) * 1e-9;
    const int principal_dirs = frame.planar ? 2 : 3;
    frame.control_points.push_back(centroid);
    for (int j = 0; j < principal_dirs; ++j)
        frame.control_points.push_back(centroid + std::sqrt(lambda(j) / n) * axes.col(j));

    // Barycentric coordinates w.r.t. the control points; exact for in-plane
    // points in the planar case.
    const int nc = static_cast<int>(frame.control_points.size());
    Eigen::MatrixXd basis(3, nc - 1);
    for (int j = 1; j < nc; ++j) basis.col(j - 1) = frame.control_points[j] - centroid;
    const Eigen::MatrixXd solver =
        (basis.transpose() * basis).ldlt().solve(basis.transpose()).eval();

    frame.barycentric.reserve(object.size());
    for (const auto& p : object) {
        Eigen::VectorXd alpha(nc);
        alpha.tail(nc - 1) = solver * (p - centroid);
        alpha(0) = 1.0 - alpha.tail(nc - 1).sum();
        frame.barycentric.push_back(std::move(alpha));
    }
    return frame;
}

/// Null-space basis of the 2n x 3nc projection system, smallest directions first.
inline std::vector<Eigen::VectorXd> null_space_basis(const ControlPointFrame& frame,
                                                     const CanonicalPinhole& cam, int count) {
    const int nc = static_cast<int>(frame.control_points.size());
    const auto n = frame.barycentric.size();
    Eigen::MatrixXd m(2 * n, 3 * nc);
    m.setZero();
    for (std::size_t i = 0; i < n; ++i) {
        const auto& alpha = frame.barycentric[i];
        const Point2& uv = cam.image_points[i];
        for (int j = 0; j < nc; ++j) {
            m(2 * i, 3 * j) = alpha(j) * cam.fu;
            m(2 * i, 3 * j + 2) = alpha(j) * (cam.uc - uv.x());
            m(2 * i + 1, 3 * j + 1) = alpha(j) * cam.fv;
            m(2 * i + 1, 3 * j + 2) = alpha(j) * (cam.vc - uv.y());
        }
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m.transpose() * m);
    std::vector<Eigen::VectorXd> basis;
    basis.reserve(count);
    for (int k = 0; k < count; ++k) basis.push_back(eig.eigenvectors().col(k));
    return basis;
}

struct DistanceConstraints {
    std::vector<std::pair<int, int>> pairs;  // control point index pairs
    Eigen::VectorXd rho;                     // squared world distances
    // dv[k][p]: difference of null vector k's control sub-vectors for pair p
    std::vector<std::vector<Eigen::Vector3d>> dv;
};

inline DistanceConstraints distance_constraints(const ControlPointFrame& frame,
                                                const std::vector<Eigen::VectorXd>& basis) {
    DistanceConstraints dc;
    const int nc = static_cast<int>(frame.control_points.size());
    for (int a = 0; a < nc; ++a)
        for (int b = a + 1; b < nc; ++b) dc.pairs.emplace_back(a, b);
    dc.rho.resize(dc.pairs.size());
    for (std::size_t p = 0; p < dc.pairs.size(); ++p)
        dc.rho(p) = (frame.control_points[dc.pairs[p].first] -
                     frame.control_points[dc.pairs[p].second])
                        .squaredNorm();
    dc.dv.resize(basis.size());
    for (std::size_t k = 0; k < basis.size(); ++k) {
        dc.dv[k].reserve(dc.pairs.size());
        for (const auto& [a, b] : dc.pairs)
            dc.dv[k].push_back(basis[k].segment<3>(3 * a) - basis[k].segment<3>(3 * b));
    }
    return dc;
}

/// L(p, col(B_ab)) with column order B11,B12,B22,B13,B23,B33,B14,B24,B34,B44
/// truncated to the available basis size.
inline Eigen::MatrixXd build_l_matrix(const DistanceConstraints& dc) {
    const int nb = static_cast<int>(dc.dv.size());
    std::vector<std::pair<int, int>> cols;
    for (int b = 0; b < nb; ++b)
        for (int a = 0; a <= b; ++a) cols.emplace_back(a, b);
    Eigen::MatrixXd l(dc.pairs.size(), cols.size());
    for (std::size_t p = 0; p < dc.pairs.size(); ++p)
        for (std::size_t c = 0; c < cols.size(); ++c) {
            const auto [a, b] = cols[c];
            const double dot = dc.dv[a][p].dot(dc.dv[b][p]);
            l(p, c) = (a == b) ? dot : 2.0 * dot;
        }
    return l;
}

/// Closed-form beta seeds from a linearized product system. `columns` selects
/// the kept product terms B_ab (`products` names them); the first must be B11.
/// Signs are resolved relative to beta_1 > 0; the global sign is fixed later
/// by depth positivity.
inline Eigen::VectorXd betas_from_products(const Eigen::MatrixXd& l, const Eigen::VectorXd& rho,
                                           const std::vector<int>& columns,
                                           const std::vector<std::pair<int, int>>& products,
                                           int beta_count) {
    Eigen::MatrixXd sub(l.rows(), columns.size());
    for (std::size_t c = 0; c < columns.size(); ++c) sub.col(c) = l.col(columns[c]);
    const Eigen::VectorXd x = sub.colPivHouseholderQr().solve(rho);

    Eigen::VectorXd betas = Eigen::VectorXd::Zero(beta_count);
    betas(0) = std::sqrt(std::abs(x(0)));

    // Square terms first: magnitude from B_bb, sign from the B_1b cross term.
    for (std::size_t c = 1; c < products.size(); ++c) {
        const auto [a, b] = products[c];
        if (a != b) continue;
        double cross = 0.0;
        for (std::size_t c2 = 1; c2 < products.size(); ++c2)
            if (products[c2] == std::make_pair(0, b)) cross = x(c2);
        const double mag = std::sqrt(std::abs(x(c)));
        betas(b) = cross < 0.0 ? -mag : mag;
    }
    // Remaining components from cross terms against beta_1.
    if (betas(0) > 0.0) {
        for (std::size_t c = 1; c < products.size(); ++c) {
            const auto [a, b] = products[c];
            if (a == 0 && betas(b) == 0.0) betas(b) = x(c) / betas(0);
        }
    }
    return betas;
}

/// Refines the first `free_count` beta components against the control-point
/// distance constraints (fixed small iteration budget, as in the original
/// formulation).
inline void refine_betas(const DistanceConstraints& dc, Eigen::VectorXd& betas, int free_count) {
    const auto n_pairs = dc.pairs.size();
    for (int iter = 0; iter < 5; ++iter) {
        Eigen::MatrixXd jac(n_pairs, free_count);
        Eigen::VectorXd residual(n_pairs);
        for (std::size_t p = 0; p < n_pairs; ++p) {
            Eigen::Vector3d combined = Eigen::Vector3d::Zero();
            for (int k = 0; k < betas.size(); ++k) combined += betas(k) * dc.dv[k][p];
            residual(p) = dc.rho(p) - combined.squaredNorm();
            for (int k = 0; k < free_count; ++k) jac(p, k) = 2.0 * combined.dot(dc.dv[k][p]);
        }
        const Eigen::VectorXd delta = jac.colPivHouseholderQr().solve(residual);
        if (!delta.allFinite()) return;
        betas.head(free_count) += delta;
    }
}

/// Recovers (R, t) for a beta candidate via absolute orientation and scores it
/// by mean reprojection error. Returns infinity for unusable candidates.
inline double score_candidate(const ControlPointFrame& frame,
                              const std::vector<Eigen::VectorXd>& basis,
                              const Eigen::VectorXd& betas, std::span<const Point3> object,
                              const CanonicalPinhole& cam, RigidTransform& pose_out) {
    const int nc = static_cast<int>(frame.control_points.size());
    std::vector<Point3> camera_cps(nc, Point3::Zero());
    for (int j = 0; j < nc; ++j)
        for (int k = 0; k < betas.size(); ++k)
            camera_cps[j] += betas(k) * basis[k].segment<3>(3 * j);

    std::vector<Point3> camera_points(object.size(), Point3::Zero());
    double depth_sum = 0.0;
    for (std::size_t i = 0; i < object.size(); ++i) {
        for (int j = 0; j < nc; ++j) camera_points[i] += frame.barycentric[i](j) * camera_cps[j];
        depth_sum += camera_points[i].z();
    }
    if (depth_sum < 0.0)
        for (auto& p : camera_points) p = -p;

    const RegistrationResult reg = kabsch(object, camera_points);
    pose_out = reg.transform;
    return cam.mean_reprojection_error(object, pose_out);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// EPnP
// ---------------------------------------------------------------------------

/// Closed-form EPnP: expresses the 3D points in a 4-control-point barycentric
/// frame (3 control points for planar sets), extracts the null-space basis of
/// the 2n x 12 projection system, seeds betas from the classic linearized
/// cases, enforces control-point distance consistency, and recovers the pose
/// by absolute orientation. The candidate with the lowest mean reprojection
/// error wins.
inline PnPSolution solve_epnp(const CorrespondenceSet& c) {
    c.validate();
    if (c.size() < 4)
        throw InsufficientCorrespondencesError("EPnP needs at least 4 correspondences, got " +
                                               std::to_string(c.size()));

    const detail::CanonicalPinhole cam(c.camera_matrix, c.image_points);
    const detail::ControlPointFrame frame = detail::choose_control_points(c.object_points);
    const int basis_count = frame.planar ? 3 : 4;
    const auto basis = detail::null_space_basis(frame, cam, basis_count);
    const auto constraints = detail::distance_constraints(frame, basis);
    const Eigen::MatrixXd l = detail::build_l_matrix(constraints);

    // Candidate beta seeds for the effective null-space dimension cases.
    std::vector<std::pair<Eigen::VectorXd, int>> candidates;  // (betas, refined count)
    if (frame.planar) {
        // N=1: single direction, least squares on B11.
        Eigen::VectorXd b1 = Eigen::VectorXd::Zero(basis_count);
        const double denom = l.col(0).squaredNorm();
        if (denom > 0.0) b1(0) = std::sqrt(std::abs(l.col(0).dot(constraints.rho) / denom));
        candidates.emplace_back(b1, 1);
        // N=2: products B11, B12, B22.
        candidates.emplace_back(
            detail::betas_from_products(l, constraints.rho, {0, 1, 2},
                                        {{0, 0}, {0, 1}, {1, 1}}, basis_count),
            2);
    } else {
        // Columns of the 6x10 product matrix: B11,B12,B22,B13,B23,B33,B14,B24,B34,B44.
        candidates.emplace_back(
            detail::betas_from_products(l, constraints.rho, {0, 1, 3, 6},
                                        {{0, 0}, {0, 1}, {0, 2}, {0, 3}}, basis_count),
            4);
        candidates.emplace_back(
            detail::betas_from_products(l, constraints.rho, {0, 1, 2},
                                        {{0, 0}, {0, 1}, {1, 1}}, basis_count),
            4);
        candidates.emplace_back(
            detail::betas_from_products(l, constraints.rho, {0, 1, 2, 3, 4},
                                        {{0, 0}, {0, 1}, {1, 1}, {0, 2}, {1, 2}}, basis_count),
            4);
    }

    PnPSolution best;
    best.mean_reprojection_error_px = std::numeric_limits<double>::infinity();
    for (auto& [betas, free_count] : candidates) {
        detail::refine_betas(constraints, betas, free_count);
        RigidTransform pose;
        const double err =
            detail::score_candidate(frame, basis, betas, c.object_points, cam, pose);
        if (err < best.mean_reprojection_error_px) {
            best.pose = pose;
            best.mean_reprojection_error_px = err;
        }
    }
    if (!std::isfinite(best.mean_reprojection_error_px))
        throw NoValidPoseError("no EPnP candidate places the points in front of the source");
    return best;
}

// ---------------------------------------------------------------------------
// Gauss-Newton pose refinement
// ---------------------------------------------------------------------------

/// Minimizes the reprojection error from `init` with a Gauss-Newton loop.
/// Rotation updates live in the tangent space (axis-angle increment applied on
/// the left), translation is additive. A step is accepted only if it lowers
/// the mean reprojection error (the quantity the solution reports), halving up
/// to 8 times otherwise. The rotation is re-orthonormalized after every
/// accepted step.
inline PnPSolution refine_gauss_newton(const CorrespondenceSet& c, const RigidTransform& init,
                                       int max_iters = 50, double tol = 1e-10) {
    c.validate();
    const detail::CanonicalPinhole cam(c.camera_matrix, c.image_points);
    const auto n = c.size();

    // residual vector feeds the least-squares step; the acceptance gate uses
    // the mean Euclidean error so the reported metric decreases monotonically
    const auto cost = [&](const RigidTransform& pose, Eigen::VectorXd* residual) -> double {
        double distance_sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const Point3 q = pose.apply(c.object_points[i]);
            if (!(q.z() > 0.0) || !q.allFinite()) return std::numeric_limits<double>::infinity();
            const double ru = cam.image_points[i].x() - (cam.fu * q.x() / q.z() + cam.uc);
            const double rv = cam.image_points[i].y() - (cam.fv * q.y() / q.z() + cam.vc);
            if (residual) {
                (*residual)(2 * i) = ru;
                (*residual)(2 * i + 1) = rv;
            }
            distance_sum += std::hypot(ru, rv);
        }
        return distance_sum / static_cast<double>(n);
    };

    RigidTransform pose = init;
    Eigen::VectorXd residual(2 * n);
    double current = cost(pose, &residual);
    if (!std::isfinite(current))
        throw NumericalFailureError(
            "non-finite residuals at the initial pose",
            {init, std::numeric_limits<double>::infinity(), 0});

    int accepted = 0;
    for (int iter = 0; iter < max_iters; ++iter) {
        Eigen::MatrixXd jac(2 * n, 6);
        for (std::size_t i = 0; i < n; ++i) {
            const Point3 q = pose.apply(c.object_points[i]);
            const double inv_z = 1.0 / q.z();
            Eigen::Matrix<double, 2, 3> duv_dq;
            duv_dq << cam.fu * inv_z, 0.0, -cam.fu * q.x() * inv_z * inv_z,
                0.0, cam.fv * inv_z, -cam.fv * q.y() * inv_z * inv_z;
            const Point3 rotated = q - pose.translation;
            Eigen::Matrix3d skew;
            skew << 0.0, -rotated.z(), rotated.y(),
                rotated.z(), 0.0, -rotated.x(),
                -rotated.y(), rotated.x(), 0.0;
            Eigen::Matrix<double, 3, 6> dq;
            dq.leftCols<3>() = -skew;  // d(exp(w)p)/dw at w=0
            dq.rightCols<3>() = Eigen::Matrix3d::Identity();
            // residual = observed - projected, so the Jacobian gets a sign flip
            jac.block<2, 6>(2 * i, 0) = -(duv_dq * dq);
        }

        Eigen::Matrix<double, 6, 1> step =
            (jac.transpose() * jac).ldlt().solve(-jac.transpose() * residual);
        if (!step.allFinite()) break;

        double scale = 1.0;
        bool improved = false;
        RigidTransform trial;
        double trial_cost = 0.0;
        for (int halving = 0; halving <= 8; ++halving) {
            const Eigen::Vector3d omega = scale * step.head<3>();
            const double angle = omega.norm();
            const Eigen::Matrix3d delta_rot =
                angle < 1e-14 ? Eigen::Matrix3d::Identity()
                              : Eigen::AngleAxisd(angle, omega / angle).toRotationMatrix();
            trial.rotation = orthonormalize(delta_rot * pose.rotation);
            trial.translation = pose.translation + scale * step.tail<3>();
            trial_cost = cost(trial, nullptr);
            if (trial_cost < current) {
                improved = true;
                break;
            }
            scale *= 0.5;
        }
        if (!improved) break;

        pose = trial;
        const double previous = current;
        current = cost(pose, &residual);
        ++accepted;
        if (previous - current <= tol * std::max(previous, 1e-300)) break;
    }

    PnPSolution solution;
    solution.pose = pose;
    solution.mean_reprojection_error_px = current;
    solution.refinement_iterations = accepted;
    return solution;
}

// ---------------------------------------------------------------------------
// Board pose
// ---------------------------------------------------------------------------

/// Pose of a fiducial board from its detected corners: EPnP followed by
/// Gauss-Newton refinement.
inline PnPSolution estimate_board_pose(std::span<const Point3> fiducials_3d,
                                       std::span<const Point2> detections_2d,
                                       const AcquisitionGeometry& geom) {
    if (fiducials_3d.size() != detections_2d.size())
        throw ShapeMismatchError("fiducial and detection counts differ");
    if (fiducials_3d.size() < 4)
        throw InsufficientCorrespondencesError("board pose needs at least 4 fiducials, got " +
                                               std::to_string(fiducials_3d.size()));
    const CorrespondenceSet set = CorrespondenceSet::from_geometry(
        {fiducials_3d.begin(), fiducials_3d.end()}, {detections_2d.begin(), detections_2d.end()},
        geom);
    const PnPSolution coarse = solve_epnp(set);
    return refine_gauss_newton(set, coarse.pose);
}

}  // namespace xpose
