#include <catch2/catch_amalgamated.hpp>

#include <algorithm>

#include "test_helpers.hpp"
#include "xpose/metrics.hpp"
#include "xpose/models.hpp"

using namespace xpose;
using Catch::Approx;

namespace {

// Independent brute-force evaluations of the two distance metrics; the
// library implementations must match these on every input.

double add_brute_force(const InstrumentModel& m, const RigidTransform& gt,
                       const RigidTransform& pred) {
    double sum = 0.0;
    for (const auto& v : m.vertices) sum += (gt.apply(v) - pred.apply(v)).norm();
    return sum / static_cast<double>(m.vertices.size());
}

double add_s_brute_force(const InstrumentModel& m, const RigidTransform& gt,
                         const RigidTransform& pred) {
    double sum = 0.0;
    for (const auto& v1 : m.vertices) {
        const Point3 a = gt.apply(v1);
        double best = std::numeric_limits<double>::infinity();
        for (const auto& v2 : m.vertices) best = std::min(best, (a - pred.apply(v2)).norm());
        sum += best;
    }
    return sum / static_cast<double>(m.vertices.size());
}

RigidTransform perturbed(const RigidTransform& base, Rng& rng, double angle_deg, double shift_mm) {
    RigidTransform out = base;
    const Eigen::Vector3d axis =
        Eigen::Vector3d(rng.gaussian(), rng.gaussian(), rng.gaussian()).normalized();
    out.rotation = Eigen::AngleAxisd(deg_to_rad(angle_deg), axis).toRotationMatrix() * out.rotation;
    const Eigen::Vector3d dir =
        Eigen::Vector3d(rng.gaussian(), rng.gaussian(), rng.gaussian()).normalized();
    out.translation += shift_mm * dir;
    return out;
}

}  // namespace

TEST_CASE("instrument models") {
    SECTION("cube model") {
        const InstrumentModel cube = make_cube_model();
        REQUIRE(cube.diameter_mm == 30.0);
        REQUIRE(cube.vertices.size() >= 4);
        REQUIRE(cube.symmetry == Symmetry::Asymmetric);
        // corners are present: the vertex-set diagonal spans the full cube
        REQUIRE(max_pairwise_distance(cube.vertices) == Approx(30.0 * std::sqrt(3.0)));
        REQUIRE_NOTHROW(cube.validate());
    }
    SECTION("screw model keeps its length as the diameter parameter") {
        const InstrumentModel screw = make_screw_model();
        REQUIRE(screw.diameter_mm == 34.3);
        REQUIRE(screw.symmetry == Symmetry::ContinuousAxis);
        REQUIRE(max_pairwise_distance(screw.vertices) == Approx(34.3).margin(1e-9));
        REQUIRE_NOTHROW(screw.validate());
        // 0.1 * d threshold matches the stated 3.43 mm
        REQUIRE(ThresholdSpec{"0.1d", 0.1, true}.resolve_mm(screw.diameter_mm) ==
                Approx(3.43).margin(1e-12));
    }
    SECTION("validation rejects broken models") {
        InstrumentModel broken = make_cube_model();
        broken.vertices.resize(3);
        REQUIRE_THROWS_AS(broken.validate(), DataError);
        InstrumentModel unbounded = make_cube_model();
        unbounded.vertices.push_back({100.0, 0.0, 0.0});
        REQUIRE_THROWS_AS(unbounded.validate(), DataError);
    }
}

TEST_CASE("ADD metric") {
    const InstrumentModel cube = make_cube_model();
    Rng rng(3);
    const RigidTransform gt = testing::random_pose(rng, 50.0);

    SECTION("identical poses give zero") {
        REQUIRE(add_metric(cube, gt, gt) == 0.0);
    }
    SECTION("a pure unit translation gives exactly 1 mm") {
        RigidTransform pred = gt;
        pred.translation += Point3(1.0, 0.0, 0.0);
        REQUIRE(add_metric(cube, gt, pred) == Approx(1.0).margin(1e-12));
    }
    SECTION("rotation about the centroid matches the brute force") {
        RigidTransform pred = gt;
        pred.rotation = Eigen::AngleAxisd(deg_to_rad(10.0), Eigen::Vector3d::UnitY()).toRotationMatrix() *
                        pred.rotation;
        const double value = add_metric(cube, gt, pred);
        REQUIRE(value == Approx(add_brute_force(cube, gt, pred)).margin(1e-12));
        REQUIRE(value > 0.0);
    }
    SECTION("symmetric in the pose pair") {
        const RigidTransform pred = perturbed(gt, rng, 7.0, 2.0);
        REQUIRE(add_metric(cube, gt, pred) == Approx(add_metric(cube, pred, gt)).margin(1e-12));
    }
}

TEST_CASE("ADD-S metric") {
    Rng rng(5);

    SECTION("identical poses give zero") {
        const InstrumentModel screw = make_screw_model();
        const RigidTransform gt = testing::random_pose(rng, 50.0);
        REQUIRE(add_s_metric(screw, gt, gt) == 0.0);
    }
    SECTION("a ring is insensitive to rotation about its axis") {
        InstrumentModel ring;
        ring.name = "ring";
        ring.diameter_mm = 60.0;
        const int n = 64;
        for (int k = 0; k < n; ++k) {
            const double a = 2.0 * kPi * k / n;
            ring.vertices.push_back({30.0 * std::cos(a), 30.0 * std::sin(a), 0.0});
        }
        ring.control_points = {Point3{0, 0, 0},  Point3{-30, -30, 0}, Point3{-30, -30, 0},
                               Point3{-30, 30, 0}, Point3{-30, 30, 0},  Point3{30, -30, 0},
                               Point3{30, -30, 0}, Point3{30, 30, 0},   Point3{30, 30, 0}};
        const RigidTransform gt = testing::random_pose(rng, 20.0);
        RigidTransform pred = gt;
        pred.rotation = pred.rotation *
                        Eigen::AngleAxisd(deg_to_rad(20.0), Eigen::Vector3d::UnitZ()).toRotationMatrix();
        const double chord = 2.0 * 30.0 * std::sin(kPi / n);
        REQUIRE(add_s_metric(ring, gt, pred) < chord / 2.0);
        REQUIRE(add_metric(ring, gt, pred) > 5.0);  // the matched metric sees the spin
    }
    SECTION("accelerated path matches the brute force exactly") {
        const InstrumentModel screw = make_screw_model();  // > 64 vertices, grid-indexed
        REQUIRE(screw.vertices.size() >= 64);
        for (int trial = 0; trial < 20; ++trial) {
            const RigidTransform gt = testing::random_pose(rng, 80.0);
            const RigidTransform pred = perturbed(gt, rng, rng.uniform(0.0, 25.0), rng.uniform(0.0, 10.0));
            const double fast = add_s_metric(screw, gt, pred);
            const double brute = add_s_brute_force(screw, gt, pred);
            REQUIRE(fast == Approx(brute).margin(1e-12));
        }
    }
    SECTION("add_s never exceeds add") {
        const InstrumentModel cube = make_cube_model();
        const InstrumentModel screw = make_screw_model();
        for (int trial = 0; trial < 50; ++trial) {
            const InstrumentModel& model = trial % 2 == 0 ? cube : screw;
            const RigidTransform gt = testing::random_pose(rng, 100.0);
            const RigidTransform pred =
                perturbed(gt, rng, rng.uniform(0.0, 40.0), rng.uniform(0.0, 20.0));
            REQUIRE(add_s_metric(model, gt, pred) <= add_metric(model, gt, pred) + 1e-12);
        }
    }
    SECTION("both metrics are invariant under a common rigid transform") {
        const InstrumentModel cube = make_cube_model();
        const RigidTransform gt = testing::random_pose(rng, 50.0);
        const RigidTransform pred = perturbed(gt, rng, 12.0, 4.0);
        const RigidTransform common = testing::random_pose(rng, 300.0);
        const RigidTransform gt2 = compose(common, gt);
        const RigidTransform pred2 = compose(common, pred);
        REQUIRE(add_metric(cube, gt2, pred2) == Approx(add_metric(cube, gt, pred)).margin(1e-9));
        REQUIRE(add_s_metric(cube, gt2, pred2) == Approx(add_s_metric(cube, gt, pred)).margin(1e-9));
    }
}

TEST_CASE("2D reprojection error") {
    SECTION("identical sets give zero") {
        const std::vector<Point2> pts{{1, 2}, {3, 4}};
        REQUIRE(reprojection_error_2d(pts, pts) == 0.0);
    }
    SECTION("a 3-4-5 offset gives five") {
        const std::vector<Point2> a{{0, 0}};
        const std::vector<Point2> b{{3, 4}};
        REQUIRE(reprojection_error_2d(a, b) == Approx(5.0));
    }
    SECTION("uniform unit offsets average to one") {
        std::vector<Point2> a, b;
        for (int k = 0; k < 9; ++k) {
            a.push_back({static_cast<double>(k), 2.0});
            b.push_back({static_cast<double>(k) + 1.0, 2.0});
        }
        REQUIRE(reprojection_error_2d(a, b) == Approx(1.0));
    }
    SECTION("length mismatch raises") {
        const std::vector<Point2> a{{0, 0}};
        const std::vector<Point2> b{{0, 0}, {1, 1}};
        REQUIRE_THROWS_AS(reprojection_error_2d(a, b), ShapeMismatchError);
    }
}

TEST_CASE("translation and angular errors") {
    Rng rng(9);
    const RigidTransform gt = testing::random_pose(rng, 100.0);

    SECTION("identical poses give zero") {
        REQUIRE(translation_error_mm(gt, gt) == 0.0);
        REQUIRE(angular_error_deg(gt, gt, Symmetry::Asymmetric) == Approx(0.0).margin(1e-9));
    }
    SECTION("a 30 degree rotation reads as 30 degrees for asymmetric objects") {
        RigidTransform pred = gt;
        pred.rotation = gt.rotation *
                        Eigen::AngleAxisd(deg_to_rad(30.0), Eigen::Vector3d::UnitX()).toRotationMatrix();
        REQUIRE(angular_error_deg(gt, pred, Symmetry::Asymmetric) == Approx(30.0).margin(1e-9));
    }
    SECTION("spin about the symmetry axis is discarded") {
        RigidTransform pred = gt;
        pred.rotation = gt.rotation *
                        Eigen::AngleAxisd(deg_to_rad(90.0), Eigen::Vector3d::UnitZ()).toRotationMatrix();
        REQUIRE(angular_error_deg(gt, pred, Symmetry::ContinuousAxis, Eigen::Vector3d::UnitZ()) ==
                Approx(0.0).margin(1e-9));
        // tilting the axis is still visible
        RigidTransform tilted = gt;
        tilted.rotation = Eigen::AngleAxisd(deg_to_rad(10.0), gt.rotation * Eigen::Vector3d::UnitX())
                              .toRotationMatrix() *
                          gt.rotation;
        REQUIRE(angular_error_deg(gt, tilted, Symmetry::ContinuousAxis, Eigen::Vector3d::UnitZ()) ==
                Approx(10.0).margin(1e-6));
    }
}

TEST_CASE("pose evaluation and threshold flags") {
    Rng rng(13);
    const InstrumentModel cube = make_cube_model();
    const RigidTransform gt = testing::random_pose(rng, 50.0);

    SECTION("flags are monotone across the relative thresholds") {
        for (int trial = 0; trial < 30; ++trial) {
            const RigidTransform pred =
                perturbed(gt, rng, rng.uniform(0.0, 10.0), rng.uniform(0.0, 4.0));
            const PoseEvaluation e = evaluate_pose(cube, gt, pred, {}, {});
            bool pass_10 = false, pass_5 = false, pass_2 = false;
            for (const auto& t : e.thresholds) {
                if (t.label == "0.1d") pass_10 = t.pass;
                if (t.label == "0.05d") pass_5 = t.pass;
                if (t.label == "0.02d") pass_2 = t.pass;
            }
            REQUIRE((!pass_2 || pass_5));
            REQUIRE((!pass_5 || pass_10));
            REQUIRE(e.add_s_mm <= e.add_mm + 1e-12);
        }
    }
    SECTION("the cube's 0.1d flag trips exactly at 3 mm of translation") {
        RigidTransform pred = gt;
        pred.translation += Point3(2.99, 0.0, 0.0);
        const PoseEvaluation close = evaluate_pose(cube, gt, pred, {}, {});
        REQUIRE(close.thresholds[0].threshold_mm == Approx(3.0));
        REQUIRE(close.thresholds[0].pass);
        pred.translation = gt.translation + Point3(3.01, 0.0, 0.0);
        const PoseEvaluation far = evaluate_pose(cube, gt, pred, {}, {});
        REQUIRE(!far.thresholds[0].pass);
    }
}

TEST_CASE("aggregation") {
    Rng rng(21);
    const InstrumentModel cube = make_cube_model();
    const RigidTransform gt = testing::random_pose(rng, 50.0);

    SECTION("all passing evaluations aggregate to 100 percent") {
        std::vector<PoseEvaluation> evals;
        for (int k = 0; k < 20; ++k) evals.push_back(evaluate_pose(cube, gt, gt, {}, {}));
        const AggregateReport report = aggregate(evals);
        for (const auto& t : report.thresholds) REQUIRE(t.pass_percent == 100.0);
        REQUIRE(report.translation_mean_mm == 0.0);
    }
    SECTION("92 of 100 at a threshold reads 92 percent") {
        std::vector<PoseEvaluation> evals;
        for (int k = 0; k < 100; ++k) {
            RigidTransform pred = gt;
            pred.translation += Point3(k < 92 ? 0.1 : 50.0, 0.0, 0.0);
            evals.push_back(evaluate_pose(cube, gt, pred, {}, {}));
        }
        const AggregateReport report = aggregate(evals);
        REQUIRE(report.thresholds[0].label == "0.1d");
        REQUIRE(report.thresholds[0].pass_percent == Approx(92.0));
    }
    SECTION("a mixed set matches a brute-force recount") {
        std::vector<PoseEvaluation> evals;
        for (int k = 0; k < 137; ++k) {
            const RigidTransform pred =
                perturbed(gt, rng, rng.uniform(0.0, 8.0), rng.uniform(0.0, 5.0));
            evals.push_back(evaluate_pose(cube, gt, pred, {}, {}));
        }
        const AggregateReport report = aggregate(evals);
        for (std::size_t t = 0; t < report.thresholds.size(); ++t) {
            std::size_t count = 0;
            for (const auto& e : evals) count += e.thresholds[t].pass ? 1 : 0;
            REQUIRE(report.thresholds[t].pass_percent ==
                    Approx(100.0 * count / evals.size()).margin(1e-12));
        }
        // mean +- std recount
        double mean = 0.0;
        for (const auto& e : evals) mean += e.translation_err_mm;
        mean /= evals.size();
        REQUIRE(report.translation_mean_mm == Approx(mean).margin(1e-12));
    }
    SECTION("empty evaluation lists are rejected") {
        REQUIRE_THROWS_AS(aggregate({}), DataError);
    }
    SECTION("CSV report mirrors the table rows") {
        std::vector<PoseEvaluation> evals{evaluate_pose(cube, gt, gt, {}, {})};
        const std::string csv = aggregate_to_csv(aggregate(evals));
        REQUIRE(csv.find("ADD(-S) 0.1d,100.00,") != std::string::npos);
        REQUIRE(csv.find("ADD(-S) 1.0mm,100.00,") != std::string::npos);
        REQUIRE(csv.find("3D Transl.err. [mm],") != std::string::npos);
        REQUIRE(csv.find("3D Ang.err. [deg.],") != std::string::npos);
    }
}
