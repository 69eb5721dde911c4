#pragma once

#include <cmath>
#include <vector>

#include "xpose/geometry.hpp"
#include "xpose/metrics.hpp"

namespace xpose {

namespace detail {

inline std::array<Point3, 9> box_control_points(const Point3& lo, const Point3& hi) {
    std::array<Point3, 9> cps;
    cps[0] = 0.5 * (lo + hi);
    int k = 1;
    for (const double x : {lo.x(), hi.x()})
        for (const double y : {lo.y(), hi.y()})
            for (const double z : {lo.z(), hi.z()}) cps[k++] = {x, y, z};
    return cps;
}

}  // namespace detail

/// Axis-aligned cube centered at the origin: corner vertices plus a surface
/// lattice at the requested division count. The diameter parameter follows
/// the instrument convention (edge length), not the vertex-set diagonal.
inline InstrumentModel make_cube_model(double edge_mm = 30.0, int face_divisions = 4) {
    InstrumentModel model;
    model.name = "cube";
    model.diameter_mm = edge_mm;
    model.symmetry = Symmetry::Asymmetric;

    const double half = edge_mm / 2.0;
    const double step = edge_mm / face_divisions;
    for (int i = 0; i <= face_divisions; ++i)
        for (int j = 0; j <= face_divisions; ++j)
            for (int k = 0; k <= face_divisions; ++k) {
                const bool on_surface = i == 0 || i == face_divisions || j == 0 ||
                                        j == face_divisions || k == 0 || k == face_divisions;
                if (!on_surface) continue;
                model.vertices.push_back({-half + i * step, -half + j * step, -half + k * step});
            }
    model.control_points = detail::box_control_points({-half, -half, -half}, {half, half, half});
    model.validate();
    return model;
}

/// Cannulated screw along +z with the tip at the origin: a coned shaft, a
/// wider head and a domed top. Ring placement keeps the maximum pairwise
/// vertex distance exactly at the screw length, which doubles as its diameter
/// parameter.
inline InstrumentModel make_screw_model(double length_mm = 34.3, double head_diameter_mm = 6.88,
                                        double shaft_diameter_mm = 3.5, int segments = 16) {
    InstrumentModel model;
    model.name = "screw";
    model.diameter_mm = length_mm;
    model.symmetry = Symmetry::ContinuousAxis;
    model.symmetry_axis = Eigen::Vector3d::UnitZ();

    const double shaft_r = shaft_diameter_mm / 2.0;
    const double head_r = head_diameter_mm / 2.0;
    const double head_len = 3.4;
    const double shaft_top = length_mm - head_len;
    const double cone_len = 3.0;
    // The head rim sits where its distance to the tip equals the screw length.
    const double rim_z = std::sqrt(length_mm * length_mm - head_r * head_r);

    std::vector<std::pair<double, double>> rings;  // (z, radius)
    const int shaft_rings = 5;
    for (int i = 0; i < shaft_rings; ++i)
        rings.emplace_back(cone_len + (shaft_top - cone_len) * i / (shaft_rings - 1), shaft_r);
    rings.emplace_back(shaft_top, head_r);
    rings.emplace_back(rim_z, head_r);

    model.vertices.push_back({0.0, 0.0, 0.0});        // tip apex
    model.vertices.push_back({0.0, 0.0, length_mm});  // domed head apex
    for (const auto& [z, r] : rings)
        for (int s = 0; s < segments; ++s) {
            const double angle = 2.0 * kPi * s / segments;
            model.vertices.push_back({r * std::cos(angle), r * std::sin(angle), z});
        }

    model.control_points =
        detail::box_control_points({-head_r, -head_r, 0.0}, {head_r, head_r, length_mm});
    model.validate();
    return model;
}

}  // namespace xpose
