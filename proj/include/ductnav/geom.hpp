#pragma once

// Procedural duct courses: chains of straight tube segments whose
// directions are related by axis-angle (Rodrigues) rotations, plus the
// clearance / centerline queries used for collision and reward shaping.

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ductnav/error.hpp"
#include "ductnav/rng.hpp"

namespace ductnav::geom {

using Vec3 = Eigen::Vector3d;

struct DuctParams {
    int n_segments = 7;
    double radius = 0.25;
    double length_min = 1.0;
    double length_max = 2.5;
    double max_bend_angle = 30.0 * std::numbers::pi / 180.0;
    std::uint64_t seed = 0;
    /// 0 means one waypoint per segment end.
    int n_waypoints = 0;

    int waypoint_count() const { return n_waypoints > 0 ? n_waypoints : n_segments; }

    void validate() const {
        if (n_segments < 1) throw PreconditionError("duct: n_segments must be >= 1");
        if (!(radius > 0.0)) throw PreconditionError("duct: radius must be > 0");
        if (!(length_min > 0.0) || !(length_min <= length_max))
            throw PreconditionError("duct: require 0 < length_min <= length_max");
        if (!(max_bend_angle >= 0.0) || !(max_bend_angle < std::numbers::pi / 2))
            throw PreconditionError("duct: max_bend_angle must lie in [0, pi/2)");
        if (n_waypoints < 0) throw PreconditionError("duct: n_waypoints must be >= 0");
    }
};

struct Segment {
    Vec3 start = Vec3::Zero();
    Vec3 direction = Vec3::UnitX();
    double length = 1.0;
    double radius = 0.25;

    Vec3 end() const { return start + length * direction; }
};

struct Duct {
    std::vector<Segment> segments;
    std::vector<Vec3> waypoints;
    std::uint64_t seed = 0;
    double radius = 0.25;

    /// Arc length at the start of each segment, plus the total at the back.
    std::vector<double> arc_offsets() const {
        std::vector<double> out;
        out.reserve(segments.size() + 1);
        double acc = 0.0;
        out.push_back(acc);
        for (const auto& s : segments) {
            acc += s.length;
            out.push_back(acc);
        }
        return out;
    }

    double total_length() const {
        double acc = 0.0;
        for (const auto& s : segments) acc += s.length;
        return acc;
    }

    /// Point on the centerline at the given arc length (clamped to the duct).
    Vec3 point_at(double arc) const;

    bool empty() const { return segments.empty(); }
};

struct CenterlineQuery {
    Vec3 closest_point = Vec3::Zero();
    std::size_t segment_index = 0;
    double arc_length = 0.0;
    double radial_deviation = 0.0;
};

/// v cos(theta) + (k x v) sin(theta) + k (k.v)(1 - cos(theta)); k must be unit length.
inline Vec3 rotate_rodrigues(const Vec3& v, const Vec3& k, double theta) {
    if (std::abs(k.norm() - 1.0) >= 1e-9)
        throw PreconditionError("rotate_rodrigues: rotation axis must be a unit vector");
    const double c = std::cos(theta);
    const double s = std::sin(theta);
    return v * c + k.cross(v) * s + k * (k.dot(v) * (1.0 - c));
}

namespace detail {

// Orthonormal pair spanning the plane perpendicular to unit vector d.
inline std::pair<Vec3, Vec3> perpendicular_basis(const Vec3& d) {
    const Vec3 helper = std::abs(d.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
    Vec3 e1 = d.cross(helper).normalized();
    Vec3 e2 = d.cross(e1).normalized();
    return {e1, e2};
}

// Closest point parameter t in [0, length] of p on segment s.
inline double project_clamped(const Segment& s, const Vec3& p) {
    const double t = (p - s.start).dot(s.direction);
    return std::clamp(t, 0.0, s.length);
}

}  // namespace detail

inline Vec3 Duct::point_at(double arc) const {
    if (segments.empty()) return Vec3::Zero();
    double acc = 0.0;
    for (std::size_t i = 0; i < segments.size(); ++i) {
        const auto& s = segments[i];
        if (arc <= acc + s.length || i + 1 == segments.size()) {
            const double t = std::clamp(arc - acc, 0.0, s.length);
            return s.start + t * s.direction;
        }
        acc += s.length;
    }
    return segments.back().end();
}

inline Duct generate_duct(const DuctParams& params) {
    params.validate();
    Rng rng(params.seed);

    Duct duct;
    duct.seed = params.seed;
    duct.radius = params.radius;
    duct.segments.reserve(static_cast<std::size_t>(params.n_segments));

    Vec3 start = Vec3::Zero();
    Vec3 direction = Vec3::UnitX();
    for (int i = 0; i < params.n_segments; ++i) {
        if (i > 0) {
            const double theta = rng.uniform(0.0, params.max_bend_angle);
            const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
            const auto [e1, e2] = detail::perpendicular_basis(direction);
            const Vec3 axis = (std::cos(phi) * e1 + std::sin(phi) * e2).normalized();
            direction = rotate_rodrigues(direction, axis, theta).normalized();
        }
        const double length = rng.uniform(params.length_min, params.length_max);
        duct.segments.push_back(Segment{start, direction, length, params.radius});
        start = duct.segments.back().end();
    }

    const int n_wp = params.waypoint_count();
    if (params.n_waypoints == 0) {
        for (const auto& s : duct.segments) duct.waypoints.push_back(s.end());
    } else {
        const double total = duct.total_length();
        for (int i = 1; i <= n_wp; ++i)
            duct.waypoints.push_back(duct.point_at(total * static_cast<double>(i) / n_wp));
    }
    return duct;
}

/// Signed clearance: max over segments of (radius - distance to the finite axis).
inline double clearance(const Duct& duct, const Vec3& p) {
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& s : duct.segments) {
        const double t = detail::project_clamped(s, p);
        const double d = (p - (s.start + t * s.direction)).norm();
        best = std::max(best, s.radius - d);
    }
    return best;
}

inline CenterlineQuery closest_centerline(const Duct& duct, const Vec3& p) {
    CenterlineQuery best;
    double best_dist = std::numeric_limits<double>::infinity();
    double acc = 0.0;
    for (std::size_t i = 0; i < duct.segments.size(); ++i) {
        const auto& s = duct.segments[i];
        const double t = detail::project_clamped(s, p);
        const Vec3 c = s.start + t * s.direction;
        const double d = (p - c).norm();
        // strict comparison keeps the lower index on ties
        if (d < best_dist) {
            best_dist = d;
            best.closest_point = c;
            best.segment_index = i;
            best.arc_length = acc + t;
            best.radial_deviation = d;
        }
        acc += s.length;
    }
    return best;
}

// ---------------------------------------------------------------------------
// Persistence

namespace detail {
inline std::string fmt17(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}
inline std::string vec17(const Vec3& v) {
    return "[" + fmt17(v.x()) + "," + fmt17(v.y()) + "," + fmt17(v.z()) + "]";
}
}  // namespace detail

/// JSON text with 17 significant digits per float (bit-exact round trip).
inline std::string duct_to_json(const Duct& duct) {
    std::ostringstream os;
    os << "{\n  \"seed\": " << duct.seed << ",\n  \"radius\": " << detail::fmt17(duct.radius)
       << ",\n  \"segments\": [";
    for (std::size_t i = 0; i < duct.segments.size(); ++i) {
        const auto& s = duct.segments[i];
        os << (i ? "," : "") << "\n    {\"start\": " << detail::vec17(s.start)
           << ", \"direction\": " << detail::vec17(s.direction)
           << ", \"length\": " << detail::fmt17(s.length) << "}";
    }
    os << "\n  ],\n  \"waypoints\": [";
    for (std::size_t i = 0; i < duct.waypoints.size(); ++i)
        os << (i ? "," : "") << "\n    " << detail::vec17(duct.waypoints[i]);
    os << "\n  ]\n}\n";
    return os.str();
}

inline Duct duct_from_json(const std::string& text) {
    try {
        const auto j = nlohmann::json::parse(text);
        auto vec = [](const nlohmann::json& a) {
            return Vec3(a.at(0).get<double>(), a.at(1).get<double>(), a.at(2).get<double>());
        };
        Duct d;
        d.seed = j.at("seed").get<std::uint64_t>();
        d.radius = j.at("radius").get<double>();
        for (const auto& s : j.at("segments"))
            d.segments.push_back(
                Segment{vec(s.at("start")), vec(s.at("direction")), s.at("length").get<double>(), d.radius});
        for (const auto& w : j.at("waypoints")) d.waypoints.push_back(vec(w));
        return d;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("duct JSON: ") + e.what());
    }
}

/// Triangle mesh of the tube walls (32-gon cross-section), Wavefront OBJ.
inline std::string duct_to_obj(const Duct& duct, int sides = 32) {
    std::ostringstream os;
    os << "# duct seed " << duct.seed << "\n";
    std::size_t base = 1;
    for (const auto& s : duct.segments) {
        const auto [e1, e2] = detail::perpendicular_basis(s.direction);
        for (const Vec3& c : {s.start, s.end()}) {
            for (int k = 0; k < sides; ++k) {
                const double a = 2.0 * std::numbers::pi * k / sides;
                const Vec3 v = c + s.radius * (std::cos(a) * e1 + std::sin(a) * e2);
                os << "v " << detail::fmt17(v.x()) << ' ' << detail::fmt17(v.y()) << ' '
                   << detail::fmt17(v.z()) << '\n';
            }
        }
        for (int k = 0; k < sides; ++k) {
            const std::size_t a0 = base + k, a1 = base + (k + 1) % sides;
            const std::size_t b0 = a0 + sides, b1 = a1 + sides;
            os << "f " << a0 << ' ' << a1 << ' ' << b1 << '\n';
            os << "f " << a0 << ' ' << b1 << ' ' << b0 << '\n';
        }
        base += 2 * static_cast<std::size_t>(sides);
    }
    return os.str();
}

}  // namespace ductnav::geom
