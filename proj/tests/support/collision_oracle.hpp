#pragma once

// Containment-sampling collision oracle, independent of the SAT path it
// checks. A pair collides iff some sample point of one body lies strictly
// inside the other. Surface samples are concentrated inside the AABB-overlap
// region (points outside it can never witness containment), so shallow
// contacts are still caught at the 1e4-points budget.

#include <array>
#include <cmath>
#include <vector>

#include "perfact/geom.hpp"
#include "perfact/rng.hpp"

namespace perfact::testing {

using geom::Cuboid;
using geom::Pose;
using geom::Vec3;

struct OracleBody {
    Vec3 center;
    std::array<Vec3, 3> axes;
    std::array<double, 3> half;
};

inline OracleBody oracle_body(const Cuboid& c, const Pose& pose) {
    OracleBody b;
    b.center = pose.apply({0.0, 0.0, 0.0});
    b.axes = {pose.orientation.rotate({1.0, 0.0, 0.0}), pose.orientation.rotate({0.0, 1.0, 0.0}),
              pose.orientation.rotate({0.0, 0.0, 1.0})};
    b.half = {c.half_extents.x, c.half_extents.y, c.half_extents.z};
    return b;
}

inline bool oracle_inside(const Vec3& p, const OracleBody& b) {
    const Vec3 d = p - b.center;
    for (int k = 0; k < 3; ++k) {
        if (std::abs(geom::dot(d, b.axes[k])) >= b.half[k]) {
            return false;
        }
    }
    return true;
}

inline std::array<Vec3, 8> oracle_corners(const OracleBody& b) {
    std::array<Vec3, 8> out;
    int i = 0;
    for (double sx : {-1.0, 1.0}) {
        for (double sy : {-1.0, 1.0}) {
            for (double sz : {-1.0, 1.0}) {
                out[i++] = b.center + b.axes[0] * (sx * b.half[0]) + b.axes[1] * (sy * b.half[1]) +
                           b.axes[2] * (sz * b.half[2]);
            }
        }
    }
    return out;
}

inline geom::Aabb oracle_aabb(const OracleBody& b) {
    geom::Aabb box{{1e300, 1e300, 1e300}, {-1e300, -1e300, -1e300}};
    for (const Vec3& c : oracle_corners(b)) {
        box.lo.x = std::min(box.lo.x, c.x);
        box.lo.y = std::min(box.lo.y, c.y);
        box.lo.z = std::min(box.lo.z, c.z);
        box.hi.x = std::max(box.hi.x, c.x);
        box.hi.y = std::max(box.hi.y, c.y);
        box.hi.z = std::max(box.hi.z, c.z);
    }
    return box;
}

// Convex polygon from clipping one box face against an AABB.
inline std::vector<Vec3> clip_face_to_aabb(const std::array<Vec3, 4>& quad, const geom::Aabb& box) {
    std::vector<Vec3> poly(quad.begin(), quad.end());
    auto clip = [&](auto signed_dist) {
        std::vector<Vec3> out;
        out.reserve(poly.size() + 2);
        for (std::size_t i = 0; i < poly.size(); ++i) {
            const Vec3& a = poly[i];
            const Vec3& b = poly[(i + 1) % poly.size()];
            const double da = signed_dist(a);
            const double db = signed_dist(b);
            if (da >= 0.0) {
                out.push_back(a);
            }
            if ((da >= 0.0) != (db >= 0.0)) {
                const double t = da / (da - db);
                out.push_back(a + (b - a) * t);
            }
        }
        poly = std::move(out);
    };
    clip([&](const Vec3& p) { return p.x - box.lo.x; });
    clip([&](const Vec3& p) { return box.hi.x - p.x; });
    clip([&](const Vec3& p) { return p.y - box.lo.y; });
    clip([&](const Vec3& p) { return box.hi.y - p.y; });
    clip([&](const Vec3& p) { return p.z - box.lo.z; });
    clip([&](const Vec3& p) { return box.hi.z - p.z; });
    return poly;
}

struct ClippedTriangle {
    Vec3 a, b, c;
    double area;
};

inline void face_triangles(const OracleBody& body, const geom::Aabb& region,
                           std::vector<ClippedTriangle>& out) {
    for (int axis = 0; axis < 3; ++axis) {
        const int u = (axis + 1) % 3;
        const int v = (axis + 2) % 3;
        for (double sign : {-1.0, 1.0}) {
            const Vec3 base = body.center + body.axes[axis] * (sign * body.half[axis]);
            const Vec3 du = body.axes[u] * body.half[u];
            const Vec3 dv = body.axes[v] * body.half[v];
            const std::array<Vec3, 4> quad = {base - du - dv, base + du - dv, base + du + dv,
                                              base - du + dv};
            const std::vector<Vec3> poly = clip_face_to_aabb(quad, region);
            for (std::size_t i = 2; i < poly.size(); ++i) {
                const Vec3 e1 = poly[i - 1] - poly[0];
                const Vec3 e2 = poly[i] - poly[0];
                const double area = 0.5 * geom::norm(geom::cross(e1, e2));
                if (area > 0.0) {
                    out.push_back({poly[0], poly[i - 1], poly[i], area});
                }
            }
        }
    }
}

// Clips segment p0..p1 to an AABB (slab method); returns false when outside.
inline bool clip_segment_to_aabb(const Vec3& p0, const Vec3& p1, const geom::Aabb& box, double& t0,
                                 double& t1) {
    t0 = 0.0;
    t1 = 1.0;
    const double lo[3] = {box.lo.x, box.lo.y, box.lo.z};
    const double hi[3] = {box.hi.x, box.hi.y, box.hi.z};
    const double s[3] = {p0.x, p0.y, p0.z};
    const double d[3] = {p1.x - p0.x, p1.y - p0.y, p1.z - p0.z};
    for (int k = 0; k < 3; ++k) {
        if (std::abs(d[k]) < 1e-300) {
            if (s[k] < lo[k] || s[k] > hi[k]) {
                return false;
            }
            continue;
        }
        double ta = (lo[k] - s[k]) / d[k];
        double tb = (hi[k] - s[k]) / d[k];
        if (ta > tb) {
            std::swap(ta, tb);
        }
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
        if (t0 > t1) {
            return false;
        }
    }
    return true;
}

// 10^4 samples per body: corners, clipped-edge points, clipped-surface
// points, and interior points of the overlap region. Returns true iff a
// containment witness is found.
inline bool containment_oracle_collides(const Cuboid& ca, const Pose& pa, const Cuboid& cb,
                                        const Pose& pb, std::size_t points_per_body,
                                        std::uint64_t seed) {
    const OracleBody a = oracle_body(ca, pa);
    const OracleBody b = oracle_body(cb, pb);
    const geom::Aabb box_a = oracle_aabb(a);
    const geom::Aabb box_b = oracle_aabb(b);
    if (!box_a.intersects(box_b)) {
        return false;
    }
    const geom::Aabb region = box_a.intersection(box_b);

    for (const Vec3& c : oracle_corners(a)) {
        if (oracle_inside(c, b)) {
            return true;
        }
    }
    for (const Vec3& c : oracle_corners(b)) {
        if (oracle_inside(c, a)) {
            return true;
        }
    }

    Rng rng(seed);
    const std::size_t per_edge = 50;
    const std::size_t interior_budget = points_per_body / 5;
    const std::size_t surface_budget = points_per_body - interior_budget - 8 - 12 * per_edge;

    // Edge-edge wedge overlaps leave no corner inside the other body; the
    // witness sits on an edge, so walk each edge's clipped span densely.
    auto edge_witness = [&](const OracleBody& from, const OracleBody& into) {
        const std::array<Vec3, 8> c = oracle_corners(from);
        constexpr int kEdges[12][2] = {{0, 1}, {0, 2}, {0, 4}, {1, 3}, {1, 5}, {2, 3},
                                       {2, 6}, {3, 7}, {4, 5}, {4, 6}, {5, 7}, {6, 7}};
        for (const auto& e : kEdges) {
            double t0, t1;
            if (!clip_segment_to_aabb(c[e[0]], c[e[1]], region, t0, t1)) {
                continue;
            }
            for (std::size_t i = 0; i <= per_edge; ++i) {
                const double t = t0 + (t1 - t0) * (static_cast<double>(i) / per_edge);
                if (oracle_inside(c[e[0]] + (c[e[1]] - c[e[0]]) * t, into)) {
                    return true;
                }
            }
        }
        return false;
    };
    if (edge_witness(a, b) || edge_witness(b, a)) {
        return true;
    }

    auto surface_witness = [&](const OracleBody& from, const OracleBody& into) {
        std::vector<ClippedTriangle> tris;
        face_triangles(from, region, tris);
        if (tris.empty()) {
            return false;
        }
        std::vector<double> cum;
        cum.reserve(tris.size());
        double total = 0.0;
        for (const ClippedTriangle& t : tris) {
            total += t.area;
            cum.push_back(total);
        }
        for (std::size_t i = 0; i < surface_budget; ++i) {
            const double u = rng.uniform() * total;
            std::size_t lo = 0;
            std::size_t hi = cum.size() - 1;
            while (lo < hi) {
                const std::size_t mid = (lo + hi) / 2;
                if (cum[mid] < u) {
                    lo = mid + 1;
                } else {
                    hi = mid;
                }
            }
            const ClippedTriangle& t = tris[lo];
            const double r1 = std::sqrt(rng.uniform());
            const double r2 = rng.uniform();
            const Vec3 p = t.a * (1.0 - r1) + t.b * (r1 * (1.0 - r2)) + t.c * (r1 * r2);
            if (oracle_inside(p, into)) {
                return true;
            }
        }
        return false;
    };

    if (surface_witness(a, b) || surface_witness(b, a)) {
        return true;
    }

    for (std::size_t i = 0; i < 2 * interior_budget; ++i) {
        const Vec3 p{rng.uniform(region.lo.x, region.hi.x), rng.uniform(region.lo.y, region.hi.y),
                     rng.uniform(region.lo.z, region.hi.z)};
        if (oracle_inside(p, a) && oracle_inside(p, b)) {
            return true;
        }
    }
    return false;
}

using geom::random_unit_quat;

struct RandomPair {
    Cuboid a;
    Pose pose_a;
    Cuboid b;
    Pose pose_b;
};

inline RandomPair random_cuboid_pair(Rng& rng) {
    auto make = [&](double spread) {
        Cuboid c;
        c.half_extents = {rng.uniform(0.05, 0.5), rng.uniform(0.05, 0.5), rng.uniform(0.05, 0.5)};
        Pose p;
        p.position = {rng.uniform(-spread, spread), rng.uniform(-spread, spread),
                      rng.uniform(-spread, spread)};
        p.orientation = random_unit_quat(rng);
        return std::pair<Cuboid, Pose>(c, p);
    };
    auto [ca, pa] = make(0.4);
    auto [cb, pb] = make(0.8);
    return {ca, pa, cb, pb};
}

}  // namespace perfact::testing
