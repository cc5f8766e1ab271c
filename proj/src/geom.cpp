#include "perfact/geom.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "perfact/rng.hpp"

namespace perfact::geom {

double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }

Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

double norm(const Vec3& v) { return std::sqrt(dot(v, v)); }

Vec3 normalized(const Vec3& v) {
    const double n = norm(v);
    return {v.x / n, v.y / n, v.z / n};
}

Quat::Quat(double w_, double x_, double y_, double z_) : w(w_), x(x_), y(y_), z(z_) {
    const double n = std::sqrt(w * w + x * x + y * y + z * z);
    w /= n;
    x /= n;
    y /= n;
    z /= n;
}

Quat Quat::from_axis_angle(const Vec3& axis, double angle) {
    const Vec3 u = normalized(axis);
    const double h = 0.5 * angle;
    const double s = std::sin(h);
    return Quat(std::cos(h), u.x * s, u.y * s, u.z * s);
}

Quat Quat::from_yaw(double yaw) { return from_axis_angle({0.0, 0.0, 1.0}, yaw); }

Quat Quat::operator*(const Quat& o) const {
    return Quat(w * o.w - x * o.x - y * o.y - z * o.z,
                w * o.x + x * o.w + y * o.z - z * o.y,
                w * o.y - x * o.z + y * o.w + z * o.x,
                w * o.z + x * o.y - y * o.x + z * o.w);
}

Vec3 Quat::rotate(const Vec3& v) const {
    // v' = v + 2 q_v x (q_v x v + w v)
    const Vec3 qv{x, y, z};
    const Vec3 t = cross(qv, v) * 2.0;
    return v + t * w + cross(qv, t);
}

double Quat::norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

Vec3 rotation_vector(const Quat& q) {
    const double w = q.w < 0.0 ? -q.w : q.w;
    const Vec3 v = q.w < 0.0 ? Vec3{-q.x, -q.y, -q.z} : Vec3{q.x, q.y, q.z};
    const double s = norm(v);
    if (s < 1e-12) {
        return v * 2.0;  // small-angle limit
    }
    return v * (2.0 * std::atan2(s, w) / s);
}

double quat_angle(const Quat& a, const Quat& b) {
    // relative rotation r = a* b; atan2 keeps precision near zero where acos loses it
    const Quat r = a.conjugate() * b;
    const double s = std::sqrt(r.x * r.x + r.y * r.y + r.z * r.z);
    return 2.0 * std::atan2(s, std::abs(r.w));
}

Pose Pose::compose(const Pose& local) const {
    Pose out;
    out.position = position + orientation.rotate(local.position);
    out.orientation = orientation * local.orientation;
    return out;
}

Pose Pose::inverse() const {
    Pose out;
    out.orientation = orientation.conjugate();
    out.position = out.orientation.rotate(-position);
    return out;
}

double Cuboid::surface_area() const {
    const double a = half_extents.x;
    const double b = half_extents.y;
    const double c = half_extents.z;
    return 8.0 * (a * b + b * c + c * a);
}

bool Aabb::intersects(const Aabb& o) const {
    return lo.x <= o.hi.x && o.lo.x <= hi.x && lo.y <= o.hi.y && o.lo.y <= hi.y && lo.z <= o.hi.z &&
           o.lo.z <= hi.z;
}

Aabb Aabb::intersection(const Aabb& o) const {
    return {{std::max(lo.x, o.lo.x), std::max(lo.y, o.lo.y), std::max(lo.z, o.lo.z)},
            {std::min(hi.x, o.hi.x), std::min(hi.y, o.hi.y), std::min(hi.z, o.hi.z)}};
}

bool Aabb::contains(const Vec3& p) const {
    return p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y && p.z >= lo.z && p.z <= hi.z;
}

namespace {

struct Obb {
    Vec3 center;
    std::array<Vec3, 3> axes;  // unit world axes
    std::array<double, 3> half;
};

Obb to_obb(const Cuboid& c, const Pose& pose) {
    Obb o;
    o.center = pose.apply({0.0, 0.0, 0.0});
    o.axes[0] = pose.orientation.rotate({1.0, 0.0, 0.0});
    o.axes[1] = pose.orientation.rotate({0.0, 1.0, 0.0});
    o.axes[2] = pose.orientation.rotate({0.0, 0.0, 1.0});
    o.half = {c.half_extents.x, c.half_extents.y, c.half_extents.z};
    return o;
}

double projected_radius(const Obb& o, const Vec3& axis) {
    return o.half[0] * std::abs(dot(o.axes[0], axis)) + o.half[1] * std::abs(dot(o.axes[1], axis)) +
           o.half[2] * std::abs(dot(o.axes[2], axis));
}

struct SatOutcome {
    double separation;  // max gap over axes; negative when overlapping
    Vec3 mtv_axis;      // unit axis of the minimum overlap, oriented A-away-from-B
};

SatOutcome sat_test(const Obb& a, const Obb& b) {
    const Vec3 d = b.center - a.center;
    double max_gap = -std::numeric_limits<double>::infinity();
    double min_overlap = std::numeric_limits<double>::infinity();
    Vec3 best_axis{1.0, 0.0, 0.0};

    auto consider = [&](const Vec3& raw) {
        const double len2 = dot(raw, raw);
        if (len2 < 1e-12) {
            return;  // near-parallel edge cross product, axis covered elsewhere
        }
        const Vec3 axis = raw * (1.0 / std::sqrt(len2));
        const double dist = std::abs(dot(d, axis));
        const double gap = dist - projected_radius(a, axis) - projected_radius(b, axis);
        max_gap = std::max(max_gap, gap);
        if (-gap < min_overlap) {
            min_overlap = -gap;
            best_axis = dot(d, axis) >= 0.0 ? -axis : axis;  // move A away from B
        }
    };

    for (int i = 0; i < 3; ++i) {
        consider(a.axes[i]);
        consider(b.axes[i]);
    }
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            consider(cross(a.axes[i], b.axes[j]));
        }
    }
    return {max_gap, best_axis};
}

constexpr std::array<std::array<double, 3>, 8> kCornerSigns = {{{-1, -1, -1},
                                                                {-1, -1, 1},
                                                                {-1, 1, -1},
                                                                {-1, 1, 1},
                                                                {1, -1, -1},
                                                                {1, -1, 1},
                                                                {1, 1, -1},
                                                                {1, 1, 1}}};

}  // namespace

CollisionResult check_collision(const Cuboid& a, const Pose& pose_a, const Cuboid& b, const Pose& pose_b) {
    const SatOutcome s = sat_test(to_obb(a, pose_a), to_obb(b, pose_b));
    CollisionResult out;
    if (s.separation < 0.0) {
        out.colliding = true;
        out.depth = -s.separation;
        out.normal = s.mtv_axis;
    }
    return out;
}

double signed_separation(const Cuboid& a, const Pose& pose_a, const Cuboid& b, const Pose& pose_b) {
    return sat_test(to_obb(a, pose_a), to_obb(b, pose_b)).separation;
}

bool point_in_cuboid(const Vec3& p, const Cuboid& c, const Pose& pose) {
    const Vec3 local = pose.inverse().apply(p);
    return std::abs(local.x) < c.half_extents.x && std::abs(local.y) < c.half_extents.y &&
           std::abs(local.z) < c.half_extents.z;
}

std::vector<PosedPart> flatten(std::span<const Cuboid> parts, const Pose& owner) {
    std::vector<PosedPart> out;
    out.reserve(parts.size());
    for (const Cuboid& c : parts) {
        out.push_back({c, owner.compose(c.local_pose)});
    }
    return out;
}

namespace {

// World-aligned bounds of one posed part; cheap reject before the SAT test.
Aabb part_bounds(const PosedPart& p) {
    const Vec3 h = p.cuboid.half_extents;
    const Vec3 c = p.pose.apply({0.0, 0.0, 0.0});
    Vec3 r{0.0, 0.0, 0.0};
    const Vec3 ax = p.pose.orientation.rotate({1.0, 0.0, 0.0});
    const Vec3 ay = p.pose.orientation.rotate({0.0, 1.0, 0.0});
    const Vec3 az = p.pose.orientation.rotate({0.0, 0.0, 1.0});
    r.x = h.x * std::abs(ax.x) + h.y * std::abs(ay.x) + h.z * std::abs(az.x);
    r.y = h.x * std::abs(ax.y) + h.y * std::abs(ay.y) + h.z * std::abs(az.y);
    r.z = h.x * std::abs(ax.z) + h.y * std::abs(ay.z) + h.z * std::abs(az.z);
    return {{c.x - r.x, c.y - r.y, c.z - r.z}, {c.x + r.x, c.y + r.y, c.z + r.z}};
}

bool bounds_overlap(const Aabb& a, const Aabb& b) {
    return a.lo.x < b.hi.x && b.lo.x < a.hi.x && a.lo.y < b.hi.y && b.lo.y < a.hi.y &&
           a.lo.z < b.hi.z && b.lo.z < a.hi.z;
}

std::vector<Aabb> all_bounds(std::span<const PosedPart> parts) {
    std::vector<Aabb> out;
    out.reserve(parts.size());
    for (const PosedPart& p : parts) out.push_back(part_bounds(p));
    return out;
}

}  // namespace

bool compounds_collide(std::span<const PosedPart> a, std::span<const PosedPart> b) {
    const std::vector<Aabb> ba = all_bounds(a);
    const std::vector<Aabb> bb = all_bounds(b);
    for (std::size_t i = 0; i < a.size(); ++i) {
        for (std::size_t j = 0; j < b.size(); ++j) {
            if (!bounds_overlap(ba[i], bb[j])) continue;
            if (check_collision(a[i].cuboid, a[i].pose, b[j].cuboid, b[j].pose).colliding) {
                return true;
            }
        }
    }
    return false;
}

Vec3 compound_contact_normal(std::span<const PosedPart> mover, std::span<const PosedPart> fixed) {
    const std::vector<Aabb> bm = all_bounds(mover);
    const std::vector<Aabb> bf = all_bounds(fixed);
    double deepest = 0.0;
    Vec3 n{0.0, 0.0, 0.0};
    for (std::size_t i = 0; i < mover.size(); ++i) {
        for (std::size_t j = 0; j < fixed.size(); ++j) {
            if (!bounds_overlap(bm[i], bf[j])) continue;
            const CollisionResult r =
                check_collision(mover[i].cuboid, mover[i].pose, fixed[j].cuboid, fixed[j].pose);
            if (r.colliding && r.depth > deepest) {
                deepest = r.depth;
                n = r.normal;
            }
        }
    }
    return n;
}

Pose resolve_penetration(std::span<const Cuboid> mover, const Pose& mover_pose,
                         std::span<const FixedCompound> fixed, double step, int max_iters) {
    Pose pose = mover_pose;
    std::vector<Aabb> fixed_boxes;
    fixed_boxes.reserve(fixed.size());
    for (const FixedCompound& f : fixed) fixed_boxes.push_back(aabb_of(f.parts));
    for (int iter = 0; iter < max_iters; ++iter) {
        const std::vector<PosedPart> placed = flatten(mover, pose);
        const Aabb mover_box = aabb_of(placed);
        Vec3 total{0.0, 0.0, 0.0};
        bool any = false;
        for (std::size_t fi = 0; fi < fixed.size(); ++fi) {
            if (!bounds_overlap(mover_box, fixed_boxes[fi])) continue;
            const Vec3 n = compound_contact_normal(placed, fixed[fi].parts);
            if (norm(n) > 0.0) {
                any = true;
                total += n;
            }
        }
        if (!any) {
            return pose;
        }
        if (norm(total) < 1e-12) {
            throw ResolutionFailed("contact normals cancel; mover is wedged");
        }
        pose.position += total * step;
    }
    throw ResolutionFailed("still colliding after max_iters");
}

PointCloud sample_surface(std::span<const PosedPart> parts, std::size_t n, std::uint64_t seed) {
    if (parts.empty()) {
        throw EmptyCompound("sample_surface on empty part list");
    }
    // One entry per (part, face): cumulative area for face selection.
    struct Face {
        std::size_t part;
        int axis;     // fixed coordinate
        double sign;  // +1 or -1
    };
    std::vector<Face> faces;
    std::vector<double> cum;
    faces.reserve(parts.size() * 6);
    cum.reserve(parts.size() * 6);
    double total = 0.0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        const Vec3 h = parts[p].cuboid.half_extents;
        const std::array<double, 3> area = {4.0 * h.y * h.z, 4.0 * h.x * h.z, 4.0 * h.x * h.y};
        for (int axis = 0; axis < 3; ++axis) {
            for (double sign : {-1.0, 1.0}) {
                faces.push_back({p, axis, sign});
                total += area[static_cast<std::size_t>(axis)];
                cum.push_back(total);
            }
        }
    }

    Rng rng(seed);
    PointCloud cloud;
    cloud.points.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double u = rng.uniform() * total;
        const auto it = std::lower_bound(cum.begin(), cum.end(), u);
        const std::size_t fi = std::min(static_cast<std::size_t>(it - cum.begin()), faces.size() - 1);
        const Face& f = faces[fi];
        const PosedPart& part = parts[f.part];
        const Vec3 h = part.cuboid.half_extents;
        const double s = rng.uniform(-1.0, 1.0);
        const double t = rng.uniform(-1.0, 1.0);
        Vec3 local;
        switch (f.axis) {
            case 0: local = {f.sign * h.x, s * h.y, t * h.z}; break;
            case 1: local = {s * h.x, f.sign * h.y, t * h.z}; break;
            default: local = {s * h.x, t * h.y, f.sign * h.z}; break;
        }
        cloud.points.push_back(part.pose.apply(local));
    }
    return cloud;
}

Quat random_unit_quat(Rng& rng) {
    const double u1 = rng.uniform();
    const double u2 = rng.uniform();
    const double u3 = rng.uniform();
    const double two_pi = 2.0 * 3.14159265358979323846;
    return Quat(std::sqrt(u1) * std::cos(two_pi * u3), std::sqrt(1.0 - u1) * std::sin(two_pi * u2),
                std::sqrt(1.0 - u1) * std::cos(two_pi * u2), std::sqrt(u1) * std::sin(two_pi * u3));
}

Aabb aabb_of(std::span<const PosedPart> parts) {
    if (parts.empty()) {
        throw EmptyCompound("aabb_of on empty part list");
    }
    Aabb box{{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
              std::numeric_limits<double>::infinity()},
             {-std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(),
              -std::numeric_limits<double>::infinity()}};
    for (const PosedPart& part : parts) {
        const Vec3 h = part.cuboid.half_extents;
        for (const auto& sgn : kCornerSigns) {
            const Vec3 corner = part.pose.apply({sgn[0] * h.x, sgn[1] * h.y, sgn[2] * h.z});
            box.lo.x = std::min(box.lo.x, corner.x);
            box.lo.y = std::min(box.lo.y, corner.y);
            box.lo.z = std::min(box.lo.z, corner.z);
            box.hi.x = std::max(box.hi.x, corner.x);
            box.hi.y = std::max(box.hi.y, corner.y);
            box.hi.z = std::max(box.hi.z, corner.z);
        }
    }
    return box;
}

}  // namespace perfact::geom
