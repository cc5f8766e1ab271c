#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "perfact/errors.hpp"

namespace perfact {
class Rng;
}

namespace perfact::geom {

struct Vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    Vec3 operator-() const { return {-x, -y, -z}; }
    Vec3& operator+=(const Vec3& o) {
        x += o.x;
        y += o.y;
        z += o.z;
        return *this;
    }
};

double dot(const Vec3& a, const Vec3& b);
Vec3 cross(const Vec3& a, const Vec3& b);
double norm(const Vec3& v);
Vec3 normalized(const Vec3& v);

// Unit quaternion, (w, x, y, z). Normalized on construction.
struct Quat {
    double w = 1.0;
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    Quat() = default;
    Quat(double w_, double x_, double y_, double z_);

    static Quat identity() { return {}; }
    static Quat from_axis_angle(const Vec3& axis, double angle);
    static Quat from_yaw(double yaw);

    Quat operator*(const Quat& o) const;
    Quat conjugate() const { return Quat(w, -x, -y, -z); }
    Vec3 rotate(const Vec3& v) const;
    double norm() const;
};

// Geodesic angle between two orientations, in [0, pi].
double quat_angle(const Quat& a, const Quat& b);

// Axis-angle vector of the shortest rotation equal to q.
Vec3 rotation_vector(const Quat& q);

struct Pose {
    Vec3 position;
    Quat orientation;

    static Pose identity() { return {}; }
    Pose compose(const Pose& local) const;
    Pose inverse() const;
    Vec3 apply(const Vec3& p) const { return position + orientation.rotate(p); }
};

struct Cuboid {
    Vec3 half_extents;       // each > 0, meters
    Pose local_pose;         // relative to the owning frame

    double surface_area() const;
};

// A cuboid already placed in the world frame.
struct PosedPart {
    Cuboid cuboid;
    Pose pose;  // world pose of the cuboid frame (owner pose composed with local_pose)
};

struct CollisionResult {
    bool colliding = false;
    Vec3 normal;    // unit minimum-translation direction, moves A away from B
    double depth = 0.0;
};

struct PointCloud {
    std::vector<Vec3> points;
};

struct Aabb {
    Vec3 lo;
    Vec3 hi;

    bool intersects(const Aabb& o) const;
    Aabb intersection(const Aabb& o) const;
    bool contains(const Vec3& p) const;
};

struct ResolutionFailed : Error {
    explicit ResolutionFailed(const std::string& msg) : Error("ResolutionFailed", msg) {}
};

struct EmptyCompound : Error {
    explicit EmptyCompound(const std::string& msg) : Error("EmptyCompound", msg, ExitCode::DataFormat) {}
};

// Separating-axis test over the 15 OBB axes. Exact, no margin; touching
// bodies (zero gap) do not collide.
CollisionResult check_collision(const Cuboid& a, const Pose& pose_a, const Cuboid& b, const Pose& pose_b);

// Largest gap over the 15 axes: positive when separated, negative (=-depth)
// when overlapping.
double signed_separation(const Cuboid& a, const Pose& pose_a, const Cuboid& b, const Pose& pose_b);

bool point_in_cuboid(const Vec3& p, const Cuboid& c, const Pose& pose);

// Compose an owner pose over its parts.
std::vector<PosedPart> flatten(std::span<const Cuboid> parts, const Pose& owner);

bool compounds_collide(std::span<const PosedPart> a, std::span<const PosedPart> b);

// Deepest-contact minimum-translation direction that moves `mover` away from
// `fixed`; zero vector when not colliding.
Vec3 compound_contact_normal(std::span<const PosedPart> mover, std::span<const PosedPart> fixed);

struct FixedCompound {
    std::vector<PosedPart> parts;
};

// Translates `mover_pose` along the sum of per-compound contact normals,
// `step` meters at a time, until the mover clears every fixed compound.
Pose resolve_penetration(std::span<const Cuboid> mover, const Pose& mover_pose,
                         std::span<const FixedCompound> fixed, double step, int max_iters = 200);

// Area-weighted face selection, then uniform in-face placement.
PointCloud sample_surface(std::span<const PosedPart> parts, std::size_t n, std::uint64_t seed);

Aabb aabb_of(std::span<const PosedPart> parts);

// Uniform over SO(3), Shoemake's subgroup method.
Quat random_unit_quat(Rng& rng);

}  // namespace perfact::geom
