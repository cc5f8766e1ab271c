#include <algorithm>
#include <cmath>
#include <vector>

#include <doctest.h>

#include "perfact/geom.hpp"
#include "perfact/rng.hpp"
#include "support/collision_oracle.hpp"

using namespace perfact;
using geom::Cuboid;
using geom::Pose;
using geom::Quat;
using geom::Vec3;

namespace {

constexpr double kPi = 3.14159265358979323846;

Cuboid unit_cube() {
    Cuboid c;
    c.half_extents = {0.5, 0.5, 0.5};
    return c;
}

Pose at(double x, double y = 0.0, double z = 0.0) {
    Pose p;
    p.position = {x, y, z};
    return p;
}

Pose random_pose(Rng& rng, double spread) {
    Pose p;
    p.position = {rng.uniform(-spread, spread), rng.uniform(-spread, spread),
                  rng.uniform(-spread, spread)};
    p.orientation = testing::random_unit_quat(rng);
    return p;
}

double chi_square(const std::vector<std::size_t>& counts, const std::vector<double>& expected) {
    double sum = 0.0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
        const double d = static_cast<double>(counts[i]) - expected[i];
        sum += d * d / expected[i];
    }
    return sum;
}

}  // namespace

TEST_CASE("quaternion normalization and rotation") {
    const Quat q(2.0, 0.0, 0.0, 0.0);
    CHECK(std::abs(q.norm() - 1.0) <= 1e-9);

    const Quat yaw90 = Quat::from_yaw(kPi / 2.0);
    const Vec3 r = yaw90.rotate({1.0, 0.0, 0.0});
    CHECK(std::abs(r.x) < 1e-12);
    CHECK(std::abs(r.y - 1.0) < 1e-12);
    CHECK(std::abs(r.z) < 1e-12);

    CHECK(std::abs(geom::quat_angle(Quat::identity(), yaw90) - kPi / 2.0) < 1e-12);
    CHECK(geom::quat_angle(yaw90, yaw90) < 1e-9);
}

TEST_CASE("pose composition is associative and inverse cancels") {
    Rng rng(101);
    for (int i = 0; i < 50; ++i) {
        const Pose a = random_pose(rng, 2.0);
        const Pose b = random_pose(rng, 2.0);
        const Pose c = random_pose(rng, 2.0);

        const Pose ab_c = a.compose(b).compose(c);
        const Pose a_bc = a.compose(b.compose(c));
        CHECK(geom::norm(ab_c.position - a_bc.position) < 1e-9);
        CHECK(geom::quat_angle(ab_c.orientation, a_bc.orientation) < 1e-9);

        const Pose id = a.compose(a.inverse());
        CHECK(geom::norm(id.position) < 1e-9);
        CHECK(geom::quat_angle(id.orientation, Quat::identity()) < 1e-9);
    }
}

TEST_CASE("separated unit cubes do not collide") {
    const auto r = geom::check_collision(unit_cube(), at(0.0), unit_cube(), at(1.5));
    CHECK_FALSE(r.colliding);
    CHECK(geom::signed_separation(unit_cube(), at(0.0), unit_cube(), at(1.5)) ==
          doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("coincident unit cubes collide at full depth") {
    const auto r = geom::check_collision(unit_cube(), at(0.0), unit_cube(), at(0.0));
    CHECK(r.colliding);
    CHECK(r.depth == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(geom::norm(r.normal) - 1.0) < 1e-12);
}

TEST_CASE("touching faces count as separated") {
    const auto r = geom::check_collision(unit_cube(), at(0.0), unit_cube(), at(1.0));
    CHECK_FALSE(r.colliding);
}

TEST_CASE("45-degree pair matches the containment oracle") {
    Pose pb = at(1.2);
    pb.orientation = Quat::from_yaw(kPi / 4.0);
    const auto r = geom::check_collision(unit_cube(), at(0.0), unit_cube(), pb);
    const bool oracle = testing::containment_oracle_collides(unit_cube(), at(0.0), unit_cube(), pb,
                                                             10000, 7);
    CHECK(r.colliding == oracle);
    // rotated corner reaches sqrt(2)/2 past its center, so overlap ~ 0.007 m
    CHECK(r.colliding);
    CHECK(r.depth == doctest::Approx(0.5 + std::sqrt(0.5) - 1.2).epsilon(1e-9));
}

TEST_CASE("collision normal is antisymmetric") {
    Rng rng(202);
    int seen = 0;
    while (seen < 40) {
        const auto pair = testing::random_cuboid_pair(rng);
        const auto ab = geom::check_collision(pair.a, pair.pose_a, pair.b, pair.pose_b);
        if (!ab.colliding || ab.depth < 1e-6) {
            continue;
        }
        const auto ba = geom::check_collision(pair.b, pair.pose_b, pair.a, pair.pose_a);
        REQUIRE(ba.colliding);
        CHECK(ab.depth == doctest::Approx(ba.depth).epsilon(1e-9));
        CHECK(geom::norm(ab.normal + ba.normal) < 1e-9);
        ++seen;
    }
}

TEST_CASE("SAT agrees with the containment oracle outside the margin band") {
    Rng rng(20250825);
    int colliding_cases = 0;
    int separated_cases = 0;
    for (int i = 0; i < 1000; ++i) {
        const auto pair = testing::random_cuboid_pair(rng);
        const double sep =
            geom::signed_separation(pair.a, pair.pose_a, pair.b, pair.pose_b);
        if (std::abs(sep) < 1e-3) {
            continue;
        }
        const bool sat = sep < 0.0;
        const bool oracle = testing::containment_oracle_collides(
            pair.a, pair.pose_a, pair.b, pair.pose_b, 10000, 1000 + static_cast<std::uint64_t>(i));
        CHECK_MESSAGE(sat == oracle, "pair ", i, " separation ", sep);
        (sat ? colliding_cases : separated_cases)++;
    }
    // make sure both classes were exercised
    CHECK(colliding_cases > 100);
    CHECK(separated_cases > 100);
}

TEST_CASE("resolve_penetration leaves a free mover untouched") {
    const std::vector<Cuboid> mover = {unit_cube()};
    std::vector<geom::FixedCompound> fixed(1);
    fixed[0].parts = geom::flatten(std::vector<Cuboid>{unit_cube()}, at(5.0));
    const Pose out = geom::resolve_penetration(mover, at(0.0), fixed, 0.02);
    CHECK(geom::norm(out.position - Vec3{0.0, 0.0, 0.0}) == 0.0);
}

TEST_CASE("resolve_penetration separates a 0.1 m overlap in few steps") {
    const std::vector<Cuboid> mover = {unit_cube()};
    std::vector<geom::FixedCompound> fixed(1);
    fixed[0].parts = geom::flatten(std::vector<Cuboid>{unit_cube()}, at(0.0));

    const Pose out = geom::resolve_penetration(mover, at(0.9), fixed, 0.02);
    const auto placed = geom::flatten(mover, out);
    CHECK_FALSE(geom::compounds_collide(placed, fixed[0].parts));
    CHECK(geom::signed_separation(mover[0], out, fixed[0].parts[0].cuboid,
                                  fixed[0].parts[0].pose) >= 0.0);
    // depth 0.1 at step 0.02 resolves within 6 iterations
    CHECK(geom::norm(out.position - Vec3{0.9, 0.0, 0.0}) <= 6.0 * 0.02 + 1e-12);
    CHECK(out.position.x > 0.9);
}

TEST_CASE("resolve_penetration reports a symmetric squeeze") {
    // fixed cubes on both sides pull the mover in opposite directions; the
    // per-compound normals cancel exactly and the mover is wedged
    const std::vector<Cuboid> mover = {unit_cube()};
    std::vector<geom::FixedCompound> fixed(2);
    fixed[0].parts = geom::flatten(std::vector<Cuboid>{unit_cube()}, at(0.9));
    fixed[1].parts = geom::flatten(std::vector<Cuboid>{unit_cube()}, at(-0.9));
    CHECK_THROWS_AS(geom::resolve_penetration(mover, at(0.0), fixed, 0.02),
                    geom::ResolutionFailed);
}

TEST_CASE("resolve_penetration clears every fixed body") {
    Rng rng(303);
    for (int trial = 0; trial < 20; ++trial) {
        const std::vector<Cuboid> mover = {unit_cube()};
        std::vector<geom::FixedCompound> fixed(3);
        for (auto& f : fixed) {
            Cuboid c;
            c.half_extents = {rng.uniform(0.1, 0.4), rng.uniform(0.1, 0.4),
                              rng.uniform(0.1, 0.4)};
            f.parts = geom::flatten(std::vector<Cuboid>{c}, random_pose(rng, 0.6));
        }
        try {
            const Pose out = geom::resolve_penetration(mover, random_pose(rng, 0.3), fixed, 0.02);
            const auto placed = geom::flatten(mover, out);
            for (const auto& f : fixed) {
                CHECK_FALSE(geom::compounds_collide(placed, f.parts));
            }
        } catch (const geom::ResolutionFailed&) {
            // acceptable outcome for wedged starts
        }
    }
}

TEST_CASE("surface samples are uniform across faces") {
    const auto parts = geom::flatten(std::vector<Cuboid>{unit_cube()}, at(0.0));
    const auto cloud = geom::sample_surface(parts, 6000, 42);
    REQUIRE(cloud.points.size() == 6000);

    std::vector<std::size_t> face_counts(6, 0);
    for (const Vec3& p : cloud.points) {
        const Vec3 local = parts[0].pose.inverse().apply(p);
        const double coords[3] = {local.x, local.y, local.z};
        bool on_face = false;
        for (int axis = 0; axis < 3; ++axis) {
            if (std::abs(std::abs(coords[axis]) - 0.5) <= 1e-9) {
                face_counts[static_cast<std::size_t>(axis) * 2 + (coords[axis] > 0.0 ? 1 : 0)]++;
                on_face = true;
                break;
            }
            CHECK(std::abs(coords[axis]) <= 0.5 + 1e-9);
        }
        CHECK(on_face);
    }
    // dof 5, p = 0.001
    CHECK(chi_square(face_counts, std::vector<double>(6, 1000.0)) < 20.515);
}

TEST_CASE("surface samples weight disjoint parts by area") {
    Cuboid big;
    // sqrt(2) scaling doubles the surface area of the unit cube
    const double h = 0.5 * std::sqrt(2.0);
    big.half_extents = {h, h, h};
    std::vector<geom::PosedPart> parts = {{unit_cube(), at(0.0)}, {big, at(5.0)}};

    const auto cloud = geom::sample_surface(parts, 9000, 43);
    std::vector<std::size_t> counts(2, 0);
    for (const Vec3& p : cloud.points) {
        counts[p.x > 2.5 ? 1 : 0]++;
    }
    // dof 1, p = 0.001
    CHECK(chi_square(counts, {3000.0, 6000.0}) < 10.828);
}

TEST_CASE("surface sampling is deterministic and handles n=1") {
    Rng rng(404);
    std::vector<geom::PosedPart> parts;
    for (int i = 0; i < 3; ++i) {
        Cuboid c;
        c.half_extents = {rng.uniform(0.1, 0.5), rng.uniform(0.1, 0.5), rng.uniform(0.1, 0.5)};
        parts.push_back({c, random_pose(rng, 1.0)});
    }

    const auto a = geom::sample_surface(parts, 500, 99);
    const auto b = geom::sample_surface(parts, 500, 99);
    REQUIRE(a.points.size() == b.points.size());
    for (std::size_t i = 0; i < a.points.size(); ++i) {
        CHECK(a.points[i].x == b.points[i].x);
        CHECK(a.points[i].y == b.points[i].y);
        CHECK(a.points[i].z == b.points[i].z);
    }

    const auto one = geom::sample_surface(parts, 1, 7);
    REQUIRE(one.points.size() == 1);
    bool on_some_face = false;
    for (const auto& part : parts) {
        const Vec3 local = part.pose.inverse().apply(one.points[0]);
        const Vec3 h = part.cuboid.half_extents;
        const bool inside = std::abs(local.x) <= h.x + 1e-9 && std::abs(local.y) <= h.y + 1e-9 &&
                            std::abs(local.z) <= h.z + 1e-9;
        const bool boundary = std::abs(local.x) >= h.x - 1e-9 ||
                              std::abs(local.y) >= h.y - 1e-9 ||
                              std::abs(local.z) >= h.z - 1e-9;
        on_some_face = on_some_face || (inside && boundary);
    }
    CHECK(on_some_face);
}

TEST_CASE("aabb_of bounds parts tightly") {
    const auto parts = geom::flatten(std::vector<Cuboid>{unit_cube()}, at(0.0));
    const auto box = geom::aabb_of(parts);
    CHECK(box.lo.x == doctest::Approx(-0.5).epsilon(1e-12));
    CHECK(box.hi.z == doctest::Approx(0.5).epsilon(1e-12));

    Pose rot;
    rot.orientation = Quat::from_yaw(kPi / 4.0);
    const auto rparts = geom::flatten(std::vector<Cuboid>{unit_cube()}, rot);
    const auto rbox = geom::aabb_of(rparts);
    CHECK(rbox.hi.x == doctest::Approx(std::sqrt(2.0) / 2.0).epsilon(1e-9));
    CHECK(rbox.lo.y == doctest::Approx(-std::sqrt(2.0) / 2.0).epsilon(1e-9));
    CHECK(rbox.hi.z == doctest::Approx(0.5).epsilon(1e-12));

    CHECK_THROWS_AS(geom::aabb_of(std::vector<geom::PosedPart>{}), geom::EmptyCompound);
    CHECK_THROWS_AS(geom::sample_surface(std::vector<geom::PosedPart>{}, 10, 1),
                    geom::EmptyCompound);
}

TEST_CASE("flatten composes owner and local poses") {
    Cuboid c = unit_cube();
    c.local_pose = at(1.0);
    Pose owner;
    owner.orientation = Quat::from_yaw(kPi / 2.0);
    const auto parts = geom::flatten(std::vector<Cuboid>{c}, owner);
    REQUIRE(parts.size() == 1);
    CHECK(geom::norm(parts[0].pose.position - Vec3{0.0, 1.0, 0.0}) < 1e-12);
    CHECK(geom::point_in_cuboid({0.0, 1.0, 0.0}, parts[0].cuboid, parts[0].pose));
    CHECK_FALSE(geom::point_in_cuboid({2.0, 1.0, 0.0}, parts[0].cuboid, parts[0].pose));
}
