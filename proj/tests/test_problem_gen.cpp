#define DOCTEST_CONFIG_SUPER_FAST_ASSERTS
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <set>
#include <string>

#include "perfact/asset_factory.hpp"
#include "perfact/json_io.hpp"
#include "perfact/kinematics.hpp"
#include "perfact/llm_gateway.hpp"
#include "perfact/problem_gen.hpp"
#include "perfact/scene_synth.hpp"

using namespace perfact;
using probgen::EndpointTag;
using probgen::PlanningProblem;

namespace {

assets::ParamRanges pinned(assets::PrimitiveKind kind, const std::string& name, double v) {
    assets::ParamRanges r = assets::default_ranges();
    for (auto& [n, range] : r.by_kind[static_cast<std::size_t>(kind)]) {
        if (n == name) range = {v, v};
    }
    return r;
}

bool inside(const geom::Aabb& box, const geom::Vec3& p, double eps = 1e-12) {
    return p.x >= box.lo.x - eps && p.x <= box.hi.x + eps && p.y >= box.lo.y - eps &&
           p.y <= box.hi.y + eps && p.z >= box.lo.z - eps && p.z <= box.hi.z + eps;
}

// One stub-backed workspace shared across cases; generation is not the point here.
const scene::Workspace& stub_workspace() {
    static const scene::Workspace ws = [] {
        scene::SimilarityGate gate;
        llm::LlmGateway gw(std::make_shared<llm::StubBackend>(7));
        return scene::generate_workspace(kin::builtin_robot(), gate, gw, 3);
    }();
    return ws;
}

// Single front table, nothing on it, clear of the robot pedestal.
scene::Workspace bare_table_workspace() {
    scene::Workspace ws;
    ws.id = "bare";
    ws.robot_name = "ur5e-like";
    assets::Primitive table = assets::generate(assets::PrimitiveKind::Table,
                                               assets::default_ranges(), 5);
    table.pose.position = {0.65, 0.0, 0.0};
    ws.tables.push_back(std::move(table));
    return ws;
}

// Table with two open-topped items: in-primitive and hemisphere endpoints both work.
scene::Workspace mixed_workspace() {
    scene::Workspace ws = bare_table_workspace();
    ws.id = "mixed";
    const double h = assets::param(ws.tables[0], "height");
    assets::Primitive box =
        assets::generate(assets::PrimitiveKind::OpenBox, assets::default_ranges(), 21);
    box.pose.position = {0.55, 0.2, h};
    ws.primitives.push_back(std::move(box));
    assets::Primitive bin =
        assets::generate(assets::PrimitiveKind::Bin, assets::default_ranges(), 8);
    bin.pose.position = {0.6, -0.25, h};
    ws.primitives.push_back(std::move(bin));
    return ws;
}

}  // namespace

TEST_CASE("cavity samples stay inside a sample region with the tool facing down") {
    const assets::Primitive box =
        assets::generate(assets::PrimitiveKind::OpenBox, assets::default_ranges(), 21);
    const auto regions = assets::sample_regions(box);
    REQUIRE(!regions.empty());
    Rng rng(9);
    std::set<long long> yaw_buckets;
    for (int i = 0; i < 50; ++i) {
        const geom::Pose pose = probgen::sample_primitive_pose(box, rng);
        const geom::Vec3 local = box.pose.inverse().apply(pose.position);
        bool in_region = false;
        for (const auto& r : regions) in_region = in_region || inside(r, local);
        CHECK(in_region);
        const geom::Vec3 tz = pose.orientation.rotate({0.0, 0.0, 1.0});
        CHECK(std::abs(tz.x) < 1e-12);
        CHECK(std::abs(tz.y) < 1e-12);
        CHECK(tz.z == doctest::Approx(-1.0).epsilon(1e-12));
        const geom::Vec3 tx = pose.orientation.rotate({1.0, 0.0, 0.0});
        yaw_buckets.insert(llround(std::atan2(tx.y, tx.x) * 100.0));
    }
    CHECK(yaw_buckets.size() > 10);  // seeded yaw actually varies
}

TEST_CASE("table samples hover 5 to 20 cm over the top") {
    assets::Primitive table =
        assets::generate(assets::PrimitiveKind::Table, assets::default_ranges(), 3);
    table.pose.position = {0.4, -0.2, 0.0};
    table.pose.orientation = geom::Quat::from_yaw(0.7);
    const double h = assets::param(table, "height");
    Rng rng(2);
    for (int i = 0; i < 30; ++i) {
        const geom::Pose pose = probgen::sample_primitive_pose(table, rng);
        const geom::Vec3 local = table.pose.inverse().apply(pose.position);
        CHECK(local.z >= h + 0.05 - 1e-12);
        CHECK(local.z <= h + 0.20 + 1e-12);
        CHECK(std::abs(local.x) <= assets::param(table, "width") / 2);
        CHECK(std::abs(local.y) <= assets::param(table, "depth") / 2);
    }
}

TEST_CASE("a closed microwave offers no sample region") {
    const assets::Primitive closed = assets::generate(
        assets::PrimitiveKind::Microwave, pinned(assets::PrimitiveKind::Microwave, "door_angle", 0.2),
        4);
    Rng rng(1);
    CHECK_THROWS_AS(probgen::sample_primitive_pose(closed, rng), probgen::NoSampleRegion);
    CHECK_THROWS_WITH_AS(probgen::sample_primitive_pose(closed, rng),
                         doctest::Contains("no sample region"), probgen::NoSampleRegion);
}

TEST_CASE("pose sampling and problem generation are deterministic") {
    const assets::Primitive box =
        assets::generate(assets::PrimitiveKind::OpenBox, assets::default_ranges(), 21);
    Rng ra(5);
    Rng rb(5);
    for (int i = 0; i < 10; ++i) {
        const geom::Pose a = probgen::sample_primitive_pose(box, ra);
        const geom::Pose b = probgen::sample_primitive_pose(box, rb);
        CHECK(a.position.x == b.position.x);
        CHECK(a.position.y == b.position.y);
        CHECK(a.position.z == b.position.z);
        CHECK(a.orientation.w == b.orientation.w);
        CHECK(a.orientation.z == b.orientation.z);
    }

    const scene::Workspace ws = bare_table_workspace();
    const kin::RobotModel robot = kin::builtin_robot();
    const auto p1 = probgen::generate_problems(ws, robot, 3, 11);
    const auto p2 = probgen::generate_problems(ws, robot, 3, 11);
    probgen::ProblemSet s1{ws.id, robot.name, 11, p1};
    probgen::ProblemSet s2{ws.id, robot.name, 11, p2};
    CHECK(probgen::problem_set_to_json(s1).dump() == probgen::problem_set_to_json(s2).dump());
    const auto p3 = probgen::generate_problems(ws, robot, 3, 12);
    probgen::ProblemSet s3{ws.id, robot.name, 12, p3};
    CHECK(probgen::problem_set_to_json(s1).dump() != probgen::problem_set_to_json(s3).dump());
}

TEST_CASE("bare table workspace yields exactly k valid problems") {
    const scene::Workspace ws = bare_table_workspace();
    const kin::RobotModel robot = kin::builtin_robot();
    const auto obstacles = scene::workspace_compounds(ws);
    const auto problems = probgen::generate_problems(ws, robot, 5, 2);
    REQUIRE(problems.size() == 5);
    for (const PlanningProblem& p : problems) {
        CHECK(p.workspace_id == "bare");
        REQUIRE(p.q_start.size() == static_cast<std::size_t>(robot.dof));
        REQUIRE(p.q_goal.size() == static_cast<std::size_t>(robot.dof));
        CHECK(kin::collision_free(robot, p.q_start, obstacles));
        CHECK(kin::collision_free(robot, p.q_goal, obstacles));
        CHECK(p.q_start != p.q_goal);
        const geom::Pose fk_goal = kin::fk(robot, p.q_goal).ee;
        CHECK(std::abs(fk_goal.position.x - p.goal_pose.position.x) <= 1e-9);
        CHECK(std::abs(fk_goal.position.y - p.goal_pose.position.y) <= 1e-9);
        CHECK(std::abs(fk_goal.position.z - p.goal_pose.position.z) <= 1e-9);
        CHECK(std::abs(fk_goal.orientation.w - p.goal_pose.orientation.w) <= 1e-9);
        CHECK(std::abs(fk_goal.orientation.x - p.goal_pose.orientation.x) <= 1e-9);
    }
}

TEST_CASE("every emitted problem fails the triviality predicate") {
    const scene::Workspace& ws = stub_workspace();
    const kin::RobotModel robot = kin::builtin_robot();
    const auto obstacles = scene::workspace_compounds(ws);
    const auto problems = probgen::generate_problems(ws, robot, 6, 4);
    REQUIRE(problems.size() == 6);
    for (const PlanningProblem& p : problems) {
        CHECK(!probgen::straight_line_trivial(robot, p.q_start, p.q_goal, obstacles));
    }
}

TEST_CASE("both endpoint tags appear across a batch on a mixed workspace") {
    const scene::Workspace ws = mixed_workspace();
    const kin::RobotModel robot = kin::builtin_robot();
    const auto problems = probgen::generate_problems(ws, robot, 10, 6);
    REQUIRE(problems.size() == 10);
    int in_prim = 0;
    int hemi = 0;
    for (const PlanningProblem& p : problems) {
        for (EndpointTag tag : {p.start_tag, p.goal_tag}) {
            (tag == EndpointTag::InPrimitive ? in_prim : hemi)++;
        }
    }
    CHECK(in_prim > 0);
    CHECK(hemi > 0);
}

TEST_CASE("a workspace walled off from the arm exhausts the pose budget") {
    scene::Workspace ws = bare_table_workspace();
    ws.id = "walled";
    // real bin params, parts swapped for one solid block engulfing the arm
    assets::Primitive shroud = assets::generate(assets::PrimitiveKind::Bin,
                                                assets::default_ranges(), 1);
    shroud.id = "shroud-0";
    shroud.pose = {};
    geom::Cuboid block;
    block.half_extents = {0.6, 0.6, 0.6};
    block.local_pose.position = {0.0, 0.0, 0.6};
    shroud.parts = {block};
    ws.primitives.push_back(std::move(shroud));
    CHECK_THROWS_AS(probgen::generate_problems(ws, kin::builtin_robot(), 1, 3),
                    probgen::ProblemBudgetExhausted);
}

TEST_CASE("straight line interpolation check catches collisions between endpoints") {
    const kin::RobotModel robot = kin::builtin_robot();
    kin::Config a(robot.dof, 0.0);
    kin::Config b(robot.dof, 0.0);
    b[0] = 1.2;

    CHECK(probgen::interp_collision_free(robot, a, b, {}));

    // wall clipping the sweep volume between the two poses but clear of both
    const geom::Pose mid_ee = kin::fk(robot, kin::Config{0.6, 0.0, 0.0, 0.0, 0.0, 0.0}).ee;
    geom::Cuboid wall;
    wall.half_extents = {0.05, 0.05, 0.05};
    std::vector<geom::FixedCompound> obstacles;
    geom::PosedPart part;
    part.cuboid = wall;
    part.pose.position = mid_ee.position;
    obstacles.push_back({{part}});
    if (kin::collision_free(robot, a, obstacles) && kin::collision_free(robot, b, obstacles)) {
        CHECK(!probgen::interp_collision_free(robot, a, b, obstacles));
        CHECK(!probgen::straight_line_trivial(robot, a, b, obstacles));
    }

    // short free moves are trivial, long free moves are not
    kin::Config c = a;
    c[0] = 0.25;
    CHECK(probgen::straight_line_trivial(robot, a, c, {}));
    CHECK(!probgen::straight_line_trivial(robot, a, b, {}));
}

TEST_CASE("endpoint tag names round trip and reject junk") {
    CHECK(probgen::to_string(EndpointTag::InPrimitive) == "in_primitive");
    CHECK(probgen::to_string(EndpointTag::Hemisphere) == "hemisphere");
    CHECK(probgen::tag_from_string("in_primitive") == EndpointTag::InPrimitive);
    CHECK(probgen::tag_from_string("hemisphere") == EndpointTag::Hemisphere);
    CHECK_THROWS_AS(probgen::tag_from_string("teleport"), FormatError);
}

TEST_CASE("problem set files round trip and reject bad documents") {
    const scene::Workspace ws = bare_table_workspace();
    const kin::RobotModel robot = kin::builtin_robot();
    probgen::ProblemSet set{ws.id, robot.name, 2, probgen::generate_problems(ws, robot, 3, 2)};

    const std::string path = "problems_roundtrip.json";
    probgen::save_problem_set(set, path);
    const probgen::ProblemSet back = probgen::load_problem_set(path);
    CHECK(probgen::problem_set_to_json(back).dump() == probgen::problem_set_to_json(set).dump());
    REQUIRE(back.problems.size() == 3);
    CHECK(back.problems[0].q_start == set.problems[0].q_start);
    CHECK(back.problems[2].goal_pose.orientation.w == set.problems[2].goal_pose.orientation.w);

    CHECK_THROWS_AS(probgen::load_problem_set("no_such_problems.json"), IoError);

    auto doc = json_io::load_document(path, "perfact-problems", 1);
    doc["version"] = 2;
    json_io::save_document(doc, "problems_v2.json");
    CHECK_THROWS_AS(probgen::load_problem_set("problems_v2.json"), VersionMismatch);

    auto bad = json_io::load_document(path, "perfact-problems", 1);
    bad["problems"][0]["q_goal"] = nlohmann::ordered_json::array({0.1, 0.2});
    json_io::save_document(bad, "problems_bad.json");
    CHECK_THROWS_AS(probgen::load_problem_set("problems_bad.json"), FormatError);

    auto tagged = json_io::load_document(path, "perfact-problems", 1);
    tagged["problems"][0]["start_tag"] = "teleport";
    json_io::save_document(tagged, "problems_tag.json");
    CHECK_THROWS_AS(probgen::load_problem_set("problems_tag.json"), FormatError);

    std::remove(path.c_str());
    std::remove("problems_v2.json");
    std::remove("problems_bad.json");
    std::remove("problems_tag.json");
}
