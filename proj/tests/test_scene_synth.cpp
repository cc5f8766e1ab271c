#include <cmath>
#include <cstdio>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include <doctest.h>

#include "perfact/json_io.hpp"
#include "perfact/kinematics.hpp"
#include "perfact/llm_gateway.hpp"
#include "perfact/rng.hpp"
#include "perfact/scene_synth.hpp"

using namespace perfact;
using scene::SimilarityGate;
using scene::Workspace;

namespace {

llm::LlmGateway stub_gateway(std::uint64_t seed) {
    return llm::LlmGateway(std::make_shared<llm::StubBackend>(seed));
}

Workspace make_ws(std::uint64_t seed, double threshold = 0.9) {
    const kin::RobotModel robot = kin::builtin_robot();
    SimilarityGate gate(threshold);
    llm::LlmGateway gw = stub_gateway(7);
    return scene::generate_workspace(robot, gate, gw, seed);
}

// point lies on a cuboid face: inside all slabs, flush with at least one
bool on_some_face(const geom::Vec3& p, const std::vector<geom::PosedPart>& parts) {
    for (const geom::PosedPart& part : parts) {
        const geom::Vec3 local = part.pose.inverse().apply(p);
        const geom::Vec3& h = part.cuboid.half_extents;
        const double dx = std::abs(local.x) - h.x;
        const double dy = std::abs(local.y) - h.y;
        const double dz = std::abs(local.z) - h.z;
        if (dx > 1e-9 || dy > 1e-9 || dz > 1e-9) continue;
        if (std::abs(dx) <= 1e-9 || std::abs(dy) <= 1e-9 || std::abs(dz) <= 1e-9) return true;
    }
    return false;
}

}  // namespace

TEST_CASE("workspace generation is deterministic under the stub backend") {
    const Workspace a = make_ws(3);
    const Workspace b = make_ws(3);
    CHECK(scene::workspace_to_json(a).dump() == scene::workspace_to_json(b).dump());
    CHECK(a.id == "ws-3");
    CHECK(a.robot_name == "ur5e-like");
    CHECK(!a.description.empty());
    CHECK(a.embedding.size() == llm::kEmbeddingDim);
    CHECK(!a.llm_digest.empty());
    CHECK(!a.primitives.empty());
}

TEST_CASE("accepted workspaces are collision free and within the reach band") {
    const kin::RobotModel robot = kin::builtin_robot();
    for (std::uint64_t seed : {3u, 11u, 42u, 77u}) {
        const Workspace ws = make_ws(seed);
        std::vector<std::vector<geom::PosedPart>> units;
        for (const auto& t : ws.tables) {
            CHECK(std::hypot(t.pose.position.x, t.pose.position.y) <=
                  1.2 * robot.reach_radius + 1e-9);
            units.push_back(geom::flatten(t.parts, t.pose));
        }
        REQUIRE(ws.tables.size() >= 1);
        REQUIRE(ws.tables.size() <= 4);
        for (const auto& p : ws.primitives) units.push_back(geom::flatten(p.parts, p.pose));
        for (std::size_t i = 0; i < units.size(); ++i) {
            for (std::size_t j = i + 1; j < units.size(); ++j) {
                double deepest = 0.0;
                for (const auto& pa : units[i]) {
                    for (const auto& pb : units[j]) {
                        const auto r =
                            geom::check_collision(pa.cuboid, pa.pose, pb.cuboid, pb.pose);
                        if (r.colliding) deepest = std::max(deepest, r.depth);
                    }
                }
                INFO("seed ", seed, " units ", i, " ", j);
                CHECK(deepest <= 1e-9);  // flush face contact allowed, real overlap not
            }
        }
    }
}

TEST_CASE("ground primitives appear only below four tables") {
    int checked = 0;
    for (std::uint64_t seed = 1; seed < 30 && checked < 2; ++seed) {
        const Workspace ws = make_ws(seed);
        if (ws.tables.size() == 4) {
            for (const auto& p : ws.primitives) {
                // every primitive sits on some table, never on the ground
                CHECK(geom::aabb_of(geom::flatten(p.parts, p.pose)).lo.z > 0.1);
            }
            ++checked;
        }
    }
    CHECK(checked > 0);
}

TEST_CASE("the gate rejects a repeated description") {
    llm::LlmGateway gw = stub_gateway(5);
    const auto e = gw.embed("three bins on a narrow bench").values;
    SimilarityGate gate(0.9);
    CHECK(gate.check_and_insert(e));
    CHECK(!gate.check_and_insert(e));
    CHECK(gate.size() == 1);
    CHECK(gate.max_cosine(e) == doctest::Approx(1.0));
}

TEST_CASE("lowering the threshold only shrinks the accepted stream") {
    llm::LlmGateway gw = stub_gateway(6);
    std::vector<std::vector<double>> stream;
    for (int i = 0; i < 30; ++i) {
        stream.push_back(
            gw.embed("workspace variant number " + std::to_string(i * 37 % 13) + " bench " +
                     std::to_string(i))
                .values);
    }
    SimilarityGate strict(0.55);
    SimilarityGate loose(0.95);
    std::vector<bool> strict_accept;
    std::vector<bool> loose_accept;
    for (const auto& e : stream) {
        strict_accept.push_back(strict.check_and_insert(e));
        loose_accept.push_back(loose.check_and_insert(e));
    }
    CHECK(strict.size() <= loose.size());
    CHECK(strict.size() < stream.size());
    // stricter gates never accept a prefix the loose gate rejected
    for (std::size_t i = 0; i < stream.size(); ++i) {
        if (!loose_accept[i]) {
            // loose rejected means near-duplicate of an accepted one; strict must
            // reject it too unless its own store diverged earlier
            if (strict_accept[i]) CHECK(strict.size() != loose.size());
        }
    }
}

TEST_CASE("seeds map to distinct workspaces") {
    const kin::RobotModel robot = kin::builtin_robot();
    SimilarityGate gate(0.995);
    llm::LlmGateway gw = stub_gateway(7);
    std::set<std::string> serialized;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const Workspace ws = scene::generate_workspace(robot, gate, gw, seed);
        serialized.insert(scene::workspace_to_json(ws).dump());
    }
    CHECK(serialized.size() == 100);
}

TEST_CASE("similarity exhaustion raises GenerationFailed") {
    const kin::RobotModel robot = kin::builtin_robot();
    SimilarityGate gate(1e-6);
    // every stub summary mentions tables, so this embedding overlaps them all
    gate.check_and_insert(llm::hashed_embedding("table tables areas"));
    llm::LlmGateway gw = stub_gateway(7);
    CHECK_THROWS_AS(scene::generate_workspace(robot, gate, gw, 3), scene::GenerationFailed);
}

TEST_CASE("llm transport failures surface unchanged") {
    const kin::RobotModel robot = kin::builtin_robot();
    SimilarityGate gate(0.9);
    llm::LlmGateway gw(std::make_shared<llm::HttpBackend>("http://127.0.0.1:1/v1/chat/completions"));
    CHECK_THROWS_AS(scene::generate_workspace(robot, gate, gw, 3), llm::LlmUnreachable);
}

TEST_CASE("scene point clouds sample obstacle surfaces area proportionally") {
    const Workspace ws = make_ws(11);
    const geom::PointCloud cloud = scene::scene_point_cloud(ws, 2048, 5);
    CHECK(cloud.points.size() == 2048);

    const auto obstacles = scene::workspace_obstacles(ws);
    for (const geom::Vec3& p : cloud.points) {
        REQUIRE(on_some_face(p, obstacles));
    }

    const geom::PointCloud again = scene::scene_point_cloud(ws, 2048, 5);
    CHECK(again.points.size() == cloud.points.size());
    CHECK(again.points[0].x == cloud.points[0].x);
    CHECK(again.points[2047].z == cloud.points[2047].z);

    // allocation proportional to per-unit surface area within chi-square bounds
    std::vector<std::vector<geom::PosedPart>> units;
    for (const auto& t : ws.tables) units.push_back(geom::flatten(t.parts, t.pose));
    for (const auto& p : ws.primitives) units.push_back(geom::flatten(p.parts, p.pose));
    std::vector<double> areas;
    double total = 0.0;
    for (const auto& u : units) {
        double a = 0.0;
        for (const auto& part : u) a += part.cuboid.surface_area();
        areas.push_back(a);
        total += a;
    }
    std::vector<std::size_t> observed(units.size(), 0);
    for (const geom::Vec3& p : cloud.points) {
        for (std::size_t i = 0; i < units.size(); ++i) {
            if (on_some_face(p, units[i])) {
                ++observed[i];
                break;
            }
        }
    }
    double chi2 = 0.0;
    for (std::size_t i = 0; i < units.size(); ++i) {
        const double expected = 2048.0 * areas[i] / total;
        if (expected > 1.0) chi2 += (observed[i] - expected) * (observed[i] - expected) / expected;
    }
    CHECK(chi2 < 2.0 * double(units.size()));
}

TEST_CASE("workspace files round trip with typed failures") {
    const Workspace ws = make_ws(13);
    const std::string tmp = "test_scene_tmp.json";
    scene::save_workspace(ws, tmp);
    const Workspace back = scene::load_workspace(tmp);
    CHECK(scene::workspace_to_json(back).dump() == scene::workspace_to_json(ws).dump());

    auto doc = json_io::load_document(tmp, "perfact-scene", 1);
    doc["version"] = 99;
    json_io::save_document(doc, tmp);
    CHECK_THROWS_AS(scene::load_workspace(tmp), VersionMismatch);

    doc["version"] = 1;
    doc["embedding"] = {1.0, 2.0};
    json_io::save_document(doc, tmp);
    CHECK_THROWS_AS(scene::load_workspace(tmp), FormatError);
    std::remove(tmp.c_str());

    CHECK_THROWS_AS(scene::load_workspace("missing_scene.json"), IoError);
}
