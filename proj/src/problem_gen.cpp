#include "perfact/problem_gen.hpp"

#include <cmath>
#include <optional>
#include <stdexcept>
#include <utility>

#include "perfact/json_io.hpp"

namespace perfact::probgen {

namespace {

using geom::Pose;
using geom::Quat;
using json_io::ordered_json;

constexpr double kPi = 3.14159265358979323846;
constexpr double kTrivialLength = 0.3;

double aabb_volume(const geom::Aabb& box) {
    return (box.hi.x - box.lo.x) * (box.hi.y - box.lo.y) * (box.hi.z - box.lo.z);
}

double l1_distance(const kin::Config& a, const kin::Config& b) {
    double total = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) total += std::abs(b[i] - a[i]);
    return total;
}

double max_joint_delta(const kin::Config& a, const kin::Config& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(b[i] - a[i]));
    return worst;
}

}  // namespace

std::string to_string(EndpointTag tag) {
    return tag == EndpointTag::InPrimitive ? "in_primitive" : "hemisphere";
}

EndpointTag tag_from_string(const std::string& text) {
    if (text == "in_primitive") return EndpointTag::InPrimitive;
    if (text == "hemisphere") return EndpointTag::Hemisphere;
    throw FormatError("unknown endpoint tag: " + text);
}

Pose sample_primitive_pose(const assets::Primitive& p, Rng& rng) {
    const std::vector<geom::Aabb> regions = assets::sample_regions(p);
    if (regions.empty()) {
        throw NoSampleRegion(assets::to_string(p.kind) + " " + p.id + " has no sample region");
    }
    double total = 0.0;
    std::vector<double> cum;
    cum.reserve(regions.size());
    for (const geom::Aabb& r : regions) {
        total += aabb_volume(r);
        cum.push_back(total);
    }
    const double u = rng.uniform(0.0, total);
    std::size_t pick = 0;
    while (pick + 1 < regions.size() && cum[pick] <= u) ++pick;
    const geom::Aabb& r = regions[pick];

    geom::Vec3 local;
    local.x = rng.uniform(r.lo.x, r.hi.x);
    local.y = rng.uniform(r.lo.y, r.hi.y);
    local.z = rng.uniform(r.lo.z, r.hi.z);

    Pose pose;
    pose.position = p.pose.apply(local);
    const Quat down = Quat::from_axis_angle({1.0, 0.0, 0.0}, kPi);
    const Quat yaw = Quat::from_yaw(rng.uniform(0.0, 2.0 * kPi));
    pose.orientation = yaw * down;
    return pose;
}

bool interp_collision_free(const kin::RobotModel& robot, const kin::Config& a,
                           const kin::Config& b,
                           std::span<const geom::FixedCompound> obstacles, double resolution) {
    if (a.size() != b.size()) {
        throw kin::DimensionMismatch("interpolation endpoints differ in dof");
    }
    const int steps = std::max(1, static_cast<int>(std::ceil(max_joint_delta(a, b) / resolution)));
    kin::Config q(a.size());
    for (int s = 0; s <= steps; ++s) {
        const double t = static_cast<double>(s) / steps;
        for (std::size_t i = 0; i < a.size(); ++i) q[i] = a[i] + (b[i] - a[i]) * t;
        if (!kin::collision_free(robot, q, obstacles)) return false;
    }
    return true;
}

bool straight_line_trivial(const kin::RobotModel& robot, const kin::Config& a,
                           const kin::Config& b,
                           std::span<const geom::FixedCompound> obstacles) {
    if (l1_distance(a, b) > kTrivialLength) return false;
    return interp_collision_free(robot, a, b, obstacles);
}

std::vector<PlanningProblem> generate_problems(const scene::Workspace& ws,
                                               const kin::RobotModel& robot, std::size_t k,
                                               std::uint64_t seed) {
    if (k == 0) throw std::invalid_argument("problem count must be positive");
    const std::vector<geom::FixedCompound> obstacles = scene::workspace_compounds(ws);

    std::vector<const assets::Primitive*> samplable;
    for (const assets::Primitive& t : ws.tables) {
        if (!assets::sample_regions(t).empty()) samplable.push_back(&t);
    }
    for (const assets::Primitive& p : ws.primitives) {
        if (!assets::sample_regions(p).empty()) samplable.push_back(&p);
    }

    Rng rng(mix_seed(seed, fnv1a64(ws.id)));
    std::vector<PlanningProblem> out;
    out.reserve(k);
    std::optional<std::pair<kin::Config, EndpointTag>> pending;
    const std::size_t budget = 50 * k;
    std::size_t pose_index = 0;

    for (std::size_t attempt = 0; attempt < budget && out.size() < k; ++attempt) {
        const bool use_primitive = (pose_index++ % 2 == 0) && !samplable.empty();
        Pose target;
        EndpointTag tag;
        if (use_primitive) {
            const assets::Primitive& prim = *samplable[rng.uniform_int(samplable.size())];
            target = sample_primitive_pose(prim, rng);
            tag = EndpointTag::InPrimitive;
        } else {
            target = kin::sample_reachable_pose(robot, rng);
            tag = EndpointTag::Hemisphere;
        }

        kin::Config q;
        try {
            q = kin::ik(robot, target, obstacles, rng.next_u64());
        } catch (const kin::IkFailed&) {
            continue;
        }

        if (!pending) {
            pending.emplace(std::move(q), tag);
            continue;
        }
        if (pending->first == q) continue;
        if (straight_line_trivial(robot, pending->first, q, obstacles)) {
            pending.reset();
            continue;
        }

        PlanningProblem prob;
        prob.workspace_id = ws.id;
        prob.q_start = std::move(pending->first);
        prob.start_tag = pending->second;
        prob.q_goal = std::move(q);
        prob.goal_tag = tag;
        prob.goal_pose = kin::fk(robot, prob.q_goal).ee;
        out.push_back(std::move(prob));
        pending.reset();
    }

    if (out.size() < k) {
        throw ProblemBudgetExhausted("workspace " + ws.id + ": " + std::to_string(out.size()) +
                                     " of " + std::to_string(k) + " problems after " +
                                     std::to_string(budget) + " pose attempts");
    }
    return out;
}

nlohmann::ordered_json problem_set_to_json(const ProblemSet& set) {
    ordered_json j;
    j["workspace"] = set.workspace_id;
    j["robot"] = set.robot_name;
    j["seed"] = set.seed;
    j["problems"] = ordered_json::array();
    for (const PlanningProblem& p : set.problems) {
        ordered_json e;
        e["q_start"] = p.q_start;
        e["q_goal"] = p.q_goal;
        e["goal_pose"] = json_io::pose_to_json(p.goal_pose);
        e["start_tag"] = to_string(p.start_tag);
        e["goal_tag"] = to_string(p.goal_tag);
        j["problems"].push_back(std::move(e));
    }
    return j;
}

ProblemSet problem_set_from_json(const nlohmann::ordered_json& j) {
    ProblemSet set;
    try {
        set.workspace_id = j.at("workspace").get<std::string>();
        set.robot_name = j.at("robot").get<std::string>();
        set.seed = j.at("seed").get<std::uint64_t>();
        for (const auto& e : j.at("problems")) {
            PlanningProblem p;
            p.workspace_id = set.workspace_id;
            p.q_start = e.at("q_start").get<kin::Config>();
            p.q_goal = e.at("q_goal").get<kin::Config>();
            p.goal_pose = json_io::pose_from_json(e.at("goal_pose"));
            p.start_tag = tag_from_string(e.at("start_tag").get<std::string>());
            p.goal_tag = tag_from_string(e.at("goal_tag").get<std::string>());
            if (p.q_start.size() != p.q_goal.size() || p.q_start.empty()) {
                throw FormatError("problem config dims inconsistent in " + set.workspace_id);
            }
            set.problems.push_back(std::move(p));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad problem set document: ") + e.what());
    }
    return set;
}

void save_problem_set(const ProblemSet& set, const std::string& path) {
    ordered_json j = problem_set_to_json(set);
    ordered_json doc;
    doc["format"] = "perfact-problems";
    doc["version"] = 1;
    for (auto& [key, value] : j.items()) doc[key] = value;
    json_io::save_document(doc, path);
}

ProblemSet load_problem_set(const std::string& path) {
    return problem_set_from_json(json_io::load_document(path, "perfact-problems", 1));
}

}  // namespace perfact::probgen
