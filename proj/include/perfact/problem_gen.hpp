#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "perfact/asset_factory.hpp"
#include "perfact/errors.hpp"
#include "perfact/kinematics.hpp"
#include "perfact/rng.hpp"
#include "perfact/scene_synth.hpp"

namespace perfact::probgen {

struct NoSampleRegion : Error {
    explicit NoSampleRegion(const std::string& msg) : Error("NoSampleRegion", msg) {}
};

struct ProblemBudgetExhausted : Error {
    explicit ProblemBudgetExhausted(const std::string& msg)
        : Error("ProblemBudgetExhausted", msg, ExitCode::Partial) {}
};

enum class EndpointTag { InPrimitive, Hemisphere };

std::string to_string(EndpointTag tag);
EndpointTag tag_from_string(const std::string& text);

struct PlanningProblem {
    std::string workspace_id;
    kin::Config q_start;
    kin::Config q_goal;
    geom::Pose goal_pose;  // forward kinematics of q_goal
    EndpointTag start_tag = EndpointTag::InPrimitive;
    EndpointTag goal_tag = EndpointTag::InPrimitive;
};

struct ProblemSet {
    std::string workspace_id;
    std::string robot_name;
    std::uint64_t seed = 0;
    std::vector<PlanningProblem> problems;
};

// Pose inside a cavity or above a top surface, tool z facing down, seeded yaw.
geom::Pose sample_primitive_pose(const assets::Primitive& p, Rng& rng);

// True when every interpolant of the straight config line, stepped so no joint
// moves more than `resolution` rad between checks, is collision free.
bool interp_collision_free(const kin::RobotModel& robot, const kin::Config& a,
                           const kin::Config& b,
                           std::span<const geom::FixedCompound> obstacles,
                           double resolution = 0.01);

// Trivial pairs need no maneuvering: straight line is collision free and the
// total L1 joint travel is at most 0.3 rad. Generated problems never qualify.
bool straight_line_trivial(const kin::RobotModel& robot, const kin::Config& a,
                           const kin::Config& b,
                           std::span<const geom::FixedCompound> obstacles);

std::vector<PlanningProblem> generate_problems(const scene::Workspace& ws,
                                               const kin::RobotModel& robot, std::size_t k,
                                               std::uint64_t seed);

nlohmann::ordered_json problem_set_to_json(const ProblemSet& set);
ProblemSet problem_set_from_json(const nlohmann::ordered_json& j);
void save_problem_set(const ProblemSet& set, const std::string& path);
ProblemSet load_problem_set(const std::string& path);

}  // namespace perfact::probgen
