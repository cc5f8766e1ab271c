#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "perfact/errors.hpp"
#include "perfact/kinematics.hpp"
#include "perfact/problem_gen.hpp"
#include "perfact/rng.hpp"
#include "perfact/scene_synth.hpp"

namespace perfact::expert {

struct PlanningTimeout : Error {
    explicit PlanningTimeout(const std::string& msg)
        : Error("PlanningTimeout", msg, ExitCode::Partial) {}
};

// A collision-free joint-space path solving one planning problem.
struct Trajectory {
    std::string workspace_id;
    probgen::PlanningProblem problem;
    std::vector<kin::Config> waypoints;
};

inline constexpr double kExtendStep = 0.1;
inline constexpr double kEdgeResolution = 0.01;
inline constexpr double kDeltaMax = 0.05;
inline constexpr int kShortcutAttempts = 200;

double path_length_l1(std::span<const kin::Config> waypoints);

// Bidirectional RRT-Connect over the joint space, then shortcut smoothing and
// fixed-step resampling. Throws PlanningTimeout when budget_s elapses first.
Trajectory plan(const probgen::PlanningProblem& problem, const scene::Workspace& ws,
                const kin::RobotModel& robot, double budget_s, std::uint64_t seed);

// True iff the trajectory matches its problem endpoints (within 1e-9), keeps
// every per-joint step at or below kDeltaMax, and is collision-free along
// every kEdgeResolution interpolant.
bool validate(const Trajectory& traj, const scene::Workspace& ws, const kin::RobotModel& robot);

std::vector<kin::Config> shortcut_smooth(std::vector<kin::Config> path,
                                         const kin::RobotModel& robot,
                                         std::span<const geom::FixedCompound> obstacles, Rng& rng,
                                         int attempts = kShortcutAttempts);

std::vector<kin::Config> resample(std::span<const kin::Config> path,
                                  double delta_max = kDeltaMax);

}  // namespace perfact::expert
