#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "perfact/errors.hpp"
#include "perfact/geom.hpp"

namespace perfact::kin {

struct DhRow {
    double a = 0.0;             // link length, m
    double alpha = 0.0;         // link twist, rad
    double d = 0.0;             // link offset, m
    double theta_offset = 0.0;  // joint angle offset, rad
};

struct RobotModel {
    std::string name;
    int dof = 0;
    std::vector<DhRow> dh_rows;                       // one per joint
    std::vector<std::array<double, 2>> joint_limits;  // [lo, hi] per joint, rad
    std::vector<std::vector<geom::Cuboid>> link_geoms;  // dof+1 lists, index 0 = base
    double reach_radius = 0.0;
    geom::Pose base_pose;
};

using Config = std::vector<double>;

struct DimensionMismatch : Error {
    explicit DimensionMismatch(const std::string& msg) : Error("DimensionMismatch", msg) {}
};

struct IkFailed : Error {
    explicit IkFailed(const std::string& msg) : Error("IkFailed", msg) {}
};

struct FkResult {
    geom::Pose ee;
    std::vector<geom::Pose> frames;  // dof+1 entries; frames[0] = base_pose
};

FkResult fk(const RobotModel& robot, const Config& q);

// Geometric Jacobian, row-major 6 x dof: rows vx vy vz wx wy wz.
std::vector<double> jacobian(const RobotModel& robot, const Config& q);

// Every link cuboid at its world pose for configuration q.
std::vector<geom::PosedPart> posed_links(const RobotModel& robot, const Config& q);

// True iff no link hits a workspace compound and no nonadjacent links touch.
bool collision_free(const RobotModel& robot, const Config& q,
                    std::span<const geom::FixedCompound> workspace);

struct IkParams {
    double damping = 0.05;
    double step_clamp = 0.2;
    double pos_tol = 1e-4;
    double rot_tol = 1e-3;
    int max_iters = 300;
    int restarts = 20;
};

// Damped least squares with seeded random restarts; throws IkFailed when the
// target is out of reach or every converged solution collides.
Config ik(const RobotModel& robot, const geom::Pose& target,
          std::span<const geom::FixedCompound> workspace, std::uint64_t seed,
          const IkParams& params = {});

geom::PointCloud robot_point_cloud(const RobotModel& robot, const Config& q, std::size_t n,
                                   std::uint64_t seed);

// Uniform in the upper half-ball of reach_radius around the base, radii below
// 0.15 * reach_radius rejected; orientation uniform over SO(3).
geom::Pose sample_reachable_pose(const RobotModel& robot, Rng& rng);

RobotModel builtin_robot();  // "ur5e-like"

RobotModel load_robot(const std::string& path);
void save_robot(const RobotModel& robot, const std::string& path);

}  // namespace perfact::kin
