#include "perfact/expert_planner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <limits>
#include <utility>

namespace perfact::expert {
namespace {

double max_joint_delta(const kin::Config& a, const kin::Config& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

double l1_distance(const kin::Config& a, const kin::Config& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
    return s;
}

double sq_distance(const kin::Config& a, const kin::Config& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

bool edge_free(const kin::RobotModel& robot, const kin::Config& a, const kin::Config& b,
               std::span<const geom::FixedCompound> obstacles) {
    return probgen::interp_collision_free(robot, a, b, obstacles, kEdgeResolution);
}

struct Tree {
    std::vector<kin::Config> nodes;
    std::vector<int> parents;

    int nearest(const kin::Config& q) const {
        int best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            const double d = sq_distance(nodes[i], q);
            if (d < best_d) {
                best_d = d;
                best = static_cast<int>(i);
            }
        }
        return best;
    }

    std::vector<kin::Config> branch_to_root(int idx) const {
        std::vector<kin::Config> out;
        for (int at = idx; at >= 0; at = parents[static_cast<std::size_t>(at)])
            out.push_back(nodes[static_cast<std::size_t>(at)]);
        return out;
    }
};

enum class Extend { Trapped, Advanced, Reached };

// One step from the node nearest q_target, scaled so no joint moves more than
// kExtendStep. Appends the new node when the edge validates.
Extend extend(Tree& tree, const kin::Config& q_target, const kin::RobotModel& robot,
              std::span<const geom::FixedCompound> obstacles, int& new_idx) {
    const int near = tree.nearest(q_target);
    const kin::Config& q_near = tree.nodes[static_cast<std::size_t>(near)];
    const double gap = max_joint_delta(q_near, q_target);
    if (gap == 0.0) {
        new_idx = near;
        return Extend::Reached;
    }
    kin::Config q_new = q_target;
    bool reached = true;
    if (gap > kExtendStep) {
        reached = false;
        const double scale = kExtendStep / gap;
        for (std::size_t i = 0; i < q_new.size(); ++i)
            q_new[i] = q_near[i] + (q_target[i] - q_near[i]) * scale;
    }
    if (!edge_free(robot, q_near, q_new, obstacles)) return Extend::Trapped;
    tree.nodes.push_back(std::move(q_new));
    tree.parents.push_back(near);
    new_idx = static_cast<int>(tree.nodes.size()) - 1;
    return reached ? Extend::Reached : Extend::Advanced;
}

}  // namespace

double path_length_l1(std::span<const kin::Config> waypoints) {
    double total = 0.0;
    for (std::size_t i = 1; i < waypoints.size(); ++i)
        total += l1_distance(waypoints[i - 1], waypoints[i]);
    return total;
}

std::vector<kin::Config> shortcut_smooth(std::vector<kin::Config> path,
                                         const kin::RobotModel& robot,
                                         std::span<const geom::FixedCompound> obstacles, Rng& rng,
                                         int attempts) {
    for (int attempt = 0; attempt < attempts; ++attempt) {
        if (path.size() < 3) break;
        std::size_t a = static_cast<std::size_t>(rng.uniform_int(static_cast<int>(path.size())));
        std::size_t b = static_cast<std::size_t>(rng.uniform_int(static_cast<int>(path.size())));
        if (a > b) std::swap(a, b);
        if (b - a < 2) continue;
        if (edge_free(robot, path[a], path[b], obstacles)) {
            path.erase(path.begin() + static_cast<std::ptrdiff_t>(a) + 1,
                       path.begin() + static_cast<std::ptrdiff_t>(b));
        }
    }
    return path;
}

std::vector<kin::Config> resample(std::span<const kin::Config> path, double delta_max) {
    std::vector<kin::Config> out;
    if (path.empty()) return out;
    out.push_back(path[0]);
    for (std::size_t s = 1; s < path.size(); ++s) {
        const kin::Config& a = path[s - 1];
        const kin::Config& b = path[s];
        const double gap = max_joint_delta(a, b);
        if (gap == 0.0) continue;
        const int steps = std::max(1, static_cast<int>(std::ceil(gap / delta_max - 1e-12)));
        for (int k = 1; k <= steps; ++k) {
            if (k == steps) {
                out.push_back(b);
                continue;
            }
            kin::Config q(a.size());
            const double t = static_cast<double>(k) / static_cast<double>(steps);
            for (std::size_t i = 0; i < a.size(); ++i) q[i] = a[i] + (b[i] - a[i]) * t;
            out.push_back(std::move(q));
        }
    }
    return out;
}

Trajectory plan(const probgen::PlanningProblem& problem, const scene::Workspace& ws,
                const kin::RobotModel& robot, double budget_s, std::uint64_t seed) {
    Trajectory traj;
    traj.workspace_id = ws.id;
    traj.problem = problem;
    if (max_joint_delta(problem.q_start, problem.q_goal) == 0.0) {
        traj.waypoints = {problem.q_start};
        return traj;
    }

    const std::vector<geom::FixedCompound> obstacles = scene::workspace_compounds(ws);
    Rng rng(mix_seed(seed, fnv1a64(ws.id)));
    const auto deadline =
        std::chrono::steady_clock::now() +
        std::chrono::duration_cast<std::chrono::steady_clock::duration>(
            std::chrono::duration<double>(budget_s));

    Tree start_tree{{problem.q_start}, {-1}};
    Tree goal_tree{{problem.q_goal}, {-1}};
    Tree* grow = &start_tree;
    Tree* join = &goal_tree;
    bool swapped = false;
    std::uint64_t iterations = 0;

    while (std::chrono::steady_clock::now() < deadline) {
        ++iterations;
        kin::Config q_rand(static_cast<std::size_t>(robot.dof));
        for (int j = 0; j < robot.dof; ++j) {
            const auto& lim = robot.joint_limits[static_cast<std::size_t>(j)];
            q_rand[static_cast<std::size_t>(j)] = rng.uniform(lim[0], lim[1]);
        }

        int grown = -1;
        if (extend(*grow, q_rand, robot, obstacles, grown) != Extend::Trapped) {
            const kin::Config bridge = grow->nodes[static_cast<std::size_t>(grown)];
            int joined = -1;
            Extend status = Extend::Advanced;
            while (status == Extend::Advanced)
                status = extend(*join, bridge, robot, obstacles, joined);
            if (status == Extend::Reached) {
                std::vector<kin::Config> head = grow->branch_to_root(grown);
                std::reverse(head.begin(), head.end());
                std::vector<kin::Config> tail = join->branch_to_root(joined);
                head.insert(head.end(), tail.begin(), tail.end());
                if (swapped) std::reverse(head.begin(), head.end());
                head = shortcut_smooth(std::move(head), robot, obstacles, rng);
                traj.waypoints = resample(head);
                return traj;
            }
        }
        std::swap(grow, join);
        swapped = !swapped;
    }
    throw PlanningTimeout("workspace " + ws.id + ": no path within " +
                          std::to_string(budget_s) + " s (" + std::to_string(iterations) +
                          " iterations)");
}

bool validate(const Trajectory& traj, const scene::Workspace& ws, const kin::RobotModel& robot) {
    const std::vector<kin::Config>& wp = traj.waypoints;
    if (wp.empty()) return false;
    const std::size_t dof = static_cast<std::size_t>(robot.dof);
    for (const kin::Config& q : wp)
        if (q.size() != dof) return false;
    if (traj.problem.q_start.size() != dof || traj.problem.q_goal.size() != dof) return false;
    if (max_joint_delta(wp.front(), traj.problem.q_start) > 1e-9) return false;
    if (max_joint_delta(wp.back(), traj.problem.q_goal) > 1e-9) return false;

    // 1e-12 slack absorbs interpolation rounding at the 0.05 rad scale
    for (std::size_t i = 1; i < wp.size(); ++i)
        if (max_joint_delta(wp[i - 1], wp[i]) > kDeltaMax + 1e-12) return false;

    const std::vector<geom::FixedCompound> obstacles = scene::workspace_compounds(ws);
    if (wp.size() == 1) return kin::collision_free(robot, wp[0], obstacles);
    for (std::size_t i = 1; i < wp.size(); ++i)
        if (!edge_free(robot, wp[i - 1], wp[i], obstacles)) return false;
    return true;
}

}  // namespace perfact::expert
