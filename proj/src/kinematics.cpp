#include "perfact/kinematics.hpp"

#include <algorithm>
#include <cmath>

#include "perfact/json_io.hpp"
#include "perfact/rng.hpp"

namespace perfact::kin {

namespace {

constexpr double kPi = 3.14159265358979323846;

using geom::Cuboid;
using geom::Pose;
using geom::Quat;
using geom::Vec3;

void check_dof(const RobotModel& robot, const Config& q) {
    if (static_cast<int>(q.size()) != robot.dof) {
        throw DimensionMismatch("config has " + std::to_string(q.size()) + " joints, robot '" +
                                robot.name + "' expects " + std::to_string(robot.dof));
    }
}

Pose dh_transform(const DhRow& row, double theta) {
    // RotZ(theta) TransZ(d) TransX(a) RotX(alpha)
    const double t = theta + row.theta_offset;
    Pose out;
    out.position = {row.a * std::cos(t), row.a * std::sin(t), row.d};
    out.orientation = Quat::from_yaw(t) * Quat::from_axis_angle({1.0, 0.0, 0.0}, row.alpha);
    return out;
}

// 6x6 linear solve, Gaussian elimination with partial pivoting.
std::array<double, 6> solve6(std::array<std::array<double, 6>, 6> m, std::array<double, 6> rhs) {
    for (int col = 0; col < 6; ++col) {
        int pivot = col;
        for (int r = col + 1; r < 6; ++r) {
            if (std::abs(m[r][col]) > std::abs(m[pivot][col])) {
                pivot = r;
            }
        }
        std::swap(m[col], m[pivot]);
        std::swap(rhs[col], rhs[pivot]);
        for (int r = col + 1; r < 6; ++r) {
            const double f = m[r][col] / m[col][col];
            for (int c = col; c < 6; ++c) {
                m[r][c] -= f * m[col][c];
            }
            rhs[r] -= f * rhs[col];
        }
    }
    std::array<double, 6> x{};
    for (int r = 5; r >= 0; --r) {
        double s = rhs[r];
        for (int c = r + 1; c < 6; ++c) {
            s -= m[r][c] * x[c];
        }
        x[r] = s / m[r][r];
    }
    return x;
}

// Keeps a joint value admissible. Full-circle joints wrap (clamping at the
// arbitrary +-pi cut of a continuous joint stalls the solver); others clamp.
double limit_step(double v, const std::array<double, 2>& lim) {
    const double span = lim[1] - lim[0];
    if (span >= 2.0 * kPi - 1e-9) {
        while (v > lim[1]) {
            v -= span;
        }
        while (v < lim[0]) {
            v += span;
        }
        return v;
    }
    return std::clamp(v, lim[0], lim[1]);
}

}  // namespace

FkResult fk(const RobotModel& robot, const Config& q) {
    check_dof(robot, q);
    FkResult out;
    out.frames.reserve(static_cast<std::size_t>(robot.dof) + 1);
    out.frames.push_back(robot.base_pose);
    for (int j = 0; j < robot.dof; ++j) {
        out.frames.push_back(out.frames.back().compose(
            dh_transform(robot.dh_rows[static_cast<std::size_t>(j)], q[static_cast<std::size_t>(j)])));
    }
    out.ee = out.frames.back();
    return out;
}

std::vector<double> jacobian(const RobotModel& robot, const Config& q) {
    const FkResult f = fk(robot, q);
    const std::size_t dof = static_cast<std::size_t>(robot.dof);
    std::vector<double> j(6 * dof, 0.0);
    for (std::size_t c = 0; c < dof; ++c) {
        const Vec3 z = f.frames[c].orientation.rotate({0.0, 0.0, 1.0});
        const Vec3 lin = geom::cross(z, f.ee.position - f.frames[c].position);
        j[0 * dof + c] = lin.x;
        j[1 * dof + c] = lin.y;
        j[2 * dof + c] = lin.z;
        j[3 * dof + c] = z.x;
        j[4 * dof + c] = z.y;
        j[5 * dof + c] = z.z;
    }
    return j;
}

std::vector<geom::PosedPart> posed_links(const RobotModel& robot, const Config& q) {
    const FkResult f = fk(robot, q);
    std::vector<geom::PosedPart> out;
    for (std::size_t link = 0; link < robot.link_geoms.size(); ++link) {
        for (const Cuboid& c : robot.link_geoms[link]) {
            out.push_back({c, f.frames[link].compose(c.local_pose)});
        }
    }
    return out;
}

bool collision_free(const RobotModel& robot, const Config& q,
                    std::span<const geom::FixedCompound> workspace) {
    const FkResult f = fk(robot, q);
    std::vector<std::vector<geom::PosedPart>> links(robot.link_geoms.size());
    for (std::size_t link = 0; link < robot.link_geoms.size(); ++link) {
        links[link] = geom::flatten(robot.link_geoms[link], f.frames[link]);
    }
    for (const auto& link : links) {
        for (const geom::FixedCompound& obstacle : workspace) {
            if (geom::compounds_collide(link, obstacle.parts)) {
                return false;
            }
        }
    }
    for (std::size_t i = 0; i + 2 < links.size(); ++i) {
        for (std::size_t j = i + 2; j < links.size(); ++j) {
            if (geom::compounds_collide(links[i], links[j])) {
                return false;
            }
        }
    }
    return true;
}

Config ik(const RobotModel& robot, const geom::Pose& target,
          std::span<const geom::FixedCompound> workspace, std::uint64_t seed,
          const IkParams& params) {
    const double dist = geom::norm(target.position - robot.base_pose.position);
    if (dist > robot.reach_radius + 1e-9) {
        throw IkFailed("target " + std::to_string(dist) + " m from base exceeds reach radius " +
                       std::to_string(robot.reach_radius));
    }

    const std::size_t dof = static_cast<std::size_t>(robot.dof);
    Rng rng(seed);

    // Seed the restarts from a random presample, best pose distance first;
    // uniform starts converge into colliding branches far too often.
    struct Candidate {
        double score;
        Config q;
    };
    std::vector<Candidate> candidates;
    for (int i = 0; i < 20 * params.restarts; ++i) {
        Config q(dof);
        for (std::size_t j = 0; j < dof; ++j) {
            q[j] = rng.uniform(robot.joint_limits[j][0], robot.joint_limits[j][1]);
        }
        if (!collision_free(robot, q, workspace)) {
            continue;
        }
        const FkResult f = fk(robot, q);
        candidates.push_back({geom::norm(f.ee.position - target.position) +
                                  0.1 * geom::quat_angle(f.ee.orientation, target.orientation),
                              std::move(q)});
    }
    std::sort(candidates.begin(), candidates.end(),
              [](const Candidate& a, const Candidate& b) { return a.score < b.score; });
    while (static_cast<int>(candidates.size()) < params.restarts) {
        Config q(dof);
        for (std::size_t j = 0; j < dof; ++j) {
            q[j] = rng.uniform(robot.joint_limits[j][0], robot.joint_limits[j][1]);
        }
        candidates.push_back({0.0, std::move(q)});
    }

    for (int restart = 0; restart < params.restarts; ++restart) {
        Config q = candidates[static_cast<std::size_t>(restart)].q;
        for (int iter = 0; iter < params.max_iters; ++iter) {
            const FkResult f = fk(robot, q);
            const Vec3 e_pos = target.position - f.ee.position;
            const Vec3 e_rot =
                geom::rotation_vector(target.orientation * f.ee.orientation.conjugate());
            if (geom::norm(e_pos) < params.pos_tol && geom::norm(e_rot) < params.rot_tol) {
                if (collision_free(robot, q, workspace)) {
                    return q;
                }
                break;  // converged into contact; try the next restart
            }

            const std::vector<double> j = jacobian(robot, q);
            const std::array<double, 6> e = {e_pos.x, e_pos.y, e_pos.z,
                                             e_rot.x, e_rot.y, e_rot.z};
            std::array<std::array<double, 6>, 6> jjt{};
            for (int r = 0; r < 6; ++r) {
                for (int c = 0; c < 6; ++c) {
                    double s = 0.0;
                    for (std::size_t k = 0; k < dof; ++k) {
                        s += j[static_cast<std::size_t>(r) * dof + k] *
                             j[static_cast<std::size_t>(c) * dof + k];
                    }
                    jjt[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] = s;
                }
                jjt[static_cast<std::size_t>(r)][static_cast<std::size_t>(r)] +=
                    params.damping * params.damping;
            }
            const std::array<double, 6> y = solve6(jjt, e);

            Config dq(dof, 0.0);
            double max_step = 0.0;
            for (std::size_t k = 0; k < dof; ++k) {
                double s = 0.0;
                for (int r = 0; r < 6; ++r) {
                    s += j[static_cast<std::size_t>(r) * dof + k] * y[static_cast<std::size_t>(r)];
                }
                dq[k] = s;
                max_step = std::max(max_step, std::abs(s));
            }
            const double scale = max_step > params.step_clamp ? params.step_clamp / max_step : 1.0;
            for (std::size_t k = 0; k < dof; ++k) {
                q[k] = limit_step(q[k] + scale * dq[k], robot.joint_limits[k]);
            }
        }
    }
    throw IkFailed("no collision-free solution after " + std::to_string(params.restarts) +
                   " restarts");
}

geom::PointCloud robot_point_cloud(const RobotModel& robot, const Config& q, std::size_t n,
                                   std::uint64_t seed) {
    return geom::sample_surface(posed_links(robot, q), n, seed);
}

geom::Pose sample_reachable_pose(const RobotModel& robot, Rng& rng) {
    const double r_min = 0.15 * robot.reach_radius;
    Pose out;
    for (;;) {
        Vec3 dir{rng.normal(), rng.normal(), rng.normal()};
        const double n = geom::norm(dir);
        if (n < 1e-9) {
            continue;
        }
        dir = dir * (1.0 / n);
        dir.z = std::abs(dir.z);
        const double radius = robot.reach_radius * std::cbrt(rng.uniform());
        if (radius < r_min) {
            continue;
        }
        out.position = robot.base_pose.position + dir * radius;
        break;
    }
    out.orientation = geom::random_unit_quat(rng);
    return out;
}

RobotModel builtin_robot() {
    RobotModel robot;
    robot.name = "ur5e-like";
    robot.dof = 6;
    const double half_pi = kPi / 2.0;
    robot.dh_rows = {
        {0.0, half_pi, 0.163, 0.0},  {0.425, 0.0, 0.0, 0.0},      {0.392, 0.0, 0.0, 0.0},
        {0.0, half_pi, 0.133, 0.0},  {0.0, -half_pi, 0.100, 0.0}, {0.0, 0.0, 0.100, 0.0},
    };
    robot.joint_limits.assign(6, {-kPi, kPi});
    robot.reach_radius = 0.9;
    // bench mounted: base plate at table height atop a floor pedestal
    robot.base_pose.position = {0.0, 0.0, 0.75};

    robot.link_geoms.resize(7);
    Cuboid pedestal;
    pedestal.half_extents = {0.075, 0.075, 0.375};
    pedestal.local_pose.position = {0.0, 0.0, -0.375};
    robot.link_geoms[0] = {pedestal};

    // Each joint's rod spans from the previous frame origin, which sits at a
    // constant point of the current frame under the DH convention. No end
    // caps: overhang past the joints inflates self-collision volume badly.
    const double radius = 0.035;
    for (std::size_t j = 0; j < 6; ++j) {
        const DhRow& row = robot.dh_rows[j];
        const Vec3 s{-row.a, -row.d * std::sin(row.alpha), -row.d * std::cos(row.alpha)};
        Cuboid rod;
        rod.half_extents = {std::max(std::abs(s.x) / 2.0, radius),
                            std::max(std::abs(s.y) / 2.0, radius),
                            std::max(std::abs(s.z) / 2.0, radius)};
        rod.local_pose.position = s * 0.5;
        robot.link_geoms[j + 1] = {rod};
    }
    return robot;
}

using json_io::ordered_json;
using json_io::pose_from_json;
using json_io::pose_to_json;

RobotModel load_robot(const std::string& path) {
    const ordered_json j = json_io::load_document(path, "perfact-robot", 1);
    try {
        RobotModel robot;
        robot.name = j.at("name").get<std::string>();
        robot.dof = j.at("dof").get<int>();
        for (const auto& row : j.at("dh_rows")) {
            robot.dh_rows.push_back({row.at("a").get<double>(), row.at("alpha").get<double>(),
                                     row.at("d").get<double>(),
                                     row.at("theta_offset").get<double>()});
        }
        for (const auto& lim : j.at("joint_limits")) {
            robot.joint_limits.push_back({lim.at(0).get<double>(), lim.at(1).get<double>()});
        }
        robot.reach_radius = j.at("reach_radius").get<double>();
        robot.base_pose = pose_from_json(j.at("base_pose"));
        for (const auto& link : j.at("link_geoms")) {
            std::vector<Cuboid> geoms;
            for (const auto& g : link) {
                geoms.push_back(json_io::cuboid_from_json(g));
            }
            robot.link_geoms.push_back(std::move(geoms));
        }

        if (robot.dof < 1 || robot.dh_rows.size() != static_cast<std::size_t>(robot.dof) ||
            robot.joint_limits.size() != static_cast<std::size_t>(robot.dof)) {
            throw FormatError("robot file " + path + ": dof does not match row counts");
        }
        if (robot.link_geoms.size() != static_cast<std::size_t>(robot.dof) + 1) {
            throw FormatError("robot file " + path + ": need dof+1 link geometry lists");
        }
        if (robot.reach_radius <= 0.0) {
            throw FormatError("robot file " + path + ": reach_radius must be positive");
        }
        for (const auto& lim : robot.joint_limits) {
            if (!(lim[0] < lim[1])) {
                throw FormatError("robot file " + path + ": joint limits must satisfy lo < hi");
            }
        }
        for (const auto& link : robot.link_geoms) {
            for (const Cuboid& c : link) {
                if (c.half_extents.x <= 0.0 || c.half_extents.y <= 0.0 || c.half_extents.z <= 0.0) {
                    throw FormatError("robot file " + path + ": half extents must be positive");
                }
            }
        }
        return robot;
    } catch (const Error&) {
        throw;
    } catch (const std::exception& e) {
        throw FormatError("robot file " + path + ": " + e.what());
    }
}

void save_robot(const RobotModel& robot, const std::string& path) {
    ordered_json j;
    j["format"] = "perfact-robot";
    j["version"] = 1;
    j["name"] = robot.name;
    j["dof"] = robot.dof;
    j["dh_rows"] = ordered_json::array();
    for (const DhRow& row : robot.dh_rows) {
        j["dh_rows"].push_back({{"a", row.a},
                                {"alpha", row.alpha},
                                {"d", row.d},
                                {"theta_offset", row.theta_offset}});
    }
    j["joint_limits"] = ordered_json::array();
    for (const auto& lim : robot.joint_limits) {
        j["joint_limits"].push_back({lim[0], lim[1]});
    }
    j["reach_radius"] = robot.reach_radius;
    j["base_pose"] = pose_to_json(robot.base_pose);
    j["link_geoms"] = ordered_json::array();
    for (const auto& link : robot.link_geoms) {
        ordered_json geoms = ordered_json::array();
        for (const Cuboid& c : link) {
            geoms.push_back(json_io::cuboid_to_json(c));
        }
        j["link_geoms"].push_back(std::move(geoms));
    }
    json_io::save_document(j, path);
}

}  // namespace perfact::kin
