#include "perfact/scene_synth.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "perfact/json_io.hpp"
#include "perfact/rng.hpp"

namespace perfact::scene {

namespace {

using geom::FixedCompound;
using geom::Pose;
using geom::PosedPart;
using geom::Quat;
using geom::Vec3;

constexpr double kPi = 3.14159265358979323846;
constexpr double kTableReachFactor = 1.2;

Quat yaw_quat(double yaw) { return Quat::from_axis_angle({0.0, 0.0, 1.0}, yaw); }

std::vector<assets::PrimitiveKind> placeable_kinds() {
    std::vector<assets::PrimitiveKind> kinds;
    for (assets::PrimitiveKind k : assets::all_kinds()) {
        if (k != assets::PrimitiveKind::Table) kinds.push_back(k);
    }
    return kinds;
}

double xy_distance(const Vec3& p) { return std::hypot(p.x, p.y); }

// wide slab with its top face at z=0, so resolution never buries anything
FixedCompound ground_slab() {
    geom::Cuboid slab;
    slab.half_extents = {10.0, 10.0, 0.5};
    PosedPart placed;
    placed.cuboid = slab;
    placed.pose.position = {0.0, 0.0, -0.5};
    return {{placed}};
}

// Nothing may be placed against the robot's mounting column or the
// shoulder hub right above it; the arm must keep a free home volume.
FixedCompound robot_keep_out() {
    geom::Cuboid c;
    c.half_extents = {0.18, 0.18, 0.525};
    PosedPart placed;
    placed.cuboid = c;
    placed.pose.position = {0.0, 0.0, 0.525};
    return {{placed}};
}

std::string fmt3(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return buf;
}

struct Draft {
    std::vector<assets::Primitive> tables;
    std::vector<assets::Primitive> primitives;
    std::string summary;
};

// tables placed procedurally around the base; the LLM never moves them
std::vector<assets::Primitive> draft_tables(const kin::RobotModel& robot,
                                            const SynthOptions& options, std::uint64_t seed,
                                            Rng& rng) {
    const std::size_t count = 1 + rng.uniform_int(4);
    std::vector<assets::Primitive> tables;
    std::vector<FixedCompound> fixed{ground_slab(), robot_keep_out()};
    constexpr int kRingTrials = 12;
    for (std::size_t k = 0; k < count; ++k) {
        assets::Primitive table =
            assets::generate(assets::PrimitiveKind::Table, options.ranges, mix_seed(seed, 100 + k));
        table.id = "table-" + std::to_string(k);
        bool placed = false;
        std::string last = "no placement trials";
        for (int trial = 0; trial < kRingTrials && !placed; ++trial) {
            const double dist = robot.reach_radius * rng.uniform(0.45, 0.85);
            const double angle = 2 * kPi * (double(k) + rng.uniform()) / double(count);
            Pose want;
            want.position = {dist * std::cos(angle), dist * std::sin(angle), 0.0};
            want.orientation = yaw_quat(rng.uniform(0.0, 2 * kPi));
            try {
                want = geom::resolve_penetration(table.parts, want, fixed,
                                                 options.resolution_step);
            } catch (const geom::ResolutionFailed& e) {
                last = e.what();
                continue;
            }
            if (xy_distance(want.position) > kTableReachFactor * robot.reach_radius) {
                last = "table pushed outside the reach band";
                continue;
            }
            table.pose = want;
            placed = true;
        }
        if (!placed) throw geom::ResolutionFailed("table layout: " + last);
        fixed.push_back({geom::flatten(table.parts, table.pose)});
        tables.push_back(std::move(table));
    }
    return tables;
}

Draft draft_workspace(const kin::RobotModel& robot, llm::LlmGateway& gateway,
                      const SynthOptions& options, std::uint64_t seed, int attempt) {
    Rng rng(mix_seed(seed, 11 + static_cast<std::uint64_t>(attempt)));
    Draft draft;
    draft.tables = draft_tables(robot, options, seed, rng);

    const std::string hint =
        attempt == 0 ? ""
                     : "Earlier configurations were too similar to existing workspaces. Propose a "
                       "clearly more distinctive configuration (variation " +
                           std::to_string(attempt) + ").";

    llm::CountsContext counts_ctx;
    counts_ctx.robot_name = robot.name;
    counts_ctx.reach_radius = robot.reach_radius;
    counts_ctx.kinds = placeable_kinds();
    counts_ctx.hint = hint;
    for (const assets::Primitive& t : draft.tables) {
        counts_ctx.tables.push_back(
            {t.id, assets::param(t, "width"), assets::param(t, "depth")});
    }
    const llm::CountsReply counts = gateway.query_counts(counts_ctx);

    llm::PlacementsContext place_ctx;
    place_ctx.robot_name = robot.name;
    place_ctx.reach_radius = robot.reach_radius;
    place_ctx.tables = counts_ctx.tables;
    place_ctx.hint = hint;

    std::ostringstream summary;
    summary << draft.tables.size() << " tables, areas";
    for (const llm::TableInfo& t : counts_ctx.tables) summary << " " << fmt3(t.area());

    auto add_items = [&](const std::vector<std::pair<assets::PrimitiveKind, int>>& entries,
                         int surface) {
        for (const auto& [kind, n] : entries) {
            for (int c = 0; c < n; ++c) {
                const std::size_t idx = draft.primitives.size();
                assets::Primitive p = assets::generate(
                    kind, options.ranges,
                    mix_seed(seed, 1000 * (attempt + 1) + static_cast<std::uint64_t>(idx)));
                p.id = assets::to_string(kind) + "-" + std::to_string(idx);
                const geom::Aabb box = geom::aabb_of(geom::flatten(p.parts, Pose{}));
                llm::PlacementItem item;
                item.id = p.id;
                item.kind = kind;
                item.dx = box.hi.x - box.lo.x;
                item.dy = box.hi.y - box.lo.y;
                item.surface = surface;
                place_ctx.items.push_back(item);
                draft.primitives.push_back(std::move(p));
            }
            summary << (surface == llm::kGroundSurface
                            ? "; ground: "
                            : "; table " + std::to_string(surface) + ": ")
                    << assets::to_string(kind) << "=" << n;
        }
    };
    for (std::size_t i = 0; i < counts.tables.size(); ++i) {
        add_items(counts.tables[i], static_cast<int>(i));
    }
    add_items(counts.ground, llm::kGroundSurface);
    draft.summary = summary.str();

    const llm::PlacementReply placements = gateway.query_placements(place_ctx);
    for (std::size_t i = 0; i < draft.primitives.size(); ++i) {
        const llm::Placement& at = placements.placements[i];
        assets::Primitive& p = draft.primitives[i];
        if (at.surface == llm::kGroundSurface) {
            p.pose.position = {at.x, at.y, 0.0};
            p.pose.orientation = yaw_quat(at.yaw);
        } else {
            const assets::Primitive& table = draft.tables[static_cast<std::size_t>(at.surface)];
            const Pose local{{at.x, at.y, assets::param(table, "height")}, yaw_quat(at.yaw)};
            p.pose = table.pose.compose(local);
        }
    }
    return draft;
}

// Resolve where the LLM asked; when the spot is hopelessly wedged, retry from
// seeded offsets spiraling out (and eventually up) from the requested pose.
Pose resolve_or_relocate(const std::vector<geom::Cuboid>& parts, const Pose& want,
                         std::span<const FixedCompound> fixed, const SynthOptions& options,
                         Rng& rng) {
    constexpr int kRelocations = 24;
    const double golden = 2.399963229728653;
    for (int trial = 0; trial <= kRelocations; ++trial) {
        Pose start = want;
        if (trial > 0) {
            const double radius = 0.10 * trial;
            const double angle = golden * trial + rng.uniform(0.0, 0.3);
            start.position.x += radius * std::cos(angle);
            start.position.y += radius * std::sin(angle);
            // late trials rise a little so under-table starts can escape; the
            // rise is capped so nothing gets parked in the arm's flight space
            if (trial > 16) start.position.z += 0.10 * (trial - 16);
        }
        try {
            return geom::resolve_penetration(parts, start, fixed, options.resolution_step);
        } catch (const geom::ResolutionFailed& e) {
            if (trial == kRelocations) {
                throw geom::ResolutionFailed("item layout: " + std::string(e.what()));
            }
        }
    }
    throw geom::ResolutionFailed("unreachable");
}

void resolve_draft(Draft& draft, const SynthOptions& options, std::uint64_t seed, int attempt) {
    Rng rng(mix_seed(seed, 77 + static_cast<std::uint64_t>(attempt)));
    std::vector<FixedCompound> fixed{ground_slab(), robot_keep_out()};
    for (const assets::Primitive& t : draft.tables) {
        fixed.push_back({geom::flatten(t.parts, t.pose)});
    }
    for (assets::Primitive& p : draft.primitives) {
        p.pose = resolve_or_relocate(p.parts, p.pose, fixed, options, rng);
        fixed.push_back({geom::flatten(p.parts, p.pose)});
    }
}

// Items rest flush on tables and the ground, so exact face contact is common;
// depths below kContactTol are touch, not overlap.
constexpr double kContactTol = 1e-9;

bool units_overlap(const std::vector<PosedPart>& a, const std::vector<PosedPart>& b) {
    for (const PosedPart& pa : a) {
        for (const PosedPart& pb : b) {
            const geom::CollisionResult r =
                geom::check_collision(pa.cuboid, pa.pose, pb.cuboid, pb.pose);
            if (r.colliding && r.depth > kContactTol) return true;
        }
    }
    return false;
}

void assert_invariants(const Workspace& ws, const kin::RobotModel& robot) {
    std::vector<std::vector<PosedPart>> units;
    for (const assets::Primitive& t : ws.tables) {
        if (xy_distance(t.pose.position) > kTableReachFactor * robot.reach_radius) {
            throw GenerationFailed("table outside the reach band in " + ws.id);
        }
        units.push_back(geom::flatten(t.parts, t.pose));
    }
    for (const assets::Primitive& p : ws.primitives) {
        units.push_back(geom::flatten(p.parts, p.pose));
    }
    for (std::size_t i = 0; i < units.size(); ++i) {
        for (std::size_t j = i + 1; j < units.size(); ++j) {
            if (units_overlap(units[i], units[j])) {
                throw GenerationFailed("residual overlap in " + ws.id);
            }
        }
    }
}

}  // namespace

std::size_t SimilarityGate::size() const {
    std::lock_guard lock(mu_);
    return store_.size();
}

double SimilarityGate::max_cosine(const std::vector<double>& embedding) const {
    std::lock_guard lock(mu_);
    double best = 0.0;
    for (const auto& e : store_) best = std::max(best, llm::cosine(e, embedding));
    return best;
}

bool SimilarityGate::check_and_insert(const std::vector<double>& embedding) {
    std::lock_guard lock(mu_);
    for (const auto& e : store_) {
        if (llm::cosine(e, embedding) >= threshold_) return false;
    }
    store_.push_back(embedding);
    return true;
}

Workspace generate_workspace(const kin::RobotModel& robot, SimilarityGate& gate,
                             llm::LlmGateway& gateway, std::uint64_t seed,
                             const SynthOptions& options) {
    gateway.reset_digest();
    std::string last_failure = "no attempts made";
    for (int attempt = 0; attempt < options.max_attempts; ++attempt) {
        Draft draft;
        try {
            draft = draft_workspace(robot, gateway, options, seed, attempt);
            resolve_draft(draft, options, seed, attempt);
        } catch (const geom::ResolutionFailed& e) {
            last_failure = e.what();
            continue;
        }

        Workspace ws;
        ws.id = "ws-" + std::to_string(seed);
        ws.robot_name = robot.name;
        ws.tables = std::move(draft.tables);
        ws.primitives = std::move(draft.primitives);
        ws.seed = seed;
        ws.description = gateway.describe_workspace(draft.summary);
        ws.embedding = gateway.embed(ws.description).values;
        if (!gate.check_and_insert(ws.embedding)) {
            last_failure = "similarity " + std::to_string(gate.max_cosine(ws.embedding)) +
                           " >= " + std::to_string(gate.threshold());
            continue;
        }
        ws.llm_digest = gateway.transcript_digest();
        assert_invariants(ws, robot);
        return ws;
    }
    throw GenerationFailed("workspace seed " + std::to_string(seed) + " failed after " +
                           std::to_string(options.max_attempts) + " attempts; last: " +
                           last_failure);
}

std::vector<PosedPart> workspace_obstacles(const Workspace& ws) {
    std::vector<PosedPart> out;
    for (const assets::Primitive& t : ws.tables) {
        const auto placed = geom::flatten(t.parts, t.pose);
        out.insert(out.end(), placed.begin(), placed.end());
    }
    for (const assets::Primitive& p : ws.primitives) {
        const auto placed = geom::flatten(p.parts, p.pose);
        out.insert(out.end(), placed.begin(), placed.end());
    }
    return out;
}

std::vector<geom::FixedCompound> workspace_compounds(const Workspace& ws) {
    std::vector<geom::FixedCompound> out;
    out.reserve(ws.tables.size() + ws.primitives.size());
    for (const assets::Primitive& t : ws.tables) out.push_back({geom::flatten(t.parts, t.pose)});
    for (const assets::Primitive& p : ws.primitives) {
        out.push_back({geom::flatten(p.parts, p.pose)});
    }
    return out;
}

geom::PointCloud scene_point_cloud(const Workspace& ws, std::size_t n, std::uint64_t seed) {
    std::vector<std::vector<PosedPart>> units;
    for (const assets::Primitive& t : ws.tables) units.push_back(geom::flatten(t.parts, t.pose));
    for (const assets::Primitive& p : ws.primitives) {
        units.push_back(geom::flatten(p.parts, p.pose));
    }

    std::vector<double> areas(units.size(), 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < units.size(); ++i) {
        for (const PosedPart& part : units[i]) areas[i] += part.cuboid.surface_area();
        total += areas[i];
    }

    // largest-remainder apportionment keeps the total exactly n
    std::vector<std::size_t> alloc(units.size(), 0);
    std::vector<std::pair<double, std::size_t>> rests;
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < units.size(); ++i) {
        const double quota = double(n) * areas[i] / total;
        alloc[i] = static_cast<std::size_t>(std::floor(quota));
        assigned += alloc[i];
        rests.emplace_back(quota - std::floor(quota), i);
    }
    std::sort(rests.begin(), rests.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    for (std::size_t k = 0; assigned < n; ++k, ++assigned) {
        ++alloc[rests[k % rests.size()].second];
    }

    geom::PointCloud cloud;
    cloud.points.reserve(n);
    for (std::size_t i = 0; i < units.size(); ++i) {
        if (alloc[i] == 0) continue;
        const geom::PointCloud part = geom::sample_surface(units[i], alloc[i], mix_seed(seed, i));
        cloud.points.insert(cloud.points.end(), part.points.begin(), part.points.end());
    }
    return cloud;
}

using json_io::ordered_json;

nlohmann::ordered_json workspace_to_json(const Workspace& ws) {
    ordered_json j;
    j["id"] = ws.id;
    j["robot"] = ws.robot_name;
    j["seed"] = ws.seed;
    j["description"] = ws.description;
    j["embedding"] = ws.embedding;
    j["llm_digest"] = ws.llm_digest;
    j["tables"] = ordered_json::array();
    for (const assets::Primitive& t : ws.tables) j["tables"].push_back(assets::primitive_to_json(t));
    j["primitives"] = ordered_json::array();
    for (const assets::Primitive& p : ws.primitives) {
        j["primitives"].push_back(assets::primitive_to_json(p));
    }
    return j;
}

Workspace workspace_from_json(const nlohmann::ordered_json& j) {
    Workspace ws;
    try {
        ws.id = j.at("id").get<std::string>();
        ws.robot_name = j.at("robot").get<std::string>();
        ws.seed = j.at("seed").get<std::uint64_t>();
        ws.description = j.at("description").get<std::string>();
        ws.embedding = j.at("embedding").get<std::vector<double>>();
        ws.llm_digest = j.at("llm_digest").get<std::string>();
        for (const auto& t : j.at("tables")) ws.tables.push_back(assets::primitive_from_json(t));
        for (const auto& p : j.at("primitives")) {
            ws.primitives.push_back(assets::primitive_from_json(p));
        }
    } catch (const Error&) {
        throw;
    } catch (const std::exception& e) {
        throw FormatError(std::string("workspace record: ") + e.what());
    }
    if (ws.id.empty() || ws.tables.empty()) {
        throw FormatError("workspace record missing id or tables");
    }
    if (!ws.embedding.empty() && ws.embedding.size() != llm::kEmbeddingDim) {
        throw FormatError("workspace embedding has wrong width");
    }
    return ws;
}

void save_workspace(const Workspace& ws, const std::string& path) {
    ordered_json j = workspace_to_json(ws);
    ordered_json doc;
    doc["format"] = "perfact-scene";
    doc["version"] = 1;
    for (auto& [key, value] : j.items()) doc[key] = value;
    json_io::save_document(doc, path);
}

Workspace load_workspace(const std::string& path) {
    return workspace_from_json(json_io::load_document(path, "perfact-scene", 1));
}

}  // namespace perfact::scene
