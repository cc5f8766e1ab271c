#include "perfact/asset_factory.hpp"

#include <algorithm>
#include <cmath>

#include "perfact/json_io.hpp"
#include "perfact/rng.hpp"

namespace perfact::assets {

namespace {

using geom::Aabb;
using geom::Cuboid;
using geom::Pose;
using geom::Quat;
using geom::Vec3;

constexpr double kClearance = 0.02;       // pose-sampling inset from cavity walls
constexpr double kDoorOpenMin = 1.0;      // rad a door must open before the cavity counts
constexpr double kDrawerSlack = 0.005;    // sliding fit between drawer and shell

const std::array<PrimitiveKind, kPrimitiveKindCount> kAllKinds = {
    PrimitiveKind::Table,      PrimitiveKind::Cabinet, PrimitiveKind::Shelf,
    PrimitiveKind::OpenBox,    PrimitiveKind::Bin,     PrimitiveKind::Microwave,
    PrimitiveKind::Dishwasher, PrimitiveKind::Dresser, PrimitiveKind::Cubby,
};

const char* kKindNames[kPrimitiveKindCount] = {
    "table", "cabinet", "shelf", "open_box", "bin", "microwave", "dishwasher", "dresser", "cubby",
};

Cuboid box(double hx, double hy, double hz, double cx, double cy, double cz) {
    Cuboid c;
    c.half_extents = {hx, hy, hz};
    c.local_pose.position = {cx, cy, cz};
    return c;
}

// Sampler that also records every draw into the primitive's param list.
struct ParamDraw {
    PrimitiveKind kind;
    const ParamRanges& ranges;
    Rng& rng;
    Primitive& out;

    double real(const std::string& name) {
        const Range& r = ranges.get(kind, name);
        const double v = rng.uniform(r.lo, r.hi);
        out.params.emplace_back(name, v);
        return v;
    }

    int integer(const std::string& name) {
        const Range& r = ranges.get(kind, name);
        const auto lo = static_cast<std::int64_t>(std::llround(r.lo));
        const auto hi = static_cast<std::int64_t>(std::llround(r.hi));
        const auto v = lo + static_cast<std::int64_t>(
                                rng.uniform_int(static_cast<std::uint64_t>(hi - lo + 1)));
        out.params.emplace_back(name, static_cast<double>(v));
        return static_cast<int>(v);
    }
};

void build_table(ParamDraw& d, Primitive& p) {
    const double w = d.real("width");
    const double depth = d.real("depth");
    const double h = d.real("height");
    const double top = d.real("top_thickness");
    const double leg = d.real("leg_square");

    p.parts.push_back(box(w / 2, depth / 2, top / 2, 0, 0, h - top / 2));
    const double leg_h = h - top;
    for (double sx : {-1.0, 1.0}) {
        for (double sy : {-1.0, 1.0}) {
            p.parts.push_back(box(leg / 2, leg / 2, leg_h / 2, sx * (w - leg) / 2,
                                  sy * (depth - leg) / 2, leg_h / 2));
        }
    }
}

// Shell shared by the door kinds and the dresser: bottom and top slabs over
// the full footprint, side walls between them, back wall between the sides.
// The front stays open.
void build_shell(Primitive& p, double w, double depth, double h, double t) {
    p.parts.push_back(box(w / 2, depth / 2, t / 2, 0, 0, t / 2));
    p.parts.push_back(box(w / 2, depth / 2, t / 2, 0, 0, h - t / 2));
    const double wall_h = (h - 2 * t) / 2;
    p.parts.push_back(box(t / 2, depth / 2, wall_h, -(w - t) / 2, 0, h / 2));
    p.parts.push_back(box(t / 2, depth / 2, wall_h, (w - t) / 2, 0, h / 2));
    p.parts.push_back(box((w - 2 * t) / 2, t / 2, wall_h, 0, (depth - t) / 2, h / 2));
}

// Door on the front face, hinged along the left vertical edge, swinging
// outward by `angle`. Closed, it sits flush against the open front.
void add_swing_door(Primitive& p, double w, double depth, double h, double t, double angle) {
    const Vec3 hinge{-w / 2, -depth / 2, 0.0};
    const Quat rot = Quat::from_axis_angle({0.0, 0.0, 1.0}, -angle);
    Cuboid door;
    door.half_extents = {w / 2, t / 2, h / 2};
    door.local_pose.orientation = rot;
    door.local_pose.position = hinge + rot.rotate({w / 2, -t / 2, h / 2});
    p.parts.push_back(door);
    p.articulation_values.emplace_back("door_angle", angle);
}

void build_cabinet(ParamDraw& d, Primitive& p) {
    const double w = d.real("width");
    const double depth = d.real("depth");
    const double h = d.real("height");
    const double t = d.real("thickness");
    const double angle = d.real("door_angle");
    build_shell(p, w, depth, h, t);
    add_swing_door(p, w, depth, h, t, angle);
}

void build_shelf(ParamDraw& d, Primitive& p) {
    const double w = d.real("width");
    const double depth = d.real("depth");
    const double h = d.real("height");
    const double t = d.real("thickness");
    const int rungs = d.integer("rungs");

    p.parts.push_back(box(t / 2, depth / 2, h / 2, -(w - t) / 2, 0, h / 2));
    p.parts.push_back(box(t / 2, depth / 2, h / 2, (w - t) / 2, 0, h / 2));
    p.parts.push_back(box((w - 2 * t) / 2, t / 2, h / 2, 0, (depth - t) / 2, h / 2));

    const double gap = (h - t * rungs) / (rungs - 1);
    for (int k = 0; k < rungs; ++k) {
        const double z = k * (gap + t) + t / 2;
        p.parts.push_back(box((w - 2 * t) / 2, (depth - t) / 2, t / 2, 0, -t / 2, z));
    }
}

void build_open_container(ParamDraw& d, Primitive& p) {
    const double w = d.real("width");
    const double depth = d.real("depth");
    const double h = d.real("height");
    const double t = d.real("thickness");

    p.parts.push_back(box(w / 2, depth / 2, t / 2, 0, 0, t / 2));
    const double wall_h = (h - t) / 2;
    const double wall_z = (h + t) / 2;
    p.parts.push_back(box(t / 2, depth / 2, wall_h, -(w - t) / 2, 0, wall_z));
    p.parts.push_back(box(t / 2, depth / 2, wall_h, (w - t) / 2, 0, wall_z));
    p.parts.push_back(box((w - 2 * t) / 2, t / 2, wall_h, 0, -(depth - t) / 2, wall_z));
    p.parts.push_back(box((w - 2 * t) / 2, t / 2, wall_h, 0, (depth - t) / 2, wall_z));
}

void build_microwave(ParamDraw& d, Primitive& p) {
    const double w = d.real("width");
    const double depth = d.real("depth");
    const double h = d.real("height");
    const double t = d.real("thickness");
    const double angle = d.real("door_angle");
    build_shell(p, w, depth, h, t);
    add_swing_door(p, w, depth, h, t, angle);
}

void build_dishwasher(ParamDraw& d, Primitive& p) {
    const double w = d.real("width");
    const double depth = d.real("depth");
    const double h = d.real("height");
    const double t = d.real("thickness");
    const double angle = d.real("door_angle");
    build_shell(p, w, depth, h, t);

    // front door folds down about the bottom-front horizontal edge; the hinge
    // sits at plinth height so the open door rests exactly on the ground
    const Vec3 hinge{0.0, -depth / 2, t};
    const double door_h = h - t;
    const Quat rot = Quat::from_axis_angle({1.0, 0.0, 0.0}, angle);
    Cuboid door;
    door.half_extents = {w / 2, t / 2, door_h / 2};
    door.local_pose.orientation = rot;
    door.local_pose.position = hinge + rot.rotate({0.0, -t / 2, door_h / 2});
    p.parts.push_back(door);
    p.articulation_values.emplace_back("door_angle", angle);
}

void build_dresser(ParamDraw& d, Primitive& p) {
    const double w = d.real("width");
    const double depth = d.real("depth");
    const double h = d.real("height");
    const double t = d.real("thickness");
    const int drawers = d.integer("drawers");
    build_shell(p, w, depth, h, t);

    const double slot_h = (h - 2 * t) / drawers;
    const double dw = w - 2 * t - 2 * kDrawerSlack;       // drawer outer width
    const double dd = depth - t - kDrawerSlack;           // drawer outer depth
    const double dh = slot_h - 2 * kDrawerSlack;          // drawer outer height
    for (int k = 0; k < drawers; ++k) {
        const double frac = d.real("extension_frac");
        const double ext = frac * dd;
        p.articulation_values.emplace_back("drawer_" + std::to_string(k) + "_extension", ext);

        const double z0 = t + k * slot_h + kDrawerSlack;
        const double yc = -depth / 2 - ext + dd / 2;  // drawer center, shifted out by ext
        p.parts.push_back(box(dw / 2, dd / 2, t / 2, 0, yc, z0 + t / 2));
        const double wall_h = (dh - t) / 2;
        const double wall_z = z0 + t + wall_h;
        p.parts.push_back(box(dw / 2, t / 2, wall_h, 0, yc - (dd - t) / 2, wall_z));
        p.parts.push_back(box(dw / 2, t / 2, wall_h, 0, yc + (dd - t) / 2, wall_z));
        p.parts.push_back(box(t / 2, (dd - 2 * t) / 2, wall_h, -(dw - t) / 2, yc, wall_z));
        p.parts.push_back(box(t / 2, (dd - 2 * t) / 2, wall_h, (dw - t) / 2, yc, wall_z));
    }
}

void build_cubby(ParamDraw& d, Primitive& p) {
    const double w = d.real("width");
    const double depth = d.real("depth");
    const double h = d.real("height");
    const double t = d.real("thickness");
    const int rows = d.integer("rows");
    const int cols = d.integer("cols");

    p.parts.push_back(box(t / 2, depth / 2, h / 2, -(w - t) / 2, 0, h / 2));
    p.parts.push_back(box(t / 2, depth / 2, h / 2, (w - t) / 2, 0, h / 2));
    p.parts.push_back(box((w - 2 * t) / 2, t / 2, h / 2, 0, (depth - t) / 2, h / 2));

    // boards include the outer bottom and top, like shelf rungs
    const int boards = rows + 1;
    const double gap = (h - t * boards) / rows;
    for (int k = 0; k < boards; ++k) {
        const double z = k * (gap + t) + t / 2;
        p.parts.push_back(box((w - 2 * t) / 2, (depth - t) / 2, t / 2, 0, -t / 2, z));
    }

    // per-row vertical dividers segmented between consecutive boards
    const double cell_w = (w - 2 * t - (cols - 1) * t) / cols;
    for (int r = 0; r < rows; ++r) {
        const double z0 = t + r * (gap + t);
        for (int cdiv = 1; cdiv < cols; ++cdiv) {
            const double x = -w / 2 + t + cdiv * cell_w + (cdiv - 1) * t + t / 2;
            p.parts.push_back(box(t / 2, (depth - t) / 2, gap / 2, x, -t / 2, z0 + gap / 2));
        }
    }
}

double articulation(const Primitive& p, const std::string& name) {
    for (const auto& [key, value] : p.articulation_values) {
        if (key == name) {
            return value;
        }
    }
    throw FormatError("primitive '" + p.id + "' has no articulation '" + name + "'");
}

}  // namespace

std::string to_string(PrimitiveKind kind) { return kKindNames[static_cast<std::size_t>(kind)]; }

PrimitiveKind kind_from_string(const std::string& name) {
    for (std::size_t i = 0; i < kPrimitiveKindCount; ++i) {
        if (name == kKindNames[i]) {
            return kAllKinds[i];
        }
    }
    throw UnknownKind("no primitive kind named '" + name + "'");
}

const std::array<PrimitiveKind, kPrimitiveKindCount>& all_kinds() { return kAllKinds; }

double param(const Primitive& p, const std::string& name) {
    for (const auto& [key, value] : p.params) {
        if (key == name) {
            return value;
        }
    }
    throw FormatError("primitive '" + p.id + "' has no param '" + name + "'");
}

const Range& ParamRanges::get(PrimitiveKind kind, const std::string& name) const {
    for (const auto& [key, range] : by_kind[static_cast<std::size_t>(kind)]) {
        if (key == name) {
            return range;
        }
    }
    throw FormatError("no range '" + name + "' configured for kind '" + to_string(kind) + "'");
}

ParamRanges default_ranges() {
    ParamRanges r;
    auto set = [&](PrimitiveKind kind, std::vector<std::pair<std::string, Range>> ranges) {
        r.by_kind[static_cast<std::size_t>(kind)] = std::move(ranges);
    };
    set(PrimitiveKind::Table, {{"width", {0.6, 1.6}},
                               {"depth", {0.5, 1.0}},
                               {"height", {0.6, 0.9}},
                               {"top_thickness", {0.02, 0.06}},
                               {"leg_square", {0.03, 0.08}}});
    // non-table kinds are tabletop-scale so several fit on one table
    set(PrimitiveKind::Cabinet, {{"width", {0.3, 0.5}},
                                 {"depth", {0.25, 0.4}},
                                 {"height", {0.35, 0.6}},
                                 {"thickness", {0.015, 0.025}},
                                 {"door_angle", {0.0, 2.0944}}});
    set(PrimitiveKind::Shelf, {{"width", {0.3, 0.6}},
                               {"depth", {0.2, 0.35}},
                               {"height", {0.45, 0.8}},
                               {"thickness", {0.015, 0.025}},
                               {"rungs", {2, 5}}});
    set(PrimitiveKind::OpenBox, {{"width", {0.2, 0.45}},
                                 {"depth", {0.2, 0.45}},
                                 {"height", {0.12, 0.3}},
                                 {"thickness", {0.01, 0.025}}});
    set(PrimitiveKind::Bin, {{"width", {0.25, 0.5}},
                             {"depth", {0.25, 0.5}},
                             {"height", {0.25, 0.5}},
                             {"thickness", {0.02, 0.04}}});
    set(PrimitiveKind::Microwave, {{"width", {0.35, 0.55}},
                                   {"depth", {0.28, 0.4}},
                                   {"height", {0.22, 0.35}},
                                   {"thickness", {0.015, 0.025}},
                                   {"door_angle", {0.0, 1.5708}}});
    set(PrimitiveKind::Dishwasher, {{"width", {0.4, 0.55}},
                                    {"depth", {0.35, 0.5}},
                                    {"height", {0.45, 0.65}},
                                    {"thickness", {0.02, 0.03}},
                                    {"door_angle", {0.0, 1.5708}}});
    set(PrimitiveKind::Dresser, {{"width", {0.35, 0.6}},
                                 {"depth", {0.25, 0.4}},
                                 {"height", {0.4, 0.65}},
                                 {"thickness", {0.015, 0.025}},
                                 {"drawers", {2, 3}},
                                 {"extension_frac", {0.0, 0.6}}});
    set(PrimitiveKind::Cubby, {{"width", {0.4, 0.7}},
                               {"depth", {0.2, 0.35}},
                               {"height", {0.4, 0.7}},
                               {"thickness", {0.015, 0.025}},
                               {"rows", {2, 3}},
                               {"cols", {2, 3}}});
    return r;
}

Primitive generate(PrimitiveKind kind, const ParamRanges& ranges, std::uint64_t seed) {
    Primitive p;
    p.kind = kind;
    p.id = to_string(kind) + "-" + std::to_string(seed);
    Rng rng(seed);
    ParamDraw d{kind, ranges, rng, p};
    switch (kind) {
        case PrimitiveKind::Table: build_table(d, p); break;
        case PrimitiveKind::Cabinet: build_cabinet(d, p); break;
        case PrimitiveKind::Shelf: build_shelf(d, p); break;
        case PrimitiveKind::OpenBox: build_open_container(d, p); break;
        case PrimitiveKind::Bin: build_open_container(d, p); break;
        case PrimitiveKind::Microwave: build_microwave(d, p); break;
        case PrimitiveKind::Dishwasher: build_dishwasher(d, p); break;
        case PrimitiveKind::Dresser: build_dresser(d, p); break;
        case PrimitiveKind::Cubby: build_cubby(d, p); break;
        default: throw UnknownKind("unhandled kind id " + std::to_string(static_cast<int>(kind)));
    }
    return p;
}

std::vector<CatalogEntry> catalog(const ParamRanges& ranges) {
    std::vector<CatalogEntry> out;
    for (PrimitiveKind kind : kAllKinds) {
        out.push_back({kind, ranges.by_kind[static_cast<std::size_t>(kind)]});
    }
    return out;
}

std::vector<Aabb> sample_regions(const Primitive& p) {
    std::vector<Aabb> out;
    const double c = kClearance;
    auto push_if_valid = [&](const Aabb& box) {
        if (box.lo.x < box.hi.x && box.lo.y < box.hi.y && box.lo.z < box.hi.z) {
            out.push_back(box);
        }
    };

    switch (p.kind) {
        case PrimitiveKind::Table: {
            const double w = param(p, "width");
            const double depth = param(p, "depth");
            const double h = param(p, "height");
            push_if_valid({{-w / 2 + c, -depth / 2 + c, h + 0.05},
                           {w / 2 - c, depth / 2 - c, h + 0.20}});
            break;
        }
        case PrimitiveKind::OpenBox:
        case PrimitiveKind::Bin: {
            const double w = param(p, "width");
            const double depth = param(p, "depth");
            const double h = param(p, "height");
            const double t = param(p, "thickness");
            push_if_valid({{-w / 2 + t + c, -depth / 2 + t + c, t + c},
                           {w / 2 - t - c, depth / 2 - t - c, h - c}});
            break;
        }
        case PrimitiveKind::Shelf: {
            const double w = param(p, "width");
            const double depth = param(p, "depth");
            const double h = param(p, "height");
            const double t = param(p, "thickness");
            const int rungs = static_cast<int>(param(p, "rungs"));
            const double gap = (h - t * rungs) / (rungs - 1);
            for (int k = 0; k + 1 < rungs; ++k) {
                const double z0 = k * (gap + t) + t;
                push_if_valid({{-w / 2 + t + c, -depth / 2 + c, z0 + c},
                               {w / 2 - t - c, depth / 2 - t - c, z0 + gap - c}});
            }
            break;
        }
        case PrimitiveKind::Cubby: {
            const double w = param(p, "width");
            const double depth = param(p, "depth");
            const double h = param(p, "height");
            const double t = param(p, "thickness");
            const int rows = static_cast<int>(param(p, "rows"));
            const int cols = static_cast<int>(param(p, "cols"));
            const int boards = rows + 1;
            const double gap = (h - t * boards) / rows;
            const double cell_w = (w - 2 * t - (cols - 1) * t) / cols;
            for (int r = 0; r < rows; ++r) {
                const double z0 = t + r * (gap + t);
                for (int col = 0; col < cols; ++col) {
                    const double x0 = -w / 2 + t + col * (cell_w + t);
                    push_if_valid({{x0 + c, -depth / 2 + c, z0 + c},
                                   {x0 + cell_w - c, depth / 2 - t - c, z0 + gap - c}});
                }
            }
            break;
        }
        case PrimitiveKind::Cabinet:
        case PrimitiveKind::Microwave:
        case PrimitiveKind::Dishwasher: {
            if (articulation(p, "door_angle") < kDoorOpenMin) {
                break;  // door blocks the opening
            }
            const double w = param(p, "width");
            const double depth = param(p, "depth");
            const double h = param(p, "height");
            const double t = param(p, "thickness");
            push_if_valid({{-w / 2 + t + c, -depth / 2 + c, t + c},
                           {w / 2 - t - c, depth / 2 - t - c, h - t - c}});
            break;
        }
        case PrimitiveKind::Dresser: {
            const double w = param(p, "width");
            const double depth = param(p, "depth");
            const double h = param(p, "height");
            const double t = param(p, "thickness");
            const int drawers = static_cast<int>(param(p, "drawers"));
            const double slot_h = (h - 2 * t) / drawers;
            const double dw = w - 2 * t - 2 * kDrawerSlack;
            const double dd = depth - t - kDrawerSlack;
            const double dh = slot_h - 2 * kDrawerSlack;
            for (int k = 0; k < drawers; ++k) {
                const double ext =
                    articulation(p, "drawer_" + std::to_string(k) + "_extension");
                const double z0 = t + k * slot_h + kDrawerSlack;
                // only the stretch pulled clear of the shell is reachable
                push_if_valid({{-dw / 2 + t + c, -depth / 2 - ext + t + c, z0 + t + c},
                               {dw / 2 - t - c, -depth / 2 - c, z0 + dh - c}});
                (void)dd;
            }
            break;
        }
    }
    return out;
}

using json_io::ordered_json;

nlohmann::ordered_json primitive_to_json(const Primitive& p) {
    ordered_json j;
    j["id"] = p.id;
    j["kind"] = to_string(p.kind);
    j["pose"] = json_io::pose_to_json(p.pose);
    j["parts"] = ordered_json::array();
    for (const Cuboid& c : p.parts) {
        j["parts"].push_back(json_io::cuboid_to_json(c));
    }
    j["articulation"] = ordered_json::array();
    for (const auto& [name, value] : p.articulation_values) {
        j["articulation"].push_back({name, value});
    }
    j["params"] = ordered_json::array();
    for (const auto& [name, value] : p.params) {
        j["params"].push_back({name, value});
    }
    return j;
}

Primitive primitive_from_json(const nlohmann::ordered_json& j) {
    Primitive p;
    try {
        p.id = j.at("id").get<std::string>();
        p.kind = kind_from_string(j.at("kind").get<std::string>());
        p.pose = json_io::pose_from_json(j.at("pose"));
        for (const auto& part : j.at("parts")) {
            p.parts.push_back(json_io::cuboid_from_json(part));
        }
        for (const auto& entry : j.at("articulation")) {
            p.articulation_values.emplace_back(entry.at(0).get<std::string>(),
                                               entry.at(1).get<double>());
        }
        for (const auto& entry : j.at("params")) {
            p.params.emplace_back(entry.at(0).get<std::string>(), entry.at(1).get<double>());
        }
    } catch (const Error&) {
        throw;
    } catch (const std::exception& e) {
        throw FormatError(std::string("primitive record: ") + e.what());
    }
    if (p.parts.empty()) {
        throw FormatError("primitive '" + p.id + "' has no parts");
    }
    return p;
}

ParamRanges load_ranges(const std::string& path) {
    const ordered_json j = json_io::load_document(path, "perfact-ranges", 1);
    ParamRanges out;
    try {
        const auto& kinds = j.at("kinds");
        for (std::size_t i = 0; i < kPrimitiveKindCount; ++i) {
            const auto& entry = kinds.at(kKindNames[i]);
            for (auto it = entry.begin(); it != entry.end(); ++it) {
                const double lo = it.value().at(0).get<double>();
                const double hi = it.value().at(1).get<double>();
                if (!(lo <= hi) || lo <= 0.0) {
                    // door angles and extensions may start at zero
                    if (!(lo == 0.0 && hi >= 0.0)) {
                        throw FormatError(path + ": bad range for " + it.key());
                    }
                }
                out.by_kind[i].emplace_back(it.key(), Range{lo, hi});
            }
        }
    } catch (const Error&) {
        throw;
    } catch (const std::exception& e) {
        throw FormatError(path + ": " + e.what());
    }
    return out;
}

void save_ranges(const ParamRanges& ranges, const std::string& path) {
    ordered_json j;
    j["format"] = "perfact-ranges";
    j["version"] = 1;
    j["kinds"] = ordered_json::object();
    for (std::size_t i = 0; i < kPrimitiveKindCount; ++i) {
        ordered_json entry = ordered_json::object();
        for (const auto& [name, range] : ranges.by_kind[i]) {
            entry[name] = {range.lo, range.hi};
        }
        j["kinds"][kKindNames[i]] = std::move(entry);
    }
    json_io::save_document(j, path);
}

}  // namespace perfact::assets
