#pragma once

// Shared JSON encoders for the geometric types that appear in every
// structured-text file the tools read or write.

#include <json.hpp>

#include "perfact/errors.hpp"
#include "perfact/geom.hpp"

namespace perfact::json_io {

using nlohmann::ordered_json;

inline ordered_json pose_to_json(const geom::Pose& p) {
    return ordered_json{{"position", {p.position.x, p.position.y, p.position.z}},
                        {"orientation",
                         {p.orientation.w, p.orientation.x, p.orientation.y, p.orientation.z}}};
}

inline geom::Pose pose_from_json(const ordered_json& j) {
    geom::Pose p;
    const auto& pos = j.at("position");
    const auto& q = j.at("orientation");
    p.position = {pos.at(0).get<double>(), pos.at(1).get<double>(), pos.at(2).get<double>()};
    p.orientation = geom::Quat(q.at(0).get<double>(), q.at(1).get<double>(),
                               q.at(2).get<double>(), q.at(3).get<double>());
    return p;
}

inline ordered_json cuboid_to_json(const geom::Cuboid& c) {
    return ordered_json{
        {"half_extents", {c.half_extents.x, c.half_extents.y, c.half_extents.z}},
        {"local_pose", pose_to_json(c.local_pose)}};
}

inline geom::Cuboid cuboid_from_json(const ordered_json& j) {
    geom::Cuboid c;
    const auto& h = j.at("half_extents");
    c.half_extents = {h.at(0).get<double>(), h.at(1).get<double>(), h.at(2).get<double>()};
    c.local_pose = pose_from_json(j.at("local_pose"));
    return c;
}

// Read-parse wrapper shared by every loader: missing file -> IoError,
// unparseable or mistagged content -> FormatError / VersionMismatch.
ordered_json load_document(const std::string& path, const std::string& expected_format,
                           int expected_version);

void save_document(const ordered_json& j, const std::string& path);

}  // namespace perfact::json_io
