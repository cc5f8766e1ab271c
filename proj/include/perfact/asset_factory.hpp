#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "perfact/errors.hpp"
#include "perfact/geom.hpp"

namespace perfact::assets {

enum class PrimitiveKind {
    Table,
    Cabinet,
    Shelf,
    OpenBox,
    Bin,
    Microwave,
    Dishwasher,
    Dresser,
    Cubby,
};

inline constexpr std::size_t kPrimitiveKindCount = 9;

struct UnknownKind : Error {
    explicit UnknownKind(const std::string& msg) : Error("UnknownKind", msg, ExitCode::DataFormat) {}
};

std::string to_string(PrimitiveKind kind);
PrimitiveKind kind_from_string(const std::string& name);
const std::array<PrimitiveKind, kPrimitiveKindCount>& all_kinds();

struct Primitive {
    std::string id;
    PrimitiveKind kind = PrimitiveKind::Table;
    std::vector<geom::Cuboid> parts;       // local frame, resting on z=0
    geom::Pose pose;                       // world placement
    std::vector<std::pair<std::string, double>> articulation_values;
    std::vector<std::pair<std::string, double>> params;  // sampled dimensions, draw order
};

// Named dimension value from the sampled record.
double param(const Primitive& p, const std::string& name);

struct Range {
    double lo = 0.0;
    double hi = 0.0;
};

struct ParamRanges {
    // index by PrimitiveKind; parameter order is the draw order
    std::array<std::vector<std::pair<std::string, Range>>, kPrimitiveKindCount> by_kind;

    const Range& get(PrimitiveKind kind, const std::string& name) const;
};

ParamRanges default_ranges();
ParamRanges load_ranges(const std::string& path);
void save_ranges(const ParamRanges& ranges, const std::string& path);

Primitive generate(PrimitiveKind kind, const ParamRanges& ranges, std::uint64_t seed);

struct CatalogEntry {
    PrimitiveKind kind;
    std::vector<std::pair<std::string, Range>> ranges;
};

std::vector<CatalogEntry> catalog(const ParamRanges& ranges);

// Axis-aligned pose-sampling boxes in the primitive's local frame: the hover
// band over a table top, or interior cavities the arm can actually enter
// (door kinds contribute none until the frozen door is open past 1 rad).
// Empty result means the primitive offers nowhere to sample.
std::vector<geom::Aabb> sample_regions(const Primitive& p);

nlohmann::ordered_json primitive_to_json(const Primitive& p);
Primitive primitive_from_json(const nlohmann::ordered_json& j);

}  // namespace perfact::assets
