#pragma once

#include <cstdint>
#include <mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "perfact/asset_factory.hpp"
#include "perfact/errors.hpp"
#include "perfact/kinematics.hpp"
#include "perfact/llm_gateway.hpp"

namespace perfact::scene {

struct GenerationFailed : Error {
    explicit GenerationFailed(const std::string& msg) : Error("GenerationFailed", msg) {}
};

struct Workspace {
    std::string id;
    std::string robot_name;
    std::vector<assets::Primitive> tables;
    std::vector<assets::Primitive> primitives;  // on tables and on the ground
    std::string description;
    std::vector<double> embedding;
    std::uint64_t seed = 0;
    std::string llm_digest;
};

// Accepts a workspace only while its embedding stays dissimilar (max cosine
// below the threshold) to everything accepted before. check_and_insert is
// atomic so concurrent generators share one gate.
class SimilarityGate {
public:
    explicit SimilarityGate(double threshold = 0.9) : threshold_(threshold) {}

    double threshold() const { return threshold_; }
    std::size_t size() const;
    double max_cosine(const std::vector<double>& embedding) const;
    bool check_and_insert(const std::vector<double>& embedding);

private:
    double threshold_;
    mutable std::mutex mu_;
    std::vector<std::vector<double>> store_;
};

struct SynthOptions {
    assets::ParamRanges ranges = assets::default_ranges();
    int max_attempts = 5;
    double resolution_step = 0.01;
};

Workspace generate_workspace(const kin::RobotModel& robot, SimilarityGate& gate,
                             llm::LlmGateway& gateway, std::uint64_t seed,
                             const SynthOptions& options = {});

// Every obstacle cuboid in the workspace at its world pose.
std::vector<geom::PosedPart> workspace_obstacles(const Workspace& ws);

// Same content grouped one compound per table/primitive; collision-query view.
std::vector<geom::FixedCompound> workspace_compounds(const Workspace& ws);

// n points distributed over all obstacles proportional to surface area.
geom::PointCloud scene_point_cloud(const Workspace& ws, std::size_t n, std::uint64_t seed);

nlohmann::ordered_json workspace_to_json(const Workspace& ws);
Workspace workspace_from_json(const nlohmann::ordered_json& j);
void save_workspace(const Workspace& ws, const std::string& path);
Workspace load_workspace(const std::string& path);

}  // namespace perfact::scene
