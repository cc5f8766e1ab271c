#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "perfact/errors.hpp"
#include "perfact/expert_planner.hpp"
#include "perfact/geom.hpp"
#include "perfact/kinematics.hpp"

namespace perfact::data {

struct DegenerateTrajectory : Error {
    explicit DegenerateTrajectory(const std::string& msg)
        : Error("DegenerateTrajectory", msg, ExitCode::DataFormat) {}
};

// One supervised step: at q_t, predict the next `chunk` delta-joint actions.
// The tail past the trajectory end is zero-padded with mask=0.
struct ChunkSample {
    std::string workspace_id;
    std::uint64_t workspace_seed = 0;
    kin::Config q_t;
    kin::Config q_goal;
    std::vector<double> deltas;      // chunk x dof, row-major
    std::vector<std::uint8_t> mask;  // chunk entries, 1 = real step

    bool operator==(const ChunkSample&) const = default;
};

struct ShardHeader {
    std::string robot_name;
    int chunk_len = 0;
    int dof = 0;
    std::uint64_t count = 0;

    bool operator==(const ShardHeader&) const = default;
};

struct Shard {
    ShardHeader header;
    std::vector<ChunkSample> records;
};

// One sample per waypoint index t in [0, len-2].
std::vector<ChunkSample> chunk_trajectory(const expert::Trajectory& traj, int chunk_len,
                                          std::uint64_t workspace_seed);

// Validates that every sample agrees on chunk length and dof.
Shard make_shard(const std::string& robot_name, std::vector<ChunkSample> samples);

void write_shard(const Shard& shard, const std::string& path);
Shard read_shard(const std::string& path);

void save_point_cloud(std::span<const geom::Vec3> points, const std::string& path);
std::vector<geom::Vec3> load_point_cloud(const std::string& path);

struct SampleRef {
    std::size_t shard = 0;
    std::size_t record = 0;

    bool operator==(const SampleRef&) const = default;
};

// Seeded shuffle each epoch; every record appears exactly once per epoch and
// batches carry batch_size refs except a final partial one.
class BatchStream {
  public:
    BatchStream(std::span<const Shard> shards, std::size_t batch_size, std::uint64_t seed);

    std::vector<SampleRef> next_batch();
    std::size_t epoch() const { return epoch_; }
    std::size_t total() const { return order_.size(); }

  private:
    void shuffle();

    std::vector<SampleRef> order_;
    std::size_t batch_size_;
    std::uint64_t seed_;
    std::size_t epoch_ = 0;
    std::size_t cursor_ = 0;
};

}  // namespace perfact::data
