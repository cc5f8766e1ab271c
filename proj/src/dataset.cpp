#include "perfact/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

#include "perfact/rng.hpp"

namespace perfact::data {
namespace {

static_assert(std::endian::native == std::endian::little,
              "shard payloads are little-endian");

constexpr char kShardMagic[4] = {'P', 'F', 'D', 'S'};
constexpr char kCloudMagic[4] = {'P', 'F', 'P', 'C'};
constexpr std::uint32_t kShardVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void put_u64(std::ostream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void put_f32(std::ostream& out, float v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void put_string(std::ostream& out, const std::string& s) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

struct Reader {
    std::string buf;
    std::size_t at = 0;
    std::string path;

    bool can_read(std::size_t n) const { return at + n <= buf.size(); }

    template <typename T>
    T take() {
        if (!can_read(sizeof(T))) throw CorruptIndex(path + ": truncated");
        T v;
        std::memcpy(&v, buf.data() + at, sizeof(T));
        at += sizeof(T);
        return v;
    }

    std::string take_string() {
        const std::uint32_t n = take<std::uint32_t>();
        if (!can_read(n)) throw CorruptIndex(path + ": truncated");
        std::string s = buf.substr(at, n);
        at += n;
        return s;
    }
};

Reader slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    Reader r;
    r.path = path;
    r.buf.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    return r;
}

}  // namespace

std::vector<ChunkSample> chunk_trajectory(const expert::Trajectory& traj, int chunk_len,
                                          std::uint64_t workspace_seed) {
    if (chunk_len < 1) throw DegenerateTrajectory("chunk length must be at least 1");
    const std::vector<kin::Config>& wp = traj.waypoints;
    if (wp.size() < 2)
        throw DegenerateTrajectory("trajectory in " + traj.workspace_id + " has " +
                                   std::to_string(wp.size()) + " waypoints; need at least 2");
    const std::size_t dof = wp[0].size();
    const std::size_t horizon = static_cast<std::size_t>(chunk_len);

    std::vector<ChunkSample> samples;
    samples.reserve(wp.size() - 1);
    for (std::size_t t = 0; t + 1 < wp.size(); ++t) {
        ChunkSample s;
        s.workspace_id = traj.workspace_id;
        s.workspace_seed = workspace_seed;
        s.q_t = wp[t];
        s.q_goal = traj.problem.q_goal;
        s.deltas.assign(horizon * dof, 0.0);
        s.mask.assign(horizon, 0);
        const std::size_t real = std::min(horizon, wp.size() - 1 - t);
        for (std::size_t i = 0; i < real; ++i) {
            s.mask[i] = 1;
            for (std::size_t j = 0; j < dof; ++j)
                s.deltas[i * dof + j] = wp[t + i + 1][j] - wp[t + i][j];
        }
        samples.push_back(std::move(s));
    }
    return samples;
}

Shard make_shard(const std::string& robot_name, std::vector<ChunkSample> samples) {
    Shard shard;
    shard.header.robot_name = robot_name;
    shard.header.count = samples.size();
    if (!samples.empty()) {
        shard.header.chunk_len = static_cast<int>(samples[0].mask.size());
        shard.header.dof = static_cast<int>(samples[0].q_t.size());
    }
    const std::size_t horizon = static_cast<std::size_t>(shard.header.chunk_len);
    const std::size_t dof = static_cast<std::size_t>(shard.header.dof);
    for (const ChunkSample& s : samples) {
        if (s.mask.size() != horizon || s.q_t.size() != dof || s.q_goal.size() != dof ||
            s.deltas.size() != horizon * dof)
            throw FormatError("shard samples disagree on chunk length or dof");
    }
    shard.records = std::move(samples);
    return shard;
}

void write_shard(const Shard& shard, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out.write(kShardMagic, 4);
    put_u32(out, kShardVersion);
    put_string(out, shard.header.robot_name);
    put_u32(out, static_cast<std::uint32_t>(shard.header.chunk_len));
    put_u32(out, static_cast<std::uint32_t>(shard.header.dof));
    put_u64(out, shard.header.count);
    const std::streampos index_slot = out.tellp();
    put_u64(out, 0);  // patched below with the index offset

    std::vector<std::uint64_t> offsets;
    offsets.reserve(shard.records.size());
    for (const ChunkSample& s : shard.records) {
        offsets.push_back(static_cast<std::uint64_t>(out.tellp()));
        put_string(out, s.workspace_id);
        put_u64(out, s.workspace_seed);
        for (double v : s.q_t) put_f32(out, static_cast<float>(v));
        for (double v : s.q_goal) put_f32(out, static_cast<float>(v));
        for (double v : s.deltas) put_f32(out, static_cast<float>(v));
        for (std::uint8_t m : s.mask) out.put(static_cast<char>(m));
    }
    const std::uint64_t index_offset = static_cast<std::uint64_t>(out.tellp());
    for (std::uint64_t off : offsets) put_u64(out, off);
    out.seekp(index_slot);
    put_u64(out, index_offset);
    if (!out) throw IoError("write failed for " + path);
}

Shard read_shard(const std::string& path) {
    Reader r = slurp(path);
    if (!r.can_read(4) || std::memcmp(r.buf.data(), kShardMagic, 4) != 0)
        throw FormatError(path + ": not a chunk shard");
    r.at = 4;
    const std::uint32_t version = r.take<std::uint32_t>();
    if (version != kShardVersion)
        throw VersionMismatch(path + ": shard version " + std::to_string(version) +
                              ", expected " + std::to_string(kShardVersion));
    Shard shard;
    shard.header.robot_name = r.take_string();
    shard.header.chunk_len = static_cast<int>(r.take<std::uint32_t>());
    shard.header.dof = static_cast<int>(r.take<std::uint32_t>());
    shard.header.count = r.take<std::uint64_t>();
    const std::uint64_t index_offset = r.take<std::uint64_t>();
    const std::size_t body_start = r.at;

    if (index_offset < body_start || index_offset + 8 * shard.header.count > r.buf.size())
        throw CorruptIndex(path + ": index out of bounds");
    r.at = static_cast<std::size_t>(index_offset);
    std::vector<std::uint64_t> offsets(shard.header.count);
    for (std::uint64_t& off : offsets) off = r.take<std::uint64_t>();
    std::uint64_t prev = 0;
    for (std::uint64_t off : offsets) {
        if (off < body_start || off >= index_offset || off <= prev)
            throw CorruptIndex(path + ": index offsets not monotone");
        prev = off;
    }

    const std::size_t horizon = static_cast<std::size_t>(shard.header.chunk_len);
    const std::size_t dof = static_cast<std::size_t>(shard.header.dof);
    shard.records.reserve(offsets.size());
    for (std::uint64_t off : offsets) {
        r.at = static_cast<std::size_t>(off);
        ChunkSample s;
        s.workspace_id = r.take_string();
        s.workspace_seed = r.take<std::uint64_t>();
        s.q_t.resize(dof);
        for (double& v : s.q_t) v = r.take<float>();
        s.q_goal.resize(dof);
        for (double& v : s.q_goal) v = r.take<float>();
        s.deltas.resize(horizon * dof);
        for (double& v : s.deltas) v = r.take<float>();
        s.mask.resize(horizon);
        for (std::uint8_t& m : s.mask) m = static_cast<std::uint8_t>(r.take<char>());
        shard.records.push_back(std::move(s));
    }
    return shard;
}

void save_point_cloud(std::span<const geom::Vec3> points, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out.write(kCloudMagic, 4);
    put_u32(out, static_cast<std::uint32_t>(points.size()));
    for (const geom::Vec3& p : points) {
        put_f32(out, static_cast<float>(p.x));
        put_f32(out, static_cast<float>(p.y));
        put_f32(out, static_cast<float>(p.z));
    }
    if (!out) throw IoError("write failed for " + path);
}

std::vector<geom::Vec3> load_point_cloud(const std::string& path) {
    Reader r = slurp(path);
    if (!r.can_read(4) || std::memcmp(r.buf.data(), kCloudMagic, 4) != 0)
        throw FormatError(path + ": not a point cloud");
    r.at = 4;
    const std::uint32_t count = r.take<std::uint32_t>();
    if (!r.can_read(static_cast<std::size_t>(count) * 12))
        throw CorruptIndex(path + ": truncated");
    std::vector<geom::Vec3> points(count);
    for (geom::Vec3& p : points) {
        p.x = r.take<float>();
        p.y = r.take<float>();
        p.z = r.take<float>();
    }
    return points;
}

BatchStream::BatchStream(std::span<const Shard> shards, std::size_t batch_size,
                         std::uint64_t seed)
    : batch_size_(batch_size), seed_(seed) {
    for (std::size_t s = 0; s < shards.size(); ++s)
        for (std::size_t i = 0; i < shards[s].records.size(); ++i) order_.push_back({s, i});
    shuffle();
}

void BatchStream::shuffle() {
    Rng rng(mix_seed(seed_, static_cast<std::uint64_t>(epoch_)));
    for (std::size_t i = order_.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.uniform_int(static_cast<int>(i)));
        std::swap(order_[i - 1], order_[j]);
    }
}

std::vector<SampleRef> BatchStream::next_batch() {
    if (order_.empty()) return {};
    if (cursor_ >= order_.size()) {
        cursor_ = 0;
        ++epoch_;
        shuffle();
    }
    const std::size_t end = std::min(cursor_ + batch_size_, order_.size());
    std::vector<SampleRef> batch(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                 order_.begin() + static_cast<std::ptrdiff_t>(end));
    cursor_ = end;
    return batch;
}

}  // namespace perfact::data
