#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "perfact/asset_factory.hpp"
#include "perfact/errors.hpp"

namespace perfact::llm {

struct LlmUnreachable : Error {
    explicit LlmUnreachable(const std::string& msg)
        : Error("LlmUnreachable", msg, ExitCode::LlmUnreachable) {}
};

struct MalformedReply : Error {
    explicit MalformedReply(const std::string& msg)
        : Error("MalformedReply", msg, ExitCode::DataFormat) {}
};

enum class SchemaTag { Counts, Placements, Description, Embedding };

struct LlmRequest {
    std::string system_prompt;
    std::string user_prompt;
    SchemaTag schema_tag = SchemaTag::Counts;
    double temperature = 0.2;
};

struct TableInfo {
    std::string id;
    double width = 0.0;
    double depth = 0.0;

    double area() const { return width * depth; }
};

struct CountsContext {
    std::string robot_name;
    double reach_radius = 0.0;
    std::vector<TableInfo> tables;
    std::vector<assets::PrimitiveKind> kinds;
    std::string hint;  // extra steering, e.g. a "more distinctive" reprompt
};

struct CountsReply {
    // one entry per table, in table order
    std::vector<std::vector<std::pair<assets::PrimitiveKind, int>>> tables;
    std::vector<std::pair<assets::PrimitiveKind, int>> ground;
};

// surface index into the table list, or kGroundSurface for the floor
inline constexpr int kGroundSurface = -1;

struct PlacementItem {
    std::string id;
    assets::PrimitiveKind kind = assets::PrimitiveKind::OpenBox;
    double dx = 0.0;  // xy footprint of the primitive's aabb
    double dy = 0.0;
    int surface = kGroundSurface;
};

struct PlacementsContext {
    std::string robot_name;
    double reach_radius = 0.0;
    std::vector<TableInfo> tables;
    std::vector<PlacementItem> items;
    std::string hint;
};

struct Placement {
    std::string id;
    int surface = kGroundSurface;
    double x = 0.0;  // table-local meters, or base-frame meters on the ground
    double y = 0.0;
    double yaw = 0.0;
};

struct PlacementReply {
    std::vector<Placement> placements;
};

inline constexpr std::size_t kEmbeddingDim = 256;

struct EmbeddingReply {
    std::vector<double> values;  // unit L2 norm, kEmbeddingDim wide
};

// Raw text completion. Implementations must be safe to call concurrently.
class LlmBackend {
public:
    virtual ~LlmBackend() = default;
    virtual std::string complete(const LlmRequest& request) = 0;
};

// Offline backend: a pure function of (request, seed) that emits the same
// reply grammar a live model is prompted for.
class StubBackend : public LlmBackend {
public:
    explicit StubBackend(std::uint64_t seed) : seed_(seed) {}
    std::string complete(const LlmRequest& request) override;

private:
    std::uint64_t seed_;
};

struct HttpBackendOptions {
    std::string model = "gpt-4";
    int max_in_flight = 4;
    int timeout_seconds = 60;
    std::string api_key_env = "PERFACT_LLM_API_KEY";
};

class HttpBackend : public LlmBackend {
public:
    explicit HttpBackend(const std::string& endpoint, HttpBackendOptions options = {});
    ~HttpBackend() override;
    std::string complete(const LlmRequest& request) override;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// Reply grammar parsers. Lines that do not match the grammar are treated as
// reasoning text and skipped; validation failures throw MalformedReply.
CountsReply parse_counts_reply(const std::string& text, std::size_t n_tables);
PlacementReply parse_placements_reply(const std::string& text,
                                      const std::vector<PlacementItem>& items);
std::string parse_description_reply(const std::string& text);
EmbeddingReply parse_embedding_reply(const std::string& text);

// Deterministic 256-bin hashed bag-of-tokens embedding, L2-normalized.
std::vector<double> hashed_embedding(const std::string& text);
double cosine(const std::vector<double>& a, const std::vector<double>& b);

class LlmGateway {
public:
    explicit LlmGateway(std::shared_ptr<LlmBackend> backend) : backend_(std::move(backend)) {}

    CountsReply query_counts(const CountsContext& ctx);
    PlacementReply query_placements(const PlacementsContext& ctx);
    std::string describe_workspace(const std::string& summary);
    EmbeddingReply embed(const std::string& text);

    // fnv1a64 hex digest of every raw reply seen, for scene provenance
    std::string transcript_digest() const;
    void reset_digest();

private:
    std::string exchange(LlmRequest request, const std::function<void(const std::string&)>& check);

    std::shared_ptr<LlmBackend> backend_;
    std::uint64_t digest_ = 0xcbf29ce484222325ull;
};

}  // namespace perfact::llm
