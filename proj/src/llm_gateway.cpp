#include "perfact/llm_gateway.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <cstdlib>
#include <mutex>
#include <optional>
#include <sstream>

#include <httplib.h>
#include <json.hpp>

#include "perfact/rng.hpp"

namespace perfact::llm {

namespace {

constexpr double kPi = 3.14159265358979323846;

const char* kCountsSystem =
    "You stock robot manipulation workspaces with household objects.\n"
    "Given the robot, its tables, and the available object kinds, decide how many of\n"
    "each kind to put on every table. Small tables get fewer objects; leave room to\n"
    "reach between them. If there are fewer than four tables, also list objects to\n"
    "place on the ground near the robot; with four tables, list none.\n"
    "Reason step by step, then finish with exactly one line per table in the form\n"
    "`TABLE <index>: <kind>=<count>, <kind>=<count>` and at most one line\n"
    "`GROUND: <kind>=<count>, ...`. Counts are small positive integers.\n"
    "Example reply:\n"
    "The first table is large, so it can hold a box and a microwave...\n"
    "TABLE 0: open_box=2, microwave=1\n"
    "TABLE 1: bin=1\n"
    "GROUND: cabinet=1\n";

const char* kPlacementsSystem =
    "You arrange objects on tables for a robot manipulation workspace.\n"
    "Each item lists its xy footprint and its surface (a table index or ground).\n"
    "Choose positions in the surface's local frame, origin at the table center,\n"
    "keeping footprints inside the table and out of each other. Ground positions\n"
    "are relative to the robot base. Reason step by step, then finish with one\n"
    "line per item: `PLACE <id>: x=<meters> y=<meters> yaw=<radians>`.\n"
    "Example reply:\n"
    "The box is wide, so it goes near the back edge...\n"
    "PLACE open_box-3: x=0.210000 y=-0.150000 yaw=1.570796\n";

const char* kDescriptionSystem =
    "You summarize robot workspaces. Given the object counts per surface, reply\n"
    "with reasoning followed by exactly one line `DESC: <one distinctive sentence>`.\n"
    "Example reply:\n"
    "Two tables, mostly boxes...\n"
    "DESC: a twin-table packing station crowded with open boxes and one microwave\n";

const char* kEmbeddingSystem =
    "You embed text. Reply with exactly one line `EMBED: <256 space-separated\n"
    "numbers>` giving a unit-norm vector for the given text.\n";

std::vector<std::string> split_lines(const std::string& text) {
    std::vector<std::string> lines;
    std::string cur;
    std::istringstream in(text);
    while (std::getline(in, cur)) {
        if (!cur.empty() && cur.back() == '\r') cur.pop_back();
        lines.push_back(cur);
    }
    return lines;
}

bool starts_with(const std::string& s, const std::string& prefix) {
    return s.rfind(prefix, 0) == 0;
}

// parse "key=value" tokens out of a whitespace-separated tail
double field(const std::string& line, const std::string& key) {
    const std::string needle = key + "=";
    auto pos = line.find(needle);
    if (pos == std::string::npos) throw MalformedReply("missing field " + key + " in: " + line);
    return std::stod(line.substr(pos + needle.size()));
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::string fmt_full(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// ---- stub reply synthesis ----

struct StubData {
    std::string robot;
    double reach = 0.0;
    std::vector<std::pair<double, double>> tables;  // width, depth
    std::vector<assets::PrimitiveKind> kinds;
    std::vector<PlacementItem> items;
    std::string text;  // description summary or embedding input
};

StubData parse_data_block(const std::string& prompt) {
    StubData d;
    bool in_block = false;
    for (const std::string& line : split_lines(prompt)) {
        if (line == "DATA") {
            in_block = true;
            continue;
        }
        if (!in_block) continue;
        if (line == "END") break;
        if (starts_with(line, "robot: ")) {
            std::istringstream in(line.substr(7));
            in >> d.robot;
            d.reach = field(line, "reach");
        } else if (starts_with(line, "table ")) {
            d.tables.emplace_back(field(line, "width"), field(line, "depth"));
        } else if (starts_with(line, "kinds: ")) {
            std::istringstream in(line.substr(7));
            std::string name;
            while (in >> name) d.kinds.push_back(assets::kind_from_string(name));
        } else if (starts_with(line, "item ")) {
            PlacementItem item;
            std::istringstream in(line.substr(5));
            in >> item.id;
            if (!item.id.empty() && item.id.back() == ':') item.id.pop_back();
            std::string kind_name = line.substr(line.find("kind=") + 5);
            item.kind = assets::kind_from_string(kind_name.substr(0, kind_name.find(' ')));
            item.dx = field(line, "dx");
            item.dy = field(line, "dy");
            const auto spos = line.find("surface=");
            const std::string surf = line.substr(spos + 8);
            item.surface = surf == "ground" ? kGroundSurface : std::stoi(surf);
            d.items.push_back(item);
        } else if (starts_with(line, "text: ")) {
            d.text = line.substr(6);
        }
    }
    return d;
}

std::string stub_counts(const StubData& d, Rng& rng) {
    std::ostringstream out;
    out << "Balancing clutter across " << d.tables.size() << " tables.\n";
    for (std::size_t i = 0; i < d.tables.size(); ++i) {
        std::size_t want = 2 + rng.uniform_int(4);
        want = std::min(want, d.kinds.size());
        std::vector<std::size_t> order(d.kinds.size());
        for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
        for (std::size_t k = 0; k < order.size(); ++k) {
            std::swap(order[k], order[k + rng.uniform_int(order.size() - k)]);
        }
        out << "TABLE " << i << ": ";
        for (std::size_t k = 0; k < want; ++k) {
            if (k) out << ", ";
            out << assets::to_string(d.kinds[order[k]]) << "=" << 1 + rng.uniform_int(3);
        }
        out << "\n";
    }
    if (d.tables.size() < 4 && !d.kinds.empty()) {
        const std::size_t want = std::min<std::size_t>(1 + rng.uniform_int(2), d.kinds.size());
        std::vector<std::size_t> order(d.kinds.size());
        for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
        for (std::size_t k = 0; k < order.size(); ++k) {
            std::swap(order[k], order[k + rng.uniform_int(order.size() - k)]);
        }
        out << "GROUND: ";
        for (std::size_t k = 0; k < want; ++k) {
            if (k) out << ", ";
            out << assets::to_string(d.kinds[order[k]]) << "=" << 1 + rng.uniform_int(2);
        }
        out << "\n";
    }
    return out.str();
}

std::string stub_placements(const StubData& d, Rng& rng) {
    std::ostringstream out;
    out << "Tiling each table so footprints stay clear of the edges.\n";
    std::vector<std::vector<std::size_t>> per_table(d.tables.size());
    std::vector<std::size_t> ground;
    for (std::size_t i = 0; i < d.items.size(); ++i) {
        const int s = d.items[i].surface;
        if (s == kGroundSurface) {
            ground.push_back(i);
        } else {
            per_table.at(static_cast<std::size_t>(s)).push_back(i);
        }
    }
    std::vector<std::string> lines(d.items.size());
    for (std::size_t t = 0; t < per_table.size(); ++t) {
        const auto& slot = per_table[t];
        if (slot.empty()) continue;
        const auto cols = static_cast<std::size_t>(std::ceil(std::sqrt(double(slot.size()))));
        const auto rows = (slot.size() + cols - 1) / cols;
        const double cw = d.tables[t].first / double(cols);
        const double cd = d.tables[t].second / double(rows);
        for (std::size_t j = 0; j < slot.size(); ++j) {
            const double x = -d.tables[t].first / 2 + (double(j % cols) + 0.5) * cw +
                             (rng.uniform() - 0.5) * 0.3 * cw;
            const double y = -d.tables[t].second / 2 + (double(j / cols) + 0.5) * cd +
                             (rng.uniform() - 0.5) * 0.3 * cd;
            const double yaw = double(rng.uniform_int(4)) * (kPi / 2);
            lines[slot[j]] = "PLACE " + d.items[slot[j]].id + ": x=" + fmt(x) + " y=" + fmt(y) +
                             " yaw=" + fmt_full(yaw);
        }
    }
    for (std::size_t g : ground) {
        const double r = d.reach * (0.6 + 0.3 * rng.uniform());
        const double a = 2 * kPi * rng.uniform();
        const double yaw = double(rng.uniform_int(4)) * (kPi / 2);
        lines[g] = "PLACE " + d.items[g].id + ": x=" + fmt(r * std::cos(a)) +
                   " y=" + fmt(r * std::sin(a)) + " yaw=" + fmt_full(yaw);
    }
    for (const std::string& l : lines) {
        if (!l.empty()) out << l << "\n";
    }
    return out.str();
}

std::string stub_description(const StubData& d, Rng& rng) {
    char sig[16];
    std::snprintf(sig, sizeof sig, "%08llx", static_cast<unsigned long long>(rng.next_u64() >> 32));
    return "Condensing the layout.\nDESC: " + d.text + " signature " + sig + "\n";
}

std::string stub_embedding(const StubData& d) {
    const std::vector<double> v = hashed_embedding(d.text);
    std::string out = "EMBED:";
    for (double x : v) {
        out += " ";
        out += fmt_full(x);
    }
    out += "\n";
    return out;
}

// ---- shared grammar parsing helpers ----

std::vector<std::pair<assets::PrimitiveKind, int>> parse_kind_counts(const std::string& tail,
                                                                     const std::string& line) {
    std::vector<std::pair<assets::PrimitiveKind, int>> out;
    std::istringstream in(tail);
    std::string entry;
    while (std::getline(in, entry, ',')) {
        const auto eq = entry.find('=');
        if (eq == std::string::npos) throw MalformedReply("expected kind=count in: " + line);
        std::string name = entry.substr(0, eq);
        name.erase(0, name.find_first_not_of(' '));
        name.erase(name.find_last_not_of(' ') + 1);
        int count = 0;
        try {
            count = std::stoi(entry.substr(eq + 1));
        } catch (const std::exception&) {
            throw MalformedReply("bad count in: " + line);
        }
        if (count < 0) throw MalformedReply("negative count in: " + line);
        try {
            out.emplace_back(assets::kind_from_string(name), count);
        } catch (const assets::UnknownKind&) {
            throw MalformedReply("unknown kind '" + name + "' in: " + line);
        }
    }
    if (out.empty()) throw MalformedReply("empty count list in: " + line);
    return out;
}

}  // namespace

std::vector<double> hashed_embedding(const std::string& text) {
    std::vector<double> v(kEmbeddingDim, 0.0);
    std::string token;
    auto flush = [&] {
        if (!token.empty()) {
            v[fnv1a64(token) % kEmbeddingDim] += 1.0;
            token.clear();
        }
    };
    for (char c : text) {
        if (std::isalnum(static_cast<unsigned char>(c))) {
            token += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        } else {
            flush();
        }
    }
    flush();
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm > 0.0) {
        for (double& x : v) x /= norm;
    }
    return v;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    double num = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size() && i < b.size(); ++i) {
        num += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return num / std::sqrt(na * nb);
}

std::string StubBackend::complete(const LlmRequest& request) {
    const StubData d = parse_data_block(request.user_prompt);
    Rng rng(mix_seed(seed_, fnv1a64(request.user_prompt)));
    switch (request.schema_tag) {
        case SchemaTag::Counts: return stub_counts(d, rng);
        case SchemaTag::Placements: return stub_placements(d, rng);
        case SchemaTag::Description: return stub_description(d, rng);
        case SchemaTag::Embedding: return stub_embedding(d);
    }
    throw MalformedReply("unknown schema tag");
}

CountsReply parse_counts_reply(const std::string& text, std::size_t n_tables) {
    CountsReply reply;
    reply.tables.assign(n_tables, {});
    std::vector<bool> seen(n_tables, false);
    bool ground_seen = false;
    for (const std::string& line : split_lines(text)) {
        if (starts_with(line, "TABLE ")) {
            const auto colon = line.find(':');
            if (colon == std::string::npos) continue;  // prose that happens to start alike
            std::size_t index = 0;
            try {
                index = std::stoul(line.substr(6, colon - 6));
            } catch (const std::exception&) {
                continue;
            }
            if (index >= n_tables) throw MalformedReply("table index out of range: " + line);
            if (seen[index]) throw MalformedReply("duplicate table line: " + line);
            seen[index] = true;
            reply.tables[index] = parse_kind_counts(line.substr(colon + 1), line);
        } else if (starts_with(line, "GROUND:")) {
            if (ground_seen) throw MalformedReply("duplicate ground line: " + line);
            ground_seen = true;
            reply.ground = parse_kind_counts(line.substr(7), line);
        }
    }
    for (std::size_t i = 0; i < n_tables; ++i) {
        if (!seen[i]) throw MalformedReply("missing TABLE " + std::to_string(i) + " line");
    }
    if (n_tables >= 4 && !reply.ground.empty()) {
        throw MalformedReply("ground objects listed although four tables are present");
    }
    return reply;
}

PlacementReply parse_placements_reply(const std::string& text,
                                      const std::vector<PlacementItem>& items) {
    std::vector<std::optional<Placement>> found(items.size());
    for (const std::string& line : split_lines(text)) {
        if (!starts_with(line, "PLACE ")) continue;
        const auto colon = line.find(':');
        if (colon == std::string::npos) continue;
        const std::string id = line.substr(6, colon - 6);
        Placement p;
        p.id = id;
        try {
            p.x = field(line, "x");
            p.y = field(line, "y");
            p.yaw = field(line, "yaw");
        } catch (const MalformedReply&) {
            throw;
        } catch (const std::exception&) {
            throw MalformedReply("bad number in: " + line);
        }
        if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.yaw)) {
            throw MalformedReply("non-finite placement in: " + line);
        }
        bool matched = false;
        for (std::size_t i = 0; i < items.size(); ++i) {
            if (items[i].id == id) {
                if (found[i]) throw MalformedReply("duplicate placement for " + id);
                p.surface = items[i].surface;
                found[i] = p;
                matched = true;
                break;
            }
        }
        if (!matched) throw MalformedReply("placement for unknown item " + id);
    }
    PlacementReply reply;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (!found[i]) throw MalformedReply("missing placement for " + items[i].id);
        reply.placements.push_back(*found[i]);
    }
    return reply;
}

std::string parse_description_reply(const std::string& text) {
    std::string desc;
    for (const std::string& line : split_lines(text)) {
        if (starts_with(line, "DESC: ") && line.size() > 6) desc = line.substr(6);
    }
    if (desc.empty()) throw MalformedReply("no DESC line in reply");
    return desc;
}

EmbeddingReply parse_embedding_reply(const std::string& text) {
    std::string payload;
    for (const std::string& line : split_lines(text)) {
        if (starts_with(line, "EMBED:")) payload = line.substr(6);
    }
    if (payload.empty()) throw MalformedReply("no EMBED line in reply");
    EmbeddingReply reply;
    std::istringstream in(payload);
    double v = 0.0;
    while (in >> v) {
        if (!std::isfinite(v)) throw MalformedReply("non-finite embedding value");
        reply.values.push_back(v);
    }
    if (reply.values.size() != kEmbeddingDim) {
        throw MalformedReply("embedding has " + std::to_string(reply.values.size()) +
                             " values, want " + std::to_string(kEmbeddingDim));
    }
    double norm = 0.0;
    for (double x : reply.values) norm += x * x;
    norm = std::sqrt(norm);
    if (norm <= 0.0) throw MalformedReply("zero embedding");
    for (double& x : reply.values) x /= norm;
    return reply;
}

// ---- gateway ----

namespace {

std::string counts_user_prompt(const CountsContext& ctx) {
    std::ostringstream out;
    out << "Stock this workspace.\n";
    if (!ctx.hint.empty()) out << ctx.hint << "\n";
    out << "DATA\nrobot: " << ctx.robot_name
        << " reach=" << fmt(ctx.reach_radius) << "\n";
    for (std::size_t i = 0; i < ctx.tables.size(); ++i) {
        out << "table " << i << ": width=" << fmt(ctx.tables[i].width)
            << " depth=" << fmt(ctx.tables[i].depth) << " area=" << fmt(ctx.tables[i].area())
            << "\n";
    }
    out << "kinds:";
    for (assets::PrimitiveKind k : ctx.kinds) out << " " << assets::to_string(k);
    out << "\nEND\n";
    return out.str();
}

std::string placements_user_prompt(const PlacementsContext& ctx) {
    std::ostringstream out;
    out << "Arrange these items.\n";
    if (!ctx.hint.empty()) out << ctx.hint << "\n";
    out << "DATA\nrobot: " << ctx.robot_name
        << " reach=" << fmt(ctx.reach_radius) << "\n";
    for (std::size_t i = 0; i < ctx.tables.size(); ++i) {
        out << "table " << i << ": width=" << fmt(ctx.tables[i].width)
            << " depth=" << fmt(ctx.tables[i].depth) << "\n";
    }
    for (const PlacementItem& item : ctx.items) {
        out << "item " << item.id << ": kind=" << assets::to_string(item.kind)
            << " dx=" << fmt(item.dx) << " dy=" << fmt(item.dy) << " surface=";
        if (item.surface == kGroundSurface) {
            out << "ground";
        } else {
            out << item.surface;
        }
        out << "\n";
    }
    out << "END\n";
    return out.str();
}

std::string one_line(std::string text) {
    std::replace(text.begin(), text.end(), '\n', ' ');
    std::replace(text.begin(), text.end(), '\r', ' ');
    return text;
}

std::uint64_t fold_digest(std::uint64_t h, const std::string& text) {
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace

std::string LlmGateway::exchange(LlmRequest request,
                                 const std::function<void(const std::string&)>& check) {
    constexpr int kAttempts = 4;  // initial try plus up to three reprompts
    std::string last_error;
    for (int attempt = 0; attempt < kAttempts; ++attempt) {
        try {
            const std::string reply = backend_->complete(request);
            digest_ = fold_digest(digest_, reply);
            check(reply);
            return reply;
        } catch (const MalformedReply& e) {
            last_error = e.what();
            request.user_prompt +=
                "\nYour previous reply could not be parsed. Answer again using only the "
                "required reply lines.\n";
        }
    }
    throw MalformedReply("giving up after " + std::to_string(kAttempts) +
                         " attempts; last error: " + last_error);
}

CountsReply LlmGateway::query_counts(const CountsContext& ctx) {
    if (ctx.tables.empty()) throw MalformedReply("counts query needs at least one table");
    LlmRequest req;
    req.system_prompt = kCountsSystem;
    req.user_prompt = counts_user_prompt(ctx);
    req.schema_tag = SchemaTag::Counts;
    CountsReply reply;
    exchange(req, [&](const std::string& text) { reply = parse_counts_reply(text, ctx.tables.size()); });
    return reply;
}

PlacementReply LlmGateway::query_placements(const PlacementsContext& ctx) {
    LlmRequest req;
    req.system_prompt = kPlacementsSystem;
    req.user_prompt = placements_user_prompt(ctx);
    req.schema_tag = SchemaTag::Placements;
    if (ctx.items.empty()) return {};
    PlacementReply reply;
    exchange(req, [&](const std::string& text) { reply = parse_placements_reply(text, ctx.items); });
    return reply;
}

std::string LlmGateway::describe_workspace(const std::string& summary) {
    LlmRequest req;
    req.system_prompt = kDescriptionSystem;
    req.user_prompt = "Describe this workspace.\nDATA\ntext: " + one_line(summary) + "\nEND\n";
    req.schema_tag = SchemaTag::Description;
    std::string desc;
    exchange(req, [&](const std::string& text) { desc = parse_description_reply(text); });
    return desc;
}

EmbeddingReply LlmGateway::embed(const std::string& text) {
    LlmRequest req;
    req.system_prompt = kEmbeddingSystem;
    req.user_prompt = "Embed this text.\nDATA\ntext: " + one_line(text) + "\nEND\n";
    req.schema_tag = SchemaTag::Embedding;
    req.temperature = 0.0;
    EmbeddingReply reply;
    exchange(req, [&](const std::string& body) { reply = parse_embedding_reply(body); });
    return reply;
}

std::string LlmGateway::transcript_digest() const {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(digest_));
    return buf;
}

void LlmGateway::reset_digest() { digest_ = 0xcbf29ce484222325ull; }

// ---- http backend ----

struct HttpBackend::Impl {
    std::string base;
    std::string path;
    HttpBackendOptions options;
    std::mutex mu;
    std::condition_variable cv;
    int in_flight = 0;

    struct Slot {
        Impl& impl;
        explicit Slot(Impl& i) : impl(i) {
            std::unique_lock lock(impl.mu);
            impl.cv.wait(lock, [&] { return impl.in_flight < impl.options.max_in_flight; });
            ++impl.in_flight;
        }
        ~Slot() {
            {
                std::lock_guard lock(impl.mu);
                --impl.in_flight;
            }
            impl.cv.notify_one();
        }
    };
};

HttpBackend::HttpBackend(const std::string& endpoint, HttpBackendOptions options)
    : impl_(std::make_unique<Impl>()) {
    impl_->options = options;
    const auto scheme = endpoint.find("://");
    if (scheme == std::string::npos) {
        throw LlmUnreachable("endpoint '" + endpoint + "' has no scheme");
    }
    const auto slash = endpoint.find('/', scheme + 3);
    if (slash == std::string::npos) {
        impl_->base = endpoint;
        impl_->path = "/v1/chat/completions";
    } else {
        impl_->base = endpoint.substr(0, slash);
        impl_->path = endpoint.substr(slash);
    }
}

HttpBackend::~HttpBackend() = default;

std::string HttpBackend::complete(const LlmRequest& request) {
    Impl::Slot slot(*impl_);

    nlohmann::ordered_json body;
    body["model"] = impl_->options.model;
    body["messages"] = {{{"role", "system"}, {"content", request.system_prompt}},
                        {{"role", "user"}, {"content", request.user_prompt}}};
    body["temperature"] = request.temperature;

    httplib::Client client(impl_->base);
    client.set_connection_timeout(impl_->options.timeout_seconds, 0);
    client.set_read_timeout(impl_->options.timeout_seconds, 0);
    httplib::Headers headers;
    if (const char* key = std::getenv(impl_->options.api_key_env.c_str())) {
        headers.emplace("Authorization", std::string("Bearer ") + key);
    }
    const auto res = client.Post(impl_->path, headers, body.dump(), "application/json");
    if (!res) {
        throw LlmUnreachable("POST " + impl_->base + impl_->path + " failed: " +
                             httplib::to_string(res.error()));
    }
    if (res->status != 200) {
        throw LlmUnreachable("POST " + impl_->base + impl_->path + " returned status " +
                             std::to_string(res->status));
    }
    try {
        const auto j = nlohmann::json::parse(res->body);
        return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const std::exception& e) {
        throw MalformedReply(std::string("chat completion body: ") + e.what());
    }
}

}  // namespace perfact::llm
