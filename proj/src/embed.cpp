#include "flexsdr/embed.hpp"

#include "flexsdr/rng.hpp"
#include "flexsdr/util.hpp"
#include "http_post.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>

namespace flexsdr::embed {

using nlohmann::json;

namespace {

core::EmbeddingVector l2_normalize(core::EmbeddingVector v) {
    const double norm = v.norm();
    if (norm == 0.0) throw EmbedError("cannot normalize a zero vector");
    return v / norm;
}

// Expands a 64-bit digest into `d` uniform floats in [-1, 1).
void accumulate_expansion(core::EmbeddingVector& acc, std::uint64_t digest, double weight) {
    std::uint64_t state = digest;
    for (int i = 0; i < acc.size(); ++i) {
        const std::uint64_t bits = rng::splitmix64(state);
        const double u = static_cast<double>(bits >> 11) * 0x1.0p-53;  // [0,1)
        acc[i] += weight * (2.0 * u - 1.0);
    }
}

}  // namespace

SyntheticEmbedder::SyntheticEmbedder(std::uint64_t seed, int dimension)
    : seed_(seed), dim_(dimension) {
    if (dimension < 2) throw EmbedError("embedding dimension must be >= 2");
}

core::EmbeddingVector SyntheticEmbedder::embed(const std::string& text) {
    core::EmbeddingVector acc = core::EmbeddingVector::Zero(dim_);

    std::size_t pos = 0;
    int tokens = 0;
    while (pos < text.size()) {
        while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
        std::size_t end = pos;
        while (end < text.size() && !std::isspace(static_cast<unsigned char>(text[end]))) ++end;
        if (end > pos) {
            const std::uint64_t digest =
                rng::mix(seed_, rng::fnv1a(std::string_view(text).substr(pos, end - pos)));
            accumulate_expansion(acc, digest, 1.0);
            ++tokens;
        }
        pos = end;
    }
    // Whole-text component: keeps distinct texts with equal token bags apart
    // and covers token-free inputs.
    const double text_weight = tokens == 0 ? 1.0 : 0.05;
    accumulate_expansion(acc, rng::mix(seed_ ^ 0x5bf03635d1a2b1ULL, rng::fnv1a(text)),
                         text_weight);
    return l2_normalize(std::move(acc));
}

std::string SyntheticEmbedder::provider_id() const {
    return "synthetic/seed=" + std::to_string(seed_) + "/d=" + std::to_string(dim_);
}

FileEmbedder::FileEmbedder(const std::filesystem::path& table_path)
    : table_name_(table_path.filename().string()) {
    std::ifstream in(table_path);
    if (!in) throw EmbedError("cannot open embedding table: " + table_path.string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            throw EmbedError("embedding table line " + std::to_string(line_no) +
                             ": invalid JSON: " + e.what());
        }
        if (!rec.contains("hash") || !rec["hash"].is_string() || !rec.contains("vector") ||
            !rec["vector"].is_array())
            throw EmbedError("embedding table line " + std::to_string(line_no) +
                             ": expected {\"hash\", \"vector\"}");
        const auto& arr = rec["vector"];
        core::EmbeddingVector v(arr.size());
        for (std::size_t i = 0; i < arr.size(); ++i) v[static_cast<int>(i)] = arr[i].get<double>();
        if (dim_ == 0) {
            dim_ = static_cast<int>(v.size());
        } else if (v.size() != dim_) {
            throw EmbedError("embedding table line " + std::to_string(line_no) +
                             ": dimension " + std::to_string(v.size()) +
                             " does not match table dimension " + std::to_string(dim_));
        }
        table_[rec["hash"].get<std::string>()] = std::move(v);
    }
    if (dim_ == 0) throw EmbedError("embedding table is empty: " + table_path.string());
}

core::EmbeddingVector FileEmbedder::embed(const std::string& text) {
    const std::string key = util::sha256_hex(text);
    auto it = table_.find(key);
    if (it == table_.end()) {
        std::string head = text.substr(0, 48);
        throw EmbedError("missing embedding for text hash " + key + " (\"" + head +
                         (text.size() > 48 ? "...\")" : "\")"));
    }
    return it->second;
}

std::string FileEmbedder::provider_id() const { return "file/" + table_name_; }

EmbedCache::EmbedCache(const std::filesystem::path& file) : file_(file) {
    std::ifstream in(file_);
    if (!in) return;  // fresh cache
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json rec = json::parse(line, nullptr, false);
        if (rec.is_discarded() || !rec.contains("key") || !rec.contains("vector")) continue;
        const auto& arr = rec["vector"];
        core::EmbeddingVector v(arr.size());
        for (std::size_t i = 0; i < arr.size(); ++i) v[static_cast<int>(i)] = arr[i].get<double>();
        entries_[rec["key"].get<std::string>()] = std::move(v);
    }
}

std::optional<core::EmbeddingVector> EmbedCache::get(const std::string& key) const {
    std::lock_guard lk(mu_);
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
}

void EmbedCache::put(const std::string& key, const core::EmbeddingVector& vec) {
    std::lock_guard lk(mu_);
    if (entries_.contains(key)) return;
    entries_[key] = vec;
    std::ofstream out(file_, std::ios::app | std::ios::binary);
    if (!out) return;  // cache is best-effort on write
    json rec;
    rec["key"] = key;
    json arr = json::array();
    for (int i = 0; i < vec.size(); ++i) arr.push_back(vec[i]);
    rec["vector"] = std::move(arr);
    out << rec.dump() << '\n';
}

std::string cache_key(const Embedder& provider, const std::string& text) {
    return util::sha256_hex(provider.provider_id() + '\0' + text);
}

CachedEmbedder::CachedEmbedder(std::shared_ptr<Embedder> inner, std::shared_ptr<EmbedCache> cache)
    : inner_(std::move(inner)), cache_(std::move(cache)) {}

core::EmbeddingVector CachedEmbedder::embed(const std::string& text) {
    const std::string key = cache_key(*inner_, text);
    if (auto hit = cache_->get(key)) return *hit;
    core::EmbeddingVector v = inner_->embed(text);
    cache_->put(key, v);
    return v;
}

struct RemoteEmbedder::Impl {
    http::InFlightLimit limit;
    explicit Impl(int max_in_flight) : limit(max_in_flight) {}
};

RemoteEmbedder::RemoteEmbedder(RemoteEmbedConfig cfg)
    : cfg_(std::move(cfg)), impl_(std::make_unique<Impl>(cfg_.max_in_flight)) {
    if (cfg_.base_url.empty()) throw EmbedError("remote embedder: base_url is required");
    if (cfg_.model.empty()) throw EmbedError("remote embedder: model is required");
    if (cfg_.dimension < 2) throw EmbedError("remote embedder: dimension must be >= 2");
    if (!cfg_.cache_file.empty()) cache_ = std::make_shared<EmbedCache>(cfg_.cache_file);
}

RemoteEmbedder::~RemoteEmbedder() = default;

std::string RemoteEmbedder::provider_id() const { return "remote/" + cfg_.model; }

core::EmbeddingVector RemoteEmbedder::embed(const std::string& text) {
    const std::string key = util::sha256_hex(provider_id() + '\0' + text);
    if (cache_) {
        if (auto hit = cache_->get(key)) return *hit;
    }

    http::PostConfig pc{cfg_.base_url, cfg_.path,       cfg_.api_key_env,
                        cfg_.max_retries, cfg_.backoff_ms, cfg_.timeout_s};
    json body{{"model", cfg_.model}, {"input", text}};
    json resp;
    try {
        resp = http::post_json(pc, body, &impl_->limit);
    } catch (const http::HttpError& e) {
        throw EmbedError(std::string("remote embedding failed: ") + e.what());
    }

    if (!resp.contains("data") || !resp["data"].is_array() || resp["data"].empty() ||
        !resp["data"][0].contains("embedding") || !resp["data"][0]["embedding"].is_array())
        throw EmbedError("remote embedding response missing data[0].embedding");
    const auto& arr = resp["data"][0]["embedding"];
    if (arr.empty()) throw EmbedError("remote embedding response has an empty vector");
    if (static_cast<int>(arr.size()) != cfg_.dimension)
        throw EmbedError("remote embedding dimension " + std::to_string(arr.size()) +
                         " does not match configured " + std::to_string(cfg_.dimension));

    core::EmbeddingVector v(arr.size());
    for (std::size_t i = 0; i < arr.size(); ++i) v[static_cast<int>(i)] = arr[i].get<double>();
    v = l2_normalize(std::move(v));
    if (cache_) cache_->put(key, v);
    return v;
}

}  // namespace flexsdr::embed
