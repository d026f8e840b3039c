#pragma once

#include "flexsdr/core.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>

namespace flexsdr::embed {

class EmbedError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Text -> unit-norm vector of a fixed dimension. Providers must be
// deterministic for a fixed configuration and safe for concurrent calls.
class Embedder {
public:
    virtual ~Embedder() = default;
    virtual core::EmbeddingVector embed(const std::string& text) = 0;
    virtual int dimension() const = 0;
    // Stable identity string (provider + model); part of cache keys.
    virtual std::string provider_id() const = 0;
};

// Desk-scale stand-in for a pretrained encoder. Each whitespace token is
// expanded into d pseudo-random floats by counter-mode hashing of its
// digest and the token vectors are summed, so texts sharing tokens get
// correlated embeddings; a small whole-text component separates
// permutations of the same bag. Output is L2-normalized.
class SyntheticEmbedder final : public Embedder {
public:
    SyntheticEmbedder(std::uint64_t seed, int dimension);

    core::EmbeddingVector embed(const std::string& text) override;
    int dimension() const override { return dim_; }
    std::string provider_id() const override;

private:
    std::uint64_t seed_;
    int dim_;
};

// Lookup embedder over a precomputed table file: one JSON object per line,
// {"hash": sha256-hex of the text, "vector": [...]}.
class FileEmbedder final : public Embedder {
public:
    explicit FileEmbedder(const std::filesystem::path& table_path);

    core::EmbeddingVector embed(const std::string& text) override;
    int dimension() const override { return dim_; }
    std::string provider_id() const override;

private:
    std::map<std::string, core::EmbeddingVector> table_;
    int dim_ = 0;
    std::string table_name_;
};

// Disk-backed write-through cache; hits return bit-identical vectors.
class EmbedCache {
public:
    explicit EmbedCache(const std::filesystem::path& file);

    std::optional<core::EmbeddingVector> get(const std::string& key) const;
    void put(const std::string& key, const core::EmbeddingVector& vec);

private:
    std::filesystem::path file_;
    std::map<std::string, core::EmbeddingVector> entries_;
    mutable std::mutex mu_;
};

std::string cache_key(const Embedder& provider, const std::string& text);

// Wraps any provider with an EmbedCache. Transparent: cached and uncached
// calls return bit-identical vectors for deterministic providers.
class CachedEmbedder final : public Embedder {
public:
    CachedEmbedder(std::shared_ptr<Embedder> inner, std::shared_ptr<EmbedCache> cache);

    core::EmbeddingVector embed(const std::string& text) override;
    int dimension() const override { return inner_->dimension(); }
    std::string provider_id() const override { return inner_->provider_id(); }

private:
    std::shared_ptr<Embedder> inner_;
    std::shared_ptr<EmbedCache> cache_;
};

struct RemoteEmbedConfig {
    std::string base_url;           // e.g. "https://api.example.com"
    std::string path = "/v1/embeddings";
    std::string model;
    std::string api_key_env;        // name of the env var holding the credential
    int dimension = 0;              // expected dimension; > 0 required
    int max_retries = 3;
    int backoff_ms = 100;           // doubled per retry
    int timeout_s = 30;
    int max_in_flight = 4;
    std::filesystem::path cache_file;  // empty = no persistent cache
};

// Embeddings-style HTTP provider with bounded retry/backoff and a
// write-through cache.
class RemoteEmbedder final : public Embedder {
public:
    explicit RemoteEmbedder(RemoteEmbedConfig cfg);
    ~RemoteEmbedder() override;

    core::EmbeddingVector embed(const std::string& text) override;
    int dimension() const override { return cfg_.dimension; }
    std::string provider_id() const override;

private:
    RemoteEmbedConfig cfg_;
    std::shared_ptr<EmbedCache> cache_;
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace flexsdr::embed
