#pragma once

#include <filesystem>
#include <mutex>
#include <span>
#include <string>
#include <unordered_map>

#include "loclab/model.hpp"
#include "loclab/partition.hpp"

namespace loclab {

// Source of per-window partitions during training and evaluation. Windows
// are identified by content, so the same token window always maps to the
// same partition.
class PartitionProvider {
  public:
    virtual ~PartitionProvider() = default;
    virtual Partition get(std::span<const int> window) = 0;
    virtual std::string describe() const = 0;
};

class FixedWindowProvider final : public PartitionProvider {
  public:
    explicit FixedWindowProvider(int window);
    Partition get(std::span<const int> window) override;
    std::string describe() const override;

  private:
    int window_;
};

// Partitions a window by similarity dips between neighbouring hidden states
// of a frozen reference model, read off after its first floor(L/2) blocks.
// Results are cached by window content hash and can be persisted.
class SemanticProvider final : public PartitionProvider {
  public:
    SemanticProvider(ModelParams reference, BoundaryPolicy policy);

    Partition get(std::span<const int> window) override;
    std::string describe() const override;

    const std::string& reference_hash() const { return ref_hash_; }
    size_t cache_size() const;

    void load_cache(const std::filesystem::path& path);
    void save_cache(const std::filesystem::path& path) const;

    // Embeddings the partitioner sees for a window, exposed for inspection.
    Matrix<double> window_embeddings(std::span<const int> window);

  private:
    ModelParams ref_;
    BoundaryPolicy policy_;
    int tap_layer_;
    std::string ref_hash_;
    mutable std::mutex mu_;
    std::unordered_map<uint64_t, Partition> cache_;
};

std::string params_hash_hex(const ModelParams& p);

} // namespace loclab
