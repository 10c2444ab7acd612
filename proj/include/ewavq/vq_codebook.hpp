#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ewavq {

struct BinChoice {
    int bins;
    std::size_t codes;
};

// Bins per dimension and final code count for a grid codebook.
//
// With bins_requested >= 2 the request is honored (capped at 8); otherwise
// b = min(8, max(2, floor(n_req^(1/d)))) shrunk while b^d > n_req and b > 2.
// The code count is min(N, n_req, b^d) where N = min(b^d, 128) when d >= 6 and
// the grid overshoots, n_req otherwise.
BinChoice choose_bins(int dim, std::size_t n_requested, int bins_requested = 0);

// Fixed grid-derived codebook. Code i takes the base-b digits of i, least
// significant digit first in dimension 0, and maps digit g to 2g/(b-1) - 1.
class Codebook {
public:
    Codebook(int dim, int bins, std::size_t num_codes);

    // Arbitrary codes on the same grid; every coordinate must be a grid value.
    static Codebook from_codes(int dim, int bins, std::vector<double> codes);

    int dim() const { return dim_; }
    int bins() const { return bins_; }
    std::size_t size() const { return num_codes_; }
    std::size_t num_cells() const { return num_cells_; }
    std::span<const double> code(std::size_t i) const {
        return {codes_.data() + i * static_cast<std::size_t>(dim_),
                static_cast<std::size_t>(dim_)};
    }
    const std::vector<double>& data() const { return codes_; }

    bool operator==(const Codebook&) const = default;

private:
    Codebook() = default;

    int dim_ = 0;
    int bins_ = 0;
    std::size_t num_codes_ = 0;
    std::size_t num_cells_ = 0;
    std::vector<double> codes_;  // row-major num_codes x dim
};

inline Codebook build_codebook(int dim, std::size_t num_codes, int bins) {
    return Codebook(dim, bins, num_codes);
}

// Grid value for digit g with b bins.
double grid_coordinate(int digit, int bins);

// Grid point of cell `cell` (the point every table entry is computed from).
std::vector<double> cell_center(std::size_t cell, int bins, int dim);

// Linear cell index of an action. Coordinates are clamped to [-1, 1] and each
// is assigned to its nearest grid value, ties to the lower digit; the upper
// edge a_k = 1 lands in digit b-1.
std::size_t cell_index(std::span<const double> action, int bins, int dim);

// Exact linear-scan L2 argmin, lowest index on ties.
std::size_t brute_force_nearest(std::span<const double> action, const Codebook& codebook);

struct CacheKey {
    int dim;
    int bins;
    std::size_t num_codes;
    std::string env;

    std::string file_name() const;
    bool operator==(const CacheKey&) const = default;
};

class GridTable {
public:
    static constexpr std::int32_t kMiss = -1;

    GridTable(CacheKey key, std::vector<std::int32_t> entries)
        : key_(std::move(key)), entries_(std::move(entries)) {}

    const CacheKey& key() const { return key_; }
    std::size_t size() const { return entries_.size(); }
    std::int32_t operator[](std::size_t cell) const { return entries_[cell]; }
    const std::vector<std::int32_t>& entries() const { return entries_; }

    // Drops a cell from the table so it is served by the exact fallback.
    void evict(std::size_t cell) { entries_.at(cell) = kMiss; }

    bool operator==(const GridTable&) const = default;

private:
    CacheKey key_;
    std::vector<std::int32_t> entries_;
};

struct TableOptions {
    std::string env = "default";
    std::string cache_dir;  // empty disables the on-disk cache
    std::size_t batch_cells = 256;
};

// Nearest code for every cell point, computed in batches and cached on disk
// under the (dim, bins, M, env) key when a cache directory is configured.
GridTable build_table(const Codebook& codebook, const TableOptions& options = {});

struct RouteStats {
    std::uint64_t hits = 0;
    std::uint64_t fallbacks = 0;
};

// Table lookup with exact nearest-code fallback on a miss.
std::size_t route(std::span<const double> action, const GridTable& table,
                  const Codebook& codebook, RouteStats* stats = nullptr);

// On-disk cache file: text header (magic, version, dim, bins, M, env) followed
// by M x dim code coordinates and the b^d table entries.
void save_table_cache(const std::string& path, const Codebook& codebook,
                      const GridTable& table);

// Returns nothing if the file is absent, malformed, keyed differently, or
// fails the 16-cell brute-force integrity check.
std::optional<GridTable> load_table_cache(const std::string& path, const Codebook& codebook,
                                          const CacheKey& key);

}  // namespace ewavq
