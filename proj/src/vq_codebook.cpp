#include "ewavq/vq_codebook.hpp"

#include "ewavq/csv_util.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>

namespace ewavq {

namespace {

constexpr int kMaxBins = 8;
constexpr std::size_t kHighDimCodeCap = 128;
constexpr const char* kCacheMagic = "ewavq-grid-cache";
constexpr int kCacheVersion = 1;

std::size_t int_pow(std::size_t base, int exp) {
    std::size_t r = 1;
    for (int i = 0; i < exp; ++i) {
        if (r > std::numeric_limits<std::size_t>::max() / base) {
            throw std::overflow_error("grid size overflows");
        }
        r *= base;
    }
    return r;
}

// Largest b with b^d <= n.
int integer_root(std::size_t n, int d) {
    int b = 1;
    while (b < 64) {
        const std::size_t next = int_pow(static_cast<std::size_t>(b + 1), d);
        if (next > n) break;
        ++b;
    }
    return b;
}

void check_grid(int dim, int bins) {
    if (dim < 1) throw std::invalid_argument("dimension must be >= 1");
    if (bins < 2) throw std::invalid_argument("bins must be >= 2");
}

double squared_distance(std::span<const double> a, std::span<const double> c) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const double diff = a[k] - c[k];
        s += diff * diff;
    }
    return s;
}

std::string sanitize(const std::string& s) {
    std::string out = s.empty() ? std::string("default") : s;
    for (char& c : out) {
        const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                        (c >= '0' && c <= '9') || c == '-' || c == '_' || c == '.';
        if (!ok) c = '_';
    }
    return out;
}

}  // namespace

BinChoice choose_bins(int dim, std::size_t n_requested, int bins_requested) {
    if (dim < 1) throw std::invalid_argument("dimension must be >= 1");
    if (n_requested < 2) throw std::invalid_argument("requested code count must be >= 2");

    int b = 0;
    if (bins_requested >= 2) {
        b = std::min(kMaxBins, bins_requested);
    } else {
        b = std::min(kMaxBins, std::max(2, integer_root(n_requested, dim)));
        while (int_pow(static_cast<std::size_t>(b), dim) > n_requested && b > 2) {
            --b;
        }
    }
    const std::size_t cells = int_pow(static_cast<std::size_t>(b), dim);
    std::size_t n = n_requested;
    if (dim >= 6 && cells > n_requested) {
        n = std::min(cells, kHighDimCodeCap);
    }
    n = std::min({n, n_requested, cells});
    return {b, n};
}

double grid_coordinate(int digit, int bins) {
    return 2.0 * static_cast<double>(digit) / static_cast<double>(bins - 1) - 1.0;
}

Codebook::Codebook(int dim, int bins, std::size_t num_codes)
    : dim_(dim), bins_(bins), num_codes_(num_codes) {
    check_grid(dim, bins);
    num_cells_ = int_pow(static_cast<std::size_t>(bins), dim);
    if (num_codes == 0) throw std::invalid_argument("codebook needs at least one code");
    if (num_codes > num_cells_) throw std::invalid_argument("codebook exceeds grid");
    codes_.resize(num_codes * static_cast<std::size_t>(dim));
    for (std::size_t i = 0; i < num_codes; ++i) {
        std::size_t rest = i;
        for (int k = 0; k < dim; ++k) {
            const int digit = static_cast<int>(rest % static_cast<std::size_t>(bins));
            rest /= static_cast<std::size_t>(bins);
            codes_[i * static_cast<std::size_t>(dim) + static_cast<std::size_t>(k)] =
                grid_coordinate(digit, bins);
        }
    }
}

Codebook Codebook::from_codes(int dim, int bins, std::vector<double> codes) {
    check_grid(dim, bins);
    if (codes.empty() || codes.size() % static_cast<std::size_t>(dim) != 0) {
        throw std::invalid_argument("code matrix does not match dimension");
    }
    Codebook cb;
    cb.dim_ = dim;
    cb.bins_ = bins;
    cb.num_cells_ = int_pow(static_cast<std::size_t>(bins), dim);
    cb.num_codes_ = codes.size() / static_cast<std::size_t>(dim);
    if (cb.num_codes_ > cb.num_cells_) throw std::invalid_argument("codebook exceeds grid");
    for (double v : codes) {
        bool on_grid = false;
        for (int g = 0; g < bins; ++g) {
            if (v == grid_coordinate(g, bins)) on_grid = true;
        }
        if (!on_grid) throw std::invalid_argument("code coordinate is not a grid value");
    }
    for (std::size_t i = 0; i < cb.num_codes_; ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            if (std::equal(codes.begin() + static_cast<std::ptrdiff_t>(i * dim),
                           codes.begin() + static_cast<std::ptrdiff_t>((i + 1) * dim),
                           codes.begin() + static_cast<std::ptrdiff_t>(j * dim))) {
                throw std::invalid_argument("duplicate code");
            }
        }
    }
    cb.codes_ = std::move(codes);
    return cb;
}

std::vector<double> cell_center(std::size_t cell, int bins, int dim) {
    check_grid(dim, bins);
    std::vector<double> p(static_cast<std::size_t>(dim));
    for (int k = 0; k < dim; ++k) {
        p[static_cast<std::size_t>(k)] =
            grid_coordinate(static_cast<int>(cell % static_cast<std::size_t>(bins)), bins);
        cell /= static_cast<std::size_t>(bins);
    }
    return p;
}

std::size_t cell_index(std::span<const double> action, int bins, int dim) {
    check_grid(dim, bins);
    if (action.size() != static_cast<std::size_t>(dim)) {
        throw std::invalid_argument("action dimension mismatch");
    }
    std::size_t index = 0;
    std::size_t stride = 1;
    const double span = static_cast<double>(bins - 1);
    for (int k = 0; k < dim; ++k) {
        const double a = action[static_cast<std::size_t>(k)];
        if (!std::isfinite(a)) throw std::invalid_argument("non-finite action");
        const double u = (std::clamp(a, -1.0, 1.0) + 1.0) * 0.5 * span;
        const int digit = std::clamp(static_cast<int>(std::ceil(u - 0.5)), 0, bins - 1);
        index += static_cast<std::size_t>(digit) * stride;
        stride *= static_cast<std::size_t>(bins);
    }
    return index;
}

std::size_t brute_force_nearest(std::span<const double> action, const Codebook& codebook) {
    if (action.size() != static_cast<std::size_t>(codebook.dim())) {
        throw std::invalid_argument("action dimension mismatch");
    }
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < codebook.size(); ++i) {
        const double d = squared_distance(action, codebook.code(i));
        if (d < best_d) {
            best_d = d;
            best = i;
        }
    }
    return best;
}

std::string CacheKey::file_name() const {
    std::ostringstream os;
    os << "grid_d" << dim << "_b" << bins << "_m" << num_codes << '_' << sanitize(env)
       << ".cache";
    return os.str();
}

namespace {

std::vector<std::int32_t> compute_entries(const Codebook& codebook, std::size_t batch_cells) {
    const std::size_t cells = codebook.num_cells();
    std::vector<std::int32_t> entries(cells, GridTable::kMiss);
    const std::size_t batch = std::max<std::size_t>(1, batch_cells);
    for (std::size_t start = 0; start < cells; start += batch) {
        const std::size_t end = std::min(cells, start + batch);
        for (std::size_t cell = start; cell < end; ++cell) {
            const auto p = cell_center(cell, codebook.bins(), codebook.dim());
            entries[cell] = static_cast<std::int32_t>(brute_force_nearest(p, codebook));
        }
    }
    return entries;
}

}  // namespace

GridTable build_table(const Codebook& codebook, const TableOptions& options) {
    CacheKey key{codebook.dim(), codebook.bins(), codebook.size(), options.env};
    if (options.cache_dir.empty()) {
        return GridTable(std::move(key), compute_entries(codebook, options.batch_cells));
    }
    const auto path = (std::filesystem::path(options.cache_dir) / key.file_name()).string();
    if (auto cached = load_table_cache(path, codebook, key)) {
        return std::move(*cached);
    }
    GridTable table(key, compute_entries(codebook, options.batch_cells));
    try {
        std::filesystem::create_directories(options.cache_dir);
        save_table_cache(path, codebook, table);
    } catch (const std::exception& e) {
        std::cerr << "warning: grid table cache not written (" << e.what()
                  << "); using in-memory table\n";
    }
    return table;
}

std::size_t route(std::span<const double> action, const GridTable& table,
                  const Codebook& codebook, RouteStats* stats) {
    const std::size_t cell = cell_index(action, codebook.bins(), codebook.dim());
    if (cell < table.size()) {
        const std::int32_t hit = table[cell];
        if (hit != GridTable::kMiss) {
            if (stats) ++stats->hits;
            return static_cast<std::size_t>(hit);
        }
    }
    if (stats) ++stats->fallbacks;
    std::vector<double> clamped(action.begin(), action.end());
    for (double& v : clamped) v = std::clamp(v, -1.0, 1.0);
    return brute_force_nearest(clamped, codebook);
}

void save_table_cache(const std::string& path, const Codebook& codebook,
                      const GridTable& table) {
    const auto tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open " + tmp);
        const auto& key = table.key();
        out << kCacheMagic << ' ' << kCacheVersion << '\n'
            << key.dim << ' ' << key.bins << ' ' << key.num_codes << ' ' << sanitize(key.env)
            << '\n';
        for (std::size_t i = 0; i < codebook.size(); ++i) {
            const auto c = codebook.code(i);
            for (std::size_t k = 0; k < c.size(); ++k) {
                out << (k ? " " : "") << format_double(c[k]);
            }
            out << '\n';
        }
        for (std::size_t cell = 0; cell < table.size(); ++cell) {
            out << table[cell] << '\n';
        }
        if (!out) throw std::runtime_error("write failed for " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

std::optional<GridTable> load_table_cache(const std::string& path, const Codebook& codebook,
                                          const CacheKey& key) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;

    std::string magic, env;
    int version = 0, dim = 0, bins = 0;
    std::size_t num_codes = 0;
    if (!(in >> magic >> version >> dim >> bins >> num_codes >> env)) return std::nullopt;
    if (magic != kCacheMagic || version != kCacheVersion || dim != key.dim ||
        bins != key.bins || num_codes != key.num_codes || env != sanitize(key.env) ||
        num_codes != codebook.size()) {
        return std::nullopt;
    }
    for (double expected : codebook.data()) {
        double v = 0.0;
        if (!(in >> v) || v != expected) return std::nullopt;
    }
    std::vector<std::int32_t> entries(codebook.num_cells());
    for (auto& e : entries) {
        if (!(in >> e)) return std::nullopt;
        if (e != GridTable::kMiss &&
            (e < 0 || static_cast<std::size_t>(e) >= codebook.size())) {
            return std::nullopt;
        }
    }

    std::mt19937_64 rng(0x9e3779b97f4a7c15ULL ^ codebook.num_cells());
    std::uniform_int_distribution<std::size_t> pick(0, entries.size() - 1);
    for (int i = 0; i < 16; ++i) {
        const std::size_t cell = pick(rng);
        const auto p = cell_center(cell, codebook.bins(), codebook.dim());
        if (entries[cell] != static_cast<std::int32_t>(brute_force_nearest(p, codebook))) {
            std::cerr << "warning: grid table cache " << path
                      << " failed integrity check; rebuilding\n";
            return std::nullopt;
        }
    }
    return GridTable(key, std::move(entries));
}

}  // namespace ewavq
