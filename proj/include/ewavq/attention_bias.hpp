#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace ewavq {

class AttractionTable;

// Dense (batch, heads, rows, cols) tensor of attention logits or probabilities.
struct AttentionLogits {
    std::size_t batch = 0;
    std::size_t heads = 0;
    std::size_t seq = 0;
    std::vector<double> data;

    AttentionLogits() = default;
    AttentionLogits(std::size_t n, std::size_t h, std::size_t s, double fill = 0.0)
        : batch(n), heads(h), seq(s), data(n * h * s * s, fill) {}

    double& at(std::size_t n, std::size_t h, std::size_t r, std::size_t c) {
        return data[((n * heads + h) * seq + r) * seq + c];
    }
    double at(std::size_t n, std::size_t h, std::size_t r, std::size_t c) const {
        return data[((n * heads + h) * seq + r) * seq + c];
    }
    bool same_shape(const AttentionLogits& o) const {
        return batch == o.batch && heads == o.heads && seq == o.seq;
    }
};

enum class TokenKind : std::uint8_t { Return, State, Action, Pad };

// Column-wise description of one tokenized window: what each column holds, the
// timestep it belongs to, and for action columns the routed code.
struct TokenLayout {
    std::vector<TokenKind> kinds;
    std::vector<std::size_t> timestep;        // per column
    std::vector<std::size_t> action_columns;  // I_act, ascending
    std::vector<std::size_t> action_codes;    // parallel to action_columns

    std::size_t seq_len() const { return kinds.size(); }
    bool is_pad(std::size_t col) const { return kinds[col] == TokenKind::Pad; }
};

struct BiasConfig {
    double beta_bias = 0.05;
    double eps_clip = 0.1;
    bool all_layers = true;

    void validate() const;
};

// Per-column additive bias: clamp(beta * A[code], -eps, eps) on action columns,
// exactly 0 elsewhere. This is one row of the full bias tensor.
std::vector<double> column_bias(std::span<const double> attractions, const TokenLayout& layout,
                                const BiasConfig& cfg);

// Full bias tensor, identical across batch, heads, and rows.
AttentionLogits build_bias(const AttractionTable& attractions, const TokenLayout& layout,
                           const BiasConfig& cfg, std::size_t batch, std::size_t heads);

AttentionLogits apply_bias(const AttentionLogits& logits, const AttentionLogits& bias);

// Row-major seq x seq visibility mask (1 = may attend).
struct AttentionMask {
    std::size_t seq = 0;
    std::vector<std::uint8_t> allowed;

    bool operator()(std::size_t r, std::size_t c) const { return allowed[r * seq + c] != 0; }
};

// Causal mask; padded columns are hidden from every other row, and a padded row
// keeps only itself so no row is empty.
AttentionMask causal_mask(const TokenLayout& layout);
AttentionMask causal_mask(std::size_t seq);

// Softmax over the visible entries of one row; hidden entries are exactly 0.
void masked_softmax_row(std::span<const double> logits, const AttentionMask& mask,
                        std::size_t row, std::span<double> out);

AttentionLogits masked_softmax(const AttentionLogits& logits, const AttentionMask& mask);

std::vector<double> softmax(std::span<const double> z);

double tv_distance(std::span<const double> p, std::span<const double> q);

// tanh(eps).
double drift_bound(double eps);

struct DriftPair {
    std::vector<double> logits;
    std::vector<double> bias;
    std::vector<double> p;
    std::vector<double> q;
    double tv = 0.0;
};

// Extremal pair for a bias with ||b||_inf = eps: entry 0 boosted by +eps holding
// mass s = 1 / (1 + e^eps), the remaining n-1 entries suppressed by -eps. This
// attains the largest drift any such bias can produce, tanh(eps / 2).
DriftPair worst_case_drift(double eps, std::size_t n);

struct LogitRecord {
    std::size_t layer, batch, head, row, col;
    double pre, post;
};

struct DriftRecord {
    std::size_t layer, batch, head, row;
    double tv;
};

// Optional capture of pre/post-bias logits and per-row drift for inspection.
struct AttentionDump {
    std::vector<LogitRecord> logits;
    std::vector<DriftRecord> drift;

    void write_csv(const std::string& logits_path, const std::string& drift_path) const;
};

}  // namespace ewavq
