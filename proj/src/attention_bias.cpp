#include "ewavq/attention_bias.hpp"

#include "ewavq/csv_util.hpp"
#include "ewavq/ewa_memory.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace ewavq {

void BiasConfig::validate() const {
    // beta_bias = 0 is the unbiased control.
    if (!(beta_bias >= 0.0) || !std::isfinite(beta_bias)) {
        throw std::invalid_argument("beta_bias must be >= 0");
    }
    if (!(eps_clip > 0.0) || !std::isfinite(eps_clip)) {
        throw std::invalid_argument("eps_clip must be positive");
    }
}

std::vector<double> column_bias(std::span<const double> attractions, const TokenLayout& layout,
                                const BiasConfig& cfg) {
    if (layout.action_codes.size() != layout.action_columns.size()) {
        throw std::invalid_argument("layout action columns and codes differ in length");
    }
    std::vector<double> bias(layout.seq_len(), 0.0);
    for (std::size_t k = 0; k < layout.action_columns.size(); ++k) {
        const std::size_t col = layout.action_columns[k];
        const std::size_t code = layout.action_codes[k];
        if (col >= bias.size()) {
            throw std::invalid_argument("action column outside the sequence");
        }
        if (code >= attractions.size()) {
            throw std::invalid_argument("layout code does not match attraction table");
        }
        if (layout.is_pad(col)) continue;
        bias[col] = std::clamp(cfg.beta_bias * attractions[code], -cfg.eps_clip, cfg.eps_clip);
    }
    return bias;
}

AttentionLogits build_bias(const AttractionTable& attractions, const TokenLayout& layout,
                           const BiasConfig& cfg, std::size_t batch, std::size_t heads) {
    const auto col = column_bias(attractions.values(), layout, cfg);
    const std::size_t s = layout.seq_len();
    AttentionLogits out(batch, heads, s);
    for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t r = 0; r < s; ++r)
                for (std::size_t c = 0; c < s; ++c) out.at(n, h, r, c) = col[c];
    return out;
}

AttentionLogits apply_bias(const AttentionLogits& logits, const AttentionLogits& bias) {
    if (!logits.same_shape(bias)) {
        throw std::invalid_argument("logit and bias shapes differ");
    }
    AttentionLogits out = logits;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += bias.data[i];
    return out;
}

AttentionMask causal_mask(std::size_t seq) {
    AttentionMask m{seq, std::vector<std::uint8_t>(seq * seq, 0)};
    for (std::size_t r = 0; r < seq; ++r)
        for (std::size_t c = 0; c <= r; ++c) m.allowed[r * seq + c] = 1;
    return m;
}

AttentionMask causal_mask(const TokenLayout& layout) {
    const std::size_t s = layout.seq_len();
    AttentionMask m{s, std::vector<std::uint8_t>(s * s, 0)};
    for (std::size_t r = 0; r < s; ++r) {
        for (std::size_t c = 0; c <= r; ++c) {
            if (!layout.is_pad(c) || c == r) m.allowed[r * s + c] = 1;
        }
    }
    return m;
}

void masked_softmax_row(std::span<const double> logits, const AttentionMask& mask,
                        std::size_t row, std::span<double> out) {
    const std::size_t s = mask.seq;
    double max_v = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t c = 0; c < s; ++c) {
        if (!mask(row, c)) continue;
        if (!std::isfinite(logits[c])) throw std::invalid_argument("non-finite attention logit");
        max_v = any ? std::max(max_v, logits[c]) : logits[c];
        any = true;
    }
    if (!any) throw std::invalid_argument("degenerate attention row");
    double sum = 0.0;
    for (std::size_t c = 0; c < s; ++c) {
        if (mask(row, c)) {
            out[c] = std::exp(logits[c] - max_v);
            sum += out[c];
        } else {
            out[c] = 0.0;
        }
    }
    for (std::size_t c = 0; c < s; ++c) out[c] /= sum;
}

AttentionLogits masked_softmax(const AttentionLogits& logits, const AttentionMask& mask) {
    if (mask.seq != logits.seq) throw std::invalid_argument("mask size mismatch");
    AttentionLogits out(logits.batch, logits.heads, logits.seq);
    const std::size_t s = logits.seq;
    for (std::size_t n = 0; n < logits.batch; ++n) {
        for (std::size_t h = 0; h < logits.heads; ++h) {
            for (std::size_t r = 0; r < s; ++r) {
                const std::size_t off = ((n * logits.heads + h) * s + r) * s;
                masked_softmax_row({logits.data.data() + off, s}, mask, r,
                                   {out.data.data() + off, s});
            }
        }
    }
    return out;
}

std::vector<double> softmax(std::span<const double> z) {
    std::vector<double> out(z.size());
    masked_softmax_row(z, causal_mask(z.size()), z.size() - 1, out);
    return out;
}

double tv_distance(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size()) throw std::invalid_argument("distribution sizes differ");
    double sp = 0.0, sq = 0.0, l1 = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] < 0.0 || q[i] < 0.0) throw std::invalid_argument("negative probability");
        sp += p[i];
        sq += q[i];
        l1 += std::abs(p[i] - q[i]);
    }
    if (std::abs(sp - 1.0) > 1e-9 || std::abs(sq - 1.0) > 1e-9) {
        throw std::invalid_argument("distribution not normalized");
    }
    return 0.5 * l1;
}

double drift_bound(double eps) {
    if (!(eps >= 0.0)) throw std::invalid_argument("eps must be >= 0");
    return std::tanh(eps);
}

DriftPair worst_case_drift(double eps, std::size_t n) {
    if (n < 2) throw std::invalid_argument("need at least two entries");
    if (!(eps >= 0.0)) throw std::invalid_argument("eps must be >= 0");
    DriftPair d;
    const double boosted_mass = 1.0 / (1.0 + std::exp(eps));
    const double rest = (1.0 - boosted_mass) / static_cast<double>(n - 1);
    d.logits.assign(n, std::log(rest));
    d.logits[0] = std::log(boosted_mass);
    d.bias.assign(n, -eps);
    d.bias[0] = eps;
    std::vector<double> shifted(n);
    for (std::size_t i = 0; i < n; ++i) shifted[i] = d.logits[i] + d.bias[i];
    d.p = softmax(d.logits);
    d.q = softmax(shifted);
    d.tv = tv_distance(d.p, d.q);
    return d;
}

void AttentionDump::write_csv(const std::string& logits_path,
                              const std::string& drift_path) const {
    std::ofstream lo(logits_path, std::ios::binary);
    if (!lo) throw std::runtime_error("cannot open " + logits_path);
    lo << "layer,batch,head,row,col,logit_pre,logit_post\n";
    for (const auto& r : logits) {
        lo << r.layer << ',' << r.batch << ',' << r.head << ',' << r.row << ',' << r.col << ','
           << format_double(r.pre) << ',' << format_double(r.post) << '\n';
    }
    std::ofstream dr(drift_path, std::ios::binary);
    if (!dr) throw std::runtime_error("cannot open " + drift_path);
    dr << "layer,batch,head,row,tv_drift\n";
    for (const auto& r : drift) {
        dr << r.layer << ',' << r.batch << ',' << r.head << ',' << r.row << ','
           << format_double(r.tv) << '\n';
    }
}

}  // namespace ewavq
