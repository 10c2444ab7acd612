#include "ewavq/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

namespace ewavq {

namespace {

using Mat = Eigen::MatrixXd;
using RowVec = Eigen::RowVectorXd;
using ConstMatMap = Eigen::Map<const Mat>;
using MatMap = Eigen::Map<Mat>;
using ConstRowMap = Eigen::Map<const RowVec>;
using RowMap = Eigen::Map<RowVec>;

constexpr double kLnEps = 1e-5;
const double kLog2Pi = std::log(2.0 * std::numbers::pi);

ConstMatMap mat(const std::vector<double>& v, const ParamSlot& s) {
    return ConstMatMap(v.data() + s.offset, static_cast<Eigen::Index>(s.rows),
                       static_cast<Eigen::Index>(s.cols));
}
MatMap mat(std::vector<double>& v, const ParamSlot& s) {
    return MatMap(v.data() + s.offset, static_cast<Eigen::Index>(s.rows),
                  static_cast<Eigen::Index>(s.cols));
}
ConstRowMap row(const std::vector<double>& v, const ParamSlot& s) {
    return ConstRowMap(v.data() + s.offset, static_cast<Eigen::Index>(s.size()));
}
RowMap row(std::vector<double>& v, const ParamSlot& s) {
    return RowMap(v.data() + s.offset, static_cast<Eigen::Index>(s.size()));
}

struct LayerNormCache {
    Mat xhat;
    Eigen::VectorXd inv_std;
};

Mat layer_norm(const Mat& x, ConstRowMap gain, ConstRowMap bias, LayerNormCache& cache) {
    const auto n = static_cast<double>(x.cols());
    cache.xhat.resize(x.rows(), x.cols());
    cache.inv_std.resize(x.rows());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const double mean = x.row(r).sum() / n;
        const RowVec centered = x.row(r).array() - mean;
        const double var = centered.squaredNorm() / n;
        const double inv = 1.0 / std::sqrt(var + kLnEps);
        cache.inv_std(r) = inv;
        cache.xhat.row(r) = centered * inv;
    }
    Mat y = cache.xhat.array().rowwise() * gain.array();
    y.rowwise() += bias;
    return y;
}

// Returns dL/dx; accumulates the gain and bias gradients.
Mat layer_norm_backward(const Mat& dy, ConstRowMap gain, const LayerNormCache& cache,
                        RowMap dgain, RowMap dbias) {
    dgain += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
    dbias += dy.colwise().sum();
    const Mat dxhat = dy.array().rowwise() * gain.array();
    const auto n = static_cast<double>(dy.cols());
    Mat dx(dy.rows(), dy.cols());
    for (Eigen::Index r = 0; r < dy.rows(); ++r) {
        const double mean_d = dxhat.row(r).sum() / n;
        const double mean_dx = dxhat.row(r).dot(cache.xhat.row(r)) / n;
        dx.row(r) = cache.inv_std(r) *
                    (dxhat.row(r).array() - mean_d - cache.xhat.row(r).array() * mean_dx).matrix();
    }
    return dx;
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

double gelu(double x) {
    return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x)));
}

double gelu_grad(double x) {
    const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

struct LayerCache {
    Mat x_in;
    LayerNormCache ln1;
    Mat a;  // ln1 output
    Mat q, k, v;
    std::vector<Mat> probs;  // per head, S x S
    Mat concat;
    Mat x_mid;
    LayerNormCache ln2;
    Mat b;  // ln2 output
    Mat h_pre, h_act;
};

struct WindowCache {
    Mat x_raw;
    LayerNormCache embed_ln;
    std::vector<LayerCache> layers;
    LayerNormCache final_ln;
    Mat y;
    Mat mean_pre, log_std_pre;
    PolicyOutput out;
};

#ifndef EWAVQ_NO_ATTENTION_BIAS
bool bias_enabled_for_layer(const BiasConfig& bias, int layer) {
    return bias.all_layers || layer == 0;
}
#endif

void run_forward(const PolicyParams& params, const TokenSequence& tokens,
                 const TokenLayout& layout, std::span<const double> attractions,
                 const BiasConfig& bias, WindowCache& c, AttentionDump* dump) {
    const ModelConfig& cfg = params.config;
    const ParamLayout& L = params.layout;
    const auto& w = params.values;
    const Eigen::Index K = cfg.context;
    const Eigen::Index S = 3 * K;
    const Eigen::Index E = cfg.embed;
    const Eigen::Index heads = cfg.heads;
    const Eigen::Index dk = E / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

    if (static_cast<Eigen::Index>(tokens.rtg.size()) != K || tokens.states.rows() != K ||
        tokens.states.cols() != cfg.state_dim || tokens.actions.rows() != K ||
        tokens.actions.cols() != cfg.action_dim ||
        static_cast<Eigen::Index>(layout.seq_len()) != S) {
        throw std::invalid_argument("token sequence does not match model shape");
    }

    c.x_raw.resize(S, E);
    const ConstMatMap state_w = mat(w, L.state_w);
    const ConstMatMap action_w = mat(w, L.action_w);
    for (Eigen::Index k = 0; k < K; ++k) {
        c.x_raw.row(3 * k) = (tokens.rtg[static_cast<std::size_t>(k)] / cfg.rtg_scale) *
                                 row(w, L.rtg_w) +
                             row(w, L.rtg_b);
        c.x_raw.row(3 * k + 1) = tokens.states.row(k) * state_w + row(w, L.state_b);
        c.x_raw.row(3 * k + 2) = tokens.actions.row(k) * action_w + row(w, L.action_b);
        if (cfg.positional) {
            const RowVec p = mat(w, L.pos).row(k);
            c.x_raw.row(3 * k) += p;
            c.x_raw.row(3 * k + 1) += p;
            c.x_raw.row(3 * k + 2) += p;
        }
    }
    Mat x = layer_norm(c.x_raw, row(w, L.embed_ln_g), row(w, L.embed_ln_b), c.embed_ln);

    const AttentionMask mask = causal_mask(layout);
#ifndef EWAVQ_NO_ATTENTION_BIAS
    const std::vector<double> col_bias = column_bias(attractions, layout, bias);
#else
    (void)attractions;
#endif

    c.layers.resize(static_cast<std::size_t>(cfg.layers));
    std::vector<double> row_buf(static_cast<std::size_t>(S));
    std::vector<double> prob_buf(static_cast<std::size_t>(S));
    for (int l = 0; l < cfg.layers; ++l) {
        const LayerSlots& ls = L.layers[static_cast<std::size_t>(l)];
        LayerCache& lc = c.layers[static_cast<std::size_t>(l)];
        lc.x_in = x;
        lc.a = layer_norm(x, row(w, ls.ln1_g), row(w, ls.ln1_b), lc.ln1);
        lc.q = lc.a * mat(w, ls.wq);
        lc.q.rowwise() += row(w, ls.bq);
        lc.k = lc.a * mat(w, ls.wk);
        lc.k.rowwise() += row(w, ls.bk);
        lc.v = lc.a * mat(w, ls.wv);
        lc.v.rowwise() += row(w, ls.bv);

        lc.probs.resize(static_cast<std::size_t>(heads));
        lc.concat.resize(S, E);
#ifndef EWAVQ_NO_ATTENTION_BIAS
        const bool use_bias = bias_enabled_for_layer(bias, l);
#else
        (void)bias;
#endif
        for (Eigen::Index h = 0; h < heads; ++h) {
            const Mat scores = (lc.q.middleCols(h * dk, dk) *
                                lc.k.middleCols(h * dk, dk).transpose()) *
                               scale;
            Mat& p = lc.probs[static_cast<std::size_t>(h)];
            p.resize(S, S);
            for (Eigen::Index r = 0; r < S; ++r) {
                for (Eigen::Index col = 0; col < S; ++col) {
                    double logit = scores(r, col);
#ifndef EWAVQ_NO_ATTENTION_BIAS
                    if (use_bias) logit += col_bias[static_cast<std::size_t>(col)];
#endif
                    row_buf[static_cast<std::size_t>(col)] = logit;
                }
                masked_softmax_row(row_buf, mask, static_cast<std::size_t>(r), prob_buf);
                for (Eigen::Index col = 0; col < S; ++col) {
                    p(r, col) = prob_buf[static_cast<std::size_t>(col)];
                }
                if (dump != nullptr) {
                    std::vector<double> pre(static_cast<std::size_t>(S));
                    for (Eigen::Index col = 0; col < S; ++col) {
                        pre[static_cast<std::size_t>(col)] = scores(r, col);
                        if (mask(static_cast<std::size_t>(r), static_cast<std::size_t>(col))) {
                            dump->logits.push_back({static_cast<std::size_t>(l), 0,
                                                    static_cast<std::size_t>(h),
                                                    static_cast<std::size_t>(r),
                                                    static_cast<std::size_t>(col),
                                                    scores(r, col),
                                                    row_buf[static_cast<std::size_t>(col)]});
                        }
                    }
                    std::vector<double> base(static_cast<std::size_t>(S));
                    masked_softmax_row(pre, mask, static_cast<std::size_t>(r), base);
                    dump->drift.push_back({static_cast<std::size_t>(l), 0,
                                           static_cast<std::size_t>(h),
                                           static_cast<std::size_t>(r),
                                           tv_distance(base, prob_buf)});
                }
            }
            lc.concat.middleCols(h * dk, dk) = p * lc.v.middleCols(h * dk, dk);
        }
        Mat attn = lc.concat * mat(w, ls.wo);
        attn.rowwise() += row(w, ls.bo);
        lc.x_mid = x + attn;

        lc.b = layer_norm(lc.x_mid, row(w, ls.ln2_g), row(w, ls.ln2_b), lc.ln2);
        lc.h_pre = lc.b * mat(w, ls.w1);
        lc.h_pre.rowwise() += row(w, ls.b1);
        lc.h_act = lc.h_pre.unaryExpr([](double v) { return gelu(v); });
        Mat mlp = lc.h_act * mat(w, ls.w2);
        mlp.rowwise() += row(w, ls.b2);
        x = lc.x_mid + mlp;
        if (!x.allFinite()) {
            throw std::runtime_error("non-finite activation in layer " + std::to_string(l));
        }
    }

    c.y = layer_norm(x, row(w, L.final_ln_g), row(w, L.final_ln_b), c.final_ln);

    Mat state_rows(K, E);
    for (Eigen::Index k = 0; k < K; ++k) state_rows.row(k) = c.y.row(3 * k + 1);
    c.mean_pre = state_rows * mat(w, L.mean_w);
    c.mean_pre.rowwise() += row(w, L.mean_b);
    c.log_std_pre = state_rows * mat(w, L.log_std_w);
    c.log_std_pre.rowwise() += row(w, L.log_std_b);

    const double half_range = 0.5 * (cfg.log_std_max - cfg.log_std_min);
    c.out.mean = c.mean_pre.array().tanh();
    c.out.log_std =
        (cfg.log_std_min + half_range * (c.log_std_pre.array().tanh() + 1.0)).matrix();
    c.out.valid = tokens.valid;
    if (!c.out.mean.allFinite() || !c.out.log_std.allFinite()) {
        throw std::runtime_error("non-finite activation in policy head");
    }
}

// Backpropagates d_mean / d_log_std (K x D, already scaled) through the window.
void run_backward(const PolicyParams& params, const TokenSequence& tokens,
                  const WindowCache& c, const Mat& d_mean, const Mat& d_log_std,
                  std::vector<double>& g) {
    const ModelConfig& cfg = params.config;
    const ParamLayout& L = params.layout;
    const auto& w = params.values;
    const Eigen::Index K = cfg.context;
    const Eigen::Index S = 3 * K;
    const Eigen::Index E = cfg.embed;
    const Eigen::Index heads = cfg.heads;
    const Eigen::Index dk = E / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
    const double half_range = 0.5 * (cfg.log_std_max - cfg.log_std_min);

    const Mat d_mean_pre = d_mean.array() * (1.0 - c.out.mean.array().square());
    const Mat d_log_std_pre =
        d_log_std.array() * half_range * (1.0 - c.log_std_pre.array().tanh().square());

    Mat state_rows(K, E);
    for (Eigen::Index k = 0; k < K; ++k) state_rows.row(k) = c.y.row(3 * k + 1);
    mat(g, L.mean_w) += state_rows.transpose() * d_mean_pre;
    row(g, L.mean_b) += d_mean_pre.colwise().sum();
    mat(g, L.log_std_w) += state_rows.transpose() * d_log_std_pre;
    row(g, L.log_std_b) += d_log_std_pre.colwise().sum();
    const Mat d_state_rows = d_mean_pre * mat(w, L.mean_w).transpose() +
                             d_log_std_pre * mat(w, L.log_std_w).transpose();

    Mat dy = Mat::Zero(S, E);
    for (Eigen::Index k = 0; k < K; ++k) dy.row(3 * k + 1) = d_state_rows.row(k);
    Mat dx = layer_norm_backward(dy, row(w, L.final_ln_g), c.final_ln, row(g, L.final_ln_g),
                                 row(g, L.final_ln_b));

    for (int l = cfg.layers - 1; l >= 0; --l) {
        const LayerSlots& ls = L.layers[static_cast<std::size_t>(l)];
        const LayerCache& lc = c.layers[static_cast<std::size_t>(l)];

        // MLP branch.
        mat(g, ls.w2) += lc.h_act.transpose() * dx;
        row(g, ls.b2) += dx.colwise().sum();
        const Mat d_h_act = dx * mat(w, ls.w2).transpose();
        const Mat d_h_pre =
            d_h_act.array() * lc.h_pre.unaryExpr([](double v) { return gelu_grad(v); }).array();
        mat(g, ls.w1) += lc.b.transpose() * d_h_pre;
        row(g, ls.b1) += d_h_pre.colwise().sum();
        const Mat d_b = d_h_pre * mat(w, ls.w1).transpose();
        Mat d_mid = dx + layer_norm_backward(d_b, row(w, ls.ln2_g), lc.ln2, row(g, ls.ln2_g),
                                             row(g, ls.ln2_b));

        // Attention branch.
        mat(g, ls.wo) += lc.concat.transpose() * d_mid;
        row(g, ls.bo) += d_mid.colwise().sum();
        const Mat d_concat = d_mid * mat(w, ls.wo).transpose();
        Mat dq(S, E), dkm(S, E), dv(S, E);
        for (Eigen::Index h = 0; h < heads; ++h) {
            const Mat& p = lc.probs[static_cast<std::size_t>(h)];
            const auto d_out = d_concat.middleCols(h * dk, dk);
            const Mat dp = d_out * lc.v.middleCols(h * dk, dk).transpose();
            dv.middleCols(h * dk, dk) = p.transpose() * d_out;
            const Eigen::VectorXd row_dot = (dp.array() * p.array()).rowwise().sum();
            const Mat ds = p.array() * (dp.colwise() - row_dot).array();
            dq.middleCols(h * dk, dk) = (ds * lc.k.middleCols(h * dk, dk)) * scale;
            dkm.middleCols(h * dk, dk) = (ds.transpose() * lc.q.middleCols(h * dk, dk)) * scale;
        }
        mat(g, ls.wq) += lc.a.transpose() * dq;
        row(g, ls.bq) += dq.colwise().sum();
        mat(g, ls.wk) += lc.a.transpose() * dkm;
        row(g, ls.bk) += dkm.colwise().sum();
        mat(g, ls.wv) += lc.a.transpose() * dv;
        row(g, ls.bv) += dv.colwise().sum();
        const Mat d_a = dq * mat(w, ls.wq).transpose() + dkm * mat(w, ls.wk).transpose() +
                        dv * mat(w, ls.wv).transpose();
        dx = d_mid + layer_norm_backward(d_a, row(w, ls.ln1_g), lc.ln1, row(g, ls.ln1_g),
                                         row(g, ls.ln1_b));
    }

    const Mat d_raw = layer_norm_backward(dx, row(w, L.embed_ln_g), c.embed_ln,
                                          row(g, L.embed_ln_g), row(g, L.embed_ln_b));
    auto g_state_w = mat(g, L.state_w);
    auto g_action_w = mat(g, L.action_w);
    for (Eigen::Index k = 0; k < K; ++k) {
        const double rtg = tokens.rtg[static_cast<std::size_t>(k)] / cfg.rtg_scale;
        row(g, L.rtg_w) += rtg * d_raw.row(3 * k);
        row(g, L.rtg_b) += d_raw.row(3 * k);
        g_state_w += tokens.states.row(k).transpose() * d_raw.row(3 * k + 1);
        row(g, L.state_b) += d_raw.row(3 * k + 1);
        g_action_w += tokens.actions.row(k).transpose() * d_raw.row(3 * k + 2);
        row(g, L.action_b) += d_raw.row(3 * k + 2);
        if (cfg.positional) {
            mat(g, L.pos).row(k) += d_raw.row(3 * k) + d_raw.row(3 * k + 1) + d_raw.row(3 * k + 2);
        }
    }
}

std::size_t count_valid(const Batch& batch) {
    std::size_t n = 0;
    for (const auto& win : batch) n += win.steps.size();
    return n;
}

}  // namespace

void ModelConfig::validate() const {
    if (state_dim < 1 || action_dim < 1) throw std::invalid_argument("dimensions must be >= 1");
    if (context < 1) throw std::invalid_argument("context must be >= 1");
    if (embed < 1 || heads < 1 || embed % heads != 0) {
        throw std::invalid_argument("embed must be a positive multiple of heads");
    }
    if (layers < 0) throw std::invalid_argument("layers must be >= 0");
    if (mlp_hidden < 0) throw std::invalid_argument("mlp_hidden must be >= 0");
    if (!(log_std_min < log_std_max)) throw std::invalid_argument("log std bounds inverted");
    if (!(rtg_scale > 0.0)) throw std::invalid_argument("rtg_scale must be positive");
    if (!(init_std >= 0.0)) throw std::invalid_argument("init_std must be >= 0");
    if (!(init_log_std > log_std_min && init_log_std < log_std_max)) {
        throw std::invalid_argument("init_log_std must lie strictly inside the log std bounds");
    }
}

ParamLayout ParamLayout::make(const ModelConfig& cfg) {
    cfg.validate();
    ParamLayout p;
    std::size_t off = 0;
    auto slot = [&off](std::size_t rows, std::size_t cols) {
        ParamSlot s{off, rows, cols};
        off += rows * cols;
        return s;
    };
    const auto E = static_cast<std::size_t>(cfg.embed);
    const auto F = static_cast<std::size_t>(cfg.hidden());
    const auto ds = static_cast<std::size_t>(cfg.state_dim);
    const auto da = static_cast<std::size_t>(cfg.action_dim);
    p.rtg_w = slot(1, E);
    p.rtg_b = slot(1, E);
    p.state_w = slot(ds, E);
    p.state_b = slot(1, E);
    p.action_w = slot(da, E);
    p.action_b = slot(1, E);
    p.pos = cfg.positional ? slot(static_cast<std::size_t>(cfg.context), E) : ParamSlot{off, 0, 0};
    p.embed_ln_g = slot(1, E);
    p.embed_ln_b = slot(1, E);
    for (int l = 0; l < cfg.layers; ++l) {
        LayerSlots ls;
        ls.ln1_g = slot(1, E);
        ls.ln1_b = slot(1, E);
        ls.wq = slot(E, E);
        ls.bq = slot(1, E);
        ls.wk = slot(E, E);
        ls.bk = slot(1, E);
        ls.wv = slot(E, E);
        ls.bv = slot(1, E);
        ls.wo = slot(E, E);
        ls.bo = slot(1, E);
        ls.ln2_g = slot(1, E);
        ls.ln2_b = slot(1, E);
        ls.w1 = slot(E, F);
        ls.b1 = slot(1, F);
        ls.w2 = slot(F, E);
        ls.b2 = slot(1, E);
        p.layers.push_back(ls);
    }
    p.final_ln_g = slot(1, E);
    p.final_ln_b = slot(1, E);
    p.mean_w = slot(E, da);
    p.mean_b = slot(1, da);
    p.log_std_w = slot(E, da);
    p.log_std_b = slot(1, da);
    p.total = off;
    return p;
}

PolicyParams PolicyParams::init(const ModelConfig& cfg, std::uint64_t seed, double lambda0) {
    if (!(lambda0 >= 0.0)) throw std::invalid_argument("initial lambda must be >= 0");
    PolicyParams p{cfg, ParamLayout::make(cfg), {}, lambda0};
    p.values.assign(p.layout.total, 0.0);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, cfg.init_std);
    auto fill = [&](const ParamSlot& s) {
        for (std::size_t i = 0; i < s.size(); ++i) p.values[s.offset + i] = normal(rng);
    };
    auto ones = [&](const ParamSlot& s) {
        std::fill_n(p.values.begin() + static_cast<std::ptrdiff_t>(s.offset), s.size(), 1.0);
    };
    const auto& L = p.layout;
    fill(L.rtg_w);
    fill(L.state_w);
    fill(L.action_w);
    fill(L.pos);
    ones(L.embed_ln_g);
    for (const auto& ls : L.layers) {
        ones(ls.ln1_g);
        fill(ls.wq);
        fill(ls.wk);
        fill(ls.wv);
        fill(ls.wo);
        ones(ls.ln2_g);
        fill(ls.w1);
        fill(ls.w2);
    }
    ones(L.final_ln_g);
    fill(L.mean_w);
    fill(L.log_std_w);
    const double half_range = 0.5 * (cfg.log_std_max - cfg.log_std_min);
    const double log_std_bias = std::atanh((cfg.init_log_std - cfg.log_std_min) / half_range - 1.0);
    std::fill_n(p.values.begin() + static_cast<std::ptrdiff_t>(L.log_std_b.offset),
                L.log_std_b.size(), log_std_bias);
    return p;
}

std::vector<double> return_to_go(std::span<const double> rewards, double gamma) {
    if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("gamma must lie in (0, 1]");
    std::vector<double> g(rewards.size());
    double acc = 0.0;
    for (std::size_t i = rewards.size(); i-- > 0;) {
        acc = rewards[i] + gamma * acc;
        g[i] = acc;
    }
    return g;
}

Tokenized tokenize(const TrajectoryWindow& window, const ModelConfig& cfg) {
    const auto K = static_cast<std::size_t>(cfg.context);
    const std::size_t T = window.steps.size();
    if (T > K) throw std::invalid_argument("window longer than context");
    Tokenized out;
    auto& tok = out.tokens;
    tok.rtg.assign(K, 0.0);
    tok.states = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(K), cfg.state_dim);
    tok.actions = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(K), cfg.action_dim);
    tok.valid.assign(K, 0);

    auto& lay = out.layout;
    lay.kinds.assign(3 * K, TokenKind::Pad);
    lay.timestep.resize(3 * K);
    const std::size_t pad = K - T;
    for (std::size_t slot = 0; slot < K; ++slot) {
        for (std::size_t j = 0; j < 3; ++j) lay.timestep[3 * slot + j] = slot;
        lay.action_columns.push_back(3 * slot + 2);
        if (slot < pad) {
            lay.action_codes.push_back(0);
            continue;
        }
        const TimeStep& st = window.steps[slot - pad];
        if (st.state.size() != static_cast<std::size_t>(cfg.state_dim) ||
            st.action.size() != static_cast<std::size_t>(cfg.action_dim)) {
            throw std::invalid_argument("window step dimension mismatch");
        }
        tok.rtg[slot] = st.rtg;
        for (int k = 0; k < cfg.state_dim; ++k) {
            tok.states(static_cast<Eigen::Index>(slot), k) = st.state[static_cast<std::size_t>(k)];
        }
        for (int k = 0; k < cfg.action_dim; ++k) {
            tok.actions(static_cast<Eigen::Index>(slot), k) =
                st.action[static_cast<std::size_t>(k)];
        }
        tok.valid[slot] = 1;
        lay.kinds[3 * slot] = TokenKind::Return;
        lay.kinds[3 * slot + 1] = TokenKind::State;
        lay.kinds[3 * slot + 2] = TokenKind::Action;
        lay.action_codes.push_back(st.code);
    }
    return out;
}

PolicyOutput forward(const PolicyParams& params, const TokenSequence& tokens,
                     const TokenLayout& layout, std::span<const double> attractions,
                     const BiasConfig& bias, AttentionDump* dump) {
    WindowCache c;
    run_forward(params, tokens, layout, attractions, bias, c, dump);
    return std::move(c.out);
}

double entropy_term(const std::vector<PolicyOutput>& outputs) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& o : outputs) {
        for (Eigen::Index k = 0; k < o.log_std.rows(); ++k) {
            if (!o.valid[static_cast<std::size_t>(k)]) continue;
            sum += 0.5 * static_cast<double>(o.log_std.cols()) * (1.0 + kLog2Pi) +
                   o.log_std.row(k).sum();
            ++n;
        }
    }
    return n ? sum / static_cast<double>(n) : 0.0;
}

LossGrad loss_and_grad(const PolicyParams& params, const Batch& batch,
                       std::span<const double> attractions, const BiasConfig& bias,
                       double beta_entropy) {
    LossGrad res;
    res.grad.assign(params.size(), 0.0);
    res.steps = count_valid(batch);
    if (res.steps == 0) {
        res.lagrangian = lagrangian(0.0, 0.0, params.lambda, beta_entropy);
        return res;
    }
    const double inv_n = 1.0 / static_cast<double>(res.steps);
    const double lambda = params.lambda;
    const int D = params.config.action_dim;
    double nll_sum = 0.0, ent_sum = 0.0;
    WindowCache c;
    for (const auto& win : batch) {
        const Tokenized t = tokenize(win, params.config);
        run_forward(params, t.tokens, t.layout, attractions, bias, c, nullptr);
        const auto K = static_cast<Eigen::Index>(params.config.context);
        Mat d_mean = Mat::Zero(K, D);
        Mat d_log_std = Mat::Zero(K, D);
        for (Eigen::Index k = 0; k < K; ++k) {
            if (!t.tokens.valid[static_cast<std::size_t>(k)]) continue;
            for (Eigen::Index j = 0; j < D; ++j) {
                const double ls = c.out.log_std(k, j);
                const double inv_sigma = std::exp(-ls);
                const double z = (t.tokens.actions(k, j) - c.out.mean(k, j)) * inv_sigma;
                nll_sum += 0.5 * z * z + ls + 0.5 * kLog2Pi;
                ent_sum += 0.5 * (1.0 + kLog2Pi) + ls;
                d_mean(k, j) = -z * inv_sigma * inv_n;
                d_log_std(k, j) = (1.0 - z * z - lambda) * inv_n;
            }
        }
        run_backward(params, t.tokens, c, d_mean, d_log_std, res.grad);
    }
    res.nll = nll_sum * inv_n;
    res.entropy = ent_sum * inv_n;
    if (!std::isfinite(res.nll)) throw std::runtime_error("non-finite negative log-likelihood");
    res.lagrangian = lagrangian(res.nll, res.entropy, lambda, beta_entropy);
    return res;
}

double nll_loss(const PolicyParams& params, const Batch& batch,
                std::span<const double> attractions, const BiasConfig& bias) {
    if (batch.empty()) throw std::invalid_argument("empty batch");
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& win : batch) {
        const Tokenized t = tokenize(win, params.config);
        const PolicyOutput o = forward(params, t.tokens, t.layout, attractions, bias);
        for (Eigen::Index k = 0; k < o.mean.rows(); ++k) {
            if (!o.valid[static_cast<std::size_t>(k)]) continue;
            for (Eigen::Index j = 0; j < o.mean.cols(); ++j) {
                const double sigma = std::exp(o.log_std(k, j));
                if (!(sigma > 0.0)) throw std::runtime_error("zero variance");
                const double z = (t.tokens.actions(k, j) - o.mean(k, j)) / sigma;
                sum += 0.5 * z * z + o.log_std(k, j) + 0.5 * kLog2Pi;
            }
            ++n;
        }
    }
    if (n == 0) throw std::invalid_argument("batch has no valid steps");
    return sum / static_cast<double>(n);
}

TrainDiagnostics train_step(PolicyParams& params, const Batch& batch,
                            std::span<const double> attractions, const BiasConfig& bias,
                            const OptimizerConfig& opt, OptimizerState& state) {
    if (state.m.size() != params.size()) state = OptimizerState(params.size());
    LossGrad lg = loss_and_grad(params, batch, attractions, bias, opt.beta_entropy);
    double sq = 0.0;
    for (double v : lg.grad) sq += v * v;
    if (!std::isfinite(sq) || !std::isfinite(lg.lagrangian)) {
        throw std::runtime_error("non-finite gradient");
    }

    ++state.step;
    const double warm = opt.warmup_steps > 0
                            ? std::min(1.0, static_cast<double>(state.step) /
                                                static_cast<double>(opt.warmup_steps))
                            : 1.0;
    const double lr = opt.learning_rate * warm;
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.values.size(); ++i) {
        const double gi = lg.grad[i];
        double update = gi;
        if (opt.use_moments) {
            state.m[i] = opt.beta1 * state.m[i] + (1.0 - opt.beta1) * gi;
            state.v[i] = opt.beta2 * state.v[i] + (1.0 - opt.beta2) * gi * gi;
            update = (state.m[i] / bc1) / (std::sqrt(state.v[i] / bc2) + opt.adam_eps);
        }
        params.values[i] -= lr * (update + opt.weight_decay * params.values[i]);
    }
    params.lambda = std::max(0.0, params.lambda + opt.lambda_lr * (opt.beta_entropy - lg.entropy));

    return {lg.nll, lg.entropy, lg.lagrangian, params.lambda, std::sqrt(sq), lr};
}

GradCheckResult grad_check(const PolicyParams& params, const Batch& batch,
                           std::span<const double> attractions, const BiasConfig& bias,
                           double beta_entropy, double h) {
    const LossGrad analytic = loss_and_grad(params, batch, attractions, bias, beta_entropy);
    GradCheckResult res;
    PolicyParams probe = params;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double orig = probe.values[i];
        probe.values[i] = orig + h;
        const double up = loss_and_grad(probe, batch, attractions, bias, beta_entropy).lagrangian;
        probe.values[i] = orig - h;
        const double down =
            loss_and_grad(probe, batch, attractions, bias, beta_entropy).lagrangian;
        probe.values[i] = orig;
        const double numeric = (up - down) / (2.0 * h);
        const double a = analytic.grad[i];
        const double abs_err = std::abs(a - numeric);
        const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), 1e-6});
        if (rel > res.max_rel_error) {
            res.max_rel_error = rel;
            res.worst_index = i;
        }
        res.max_abs_error = std::max(res.max_abs_error, abs_err);
        ++res.checked;
    }
    return res;
}

namespace {

constexpr char kCheckpointMagic[8] = {'E', 'W', 'V', 'Q', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void put(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw std::runtime_error("truncated checkpoint");
    return v;
}

void put_doubles(std::ofstream& out, const std::vector<double>& v) {
    put<std::uint64_t>(out, v.size());
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size() * sizeof(double)));
}

std::vector<double> get_doubles(std::ifstream& in) {
    const auto n = get<std::uint64_t>(in);
    if (n > (1ULL << 32)) throw std::runtime_error("corrupt checkpoint");
    std::vector<double> v(n);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) throw std::runtime_error("truncated checkpoint");
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const PolicyParams& params,
                     const OptimizerState& state, std::uint64_t config_hash) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open checkpoint " + path);
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    put(out, kCheckpointVersion);
    const ModelConfig& c = params.config;
    for (int v : {c.state_dim, c.action_dim, c.context, c.embed, c.layers, c.heads, c.mlp_hidden}) {
        put<std::int32_t>(out, v);
    }
    put<std::uint8_t>(out, c.positional ? 1 : 0);
    for (double v : {c.log_std_min, c.log_std_max, c.rtg_scale, c.init_std, c.init_log_std}) {
        put(out, v);
    }
    put_doubles(out, params.values);
    put(out, params.lambda);
    put_doubles(out, state.m);
    put_doubles(out, state.v);
    put<std::uint64_t>(out, state.step);
    put<std::uint64_t>(out, config_hash);
    if (!out) throw std::runtime_error("checkpoint write failed");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
        throw std::runtime_error("not a checkpoint file");
    }
    if (get<std::uint32_t>(in) != kCheckpointVersion) {
        throw std::runtime_error("unsupported checkpoint version");
    }
    ModelConfig c;
    c.state_dim = get<std::int32_t>(in);
    c.action_dim = get<std::int32_t>(in);
    c.context = get<std::int32_t>(in);
    c.embed = get<std::int32_t>(in);
    c.layers = get<std::int32_t>(in);
    c.heads = get<std::int32_t>(in);
    c.mlp_hidden = get<std::int32_t>(in);
    c.positional = get<std::uint8_t>(in) != 0;
    c.log_std_min = get<double>(in);
    c.log_std_max = get<double>(in);
    c.rtg_scale = get<double>(in);
    c.init_std = get<double>(in);
    c.init_log_std = get<double>(in);

    Checkpoint ck{PolicyParams{c, ParamLayout::make(c), {}, 0.0}, OptimizerState{}, 0};
    ck.params.values = get_doubles(in);
    if (ck.params.values.size() != ck.params.layout.total) {
        throw std::runtime_error("checkpoint parameter count mismatch");
    }
    ck.params.lambda = get<double>(in);
    ck.state.m = get_doubles(in);
    ck.state.v = get_doubles(in);
    ck.state.step = get<std::uint64_t>(in);
    ck.config_hash = get<std::uint64_t>(in);
    return ck;
}

}  // namespace ewavq
