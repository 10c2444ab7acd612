#pragma once

#include "ewavq/attention_bias.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace ewavq {

// Shape and head settings of the causal transformer policy.
struct ModelConfig {
    int state_dim = 3;
    int action_dim = 3;
    int context = 20;     // K triplets
    int embed = 8;
    int layers = 1;
    int heads = 2;
    int mlp_hidden = 0;   // 0 -> 4 * embed
    bool positional = true;
    double log_std_min = -5.0;
    double log_std_max = 2.0;
    double rtg_scale = 10.0;
    double init_std = 0.1;
    double init_log_std = -0.5;  // starting policy log std, inside the bounds

    int hidden() const { return mlp_hidden > 0 ? mlp_hidden : 4 * embed; }
    void validate() const;
};

// Offset and shape of one parameter tensor inside the flat parameter vector.
// Matrices are stored column-major, rows = fan-in.
struct ParamSlot {
    std::size_t offset = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t size() const { return rows * cols; }
};

struct LayerSlots {
    ParamSlot ln1_g, ln1_b;
    ParamSlot wq, bq, wk, bk, wv, bv, wo, bo;
    ParamSlot ln2_g, ln2_b;
    ParamSlot w1, b1, w2, b2;
};

struct ParamLayout {
    ParamSlot rtg_w, rtg_b, state_w, state_b, action_w, action_b, pos;
    ParamSlot embed_ln_g, embed_ln_b;
    std::vector<LayerSlots> layers;
    ParamSlot final_ln_g, final_ln_b;
    ParamSlot mean_w, mean_b, log_std_w, log_std_b;
    std::size_t total = 0;

    static ParamLayout make(const ModelConfig& cfg);
};

// Every learnable weight of the policy plus the dual variable lambda >= 0.
struct PolicyParams {
    ModelConfig config;
    ParamLayout layout;
    std::vector<double> values;
    double lambda = 0.1;

    static PolicyParams init(const ModelConfig& cfg, std::uint64_t seed, double lambda0 = 0.1);
    std::size_t size() const { return values.size(); }
};

struct TimeStep {
    double rtg = 0.0;
    std::vector<double> state;
    std::vector<double> action;
    std::size_t code = 0;
    double reward = 0.0;
};

// Up to K consecutive steps of one trajectory; shorter windows are left-padded
// when tokenized.
struct TrajectoryWindow {
    std::vector<TimeStep> steps;
};

using Batch = std::vector<TrajectoryWindow>;

// g_t = sum_{k >= t} gamma^(k - t) r_k.
std::vector<double> return_to_go(std::span<const double> rewards, double gamma);

// Raw token inputs for K slots in (return, state, action) order.
struct TokenSequence {
    std::vector<double> rtg;       // K
    Eigen::MatrixXd states;        // K x state_dim
    Eigen::MatrixXd actions;       // K x action_dim
    std::vector<std::uint8_t> valid;  // K
};

struct Tokenized {
    TokenSequence tokens;
    TokenLayout layout;
};

Tokenized tokenize(const TrajectoryWindow& window, const ModelConfig& cfg);

// Per-slot diagonal Gaussian: tanh-squashed mean and bounded log std.
struct PolicyOutput {
    Eigen::MatrixXd mean;     // K x action_dim
    Eigen::MatrixXd log_std;  // K x action_dim
    std::vector<std::uint8_t> valid;
};

PolicyOutput forward(const PolicyParams& params, const TokenSequence& tokens,
                     const TokenLayout& layout, std::span<const double> attractions,
                     const BiasConfig& bias, AttentionDump* dump = nullptr);

// Mean Gaussian negative log-likelihood over all valid steps of the batch.
double nll_loss(const PolicyParams& params, const Batch& batch,
                std::span<const double> attractions, const BiasConfig& bias);

// Mean closed-form diagonal-Gaussian entropy over valid steps.
double entropy_term(const std::vector<PolicyOutput>& outputs);

inline double lagrangian(double nll, double entropy, double lambda, double beta_entropy) {
    return nll + lambda * (beta_entropy - entropy);
}

struct LossGrad {
    double nll = 0.0;
    double entropy = 0.0;
    double lagrangian = 0.0;
    std::size_t steps = 0;
    std::vector<double> grad;  // dL/dtheta, same layout as PolicyParams::values
};

// Lagrangian and its analytic gradient with respect to every weight.
LossGrad loss_and_grad(const PolicyParams& params, const Batch& batch,
                       std::span<const double> attractions, const BiasConfig& bias,
                       double beta_entropy);

struct OptimizerConfig {
    double learning_rate = 1e-3;
    double weight_decay = 5e-4;
    int warmup_steps = 50;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    bool use_moments = true;  // false -> plain gradient descent
    double lambda_lr = 1e-2;
    double beta_entropy = -3.0;
};

struct OptimizerState {
    std::vector<double> m;
    std::vector<double> v;
    std::uint64_t step = 0;

    explicit OptimizerState(std::size_t n = 0) : m(n, 0.0), v(n, 0.0) {}
    bool operator==(const OptimizerState&) const = default;
};

struct TrainDiagnostics {
    double nll = 0.0;
    double entropy = 0.0;
    double lagrangian = 0.0;
    double lambda = 0.0;
    double grad_norm = 0.0;
    double learning_rate = 0.0;
};

// One descent step on theta followed by one projected ascent step on lambda.
// Throws without touching params if the gradient is not finite.
TrainDiagnostics train_step(PolicyParams& params, const Batch& batch,
                            std::span<const double> attractions, const BiasConfig& bias,
                            const OptimizerConfig& opt, OptimizerState& state);

struct GradCheckResult {
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    std::size_t worst_index = 0;
    std::size_t checked = 0;
};

// Central finite differences (h = 1e-5) against the analytic gradient for every
// weight. Relative error is |a - n| / max(|a|, |n|, 1e-6).
GradCheckResult grad_check(const PolicyParams& params, const Batch& batch,
                           std::span<const double> attractions, const BiasConfig& bias,
                           double beta_entropy, double h = 1e-5);

// Versioned binary checkpoint; loading restores every double bit for bit.
void save_checkpoint(const std::string& path, const PolicyParams& params,
                     const OptimizerState& state, std::uint64_t config_hash);

struct Checkpoint {
    PolicyParams params;
    OptimizerState state;
    std::uint64_t config_hash = 0;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace ewavq
