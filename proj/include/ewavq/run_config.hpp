#pragma once

#include "ewavq/attention_bias.hpp"
#include "ewavq/backbone.hpp"
#include "ewavq/ewa_memory.hpp"
#include "ewavq/toy_env.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace ewavq {

// Every knob of an online fine-tuning run. Defaults are the toy-scale values;
// the attraction and bias defaults are the published ones.
struct RunConfig {
    std::uint64_t seed = 0;

    // attraction memory
    double phi = 0.05;
    double delta = 0.8;
    double reward_clip = 1.0;
    bool ewa_vq = true;  // false skips routing and attraction updates entirely

    // attention bias
    double beta_bias = 0.05;
    double eps_clip = 0.1;
    bool bias_all_layers = true;

    // codebook
    int codes = 27;
    int bins = 3;
    std::string env_name = "toy3";

    // environment
    int action_dim = 3;
    int horizon = 40;
    double step_size = 0.2;
    double goal_radius = 0.05;

    // backbone
    int context = 20;
    double gamma = 1.0;
    int embed = 8;
    int layers = 1;
    int heads = 2;
    int mlp_hidden = 0;
    bool positional = true;
    double log_std_min = -5.0;
    double log_std_max = 2.0;
    double rtg_scale = 10.0;
    double init_std = 0.1;
    double init_log_std = -0.5;

    // schedule
    int batch_size = 64;
    int updates_per_iteration = 30;
    int iterations = 10;
    int eval_episodes = 10;
    int eval_every = 2;
    int offline_trajectories = 40;  // scripted mixed-quality behavior data
    int pretrain_updates = 100;
    int trajectories_per_iteration = 4;
    int replay_capacity = 1000;
    double online_rtg = -4.0;
    double eval_rtg = -2.0;

    // optimization
    double learning_rate = 3e-3;
    double weight_decay = 5e-4;
    int warmup_steps = 50;
    bool use_moments = true;
    double lambda_lr = 1e-2;
    double lambda_init = 0.1;
    std::string beta_entropy = "auto";  // "auto" -> -action_dim

    std::string cache_dir;
    std::string output_dir = "out";

    void validate() const;

    double beta_entropy_value() const;
    EwaParams ewa() const;
    BiasConfig bias() const;
    EnvConfig env() const;
    ModelConfig model() const;
    OptimizerConfig optimizer() const;

    // Cache directory after the EWAVQ_CACHE_DIR override.
    std::string effective_cache_dir() const;

    // "key=value" lines in registry order, paths omitted; doubles printed
    // round-trip exact.
    std::string canonical_text() const;
    std::uint64_t hash() const;
};

struct ConfigField {
    std::string name;
    std::string help;
    bool hashed = true;  // paths are excluded from the config hash
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;  // throws invalid_argument
};

const std::vector<ConfigField>& config_fields();

// Sets one field by name; unknown keys and malformed values throw invalid_argument.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);

// Flat "key = value" text, '#' starts a comment. Later keys win.
RunConfig parse_config(const std::string& text, RunConfig base = {});
RunConfig load_config(const std::string& path, RunConfig base = {});

std::uint64_t fnv1a64(const std::string& bytes);

}  // namespace ewavq
