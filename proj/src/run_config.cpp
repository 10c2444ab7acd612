#include "ewavq/run_config.hpp"

#include "ewavq/csv_util.hpp"

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <type_traits>

namespace ewavq {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
    T v{};
    const char* first = text.data();
    const char* last = first + text.size();
    const auto [ptr, ec] = std::from_chars(first, last, v);
    if (text.empty() || ec != std::errc() || ptr != last) {
        throw std::invalid_argument("invalid value for " + key + ": '" + text + "'");
    }
    return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
    if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
    if (text == "false" || text == "0" || text == "no" || text == "off") return false;
    throw std::invalid_argument("invalid value for " + key + ": '" + text + "'");
}

template <typename T>
ConfigField field(const char* name, T RunConfig::*member, const char* help,
                  bool hashed = true) {
    ConfigField f;
    f.name = name;
    f.help = help;
    f.hashed = hashed;
    if constexpr (std::is_same_v<T, double>) {
        f.get = [member](const RunConfig& c) { return format_double(c.*member); };
        f.set = [member, name](RunConfig& c, const std::string& v) {
            c.*member = parse_number<double>(name, v);
        };
    } else if constexpr (std::is_same_v<T, bool>) {
        f.get = [member](const RunConfig& c) { return std::string(c.*member ? "true" : "false"); };
        f.set = [member, name](RunConfig& c, const std::string& v) {
            c.*member = parse_bool(name, v);
        };
    } else if constexpr (std::is_same_v<T, std::string>) {
        f.get = [member](const RunConfig& c) { return c.*member; };
        f.set = [member](RunConfig& c, const std::string& v) { c.*member = v; };
    } else {
        f.get = [member](const RunConfig& c) { return std::to_string(c.*member); };
        f.set = [member, name](RunConfig& c, const std::string& v) {
            c.*member = parse_number<T>(name, v);
        };
    }
    return f;
}

void require(bool ok, const char* message) {
    if (!ok) throw std::invalid_argument(message);
}

}  // namespace

const std::vector<ConfigField>& config_fields() {
    static const std::vector<ConfigField> fields = {
        field("seed", &RunConfig::seed, "run seed"),
        field("phi", &RunConfig::phi, "attraction forgetting rate"),
        field("delta", &RunConfig::delta, "chosen-code reinforcement weight"),
        field("reward_clip", &RunConfig::reward_clip, "clip bound R on centered rewards"),
        field("ewa_vq", &RunConfig::ewa_vq, "route actions and update attractions"),
        field("beta_bias", &RunConfig::beta_bias, "attention bias scale (0 = control)"),
        field("eps_clip", &RunConfig::eps_clip, "attention bias clip"),
        field("bias_all_layers", &RunConfig::bias_all_layers, "bias every layer, else first only"),
        field("codes", &RunConfig::codes, "requested codebook size M"),
        field("bins", &RunConfig::bins, "grid bins per dimension (0 = adaptive)"),
        field("env_name", &RunConfig::env_name, "environment tag in the cache key"),
        field("action_dim", &RunConfig::action_dim, "action and state dimension"),
        field("horizon", &RunConfig::horizon, "episode step limit"),
        field("step_size", &RunConfig::step_size, "displacement per unit action"),
        field("goal_radius", &RunConfig::goal_radius, "success radius"),
        field("context", &RunConfig::context, "context length K"),
        field("gamma", &RunConfig::gamma, "return-to-go discount"),
        field("embed", &RunConfig::embed, "embedding width"),
        field("layers", &RunConfig::layers, "transformer blocks"),
        field("heads", &RunConfig::heads, "attention heads"),
        field("mlp_hidden", &RunConfig::mlp_hidden, "MLP width (0 = 4 * embed)"),
        field("positional", &RunConfig::positional, "learned positional embeddings"),
        field("log_std_min", &RunConfig::log_std_min, "lower log-std bound"),
        field("log_std_max", &RunConfig::log_std_max, "upper log-std bound"),
        field("rtg_scale", &RunConfig::rtg_scale, "divisor on return-to-go tokens"),
        field("init_std", &RunConfig::init_std, "weight init standard deviation"),
        field("init_log_std", &RunConfig::init_log_std, "initial policy log std"),
        field("batch_size", &RunConfig::batch_size, "windows per update"),
        field("updates_per_iteration", &RunConfig::updates_per_iteration, "updates per iteration"),
        field("iterations", &RunConfig::iterations, "online iterations"),
        field("eval_episodes", &RunConfig::eval_episodes, "episodes per evaluation"),
        field("eval_every", &RunConfig::eval_every, "iterations between evaluations"),
        field("offline_trajectories", &RunConfig::offline_trajectories,
              "scripted behavior trajectories seeding the buffer"),
        field("pretrain_updates", &RunConfig::pretrain_updates,
              "updates on the offline data before the first evaluation"),
        field("trajectories_per_iteration", &RunConfig::trajectories_per_iteration,
              "trajectories collected per iteration"),
        field("replay_capacity", &RunConfig::replay_capacity, "replay buffer trajectories"),
        field("online_rtg", &RunConfig::online_rtg, "return-to-go target while collecting"),
        field("eval_rtg", &RunConfig::eval_rtg, "return-to-go target while evaluating"),
        field("learning_rate", &RunConfig::learning_rate, "peak learning rate"),
        field("weight_decay", &RunConfig::weight_decay, "decoupled weight decay"),
        field("warmup_steps", &RunConfig::warmup_steps, "linear warmup steps"),
        field("use_moments", &RunConfig::use_moments, "Adam moments (false = plain descent)"),
        field("lambda_lr", &RunConfig::lambda_lr, "dual step size"),
        field("lambda_init", &RunConfig::lambda_init, "initial dual variable"),
        field("beta_entropy", &RunConfig::beta_entropy, "entropy target or 'auto'"),
        field("cache_dir", &RunConfig::cache_dir, "grid table cache directory", false),
        field("output_dir", &RunConfig::output_dir, "where run outputs are written", false),
    };
    return fields;
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
    for (const auto& f : config_fields()) {
        if (f.name == key) {
            f.set(cfg, value);
            return;
        }
    }
    throw std::invalid_argument("unknown config key: " + key);
}

RunConfig parse_config(const std::string& text, RunConfig base) {
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash_pos = line.find('#');
        if (hash_pos != std::string::npos) line.resize(hash_pos);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument("config line " + std::to_string(lineno) +
                                        ": expected key = value");
        }
        set_config_value(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    base.validate();
    return base;
}

RunConfig load_config(const std::string& path, RunConfig base) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot read config " + path);
    std::ostringstream os;
    os << in.rdbuf();
    return parse_config(os.str(), std::move(base));
}

double RunConfig::beta_entropy_value() const {
    if (beta_entropy == "auto") return -static_cast<double>(action_dim);
    return parse_number<double>("beta_entropy", beta_entropy);
}

void RunConfig::validate() const {
    ewa().validate();
    bias().validate();
    env().validate();
    model().validate();
    require(codes >= 2, "codes must be >= 2");
    require(bins == 0 || (bins >= 2 && bins <= 8), "bins must be 0 or in [2, 8]");
    require(gamma > 0.0 && gamma <= 1.0, "gamma must lie in (0, 1]");
    require(batch_size >= 1, "batch_size must be >= 1");
    require(updates_per_iteration >= 0, "updates_per_iteration must be >= 0");
    require(iterations >= 0, "iterations must be >= 0");
    require(eval_episodes >= 1, "eval_episodes must be >= 1");
    require(eval_every >= 1, "eval_every must be >= 1");
    require(offline_trajectories >= 1, "offline_trajectories must be >= 1");
    require(pretrain_updates >= 0, "pretrain_updates must be >= 0");
    require(trajectories_per_iteration >= 0, "trajectories_per_iteration must be >= 0");
    require(replay_capacity >= 1, "replay_capacity must be >= 1");
    require(std::isfinite(online_rtg) && std::isfinite(eval_rtg), "RTG targets must be finite");
    require(learning_rate >= 0.0, "learning_rate must be >= 0");
    require(weight_decay >= 0.0, "weight_decay must be >= 0");
    require(warmup_steps >= 0, "warmup_steps must be >= 0");
    require(lambda_lr >= 0.0, "lambda_lr must be >= 0");
    require(lambda_init >= 0.0, "lambda_init must be >= 0");
    require(std::isfinite(beta_entropy_value()), "beta_entropy must be finite");
    require(!output_dir.empty(), "output_dir must not be empty");
}

EwaParams RunConfig::ewa() const { return {phi, delta, reward_clip}; }

BiasConfig RunConfig::bias() const { return {beta_bias, eps_clip, bias_all_layers}; }

EnvConfig RunConfig::env() const { return {action_dim, horizon, step_size, goal_radius}; }

ModelConfig RunConfig::model() const {
    ModelConfig m;
    m.state_dim = action_dim;
    m.action_dim = action_dim;
    m.context = context;
    m.embed = embed;
    m.layers = layers;
    m.heads = heads;
    m.mlp_hidden = mlp_hidden;
    m.positional = positional;
    m.log_std_min = log_std_min;
    m.log_std_max = log_std_max;
    m.rtg_scale = rtg_scale;
    m.init_std = init_std;
    m.init_log_std = init_log_std;
    return m;
}

OptimizerConfig RunConfig::optimizer() const {
    OptimizerConfig o;
    o.learning_rate = learning_rate;
    o.weight_decay = weight_decay;
    o.warmup_steps = warmup_steps;
    o.use_moments = use_moments;
    o.lambda_lr = lambda_lr;
    o.beta_entropy = beta_entropy_value();
    return o;
}

std::string RunConfig::effective_cache_dir() const {
    if (const char* env = std::getenv("EWAVQ_CACHE_DIR"); env != nullptr && *env != '\0') {
        return env;
    }
    return cache_dir;
}

std::string RunConfig::canonical_text() const {
    std::string out;
    for (const auto& f : config_fields()) {
        if (f.hashed) out += f.name + "=" + f.get(*this) + "\n";
    }
    return out;
}

std::uint64_t RunConfig::hash() const { return fnv1a64(canonical_text()); }

std::uint64_t fnv1a64(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace ewavq
