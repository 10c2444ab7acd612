#pragma once

#include "ewavq/backbone.hpp"
#include "ewavq/ewa_memory.hpp"
#include "ewavq/metrics.hpp"
#include "ewavq/replay_buffer.hpp"
#include "ewavq/run_config.hpp"
#include "ewavq/toy_env.hpp"
#include "ewavq/vq_codebook.hpp"

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace ewavq {

// Codebook, grid table, and lookup counters used to route executed actions.
struct Router {
    Codebook codebook;
    GridTable table;
    RouteStats stats;

    static Router build(const RunConfig& cfg);
    std::size_t route(std::span<const double> action) { return ewavq::route(action, table, codebook, &stats); }
    std::size_t route(std::span<const double> action) const { return ewavq::route(action, table, codebook); }
};

// Gaussian prediction for the step that follows `history`, conditioned on
// `rtg` and `state`. The pending action slot holds a zero action.
struct ActionDist {
    std::vector<double> mean;
    std::vector<double> log_std;
};

ActionDist predict_action(const PolicyParams& params, std::span<const TimeStep> history,
                          double rtg, std::span<const double> state, std::size_t pending_code,
                          std::span<const double> attractions, const BiasConfig& bias);

// Mutable state touched while collecting online trajectories. A null router
// disables routing and attraction updates (codes are stored as 0).
struct CollectContext {
    AttractionTable& attractions;
    RunningMean& reward_stats;
    Router* router;
    BiasConfig bias;
    std::mt19937_64& rng;
    std::vector<TraceRow>* trace = nullptr;
    std::uint64_t env_steps = 0;
};

// Samples actions from the policy, conditioning on a return-to-go that starts
// at target_rtg and is decremented by realized rewards. Every executed action
// is routed and reinforced with its centered, clipped reward. The returned
// trajectory carries hindsight returns-to-go.
Trajectory collect_trajectory(const PolicyParams& params, ToyEnv& env,
                              std::uint64_t episode_seed, double target_rtg, double gamma,
                              CollectContext& ctx);

// Scripted behavior rollout used as offline data: each action mixes the unit
// direction to the goal (weight `quality`) with uniform noise, then clips.
// Actions are routed for storage but attractions are not touched.
Trajectory collect_behavior_trajectory(ToyEnv& env, std::uint64_t episode_seed, double quality,
                                       double gamma, const Router* router);

struct EvalResult {
    std::vector<double> returns;
    std::vector<double> lengths;
};

// Deterministic mean-action rollouts. Episode e starts from
// episode_seed(seed_base, e); nothing outside the result is modified.
EvalResult evaluate(const PolicyParams& params, const ToyEnv& env, double eval_rtg,
                    int episodes, std::uint64_t seed_base, std::span<const double> attractions,
                    const BiasConfig& bias, const Router* router);

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

struct RunResult {
    MetricsSeries metrics;
    std::vector<TraceRow> trace;
    PolicyParams params;
    OptimizerState optimizer;
    std::vector<double> attractions;
    RouteStats routing;
    AttractionOps attraction_ops;
    std::vector<TrainDiagnostics> diagnostics;
    Trajectory last_trajectory;
    std::uint64_t env_steps = 0;
};

// Fill the buffer with behavior data, pretrain, evaluate (step 0), then per
// iteration collect online, train, and evaluate every eval_every iterations
// and after the last one.
RunResult online_loop(const RunConfig& cfg);

}  // namespace ewavq
