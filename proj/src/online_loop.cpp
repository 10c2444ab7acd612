#include "ewavq/online_loop.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace ewavq {

namespace {

enum Stream : std::uint64_t {
    kGoal = 1,
    kInit = 2,
    kActionNoise = 3,
    kBatch = 4,
    kCollectEpisodes = 5,
    kEvalEpisodes = 6,
    kOffline = 7,
};

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 finalizer over the combined words
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

Router Router::build(const RunConfig& cfg) {
    const BinChoice bc = choose_bins(cfg.action_dim, static_cast<std::size_t>(cfg.codes), cfg.bins);
    Codebook cb(cfg.action_dim, bc.bins, bc.codes);
    TableOptions opts;
    opts.env = cfg.env_name;
    opts.cache_dir = cfg.effective_cache_dir();
    GridTable table = build_table(cb, opts);
    return {std::move(cb), std::move(table), {}};
}

ActionDist predict_action(const PolicyParams& params, std::span<const TimeStep> history,
                          double rtg, std::span<const double> state, std::size_t pending_code,
                          std::span<const double> attractions, const BiasConfig& bias) {
    const auto K = static_cast<std::size_t>(params.config.context);
    const std::size_t keep = std::min(history.size(), K - 1);
    TrajectoryWindow win;
    win.steps.assign(history.end() - static_cast<std::ptrdiff_t>(keep), history.end());
    TimeStep pending;
    pending.rtg = rtg;
    pending.state.assign(state.begin(), state.end());
    pending.action.assign(static_cast<std::size_t>(params.config.action_dim), 0.0);
    pending.code = pending_code;
    win.steps.push_back(std::move(pending));

    const Tokenized t = tokenize(win, params.config);
    const PolicyOutput out = forward(params, t.tokens, t.layout, attractions, bias);
    const auto last = static_cast<Eigen::Index>(K - 1);
    ActionDist d;
    for (Eigen::Index j = 0; j < out.mean.cols(); ++j) {
        d.mean.push_back(out.mean(last, j));
        d.log_std.push_back(out.log_std(last, j));
    }
    return d;
}

Trajectory collect_trajectory(const PolicyParams& params, ToyEnv& env,
                              std::uint64_t episode_seed, double target_rtg, double gamma,
                              CollectContext& ctx) {
    if (ctx.router && ctx.router->codebook.size() != ctx.attractions.size()) {
        throw std::invalid_argument("attraction table does not match the codebook");
    }
    std::normal_distribution<double> noise(0.0, 1.0);
    const std::vector<double> zero(static_cast<std::size_t>(params.config.action_dim), 0.0);
    const std::size_t zero_code = ctx.router ? ctx.router->route(std::span<const double>(zero)) : 0;

    Trajectory traj;
    std::vector<double> state = env.reset(episode_seed);
    double rtg = target_rtg;
    while (!env.done()) {
        const ActionDist d = predict_action(params, traj.steps, rtg, state, zero_code,
                                            ctx.attractions.values(), ctx.bias);
        std::vector<double> action(d.mean.size());
        for (std::size_t j = 0; j < action.size(); ++j) {
            action[j] = std::clamp(d.mean[j] + std::exp(d.log_std[j]) * noise(ctx.rng), -1.0, 1.0);
        }
        const StepResult sr = env.step(action);
        ++ctx.env_steps;

        std::size_t code = 0;
        if (ctx.router) {
            code = ctx.router->route(action);
            const double r_tilde =
                normalize_reward(sr.reward, ctx.reward_stats, ctx.attractions.params());
            ctx.attractions.decay_reinforce(code, r_tilde);
            if (ctx.trace) {
                ctx.trace->push_back({ctx.env_steps, code, r_tilde, ctx.attractions[code]});
            }
        }
        traj.steps.push_back({rtg, state, std::move(action), code, sr.reward});
        rtg -= sr.reward;
        state = sr.state;
    }
    relabel_return_to_go(traj, gamma);
    return traj;
}

Trajectory collect_behavior_trajectory(ToyEnv& env, std::uint64_t episode_seed, double quality,
                                       double gamma, const Router* router) {
    if (!(quality >= 0.0 && quality <= 1.0)) throw std::invalid_argument("quality must lie in [0, 1]");
    std::mt19937_64 rng(episode_seed ^ 0x5851f42d4c957f2dULL);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    Trajectory traj;
    std::vector<double> state = env.reset(episode_seed);
    while (!env.done()) {
        double norm = 0.0;
        for (double s : state) norm += s * s;
        norm = std::max(std::sqrt(norm), 1e-12);
        std::vector<double> action(state.size());
        for (std::size_t j = 0; j < action.size(); ++j) {
            action[j] = std::clamp(-quality * state[j] / norm + (1.0 - quality) * unit(rng), -1.0, 1.0);
        }
        const StepResult sr = env.step(action);
        const std::size_t code = router ? router->route(std::span<const double>(action)) : 0;
        traj.steps.push_back({0.0, state, std::move(action), code, sr.reward});
        state = sr.state;
    }
    relabel_return_to_go(traj, gamma);
    return traj;
}

EvalResult evaluate(const PolicyParams& params, const ToyEnv& env_template, double eval_rtg,
                    int episodes, std::uint64_t seed_base, std::span<const double> attractions,
                    const BiasConfig& bias, const Router* router) {
    if (episodes < 1) throw std::invalid_argument("episodes must be >= 1");
    const std::vector<double> zero(static_cast<std::size_t>(params.config.action_dim), 0.0);
    const std::size_t zero_code = router ? router->route(std::span<const double>(zero)) : 0;
    EvalResult res;
    for (int e = 0; e < episodes; ++e) {
        ToyEnv env = env_template;
        std::vector<double> state = env.reset(derive_seed(seed_base, static_cast<std::uint64_t>(e)));
        std::vector<TimeStep> history;
        double rtg = eval_rtg;
        double ret = 0.0;
        while (!env.done()) {
            ActionDist d = predict_action(params, history, rtg, state, zero_code, attractions, bias);
            const StepResult sr = env.step(d.mean);
            const std::size_t code = router ? router->route(std::span<const double>(d.mean)) : 0;
            history.push_back({rtg, state, std::move(d.mean), code, sr.reward});
            rtg -= sr.reward;
            ret += sr.reward;
            state = sr.state;
        }
        res.returns.push_back(ret);
        res.lengths.push_back(static_cast<double>(history.size()));
    }
    return res;
}

RunResult online_loop(const RunConfig& cfg) {
    cfg.validate();
    Router router = Router::build(cfg);
    Router* active_router = cfg.ewa_vq ? &router : nullptr;
    const ToyEnv env_template(cfg.env(), derive_seed(cfg.seed, kGoal));
    const BiasConfig bias = cfg.bias();
    const OptimizerConfig opt = cfg.optimizer();

    RunResult res{{}, {}, PolicyParams::init(cfg.model(), derive_seed(cfg.seed, kInit),
                                             cfg.lambda_init),
                  OptimizerState{}, {}, {}, {}, {}, {}, 0};
    res.optimizer = OptimizerState(res.params.size());
    AttractionTable attractions(router.codebook.size(), cfg.ewa());
    RunningMean reward_stats;
    ReplayBuffer buffer(static_cast<std::size_t>(cfg.replay_capacity));
    std::mt19937_64 action_rng(derive_seed(cfg.seed, kActionNoise));
    std::mt19937_64 batch_rng(derive_seed(cfg.seed, kBatch));
    const std::uint64_t collect_base = derive_seed(cfg.seed, kCollectEpisodes);
    const std::uint64_t eval_base = derive_seed(cfg.seed, kEvalEpisodes);
    std::uint64_t episode_counter = 0;

    CollectContext ctx{attractions, reward_stats, active_router, bias, action_rng, &res.trace, 0};
    std::vector<double> aug_returns, aug_lengths;

    auto collect = [&](int n) {
        for (int i = 0; i < n; ++i) {
            ToyEnv env = env_template;
            Trajectory traj = collect_trajectory(res.params, env,
                                                 derive_seed(collect_base, episode_counter++),
                                                 cfg.online_rtg, cfg.gamma, ctx);
            aug_returns.push_back(traj.total_return());
            aug_lengths.push_back(static_cast<double>(traj.length()));
            res.last_trajectory = traj;
            buffer.add(std::move(traj));
        }
    };
    auto checkpoint = [&]() {
        const EvalResult ev = evaluate(res.params, env_template, cfg.eval_rtg, cfg.eval_episodes,
                                       eval_base, attractions.values(), bias, active_router);
        res.metrics.rows.push_back(make_metrics_row(ctx.env_steps, cfg.seed, ev.returns,
                                                    ev.lengths, aug_returns, aug_lengths));
        aug_returns.clear();
        aug_lengths.clear();
    };

    std::mt19937_64 offline_rng(derive_seed(cfg.seed, kOffline));
    std::uniform_real_distribution<double> quality(0.0, 1.0);
    for (int i = 0; i < cfg.offline_trajectories; ++i) {
        ToyEnv env = env_template;
        const double q = quality(offline_rng);
        buffer.add(collect_behavior_trajectory(env, offline_rng(), q, cfg.gamma, active_router));
    }
    auto train = [&](int updates, int it) {
        for (int u = 0; u < updates; ++u) {
            const Batch batch =
                buffer.sample(static_cast<std::size_t>(cfg.batch_size), cfg.context, batch_rng);
            try {
                res.diagnostics.push_back(train_step(res.params, batch, attractions.values(), bias,
                                                     opt, res.optimizer));
            } catch (const std::runtime_error& e) {
                throw std::runtime_error("iteration " + std::to_string(it) + ", update " +
                                         std::to_string(u) + ": " + e.what());
            }
        }
    };

    train(cfg.pretrain_updates, 0);
    checkpoint();
    for (int it = 1; it <= cfg.iterations; ++it) {
        collect(cfg.trajectories_per_iteration);
        train(cfg.updates_per_iteration, it);
        if (it % cfg.eval_every == 0 || it == cfg.iterations) checkpoint();
    }

    res.attractions = attractions.values();
    res.routing = router.stats;
    res.attraction_ops = attractions.ops();
    res.env_steps = ctx.env_steps;
    return res;
}

}  // namespace ewavq
