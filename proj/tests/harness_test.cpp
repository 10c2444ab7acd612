#include <gtest/gtest.h>

#include "ewavq/cli.hpp"
#include "ewavq/metrics.hpp"
#include "ewavq/online_loop.hpp"
#include "ewavq/replay_buffer.hpp"
#include "ewavq/run_config.hpp"
#include "ewavq/toy_env.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace ewavq;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_config() {
    RunConfig cfg;
    cfg.horizon = 8;
    cfg.context = 4;
    cfg.batch_size = 4;
    cfg.offline_trajectories = 3;
    cfg.pretrain_updates = 3;
    cfg.updates_per_iteration = 2;
    cfg.trajectories_per_iteration = 2;
    cfg.iterations = 2;
    cfg.eval_every = 1;
    cfg.eval_episodes = 2;
    return cfg;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int cli(std::vector<std::string> args, std::string* out_text = nullptr,
        std::string* err_text = nullptr) {
    args.insert(args.begin(), "ewavq");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int rc = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
    if (out_text) *out_text = out.str();
    if (err_text) *err_text = err.str();
    return rc;
}

fs::path scratch_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("ewavq_harness_" + name);
    fs::remove_all(p);
    return p;
}

}  // namespace

TEST(ToyEnvTest, StepExamples) {
    EnvConfig cfg;
    cfg.dim = 2;
    ToyEnv env(cfg, std::vector<double>{0.0, 0.0});
    env.reset_to({1.0, 0.0});
    const auto r = env.step(std::vector<double>{-5.0, 0.0});  // clipped to -1
    EXPECT_NEAR(r.state[0], 0.8, 1e-15);
    EXPECT_NEAR(r.reward, -0.8, 1e-15);
    EXPECT_FALSE(r.done);
    EXPECT_EQ(env.elapsed(), 1);
    EXPECT_THROW(env.step(std::vector<double>{0.0}), std::invalid_argument);
}

TEST(ToyEnvTest, StartAtGoalTerminatesImmediately) {
    EnvConfig cfg;
    ToyEnv env(cfg, std::vector<double>{0.1, 0.2, 0.3});
    env.reset_to({0.1, 0.2, 0.3});
    const auto r = env.step(std::vector<double>{0.0, 0.0, 0.0});
    EXPECT_TRUE(r.done);
    EXPECT_EQ(r.reward, 0.0);
    EXPECT_THROW(env.step(std::vector<double>{0.0, 0.0, 0.0}), std::logic_error);
}

TEST(ToyEnvTest, ZeroActionReturnIsHorizonTimesDistance) {
    EnvConfig cfg;
    ToyEnv env(cfg, 5);
    env.reset(9);
    const double d = env.distance();
    double total = 0.0;
    const std::vector<double> zero(3, 0.0);
    while (!env.done()) total += env.step(zero).reward;
    EXPECT_EQ(env.elapsed(), cfg.horizon);
    EXPECT_NEAR(total, -cfg.horizon * d, 1e-12);
}

TEST(ToyEnvTest, ResetIsSeeded) {
    ToyEnv a(EnvConfig{}, 1), b(EnvConfig{}, 1);
    EXPECT_EQ(a.goal(), b.goal());
    EXPECT_EQ(a.reset(42), b.reset(42));
    EXPECT_NE(a.reset(42), a.reset(43));
    for (double g : a.goal()) EXPECT_LE(std::abs(g), 0.5);
}

TEST(ReplayBufferTest, CapacityAndSampling) {
    ReplayBuffer buf(3);
    for (int i = 0; i < 5; ++i) {
        Trajectory t;
        for (int s = 0; s <= i; ++s) t.steps.push_back({0.0, {double(i)}, {0.0}, 0, -1.0});
        buf.add(t);
        EXPECT_LE(buf.size(), 3u);
    }
    EXPECT_EQ(buf.total_steps(), 3u + 4u + 5u);
    EXPECT_EQ(buf.trajectories().front().length(), 3u);

    std::mt19937_64 rng(1);
    const Batch b = buf.sample(200, 2, rng);
    ASSERT_EQ(b.size(), 200u);
    for (const auto& w : b) {
        EXPECT_GE(w.steps.size(), 1u);
        EXPECT_LE(w.steps.size(), 2u);
        EXPECT_GE(w.steps.front().state[0], 2.0);
    }
    EXPECT_THROW(ReplayBuffer(0), std::invalid_argument);
}

TEST(ReplayBufferTest, HindsightRelabel) {
    Trajectory t;
    for (double r : {-1.0, -2.0, -3.0}) t.steps.push_back({0.0, {0.0}, {0.0}, 0, r});
    relabel_return_to_go(t, 1.0);
    EXPECT_EQ(t.steps[0].rtg, -6.0);
    EXPECT_EQ(t.steps[1].rtg, -5.0);
    EXPECT_EQ(t.steps[2].rtg, -3.0);
    EXPECT_EQ(t.total_return(), -6.0);
}

TEST(RunConfigTest, ParseValidateAndHash) {
    const RunConfig c = parse_config("# comment\nphi = 0.1\nbeta_bias=0\nlayers = 2 # inline\n");
    EXPECT_EQ(c.phi, 0.1);
    EXPECT_EQ(c.beta_bias, 0.0);
    EXPECT_EQ(c.layers, 2);
    EXPECT_NO_THROW(c.validate());
    EXPECT_THROW(parse_config("nonsense = 1\n"), std::invalid_argument);
    EXPECT_THROW(parse_config("phi = abc\n"), std::invalid_argument);
    EXPECT_THROW(parse_config("phi = 1.5\n").validate(), std::invalid_argument);
    EXPECT_THROW(parse_config("delta = 1.5\n").validate(), std::invalid_argument);

    RunConfig a, b;
    EXPECT_EQ(a.hash(), b.hash());
    b.output_dir = "elsewhere";
    b.cache_dir = "/tmp/x";
    EXPECT_EQ(a.hash(), b.hash());
    b.phi = 0.06;
    EXPECT_NE(a.hash(), b.hash());
    EXPECT_EQ(parse_config(a.canonical_text()).hash(), a.hash());
    EXPECT_EQ(RunConfig{}.beta_entropy_value(), -3.0);
}

TEST(RunConfigTest, CacheDirEnvironmentOverride) {
    RunConfig c;
    c.cache_dir = "from_config";
    ::unsetenv("EWAVQ_CACHE_DIR");
    EXPECT_EQ(c.effective_cache_dir(), "from_config");
    ::setenv("EWAVQ_CACHE_DIR", "from_env", 1);
    EXPECT_EQ(c.effective_cache_dir(), "from_env");
    ::unsetenv("EWAVQ_CACHE_DIR");
}

TEST(MetricsTest, ShiftedGeometricStatistics) {
    const std::vector<double> same(5, -37.25);
    EXPECT_EQ(shifted_geometric_mean(same), -37.25);
    EXPECT_EQ(shifted_geometric_std(same), 1.0);
    const std::vector<double> xs = {0.0, 3.0};
    EXPECT_NEAR(shifted_geometric_mean(xs), 1.0, 1e-15);  // sqrt(1 * 4) - 1
    EXPECT_NEAR(shifted_geometric_std(xs), 2.0, 1e-15);   // exp(0.5 * log 4)
    EXPECT_TRUE(std::isnan(arithmetic_mean(std::vector<double>{})));
    const std::vector<double> neg = {-10.0, -2.0, -6.0};
    const double gm = shifted_geometric_mean(neg);
    EXPECT_GE(gm, -10.0);
    EXPECT_LE(gm, arithmetic_mean(neg));
}

TEST(MetricsTest, CsvHeaderAndStableBytes) {
    MetricsSeries s;
    s.rows.push_back(make_metrics_row(0, 3, std::vector<double>{-1.5, -2.5},
                                      std::vector<double>{40, 40}, {}, {}));
    s.rows.push_back(make_metrics_row(80, 3, std::vector<double>{-1.0}, std::vector<double>{12},
                                      std::vector<double>{-3.0}, std::vector<double>{40}));
    std::ostringstream a, b;
    write_metrics_csv(a, s);
    write_metrics_csv(b, s);
    EXPECT_EQ(a.str(), b.str());
    std::istringstream lines(a.str());
    std::string comment, header, row0;
    std::getline(lines, comment);
    std::getline(lines, header);
    std::getline(lines, row0);
    EXPECT_EQ(comment[0], '#');
    std::string expected = "step,seed";
    for (const char* n : kMetricNames) expected += std::string(",") + n;
    EXPECT_EQ(header, expected);
    EXPECT_EQ(row0.substr(0, 4), "0,3,");
    EXPECT_NE(row0.find("nan"), std::string::npos);

    const fs::path dir = scratch_dir("metrics");
    const std::string path = emit_metrics(s, dir.string());
    EXPECT_EQ(read_file(path), a.str());
}

TEST(CollectTest, HorizonOneGivesOneUpdate) {
    RunConfig cfg = tiny_config();
    cfg.horizon = 1;
    Router router = Router::build(cfg);
    const auto params = PolicyParams::init(cfg.model(), 1);
    ToyEnv env(cfg.env(), 2);
    AttractionTable table(router.codebook.size(), cfg.ewa());
    RunningMean stats;
    std::mt19937_64 rng(3);
    std::vector<TraceRow> trace;
    CollectContext ctx{table, stats, &router, cfg.bias(), rng, &trace};
    const Trajectory t = collect_trajectory(params, env, 4, cfg.online_rtg, cfg.gamma, ctx);
    EXPECT_EQ(t.length(), 1u);
    EXPECT_EQ(table.step(), 1u);
    EXPECT_EQ(table.ops().decays, 1u);
    EXPECT_EQ(trace.size(), 1u);
    EXPECT_EQ(ctx.env_steps, 1u);
    // First reward is centered against an empty mean of 0, then clipped.
    const double expected = cfg.delta * std::clamp(t.steps[0].reward, -1.0, 1.0);
    EXPECT_DOUBLE_EQ(table[t.steps[0].code], expected);
}

TEST(CollectTest, TraceMatchesReplayOracle) {
    RunConfig cfg = tiny_config();
    cfg.horizon = 15;
    Router router = Router::build(cfg);
    const auto params = PolicyParams::init(cfg.model(), 5, 0.1);
    ToyEnv env(cfg.env(), 6);
    AttractionTable table(router.codebook.size(), cfg.ewa());
    RunningMean stats;
    std::mt19937_64 rng(7);
    std::vector<TraceRow> trace;
    CollectContext ctx{table, stats, &router, cfg.bias(), rng, &trace};
    std::vector<Trajectory> trajs;
    for (int e = 0; e < 3; ++e) {
        trajs.push_back(collect_trajectory(params, env, 10 + e, cfg.online_rtg, cfg.gamma, ctx));
    }

    AttractionTable oracle(router.codebook.size(), cfg.ewa());
    RunningMean oracle_stats;
    std::size_t row = 0;
    for (const auto& t : trajs) {
        for (const auto& s : t.steps) {
            ASSERT_LT(row, trace.size());
            EXPECT_EQ(s.code, router.route(std::span<const double>(s.action)));
            const double r = normalize_reward(s.reward, oracle_stats, cfg.ewa());
            oracle.decay_reinforce(s.code, r);
            EXPECT_EQ(trace[row].step, row + 1);
            EXPECT_EQ(trace[row].code, s.code);
            EXPECT_EQ(trace[row].r_tilde, r);
            EXPECT_EQ(trace[row].attraction_after, oracle[s.code]);
            EXPECT_LE(std::abs(r), cfg.reward_clip);
            ++row;
        }
    }
    EXPECT_EQ(row, trace.size());
    EXPECT_EQ(oracle.values(), table.values());
}

TEST(CollectTest, WithoutRouterAttractionsStayZero) {
    RunConfig cfg = tiny_config();
    const auto params = PolicyParams::init(cfg.model(), 1);
    ToyEnv env(cfg.env(), 2);
    AttractionTable table(27, cfg.ewa());
    RunningMean stats;
    std::mt19937_64 rng(3);
    CollectContext ctx{table, stats, nullptr, cfg.bias(), rng};
    const Trajectory t = collect_trajectory(params, env, 4, cfg.online_rtg, cfg.gamma, ctx);
    EXPECT_EQ(table.step(), 0u);
    for (double v : table.values()) EXPECT_EQ(v, 0.0);
    for (const auto& s : t.steps) EXPECT_EQ(s.code, 0u);
}

TEST(EvaluateTest, IsPureAndDeterministic) {
    RunConfig cfg = tiny_config();
    Router router = Router::build(cfg);
    const auto params = PolicyParams::init(cfg.model(), 8);
    const auto before = params.values;
    const ToyEnv env(cfg.env(), 9);
    std::vector<double> attractions(27);
    for (std::size_t i = 0; i < 27; ++i) attractions[i] = 0.5 * static_cast<double>(i) - 6.0;
    const auto a_before = attractions;
    const auto stats_before = router.stats;
    const EvalResult r1 = evaluate(params, env, cfg.eval_rtg, 3, 17, attractions, cfg.bias(), &router);
    const EvalResult r2 = evaluate(params, env, cfg.eval_rtg, 3, 17, attractions, cfg.bias(), &router);
    EXPECT_EQ(r1.returns, r2.returns);
    EXPECT_EQ(r1.lengths, r2.lengths);
    EXPECT_EQ(params.values, before);
    EXPECT_EQ(attractions, a_before);
    EXPECT_EQ(router.stats.hits, stats_before.hits);
    EXPECT_TRUE(env.done());
}

TEST(OnlineLoopTest, ZeroIterationsGivesOneRow) {
    RunConfig cfg = tiny_config();
    cfg.iterations = 0;
    const RunResult r = online_loop(cfg);
    ASSERT_EQ(r.metrics.rows.size(), 1u);
    EXPECT_EQ(r.metrics.rows[0].step, 0u);
    EXPECT_EQ(r.env_steps, 0u);
    EXPECT_TRUE(r.trace.empty());
    for (double v : r.attractions) EXPECT_EQ(v, 0.0);
}

TEST(OnlineLoopTest, RowsStepsAndDeterminism) {
    const RunConfig cfg = tiny_config();
    const RunResult a = online_loop(cfg);
    const RunResult b = online_loop(cfg);
    ASSERT_EQ(a.metrics.rows.size(), 3u);
    EXPECT_EQ(a.trace.size(), a.env_steps);
    EXPECT_EQ(a.metrics.rows.back().step, a.env_steps);
    for (std::size_t i = 1; i < a.metrics.rows.size(); ++i) {
        EXPECT_GT(a.metrics.rows[i].step, a.metrics.rows[i - 1].step);
    }
    std::ostringstream ca, cb;
    write_metrics_csv(ca, a.metrics);
    write_metrics_csv(cb, b.metrics);
    EXPECT_EQ(ca.str(), cb.str());
    EXPECT_EQ(a.params.values, b.params.values);
    EXPECT_EQ(a.attractions, b.attractions);
    EXPECT_EQ(a.attraction_ops.decays, a.env_steps);

    RunConfig off = cfg;
    off.ewa_vq = false;
    const RunResult c = online_loop(off);
    EXPECT_TRUE(c.trace.empty());
    EXPECT_EQ(c.attraction_ops.decays, 0u);
}

TEST(CliTest, ExitCodes) {
    std::string out, err;
    EXPECT_EQ(cli({"run", "--no-such-flag"}, &out, &err), 1);
    EXPECT_NE(err.find("run"), std::string::npos);
    EXPECT_EQ(cli({}, &out, &err), 1);
    EXPECT_EQ(cli({"run", "--phi", "2"}, &out, &err), 1);
    EXPECT_EQ(cli({"check", "--suite", "bogus"}, &out, &err), 1);
    EXPECT_EQ(cli({"check", "--suite", "routing"}, &out, &err), 0);
    EXPECT_NE(out.find("PASS"), std::string::npos);
}

TEST(CliTest, CodebookIdentity) {
    std::string out;
    ASSERT_EQ(cli({"codebook", "--dim", "3", "--codes", "27"}, &out), 0);
    EXPECT_NE(out.find("dim=3 bins=3 codes=27 cells=27 identity=yes"), std::string::npos);
}

TEST(CliTest, RunZeroIterationsWritesOneRow) {
    const fs::path dir = scratch_dir("cli_run");
    std::string out, err;
    ASSERT_EQ(cli({"run", "--iterations", "0", "--horizon", "8", "--context", "4",
                   "--batch-size", "4", "--offline-trajectories", "2", "--pretrain-updates", "2",
                   "--eval-episodes", "2", "--output-dir", dir.string()},
                  &out, &err),
              0)
        << err;
    const std::string csv = read_file((dir / "metrics.csv").string());
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
    EXPECT_TRUE(fs::exists(dir / "checkpoint.bin"));
    const Checkpoint ck = load_checkpoint((dir / "checkpoint.bin").string());
    EXPECT_EQ(ck.params.config.context, 4);
}

TEST(CliTest, TraceWritesFiles) {
    const fs::path dir = scratch_dir("cli_trace");
    const fs::path cfg_path = dir.string() + ".cfg";
    std::ofstream(cfg_path) << "horizon = 6\ncontext = 4\nbatch_size = 4\niterations = 1\n"
                               "offline_trajectories = 2\npretrain_updates = 1\n"
                               "updates_per_iteration = 1\ntrajectories_per_iteration = 2\n"
                               "eval_episodes = 1\n";
    std::string out, err;
    ASSERT_EQ(cli({"trace", "--config", cfg_path.string(), "--dump-attention", "--output-dir",
                   dir.string()},
                  &out, &err),
              0)
        << err;
    const std::string trace = read_file((dir / "attraction_trace.csv").string());
    EXPECT_GT(std::count(trace.begin(), trace.end(), '\n'), 1);
    EXPECT_TRUE(fs::exists(dir / "attention_logits.csv"));
    EXPECT_TRUE(fs::exists(dir / "attention_drift.csv"));
}
