#include "ewavq/cli.hpp"

#include "ewavq/checks.hpp"
#include "ewavq/online_loop.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <map>
#include <ostream>
#include <stdexcept>

namespace ewavq {

namespace {

struct ConfigOptions {
    std::string config_path;
    std::map<std::string, std::string> overrides;
};

void add_config_options(CLI::App& cmd, ConfigOptions& opts) {
    cmd.add_option("--config", opts.config_path, "key = value config file");
    for (const auto& f : config_fields()) {
        std::string names = "--" + f.name;
        std::string dashed = f.name;
        std::replace(dashed.begin(), dashed.end(), '_', '-');
        if (dashed != f.name) names += ",--" + dashed;
        cmd.add_option(names, opts.overrides[f.name], f.help);
    }
}

RunConfig resolve_config(const CLI::App& cmd, const ConfigOptions& opts) {
    RunConfig cfg;
    if (!opts.config_path.empty()) cfg = load_config(opts.config_path);
    for (const auto& f : config_fields()) {
        if (cmd.count("--" + f.name) > 0) f.set(cfg, opts.overrides.at(f.name));
    }
    cfg.validate();
    return cfg;
}

std::string join(const std::string& dir, const char* file) {
    return (std::filesystem::path(dir) / file).string();
}

int cmd_run(const RunConfig& cfg, std::ostream& out) {
    const RunResult res = online_loop(cfg);
    const std::string metrics = emit_metrics(res.metrics, cfg.output_dir);
    const std::string ckpt = join(cfg.output_dir, "checkpoint.bin");
    save_checkpoint(ckpt, res.params, res.optimizer, cfg.hash());
    out << "metrics: " << metrics << "\ncheckpoint: " << ckpt << "\nrows: "
        << res.metrics.rows.size() << ", env steps: " << res.env_steps
        << ", route hits/fallbacks: " << res.routing.hits << '/' << res.routing.fallbacks << '\n';
    return 0;
}

int cmd_trace(const RunConfig& cfg, bool dump_attention, std::ostream& out) {
    const RunResult res = online_loop(cfg);
    std::filesystem::create_directories(cfg.output_dir);
    const std::string path = join(cfg.output_dir, "attraction_trace.csv");
    write_trace_csv(path, res.trace);
    out << "trace: " << path << " (" << res.trace.size() << " rows)\n";
    if (dump_attention) {
        TrajectoryWindow win;
        const auto& steps = res.last_trajectory.steps;
        const std::size_t keep = std::min(steps.size(), static_cast<std::size_t>(cfg.context));
        win.steps.assign(steps.end() - static_cast<std::ptrdiff_t>(keep), steps.end());
        const Tokenized tok = tokenize(win, res.params.config);
        AttentionDump dump;
        forward(res.params, tok.tokens, tok.layout, res.attractions, cfg.bias(), &dump);
        const std::string logits = join(cfg.output_dir, "attention_logits.csv");
        const std::string drift = join(cfg.output_dir, "attention_drift.csv");
        dump.write_csv(logits, drift);
        out << "attention: " << logits << ", " << drift << '\n';
    }
    return 0;
}

int cmd_check(const std::vector<std::string>& suites, std::ostream& out) {
    const auto& all = theory_checks();
    for (const auto& s : suites) {
        const bool known = std::any_of(all.begin(), all.end(), [&](const NamedCheck& c) {
            return s == c.suite || s == c.name;
        });
        if (!known) throw std::invalid_argument("unknown check suite: " + s);
    }
    bool ok = true;
    for (const auto& c : all) {
        if (!suites.empty() && std::find(suites.begin(), suites.end(), c.suite) == suites.end() &&
            std::find(suites.begin(), suites.end(), c.name) == suites.end()) {
            continue;
        }
        const CheckResult r = c.run();
        out << format_check(r) << '\n';
        ok = ok && r.ok();
    }
    return ok ? 0 : 2;
}

int cmd_codebook(int dim, int codes, int bins, const std::string& env, std::string cache_dir,
                 std::ostream& out) {
    if (codes < 2) throw std::invalid_argument("codes must be >= 2");
    if (cache_dir.empty()) {
        if (const char* e = std::getenv("EWAVQ_CACHE_DIR"); e != nullptr) cache_dir = e;
    }
    const BinChoice bc = choose_bins(dim, static_cast<std::size_t>(codes), bins);
    const Codebook cb(dim, bc.bins, bc.codes);
    const GridTable table = build_table(cb, {env, cache_dir, 256});
    bool identity = table.size() == cb.size();
    for (std::size_t i = 0; identity && i < table.size(); ++i) {
        identity = table[i] == static_cast<std::int32_t>(i);
    }
    out << "dim=" << dim << " bins=" << bc.bins << " codes=" << cb.size()
        << " cells=" << table.size() << " identity=" << (identity ? "yes" : "no") << '\n';
    if (!cache_dir.empty()) {
        out << "cache: " << join(cache_dir, table.key().file_name().c_str()) << '\n';
    }
    out << "codes:\n";
    for (std::size_t i = 0; i < cb.size(); ++i) {
        out << i;
        for (double v : cb.code(i)) out << ' ' << v;
        out << '\n';
    }
    out << "table:\n";
    for (std::size_t c = 0; c < table.size(); ++c) out << c << ' ' << table[c] << '\n';
    return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"EWA-VQ attention bias for online decision transformers", "ewavq"};
    app.require_subcommand(1);

    ConfigOptions run_opts;
    CLI::App* run = app.add_subcommand("run", "online fine-tuning; writes metrics.csv and checkpoint.bin");
    add_config_options(*run, run_opts);

    ConfigOptions trace_opts;
    bool dump_attention = false;
    CLI::App* trace = app.add_subcommand("trace", "online run that writes attraction_trace.csv");
    add_config_options(*trace, trace_opts);
    trace->add_flag("--dump-attention", dump_attention,
                    "also write pre/post-bias logits and per-row drift for the last window");

    std::vector<std::string> suites;
    CLI::App* check = app.add_subcommand("check", "run the theory oracle suites");
    check->add_option("--suite", suites, "attraction, drift, routing, gradients, or a check name");

    int dim = 3, codes = 27, bins = 0;
    std::string env = "default", cache_dir;
    CLI::App* codebook = app.add_subcommand("codebook", "build, cache, and print a grid codebook");
    codebook->add_option("--dim", dim, "action dimension");
    codebook->add_option("--codes", codes, "requested code count");
    codebook->add_option("--bins", bins, "bins per dimension (0 = adaptive)");
    codebook->add_option("--env", env, "environment tag for the cache key");
    codebook->add_option("--cache-dir", cache_dir, "cache directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success&) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return 1;
    }

    try {
        if (run->parsed()) return cmd_run(resolve_config(*run, run_opts), out);
        if (trace->parsed()) {
            return cmd_trace(resolve_config(*trace, trace_opts), dump_attention, out);
        }
        if (check->parsed()) return cmd_check(suites, out);
        if (codebook->parsed()) return cmd_codebook(dim, codes, bins, env, cache_dir, out);
    } catch (const std::invalid_argument& e) {
        err << "invalid input: " << e.what() << '\n';
        return 1;
    } catch (const std::out_of_range& e) {
        err << "invalid input: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    }
    return 1;
}

}  // namespace ewavq
