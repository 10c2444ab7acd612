#include "ewavq/checks.hpp"

#include "ewavq/attention_bias.hpp"
#include "ewavq/backbone.hpp"
#include "ewavq/ewa_memory.hpp"
#include "ewavq/vq_codebook.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>

namespace ewavq {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string printf_string(const char* fmt, double a, double b = 0.0, double c = 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), fmt, a, b, c);
    return buf;
}

}  // namespace

const char* status_label(CheckStatus s) {
    switch (s) {
        case CheckStatus::Pass: return "PASS";
        case CheckStatus::Warn: return "WARN";
        case CheckStatus::Fail: return "FAIL";
    }
    return "FAIL";
}

std::string format_check(const CheckResult& r) {
    char t[32];
    std::snprintf(t, sizeof(t), "%.2f", r.seconds);
    return std::string(status_label(r.status)) + " " + r.name + " (" + t + " s): " + r.detail;
}

CheckResult check_closed_form() {
    const auto t0 = Clock::now();
    const EwaParams params = EwaParams::make(0.05, 0.8, 1.0);
    constexpr std::size_t kCodes = 27;
    constexpr std::uint64_t kSteps = 10000;
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<std::size_t> pick(0, kCodes - 1);
    std::uniform_real_distribution<double> reward(-1.0, 1.0);

    double worst = 0.0;
    for (int h = 0; h < 100; ++h) {
        AttractionTable table(kCodes, params);
        EventLog log(params.reward_clip);
        for (std::uint64_t t = 1; t <= kSteps; ++t) {
            const std::size_t code = pick(rng);
            const double r = reward(rng);
            table.decay_reinforce(code, r);
            log.append(t, code, r);
        }
        for (std::size_t code = 0; code < kCodes; ++code) {
            worst = std::max(worst,
                             std::abs(closed_form(log, params, code, kSteps, 0.0) - table[code]));
        }
    }
    CheckResult r{"attraction_closed_form", CheckStatus::Fail, "", seconds_since(t0)};
    const bool fast = r.seconds < 5.0;
    r.status = worst <= 1e-10 && fast ? CheckStatus::Pass : CheckStatus::Fail;
    r.detail = printf_string("max |closed form - recursion| = %.3g (tol 1e-10), runtime limit 5 s",
                             worst);
    return r;
}

CheckResult check_attraction_bound() {
    const auto t0 = Clock::now();
    const EwaParams params = EwaParams::make(0.05, 0.8, 1.0);
    const double bound = attraction_bound(params);
    constexpr std::size_t kCodes = 27;
    AttractionTable table(kCodes, params);
    std::mt19937_64 rng(12);
    std::uniform_int_distribution<std::size_t> pick(0, kCodes - 1);
    std::uniform_real_distribution<double> reward(-1.0, 1.0);
    std::bernoulli_distribution extreme(0.5);

    double max_abs = 0.0;
    std::uint64_t violations = 0;
    for (int t = 0; t < 100000; ++t) {
        // Phases of saturated rewards on a single code push toward the bound.
        const int phase = (t / 5000) % 4;
        std::size_t code = pick(rng);
        double r = reward(rng);
        if (phase == 1) {
            code = 3;
            r = 1.0;
        } else if (phase == 3) {
            code = 5;
            r = -1.0;
        } else if (extreme(rng)) {
            r = r < 0.0 ? -1.0 : 1.0;
        }
        table.decay_reinforce(code, r);
        for (double a : table.values()) {
            max_abs = std::max(max_abs, std::abs(a));
            if (std::abs(a) > bound) ++violations;
        }
    }
    CheckResult res{"attraction_bound", CheckStatus::Fail, "", seconds_since(t0)};
    res.status = violations == 0 ? CheckStatus::Pass : CheckStatus::Fail;
    res.detail = printf_string("max |A| = %.12g, bound = %.12g, violations = %.0f", max_abs, bound,
                               static_cast<double>(violations));
    return res;
}

CheckResult check_steady_state() {
    const auto t0 = Clock::now();
    const EwaParams params = EwaParams::make(0.05, 0.8, 1.0);
    constexpr double kP = 0.5;
    constexpr double kMu = 0.4;
    constexpr int kSteps = 100000;
    const double target = steady_state_mean(params, kP, kMu);
    AttractionTable table(4, params);
    std::mt19937_64 rng(13);
    std::bernoulli_distribution chosen(kP);
    std::uniform_int_distribution<std::size_t> other(1, 3);
    // Uniform on [-0.2, 1.0]: mean 0.4, inside the clip.
    std::uniform_real_distribution<double> reward(-0.2, 1.0);
    double tail_sum = 0.0;
    int tail_n = 0;
    for (int t = 0; t < kSteps; ++t) {
        if (chosen(rng)) {
            table.decay_reinforce(0, reward(rng));
        } else {
            table.decay_reinforce(other(rng), reward(rng));
        }
        if (t >= kSteps - kSteps / 5) {
            tail_sum += table[0];
            ++tail_n;
        }
    }
    const double tail = tail_sum / tail_n;
    const double rel = std::abs(tail - target) / target;
    CheckResult r{"attraction_steady_state", CheckStatus::Fail, "", seconds_since(t0)};
    r.status = rel <= 0.02 && r.seconds < 10.0 ? CheckStatus::Pass : CheckStatus::Fail;
    r.detail = printf_string("tail mean = %.6g, expected %.6g, rel err = %.4g (tol 0.02)", tail,
                             target, rel);
    return r;
}

CheckResult check_drift_bound() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(14);
    std::uniform_int_distribution<std::size_t> dim(2, 64);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::uniform_real_distribution<double> scale(0.0, 8.0);
    std::bernoulli_distribution saturate(0.5);
    std::uint64_t violations = 0;
    std::string detail;
    for (double eps : {0.01, 0.05, 0.1, 0.5}) {
        double worst = 0.0;
        for (int i = 0; i < 10000; ++i) {
            const std::size_t n = dim(rng);
            const double s = scale(rng);
            std::vector<double> z(n), zb(n);
            for (std::size_t k = 0; k < n; ++k) {
                z[k] = s * unit(rng);
                double b = eps * unit(rng);
                if (saturate(rng)) b = b < 0.0 ? -eps : eps;
                zb[k] = z[k] + b;
            }
            const double tv = tv_distance(softmax(z), softmax(zb));
            worst = std::max(worst, tv);
            if (tv > drift_bound(eps) + 1e-12) ++violations;
        }
        detail += printf_string("eps=%g max TV=%.6g bound=%.6g; ", eps, worst, drift_bound(eps));
    }
    CheckResult r{"drift_bound", CheckStatus::Fail, "", seconds_since(t0)};
    r.status = violations == 0 ? CheckStatus::Pass : CheckStatus::Fail;
    r.detail = detail + "violations=" + std::to_string(violations);
    return r;
}

CheckResult check_drift_worst_case() {
    const auto t0 = Clock::now();
    double worst_gap = 0.0;
    std::string detail;
    for (double eps : {0.01, 0.05, 0.1, 0.5}) {
        for (std::size_t n : {2, 16, 64}) {
            const DriftPair d = worst_case_drift(eps, n);
            worst_gap = std::max(worst_gap, std::abs(d.tv - drift_bound(eps)));
        }
        const DriftPair d = worst_case_drift(eps, 64);
        detail += printf_string("eps=%g attained=%.9g tanh(eps)=%.9g; ", eps, d.tv,
                                drift_bound(eps));
    }
    CheckResult r{"drift_worst_case", CheckStatus::Fail, "", seconds_since(t0)};
    r.status = worst_gap <= 1e-9 ? CheckStatus::Pass : CheckStatus::Fail;
    r.detail = detail + printf_string("max gap=%.3g (tol 1e-9)", worst_gap);
    return r;
}

CheckResult check_routing() {
    const auto t0 = Clock::now();
    const Codebook cb(3, 3, 27);
    const GridTable table = build_table(cb);
    std::size_t identity_miss = 0, center_miss = 0, random_miss = 0;
    for (std::size_t cell = 0; cell < table.size(); ++cell) {
        if (table[cell] != static_cast<std::int32_t>(cell)) ++identity_miss;
        const auto c = cell_center(cell, 3, 3);
        if (route(c, table, cb) != brute_force_nearest(c, cb)) ++center_miss;
    }
    std::mt19937_64 rng(15);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    for (int i = 0; i < 10000; ++i) {
        const std::vector<double> a = {unit(rng), unit(rng), unit(rng)};
        if (route(a, table, cb) != brute_force_nearest(a, cb)) ++random_miss;
    }
    CheckResult r{"routing_equivalence", CheckStatus::Fail, "", seconds_since(t0)};
    const bool ok = identity_miss == 0 && center_miss == 0 && random_miss == 0;
    r.status = ok ? CheckStatus::Pass : CheckStatus::Fail;
    r.detail = "non-identity entries=" + std::to_string(identity_miss) +
               ", center mismatches=" + std::to_string(center_miss) + "/27" +
               ", random mismatches=" + std::to_string(random_miss) + "/10000";
    return r;
}

namespace {

// Windows of lengths 5..20 whose actions are drawn from the policy itself, the
// distribution the online loop trains on.
Batch gradient_batch(const PolicyParams& params, std::span<const double> attractions,
                     const BiasConfig& bias, std::mt19937_64& rng) {
    const ModelConfig& cfg = params.config;
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::uniform_int_distribution<std::size_t> code(0, attractions.size() - 1);
    std::normal_distribution<double> noise(0.0, 1.0);
    Batch batch;
    for (int w = 0; w < 4; ++w) {
        TrajectoryWindow win;
        const int len = 5 * (w + 1);
        for (int t = 0; t < len; ++t) {
            TimeStep s;
            s.rtg = 5.0 * unit(rng);
            for (int k = 0; k < cfg.state_dim; ++k) s.state.push_back(unit(rng));
            s.action.assign(static_cast<std::size_t>(cfg.action_dim), 0.0);
            s.code = code(rng);
            win.steps.push_back(std::move(s));
        }
        const Tokenized tok = tokenize(win, cfg);
        const PolicyOutput out = forward(params, tok.tokens, tok.layout, attractions, bias);
        const auto pad = static_cast<Eigen::Index>(cfg.context - len);
        for (int t = 0; t < len; ++t) {
            for (int j = 0; j < cfg.action_dim; ++j) {
                const double a = out.mean(pad + t, j) + std::exp(out.log_std(pad + t, j)) * noise(rng);
                win.steps[static_cast<std::size_t>(t)].action[static_cast<std::size_t>(j)] =
                    std::clamp(a, -1.0, 1.0);
            }
        }
        batch.push_back(std::move(win));
    }
    return batch;
}

}  // namespace

CheckResult check_gradients() {
    const auto t0 = Clock::now();
    const ModelConfig cfg;  // default toy backbone
    const BiasConfig bias;
    double worst = 0.0;
    std::string detail;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const PolicyParams params = PolicyParams::init(cfg, seed, 0.1);
        std::mt19937_64 rng(100 + seed);
        std::uniform_real_distribution<double> unit(-3.0, 3.0);
        std::vector<double> attractions(27);
        for (double& a : attractions) a = unit(rng);
        const Batch batch = gradient_batch(params, attractions, bias, rng);
        const GradCheckResult g =
            grad_check(params, batch, attractions, bias, -static_cast<double>(cfg.action_dim));
        worst = std::max(worst, g.max_rel_error);
        detail += printf_string("seed %.0f: %.3g; ", static_cast<double>(seed), g.max_rel_error);
    }
    CheckResult r{"gradient_check", CheckStatus::Fail, "", seconds_since(t0)};
    r.status = worst <= 1e-4 ? CheckStatus::Pass : CheckStatus::Fail;
    r.detail = detail + printf_string("max rel err=%.3g (tol 1e-4)", worst);
    return r;
}

const std::vector<NamedCheck>& theory_checks() {
    static const std::vector<NamedCheck> checks = {
        {"attraction_closed_form", "attraction", &check_closed_form},
        {"attraction_bound", "attraction", &check_attraction_bound},
        {"attraction_steady_state", "attraction", &check_steady_state},
        {"drift_bound", "drift", &check_drift_bound},
        {"drift_worst_case", "drift", &check_drift_worst_case},
        {"routing_equivalence", "routing", &check_routing},
        {"gradient_check", "gradients", &check_gradients},
    };
    return checks;
}

}  // namespace ewavq
