#include <gtest/gtest.h>

#include "ewavq/ewa_memory.hpp"

#include <cmath>
#include <random>
#include <sstream>

using namespace ewavq;

namespace {

const EwaParams kDefault = EwaParams::make(0.05, 0.8, 1.0);

// Direct evaluation of the unrolled sum, written independently of closed_form.
double unrolled(const std::vector<std::pair<std::size_t, double>>& history, std::size_t code,
                double phi, double delta) {
    const auto t = history.size();
    double sum = 0.0;
    for (std::size_t tau = 1; tau <= t; ++tau) {
        if (history[tau - 1].first != code) continue;
        double w = 1.0;
        for (std::size_t k = tau; k < t; ++k) w *= 1.0 - phi;
        sum += w * history[tau - 1].second;
    }
    return delta * sum;
}

}  // namespace

TEST(EwaParamsTest, RejectsOutOfDomain) {
    EXPECT_THROW(EwaParams::make(0.0, 0.8, 1.0), std::invalid_argument);
    EXPECT_THROW(EwaParams::make(1.0, 0.8, 1.0), std::invalid_argument);
    EXPECT_THROW(EwaParams::make(0.05, -0.1, 1.0), std::invalid_argument);
    EXPECT_THROW(EwaParams::make(0.05, 1.1, 1.0), std::invalid_argument);
    EXPECT_THROW(EwaParams::make(0.05, 0.8, 0.0), std::invalid_argument);
    EXPECT_NO_THROW(EwaParams::make(0.5, 0.0, 2.0));
}

TEST(AttractionTableTest, FirstReinforcement) {
    AttractionTable a(3, kDefault);
    a.decay_reinforce(1, 1.0);
    EXPECT_EQ(a.values(), (std::vector<double>{0.0, 0.8, 0.0}));
    EXPECT_EQ(a.step(), 1u);
}

TEST(AttractionTableTest, SecondReinforcement) {
    AttractionTable a(3, kDefault);
    a.decay_reinforce(1, 1.0);
    a.decay_reinforce(1, 1.0);
    EXPECT_DOUBLE_EQ(a[1], 1.56);
    EXPECT_EQ(a[0], 0.0);
    EXPECT_EQ(a[2], 0.0);
}

TEST(AttractionTableTest, ZeroRewardOnlyDecays) {
    AttractionTable a(3, kDefault);
    a.decay_reinforce(2, 0.7);
    const double before = a[2];
    a.decay_reinforce(2, 0.0);
    EXPECT_EQ(a[2], 0.95 * before);
}

TEST(AttractionTableTest, UnseenCodesStayZero) {
    AttractionTable a(27, kDefault);
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> r(-1.0, 1.0);
    for (int t = 0; t < 500; ++t) a.decay_reinforce(static_cast<std::size_t>(t % 5), r(rng));
    for (std::size_t c = 5; c < 27; ++c) EXPECT_EQ(a[c], 0.0);
}

TEST(AttractionTableTest, Errors) {
    AttractionTable a(3, kDefault);
    EXPECT_THROW(a.decay_reinforce(3, 0.0), std::out_of_range);
    EXPECT_THROW(a.decay_reinforce(0, 1.5), std::invalid_argument);
    EXPECT_EQ(a.step(), 0u);
    try {
        a.decay_reinforce(9, 0.0);
    } catch (const std::out_of_range& e) {
        EXPECT_STREQ(e.what(), "invalid code index");
    }
    try {
        a.decay_reinforce(0, -1.01);
    } catch (const std::invalid_argument& e) {
        EXPECT_STREQ(e.what(), "reward exceeds clip");
    }
}

TEST(AttractionTableTest, OperationCountPerStep) {
    AttractionTable a(27, kDefault);
    for (int t = 0; t < 100; ++t) a.decay_reinforce(static_cast<std::size_t>(t % 27), 0.5);
    EXPECT_EQ(a.ops().decays, 100u);
    EXPECT_EQ(a.ops().indexed_adds, 100u);
}

TEST(AttractionTableTest, DecayOnlyMonotone) {
    AttractionTable a(4, kDefault);
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> r(-1.0, 1.0);
    for (int t = 0; t < 200; ++t) a.decay_reinforce(static_cast<std::size_t>(t % 4), r(rng));
    double prev = std::abs(a[3]);
    const double start = prev;
    for (int t = 1; t <= 300; ++t) {
        a.decay_reinforce(0, r(rng));
        EXPECT_LE(std::abs(a[3]), prev);
        prev = std::abs(a[3]);
        EXPECT_NEAR(std::abs(a[3]), start * std::pow(0.95, t), 1e-12);
    }
}

TEST(AttractionTableTest, LinearInRewardScale) {
    const EwaParams wide = EwaParams::make(0.05, 0.8, 4.0);
    AttractionTable a(8, wide), b(8, wide);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> r(-1.0, 1.0);
    for (int t = 0; t < 1000; ++t) {
        const auto code = static_cast<std::size_t>(rng() % 8);
        const double x = r(rng);
        a.decay_reinforce(code, x);
        b.decay_reinforce(code, 4.0 * x);  // power-of-two scale is exact in binary
        for (std::size_t k = 0; k < 8; ++k) ASSERT_EQ(b[k], 4.0 * a[k]);
    }
}

TEST(AttractionTableTest, BoundHoldsUnderSaturation) {
    AttractionTable a(2, kDefault);
    for (int t = 0; t < 5000; ++t) {
        a.decay_reinforce(0, 1.0);
        ASSERT_LE(std::abs(a[0]), attraction_bound(kDefault));
    }
    EXPECT_NEAR(a[0], 16.0, 1e-9);
}

TEST(NormalizeRewardTest, Examples) {
    RunningMean stats;
    EXPECT_EQ(normalize_reward(0.0, stats, kDefault), 0.0);
    RunningMean fresh;
    EXPECT_EQ(normalize_reward(5.0, fresh, kDefault), 1.0);
    EXPECT_EQ(fresh.count, 1u);
    EXPECT_EQ(fresh.mean, 5.0);
    EXPECT_THROW(normalize_reward(std::nan(""), fresh, kDefault), std::invalid_argument);
}

TEST(NormalizeRewardTest, ReplayOracle) {
    const std::vector<double> raw = {1.0, 1.0, 1.0, -0.4, 3.0, 0.2, -2.5};
    RunningMean stats;
    double sum = 0.0;
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const double mean_before = i == 0 ? 0.0 : sum / static_cast<double>(i);
        const double expected = std::clamp(raw[i] - mean_before, -1.0, 1.0);
        EXPECT_NEAR(normalize_reward(raw[i], stats, kDefault), expected, 1e-15);
        sum += raw[i];
    }
    // (1, 1, 1): first is uncentered against mean 0, then exactly 0.
    RunningMean ones;
    EXPECT_EQ(normalize_reward(1.0, ones, kDefault), 1.0);
    EXPECT_EQ(normalize_reward(1.0, ones, kDefault), 0.0);
    EXPECT_EQ(normalize_reward(1.0, ones, kDefault), 0.0);
}

TEST(EventLogTest, Validation) {
    EventLog log(1.0);
    log.append(1, 0, 0.5);
    EXPECT_THROW(log.append(1, 0, 0.5), std::invalid_argument);
    EXPECT_THROW(log.append(2, 0, 1.5), std::invalid_argument);
    EXPECT_NO_THROW(log.append(2, 1, -1.0));
}

TEST(ClosedFormTest, Examples) {
    EventLog empty;
    EXPECT_EQ(closed_form(empty, kDefault, 0, 0, 0.0), 0.0);
    EventLog one(1.0);
    one.append(1, 2, 1.0);
    EXPECT_DOUBLE_EQ(closed_form(one, kDefault, 2, 1, 0.0), 0.8);
    EXPECT_EQ(closed_form(one, kDefault, 0, 1, 0.0), 0.0);
}

TEST(ClosedFormTest, IncompleteHistory) {
    EventLog log(1.0);
    log.append(1, 0, 0.1);
    log.append(3, 0, 0.1);
    EXPECT_THROW(closed_form(log, kDefault, 0, 3, 0.0), std::invalid_argument);
    EventLog short_log(1.0);
    short_log.append(1, 0, 0.1);
    EXPECT_THROW(closed_form(short_log, kDefault, 0, 2, 0.0), std::invalid_argument);
}

TEST(ClosedFormTest, MatchesRecursionAndIndependentSum) {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> r(-1.0, 1.0);
    for (int trial = 0; trial < 5; ++trial) {
        const std::size_t M = 1 + rng() % 64;
        AttractionTable table(M, kDefault);
        EventLog log(1.0);
        std::vector<std::pair<std::size_t, double>> history;
        for (std::uint64_t t = 1; t <= 1000; ++t) {
            const std::size_t code = rng() % M;
            const double x = r(rng);
            table.decay_reinforce(code, x);
            log.append(t, code, x);
            history.emplace_back(code, x);
        }
        for (std::size_t c = 0; c < M; ++c) {
            EXPECT_NEAR(closed_form(log, kDefault, c, 1000, 0.0), table[c], 1e-10);
            EXPECT_NEAR(unrolled(history, c, 0.05, 0.8), table[c], 1e-10);
        }
    }
}

TEST(ClosedFormTest, NonzeroInitialValueDecays) {
    EventLog log(1.0);
    for (std::uint64_t t = 1; t <= 10; ++t) log.append(t, 1, 0.0);
    EXPECT_NEAR(closed_form(log, kDefault, 0, 10, 2.0), 2.0 * std::pow(0.95, 10), 1e-15);
}

TEST(BoundTest, Examples) {
    EXPECT_DOUBLE_EQ(attraction_bound(kDefault), 16.0);
    EXPECT_EQ(attraction_bound(EwaParams::make(0.05, 0.0, 1.0)), 0.0);
    const EwaParams near_one = EwaParams::make(0.999999, 1.0, 1.0);
    EXPECT_NEAR(attraction_bound(near_one), 1.0, 1e-5);
    AttractionTable a(3, near_one);
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> r(-1.0, 1.0);
    for (int t = 0; t < 10000; ++t) {
        a.decay_reinforce(rng() % 3, r(rng));
        for (double v : a.values()) ASSERT_LE(std::abs(v), attraction_bound(near_one));
    }
}

TEST(SteadyStateTest, Examples) {
    EXPECT_EQ(steady_state_mean(kDefault, 0.0, 0.4), 0.0);
    EXPECT_NEAR(steady_state_mean(kDefault, 0.5, 0.4), 3.2, 1e-12);
    EXPECT_EQ(steady_state_mean(kDefault, 0.5, 0.0), 0.0);
    EXPECT_THROW(steady_state_mean(kDefault, 1.5, 0.4), std::invalid_argument);
    EXPECT_THROW(steady_state_mean(kDefault, 0.5, 2.0), std::invalid_argument);
}

TEST(CanonicalEwaTest, FirstStepNormalization) {
    const CanonicalEwaParams p{0.1, 0.2, 0.5};
    const auto [next, n] = canonical_ewa_step({0.0, 0.0}, 0.0, p, {1.0, 2.0}, 0);
    EXPECT_EQ(n, 1.0);
    EXPECT_DOUBLE_EQ(next[0], 1.0);
    EXPECT_DOUBLE_EQ(next[1], 1.0);  // foregone payoff weighted by delta
}

TEST(CanonicalEwaTest, FullDeltaIgnoresChoice) {
    const CanonicalEwaParams p{0.1, 0.2, 1.0};
    const std::vector<double> a = {0.3, -0.2, 0.5};
    const std::vector<double> pay = {1.0, -1.0, 0.25};
    const auto r0 = canonical_ewa_step(a, 2.0, p, pay, 0);
    const auto r2 = canonical_ewa_step(a, 2.0, p, pay, 2);
    EXPECT_EQ(r0.first, r2.first);
}

TEST(CanonicalEwaTest, ScalarReplay) {
    const CanonicalEwaParams p{0.07, 0.3, 0.4};
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> r(-1.0, 1.0);
    std::vector<double> a(3, 0.0);
    double n = 0.0;
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, sn = 0.0;
    for (int t = 0; t < 5; ++t) {
        const std::vector<double> pay = {r(rng), r(rng), r(rng)};
        const std::size_t chosen = rng() % 3;
        std::tie(a, n) = canonical_ewa_step(a, n, p, pay, chosen);
        const double nn = 0.7 * sn + 1.0;
        s0 = (0.93 * sn * s0 + (chosen == 0 ? 1.0 : 0.4) * pay[0]) / nn;
        s1 = (0.93 * sn * s1 + (chosen == 1 ? 1.0 : 0.4) * pay[1]) / nn;
        s2 = (0.93 * sn * s2 + (chosen == 2 ? 1.0 : 0.4) * pay[2]) / nn;
        sn = nn;
        EXPECT_NEAR(a[0], s0, 1e-14);
        EXPECT_NEAR(a[1], s1, 1e-14);
        EXPECT_NEAR(a[2], s2, 1e-14);
        EXPECT_NEAR(n, sn, 1e-14);
    }
}

TEST(CanonicalEwaTest, Errors) {
    const CanonicalEwaParams p;
    EXPECT_THROW(canonical_ewa_step({0.0}, -1.0, p, {0.0}, 0), std::invalid_argument);
    EXPECT_THROW(canonical_ewa_step({0.0}, 0.0, p, {std::nan("")}, 0), std::invalid_argument);
    EXPECT_THROW(canonical_ewa_step({0.0}, 0.0, {0.05, 1.0, 0.8}, {0.0}, 0),
                 std::invalid_argument);
}

TEST(TraceCsvTest, HeaderAndRoundTripDigits) {
    std::ostringstream os;
    write_trace_csv(os, {{1, 4, 0.1, 0.08}, {2, 13, -1.0, -0.8}});
    EXPECT_EQ(os.str(),
              "step,code,r_tilde,attraction_after\n"
              "1,4,0.10000000000000001,0.080000000000000002\n"
              "2,13,-1,-0.80000000000000004\n");
}
