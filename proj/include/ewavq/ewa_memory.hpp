#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace ewavq {

// Forgetting rate, chosen-action weight, and the clip bound R on normalized
// rewards. Construction through make() rejects anything outside the domain.
struct EwaParams {
    double phi = 0.05;
    double delta = 0.8;
    double reward_clip = 1.0;

    static EwaParams make(double phi, double delta, double reward_clip);
    void validate() const;
};

struct AttractionOps {
    std::uint64_t decays = 0;        // one O(M) scale each
    std::uint64_t indexed_adds = 0;  // one O(1) add each
};

// Per-code attraction memory. Zero-initialized; a code that has never been
// routed stays exactly 0.
class AttractionTable {
public:
    AttractionTable(std::size_t num_codes, EwaParams params);

    // Decay every entry by (1 - phi), then add delta * r_tilde to `code`.
    void decay_reinforce(std::size_t code, double r_tilde);

    double operator[](std::size_t code) const { return values_[code]; }
    const std::vector<double>& values() const { return values_; }
    std::size_t size() const { return values_.size(); }
    std::uint64_t step() const { return step_; }
    const EwaParams& params() const { return params_; }
    const AttractionOps& ops() const { return ops_; }

    bool operator==(const AttractionTable& other) const {
        return values_ == other.values_ && step_ == other.step_;
    }

private:
    std::vector<double> values_;
    std::uint64_t step_ = 0;
    EwaParams params_;
    AttractionOps ops_;
};

// Running mean of raw rewards used for centering.
struct RunningMean {
    std::uint64_t count = 0;
    double mean = 0.0;

    void push(double x) {
        ++count;
        mean += (x - mean) / static_cast<double>(count);
    }
};

// clip(raw - mean, -R, R) against the mean *before* `raw` is folded in.
double normalize_reward(double raw, RunningMean& stats, const EwaParams& params);

struct RewardEvent {
    std::uint64_t timestep;  // 1-based
    std::size_t code;
    double r_tilde;
};

// Ordered (timestep, code, r_tilde) history for the closed-form oracle.
class EventLog {
public:
    EventLog() = default;
    explicit EventLog(double reward_clip) : reward_clip_(reward_clip) {}

    void append(std::uint64_t timestep, std::size_t code, double r_tilde);
    const std::vector<RewardEvent>& events() const { return events_; }
    std::size_t size() const { return events_.size(); }

private:
    std::vector<RewardEvent> events_;
    double reward_clip_ = 1.0;
};

// A_code(t) = (1-phi)^t A0 + delta * sum_tau (1-phi)^(t-tau) r_tau 1{code = j_tau}.
// The log must hold exactly the timesteps 1..t.
double closed_form(const EventLog& log, const EwaParams& params, std::size_t code,
                   std::uint64_t t, double a0);

// delta * R / phi.
double attraction_bound(const EwaParams& params);

// Long-run expected attraction for a code chosen with probability p whose
// normalized reward has mean mu: delta * p * mu / phi.
double steady_state_mean(const EwaParams& params, double p, double mu);

struct CanonicalEwaParams {
    double phi = 0.05;
    double rho = 0.05;
    double delta = 0.8;
};

// Reference normalized EWA update with caller-supplied payoffs for every
// action (realized for the chosen one, foregone for the rest). Diagnostic only.
std::pair<std::vector<double>, double> canonical_ewa_step(
    const std::vector<double>& attractions, double n_prev,
    const CanonicalEwaParams& params, const std::vector<double>& payoffs,
    std::size_t chosen);

// One row of the attraction trace: the routed code, the normalized reward, and
// the routed code's attraction after the update.
struct TraceRow {
    std::uint64_t step;
    std::size_t code;
    double r_tilde;
    double attraction_after;
};

void write_trace_csv(std::ostream& out, const std::vector<TraceRow>& rows);
void write_trace_csv(const std::string& path, const std::vector<TraceRow>& rows);

}  // namespace ewavq
