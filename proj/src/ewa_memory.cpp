#include "ewavq/ewa_memory.hpp"

#include "ewavq/csv_util.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <stdexcept>

namespace ewavq {

EwaParams EwaParams::make(double phi, double delta, double reward_clip) {
    EwaParams p{phi, delta, reward_clip};
    p.validate();
    return p;
}

void EwaParams::validate() const {
    if (!(phi > 0.0 && phi < 1.0)) {
        throw std::invalid_argument("phi must lie in (0, 1)");
    }
    if (!(delta >= 0.0 && delta <= 1.0)) {
        throw std::invalid_argument("delta must lie in [0, 1]");
    }
    if (!(reward_clip > 0.0) || !std::isfinite(reward_clip)) {
        throw std::invalid_argument("reward_clip must be positive");
    }
}

AttractionTable::AttractionTable(std::size_t num_codes, EwaParams params)
    : values_(num_codes, 0.0), params_(params) {
    params_.validate();
    if (num_codes == 0) {
        throw std::invalid_argument("attraction table needs at least one code");
    }
}

void AttractionTable::decay_reinforce(std::size_t code, double r_tilde) {
    if (code >= values_.size()) {
        throw std::out_of_range("invalid code index");
    }
    if (!std::isfinite(r_tilde) || std::abs(r_tilde) > params_.reward_clip) {
        throw std::invalid_argument("reward exceeds clip");
    }
    const double keep = 1.0 - params_.phi;
    for (double& a : values_) {
        a *= keep;
    }
    values_[code] += params_.delta * r_tilde;
    ++step_;
    ++ops_.decays;
    ++ops_.indexed_adds;
}

double normalize_reward(double raw, RunningMean& stats, const EwaParams& params) {
    if (!std::isfinite(raw)) {
        throw std::invalid_argument("non-finite reward");
    }
    const double centered = raw - stats.mean;
    stats.push(raw);
    return std::clamp(centered, -params.reward_clip, params.reward_clip);
}

void EventLog::append(std::uint64_t timestep, std::size_t code, double r_tilde) {
    if (!events_.empty() && timestep <= events_.back().timestep) {
        throw std::invalid_argument("event timesteps must be strictly increasing");
    }
    if (!std::isfinite(r_tilde) || std::abs(r_tilde) > reward_clip_) {
        throw std::invalid_argument("reward exceeds clip");
    }
    events_.push_back({timestep, code, r_tilde});
}

double closed_form(const EventLog& log, const EwaParams& params, std::size_t code,
                   std::uint64_t t, double a0) {
    const auto& ev = log.events();
    if (ev.size() < t) {
        throw std::invalid_argument("incomplete history");
    }
    const double keep = 1.0 - params.phi;
    double sum = 0.0;
    for (std::uint64_t i = 0; i < t; ++i) {
        if (ev[i].timestep != i + 1) {
            throw std::invalid_argument("incomplete history");
        }
        if (ev[i].code == code) {
            sum += std::pow(keep, static_cast<double>(t - ev[i].timestep)) * ev[i].r_tilde;
        }
    }
    return std::pow(keep, static_cast<double>(t)) * a0 + params.delta * sum;
}

double attraction_bound(const EwaParams& params) {
    return params.delta * params.reward_clip / params.phi;
}

double steady_state_mean(const EwaParams& params, double p, double mu) {
    if (!(p >= 0.0 && p <= 1.0)) {
        throw std::invalid_argument("probability must lie in [0, 1]");
    }
    if (std::abs(mu) > params.reward_clip) {
        throw std::invalid_argument("mean reward exceeds clip");
    }
    return params.delta * p * mu / params.phi;
}

std::pair<std::vector<double>, double> canonical_ewa_step(
    const std::vector<double>& attractions, double n_prev,
    const CanonicalEwaParams& params, const std::vector<double>& payoffs,
    std::size_t chosen) {
    if (!(n_prev >= 0.0)) {
        throw std::invalid_argument("experience weight must be nonnegative");
    }
    if (!(params.rho > 0.0 && params.rho < 1.0)) {
        throw std::invalid_argument("rho must lie in (0, 1)");
    }
    if (payoffs.size() != attractions.size()) {
        throw std::invalid_argument("payoff vector size mismatch");
    }
    if (chosen >= attractions.size()) {
        throw std::out_of_range("invalid code index");
    }
    const double n_t = (1.0 - params.rho) * n_prev + 1.0;
    std::vector<double> next(attractions.size());
    for (std::size_t j = 0; j < attractions.size(); ++j) {
        if (!std::isfinite(payoffs[j])) {
            throw std::invalid_argument("non-finite payoff");
        }
        const double weight = params.delta + (1.0 - params.delta) * (j == chosen ? 1.0 : 0.0);
        next[j] = ((1.0 - params.phi) * n_prev * attractions[j] + weight * payoffs[j]) / n_t;
    }
    return {std::move(next), n_t};
}

void write_trace_csv(std::ostream& out, const std::vector<TraceRow>& rows) {
    out << "step,code,r_tilde,attraction_after\n";
    for (const auto& r : rows) {
        out << r.step << ',' << r.code << ',' << format_double(r.r_tilde) << ','
            << format_double(r.attraction_after) << '\n';
    }
}

void write_trace_csv(const std::string& path, const std::vector<TraceRow>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot open trace file: " + path);
    }
    write_trace_csv(out, rows);
}

}  // namespace ewavq
