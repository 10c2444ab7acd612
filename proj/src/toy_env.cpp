#include "ewavq/toy_env.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace ewavq {

void EnvConfig::validate() const {
    if (dim < 1) throw std::invalid_argument("env dimension must be >= 1");
    if (horizon < 1) throw std::invalid_argument("horizon must be >= 1");
    if (!(step_size > 0.0)) throw std::invalid_argument("step_size must be positive");
    if (!(goal_radius >= 0.0)) throw std::invalid_argument("goal_radius must be >= 0");
}

ToyEnv::ToyEnv(EnvConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    goal_.resize(static_cast<std::size_t>(cfg_.dim));
    for (double& g : goal_) g = u(rng);
}

ToyEnv::ToyEnv(EnvConfig cfg, std::vector<double> goal) : cfg_(cfg), goal_(std::move(goal)) {
    cfg_.validate();
    if (goal_.size() != static_cast<std::size_t>(cfg_.dim)) {
        throw std::invalid_argument("goal dimension mismatch");
    }
}

std::vector<double> ToyEnv::reset(std::uint64_t episode_seed) {
    std::mt19937_64 rng(episode_seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> p(goal_.size());
    for (double& v : p) v = u(rng);
    return reset_to(std::move(p));
}

std::vector<double> ToyEnv::reset_to(std::vector<double> position) {
    if (position.size() != goal_.size()) throw std::invalid_argument("position dimension mismatch");
    position_ = std::move(position);
    elapsed_ = 0;
    done_ = false;
    return observation();
}

std::vector<double> ToyEnv::observation() const {
    std::vector<double> s(goal_.size());
    for (std::size_t k = 0; k < s.size(); ++k) s[k] = position_[k] - goal_[k];
    return s;
}

double ToyEnv::distance() const {
    double sq = 0.0;
    for (std::size_t k = 0; k < goal_.size(); ++k) {
        const double d = position_[k] - goal_[k];
        sq += d * d;
    }
    return std::sqrt(sq);
}

StepResult ToyEnv::step(std::span<const double> action) {
    if (done_) throw std::logic_error("step after done");
    if (action.size() != goal_.size()) throw std::invalid_argument("action dimension mismatch");
    for (std::size_t k = 0; k < goal_.size(); ++k) {
        if (!std::isfinite(action[k])) throw std::invalid_argument("non-finite action");
        position_[k] += cfg_.step_size * std::clamp(action[k], -1.0, 1.0);
    }
    ++elapsed_;
    const double dist = distance();
    done_ = elapsed_ >= cfg_.horizon || dist <= cfg_.goal_radius;
    return {observation(), -dist, done_};
}

}  // namespace ewavq
