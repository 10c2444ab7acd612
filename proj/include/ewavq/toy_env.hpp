#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace ewavq {

struct EnvConfig {
    int dim = 3;
    int horizon = 40;
    double step_size = 0.2;
    double goal_radius = 0.05;

    void validate() const;
};

struct StepResult {
    std::vector<double> state;
    double reward = 0.0;
    bool done = false;
};

// Point mass in R^d. The observation is position - goal, an action moves the
// mass by step_size * clip(a, -1, 1), and the reward is minus the distance to
// the goal after the move. Episodes end at the horizon or inside goal_radius.
class ToyEnv {
public:
    ToyEnv(EnvConfig cfg, std::uint64_t seed);
    ToyEnv(EnvConfig cfg, std::vector<double> goal);

    // Start uniform in [-1, 1]^d, drawn from `episode_seed`.
    std::vector<double> reset(std::uint64_t episode_seed);
    std::vector<double> reset_to(std::vector<double> position);

    StepResult step(std::span<const double> action);

    const EnvConfig& config() const { return cfg_; }
    const std::vector<double>& goal() const { return goal_; }
    const std::vector<double>& position() const { return position_; }
    std::vector<double> observation() const;
    double distance() const;
    int elapsed() const { return elapsed_; }
    bool done() const { return done_; }

private:
    EnvConfig cfg_;
    std::vector<double> goal_;
    std::vector<double> position_;
    int elapsed_ = 0;
    bool done_ = true;
};

}  // namespace ewavq
