#include "ewavq/replay_buffer.hpp"

#include <algorithm>
#include <stdexcept>

namespace ewavq {

double Trajectory::total_return() const {
    double sum = 0.0;
    for (const auto& s : steps) sum += s.reward;
    return sum;
}

void relabel_return_to_go(Trajectory& traj, double gamma) {
    std::vector<double> rewards;
    rewards.reserve(traj.steps.size());
    for (const auto& s : traj.steps) rewards.push_back(s.reward);
    const auto g = return_to_go(rewards, gamma);
    for (std::size_t i = 0; i < g.size(); ++i) traj.steps[i].rtg = g[i];
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw std::invalid_argument("replay capacity must be >= 1");
}

void ReplayBuffer::add(Trajectory traj) {
    if (traj.steps.empty()) throw std::invalid_argument("empty trajectory");
    total_steps_ += traj.length();
    trajectories_.push_back(std::move(traj));
    while (trajectories_.size() > capacity_) {
        total_steps_ -= trajectories_.front().length();
        trajectories_.pop_front();
    }
}

Batch ReplayBuffer::sample(std::size_t batch_size, int context, std::mt19937_64& rng) const {
    if (trajectories_.empty()) throw std::runtime_error("sampling from an empty replay buffer");
    if (context < 1) throw std::invalid_argument("context must be >= 1");
    std::uniform_int_distribution<std::size_t> pick_step(0, total_steps_ - 1);
    Batch batch;
    batch.reserve(batch_size);
    for (std::size_t b = 0; b < batch_size; ++b) {
        // A uniform step over the whole buffer picks its trajectory with
        // probability proportional to length and its end index uniformly.
        std::size_t flat = pick_step(rng);
        std::size_t t = 0;
        while (flat >= trajectories_[t].length()) flat -= trajectories_[t++].length();
        const auto& steps = trajectories_[t].steps;
        const std::size_t end = flat + 1;
        const std::size_t begin = end > static_cast<std::size_t>(context)
                                      ? end - static_cast<std::size_t>(context)
                                      : 0;
        batch.push_back({{steps.begin() + static_cast<std::ptrdiff_t>(begin),
                          steps.begin() + static_cast<std::ptrdiff_t>(end)}});
    }
    return batch;
}

}  // namespace ewavq
