#pragma once

#include "ewavq/backbone.hpp"

#include <cstddef>
#include <deque>
#include <random>

namespace ewavq {

// One stored episode. Step rtg fields hold the hindsight return-to-go.
struct Trajectory {
    std::vector<TimeStep> steps;

    double total_return() const;
    std::size_t length() const { return steps.size(); }
};

// Rewrites every step's rtg with the hindsight return-to-go of its rewards.
void relabel_return_to_go(Trajectory& traj, double gamma);

// FIFO buffer of whole trajectories, bounded by trajectory count.
class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity);

    void add(Trajectory traj);

    // Trajectories are drawn with probability proportional to length; each
    // window ends at a uniform step and holds up to K steps ending there.
    Batch sample(std::size_t batch_size, int context, std::mt19937_64& rng) const;

    std::size_t size() const { return trajectories_.size(); }
    std::size_t capacity() const { return capacity_; }
    std::size_t total_steps() const { return total_steps_; }
    const std::deque<Trajectory>& trajectories() const { return trajectories_; }

private:
    std::size_t capacity_;
    std::size_t total_steps_ = 0;
    std::deque<Trajectory> trajectories_;
};

}  // namespace ewavq
