#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace ewavq {

inline constexpr std::array<const char*, 7> kMetricNames = {
    "evaluation/return_mean_gm", "evaluation/return_std_gm", "evaluation/return_vs_samples",
    "evaluation/length_mean_gm", "evaluation/length_std_gm", "aug_traj/return",
    "aug_traj/length",
};

// exp(mean(log(x - min + 1))) - 1 + min, which is defined for any real inputs
// and returns the common value exactly when all inputs are equal.
double shifted_geometric_mean(std::span<const double> xs);

// exp(std(log(x - min + 1))), population standard deviation.
double shifted_geometric_std(std::span<const double> xs);

double arithmetic_mean(std::span<const double> xs);

struct MetricsRow {
    std::uint64_t step = 0;  // cumulative online environment steps
    std::uint64_t seed = 0;
    std::array<double, 7> values{};
};

struct MetricsSeries {
    std::vector<MetricsRow> rows;
};

// Eval returns and lengths of one checkpoint plus the collected trajectories
// since the previous one.
MetricsRow make_metrics_row(std::uint64_t step, std::uint64_t seed,
                            std::span<const double> eval_returns,
                            std::span<const double> eval_lengths,
                            std::span<const double> aug_returns,
                            std::span<const double> aug_lengths);

void write_metrics_csv(std::ostream& out, const MetricsSeries& series);

// Writes <dir>/metrics.csv and returns its path.
std::string emit_metrics(const MetricsSeries& series, const std::string& dir);

}  // namespace ewavq
