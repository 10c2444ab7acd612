#include "ewavq/metrics.hpp"

#include "ewavq/csv_util.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace ewavq {

namespace {

std::vector<double> shifted_logs(std::span<const double> xs) {
    if (xs.empty()) throw std::invalid_argument("empty sample");
    const double m = *std::min_element(xs.begin(), xs.end());
    std::vector<double> logs(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (!std::isfinite(xs[i])) throw std::invalid_argument("non-finite sample");
        logs[i] = std::log(xs[i] - m + 1.0);
    }
    return logs;
}

}  // namespace

double arithmetic_mean(std::span<const double> xs) {
    if (xs.empty()) return std::numeric_limits<double>::quiet_NaN();
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

double shifted_geometric_mean(std::span<const double> xs) {
    const auto logs = shifted_logs(xs);
    const double m = *std::min_element(xs.begin(), xs.end());
    return (std::exp(arithmetic_mean(logs)) - 1.0) + m;
}

double shifted_geometric_std(std::span<const double> xs) {
    const auto logs = shifted_logs(xs);
    const double mu = arithmetic_mean(logs);
    double var = 0.0;
    for (double l : logs) var += (l - mu) * (l - mu);
    return std::exp(std::sqrt(var / static_cast<double>(logs.size())));
}

MetricsRow make_metrics_row(std::uint64_t step, std::uint64_t seed,
                            std::span<const double> eval_returns,
                            std::span<const double> eval_lengths,
                            std::span<const double> aug_returns,
                            std::span<const double> aug_lengths) {
    MetricsRow r;
    r.step = step;
    r.seed = seed;
    r.values = {shifted_geometric_mean(eval_returns), shifted_geometric_std(eval_returns),
                arithmetic_mean(eval_returns),        shifted_geometric_mean(eval_lengths),
                shifted_geometric_std(eval_lengths),  arithmetic_mean(aug_returns),
                arithmetic_mean(aug_lengths)};
    return r;
}

void write_metrics_csv(std::ostream& out, const MetricsSeries& series) {
    out << "# *_gm: exp(mean(log(x - min + 1))) - 1 + min; *_std_gm: "
           "exp(std(log(x - min + 1))); step = online environment steps\n";
    out << "step,seed";
    for (const char* name : kMetricNames) out << ',' << name;
    out << '\n';
    for (const auto& r : series.rows) {
        out << r.step << ',' << r.seed;
        for (double v : r.values) out << ',' << format_double(v);
        out << '\n';
    }
}

std::string emit_metrics(const MetricsSeries& series, const std::string& dir) {
    if (series.rows.empty()) throw std::invalid_argument("empty metrics series");
    std::filesystem::create_directories(dir);
    const auto path = (std::filesystem::path(dir) / "metrics.csv").string();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path);
    write_metrics_csv(out, series);
    if (!out) throw std::runtime_error("write failed for " + path);
    return path;
}

}  // namespace ewavq
