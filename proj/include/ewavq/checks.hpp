#pragma once

#include <string>
#include <vector>

namespace ewavq {

enum class CheckStatus { Pass, Warn, Fail };

struct CheckResult {
    std::string name;
    CheckStatus status = CheckStatus::Fail;
    std::string detail;
    double seconds = 0.0;

    bool ok() const { return status != CheckStatus::Fail; }
};

const char* status_label(CheckStatus s);

// "PASS name (1.23 s): detail"
std::string format_check(const CheckResult& r);

// Theory oracle suites.
CheckResult check_closed_form();       // 100 histories x 1e4 steps, |diff| <= 1e-10, < 5 s
CheckResult check_attraction_bound();  // 1e5 steps, max |A| <= delta R / phi
CheckResult check_steady_state();      // 1e5 steps, tail mean within 2% of 3.2, < 10 s
CheckResult check_drift_bound();       // 1e4 pairs per eps, TV <= tanh(eps) + 1e-12
CheckResult check_drift_worst_case();  // worst_case_drift reaches tanh(eps) within 1e-9
CheckResult check_routing();           // d=3, b=3, M=27 table and fallback agree with brute force
CheckResult check_gradients();         // 5 seeds, max relative error <= 1e-4

struct NamedCheck {
    const char* name;
    const char* suite;
    CheckResult (*run)();
};

// Every theory check in a fixed order, grouped by suite
// (attraction, drift, routing, gradients).
const std::vector<NamedCheck>& theory_checks();

}  // namespace ewavq
