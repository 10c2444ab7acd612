#pragma once

#include <cstdio>
#include <string>

namespace ewavq {

// Shortest-round-trip-safe decimal form used by every CSV/text emitter.
inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace ewavq
