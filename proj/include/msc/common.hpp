#pragma once

#include <atomic>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace msc {

// Invalid configuration or shape: maps to CLI exit code 2.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numeric check failure (NaN/Inf, fully-masked row, divergence): exit code 1.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {
inline std::atomic<bool> g_finite_checks{true};
}

// Ops scan their outputs for NaN/Inf and fail fast when enabled (default on).
inline bool finite_checks_enabled() { return detail::g_finite_checks.load(std::memory_order_relaxed); }
inline void set_finite_checks(bool on) { detail::g_finite_checks.store(on, std::memory_order_relaxed); }

}  // namespace msc
