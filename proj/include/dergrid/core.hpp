#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dergrid {

// Fixed simulation clock: 15 minute steps.
inline constexpr double kStepHours = 0.25;
inline constexpr int kStepsPerHour = 4;
inline constexpr int kStepsPerDay = 96;

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NetworkError : public Error {
public:
    NetworkError(const std::string& element, const std::string& what)
        : Error(element.empty() ? what : element + ": " + what), element_(element) {}
    const std::string& element() const noexcept { return element_; }

private:
    std::string element_;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class ScenarioError : public Error {
public:
    using Error::Error;
};

class SolverError : public Error {
public:
    using Error::Error;
};

class PowerFlowError : public Error {
public:
    PowerFlowError(long step, const std::string& what)
        : Error("step " + std::to_string(step) + ": " + what), step_(step) {}
    long step() const noexcept { return step_; }

private:
    long step_;
};

class MetricError : public Error {
public:
    using Error::Error;
};

enum class Phase : std::uint8_t { A = 0, B = 1, C = 2 };

inline char phase_char(Phase p) { return static_cast<char>('A' + static_cast<int>(p)); }

inline Phase phase_from_char(char c) {
    switch (c) {
    case 'A': case 'a': return Phase::A;
    case 'B': case 'b': return Phase::B;
    case 'C': case 'c': return Phase::C;
    default: throw ConfigError(std::string("unknown phase '") + c + "'");
    }
}

enum class ConsumerClass : std::uint8_t { none, residential, commercial };

inline std::string_view to_string(ConsumerClass c) {
    switch (c) {
    case ConsumerClass::residential: return "residential";
    case ConsumerClass::commercial: return "commercial";
    default: return "none";
    }
}

inline ConsumerClass consumer_class_from(std::string_view s) {
    if (s == "residential") return ConsumerClass::residential;
    if (s == "commercial") return ConsumerClass::commercial;
    if (s == "none") return ConsumerClass::none;
    throw ConfigError("unknown consumer class '" + std::string(s) + "'");
}

/// Days per month of a non-leap simulation year.
inline constexpr std::array<int, 12> kMonthDays{31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};

/// Month (0-11) containing a zero-based day of year; days past 365 wrap.
inline int month_of_day(long day_of_year) {
    long d = day_of_year % 365;
    for (int m = 0; m < 12; ++m) {
        if (d < kMonthDays[m]) return m;
        d -= kMonthDays[m];
    }
    return 11;
}

inline double positive_part(double x) { return x > 0.0 ? x : 0.0; }

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

/// Independent stream for scenario `index` under `root` seed.
inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t index, std::uint64_t salt = 0) {
    return splitmix64(splitmix64(root ^ splitmix64(salt)) + index);
}

inline double uniform(Rng& rng, double lo, double hi) {
    // 53-bit mantissa draw, identical across standard libraries
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * u;
}

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
    return static_cast<std::size_t>(uniform(rng, 0.0, static_cast<double>(n)));
}

inline double standard_normal(Rng& rng) {
    // Box-Muller, one draw per call
    double u1 = uniform(rng, 0.0, 1.0);
    while (u1 <= 0.0) u1 = uniform(rng, 0.0, 1.0);
    const double u2 = uniform(rng, 0.0, 1.0);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

/// 64-bit FNV-1a, used for artifact content hashes.
inline std::uint64_t fnv1a(std::string_view data, std::uint64_t h = 0xcbf29ce484222325ull) {
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

/// Shortest round-trip decimal text for a double.
inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace dergrid
