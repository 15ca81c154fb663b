#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace mesh {

using SimTime = double;   // simulated seconds
using Bytes = long long;  // memory sizes and deltas

constexpr Bytes GB = 1'000'000'000LL;
constexpr Bytes MB = 1'000'000LL;
constexpr Bytes GiB = 1LL << 30;
constexpr Bytes KiB = 1LL << 10;

using RequestId = std::int64_t;
using InstanceId = std::int64_t;
using NodeId = std::int64_t;
using OpId = std::int64_t;

enum class HwClass { Cpu, Gpu };

inline const char* hw_name(HwClass c) { return c == HwClass::Cpu ? "cpu" : "gpu"; }

// Scale a byte count by (100 + pct) / 100, rounding up. Integer-exact for
// integer pct; the intermediate product stays well below 2^53 for realistic
// sizes, so the double arithmetic is exact.
inline Bytes scale_bytes_up(Bytes base, double pct) {
    return static_cast<Bytes>(std::ceil(static_cast<double>(base) * (100.0 + pct) / 100.0));
}

class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

class SimError : public std::runtime_error {
public:
    explicit SimError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace mesh
