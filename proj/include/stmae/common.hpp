#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace stmae {

// User-facing error categories. ConfigError maps to exit code 2 in the CLI,
// everything else to exit code 1.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct InvalidInput : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// splitmix64, used to derive per-step / per-sample seeds from a base seed.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// Pure function of (base, index): the seed lineage is reproducible.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
    return splitmix64(base ^ splitmix64(index + 1));
}

inline constexpr const char* kVersionString = "stmae 0.1.0";

}  // namespace stmae
