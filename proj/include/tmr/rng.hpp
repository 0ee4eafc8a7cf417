#pragma once

#include <cstdint>
#include <random>

namespace tmr {

using Rng = std::mt19937_64;

// Independent seed streams derived from one master seed (splitmix64 mix).
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
    std::uint64_t z = master + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

namespace seed_stream {
inline constexpr std::uint64_t data = 1;        // sequence draws + masking
inline constexpr std::uint64_t model_init = 2;  // parameter initialization
inline constexpr std::uint64_t buffer = 3;      // replay sampling
inline constexpr std::uint64_t generator = 4;   // replacement token sampling
inline constexpr std::uint64_t drift_eval = 5;  // held-out drift measurement
inline constexpr std::uint64_t probe = 6;       // fine-tuning shuffles
}  // namespace seed_stream

}  // namespace tmr
