#pragma once

#include <cstdint>

namespace attriprompt {

// splitmix64 finalizer; used to derive independent deterministic streams
// from the single run seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

// Stream ids for the per-run seed. Keep these stable: checkpoints and logs
// are only reproducible if the derivation never changes.
namespace seed_stream {
constexpr std::uint64_t backbone = 1;
constexpr std::uint64_t prompt_pool = 2;
constexpr std::uint64_t batch_order = 3;
constexpr std::uint64_t clustering = 4;
}  // namespace seed_stream

}  // namespace attriprompt
