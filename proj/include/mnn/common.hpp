#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace mnn {

using Rng = std::mt19937_64;

// Thrown when tensor or layer shapes do not compose.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown on invalid numeric domains (log of non-positive input, ...).
struct DomainError : std::runtime_error {
    explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown when an operation's contract is violated (non-scalar loss, empty gate, ...).
struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown when two networks cannot be merged.
struct MergeError : std::runtime_error {
    explicit MergeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown on out-of-range labels or indices.
struct IndexError : std::runtime_error {
    explicit IndexError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// splitmix64 step; used to derive independent per-phase seeds from a master seed.
inline uint64_t derive_seed(uint64_t master, uint64_t stream) {
    uint64_t z = master + 0x9e3779b97f4a7c15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

}  // namespace mnn
