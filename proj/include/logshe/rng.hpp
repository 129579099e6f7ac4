#pragma once

#include <cstdint>

namespace logshe {

// Deterministic counter-free generator built on splitmix64. Streams are
// derived by hashing (seed, tag, index) so the draw attached to a given unit
// does not move when the sample size or the replication layout changes.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(mix(seed ^ 0x9e3779b97f4a7c15ull)) {}

    Rng fork(std::uint64_t tag) const { return Rng(mix(state_ ^ mix(tag))); }

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        return mix(state_);
    }

    // uniform on (0,1), never returns an endpoint
    double next_uniform() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    double next_normal();

    static std::uint64_t mix(std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ull;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // replication seed derivation for the Monte Carlo harness
    static std::uint64_t derive(std::uint64_t master, std::uint64_t rep) {
        return mix(mix(master) ^ mix(rep + 0x51ed270b0a1ull));
    }

private:
    std::uint64_t state_;
};

enum class ErrorKind { StdNormal, MixedNormal, Uniform };

// i.i.d. error laws with E v^2 = 1 used by the simulation DGPs
struct ErrorDistribution {
    ErrorKind kind = ErrorKind::StdNormal;
    double a = 2.0; // MixedNormal location parameter
    double b = 1.0; // MixedNormal variance parameter

    static ErrorDistribution std_normal() { return {ErrorKind::StdNormal, 0, 0}; }
    static ErrorDistribution mixed_normal(double a, double b) { return {ErrorKind::MixedNormal, a, b}; }
    static ErrorDistribution uniform() { return {ErrorKind::Uniform, 0, 0}; }

    double draw(Rng& rng) const;
};

} // namespace logshe
