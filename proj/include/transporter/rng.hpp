#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace transporter {

// Seed streams are derived with splitmix64 over (master, FNV-1a(tag), index)
// so every split/sample owns an independent, reproducible generator.
std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t hash_tag(std::string_view tag);
std::uint64_t derive_seed(std::uint64_t master, std::string_view tag, std::uint64_t index = 0);

// Thin wrapper over mt19937_64 with hand-written transforms. The engine output
// is fixed by the standard; std::*_distribution is not, so draws are built
// here to stay bit-identical across standard libraries.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    // [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi);
    // Exponential with the given mean.
    double exponential(double mean);
    bool bernoulli(double p) { return uniform() < p; }
    // Exact Poisson sampler (Knuth, split into chunks for large means).
    std::uint64_t poisson(double mean);
    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);

  private:
    std::mt19937_64 engine_;
};

}  // namespace transporter
