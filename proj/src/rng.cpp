#include "transporter/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace transporter {

std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t hash_tag(std::string_view tag)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : tag) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t derive_seed(std::uint64_t master, std::string_view tag, std::uint64_t index)
{
    return splitmix64(splitmix64(splitmix64(master) ^ hash_tag(tag)) + index);
}

double Rng::uniform()
{
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi)
{
    return lo + (hi - lo) * uniform();
}

double Rng::exponential(double mean)
{
    // 1 - u lies in (0, 1], so the log is finite.
    return -mean * std::log1p(-uniform());
}

std::uint64_t Rng::poisson(double mean)
{
    if (!(mean >= 0.0) || !std::isfinite(mean))
        throw std::invalid_argument("poisson mean must be finite and non-negative");
    constexpr double kChunk = 30.0;
    std::uint64_t total = 0;
    while (mean > 0.0) {
        const double m = mean > kChunk ? kChunk : mean;
        mean -= m;
        const double limit = std::exp(-m);
        double prod = uniform();
        while (prod >= limit) {
            ++total;
            prod *= uniform();
        }
    }
    return total;
}

std::uint64_t Rng::below(std::uint64_t n)
{
    if (n == 0)
        throw std::invalid_argument("below(0)");
    // Rejection keeps the result unbiased.
    const std::uint64_t limit = (~std::uint64_t{0} / n) * n;
    std::uint64_t x;
    do {
        x = engine_();
    } while (x >= limit);
    return x % n;
}

}  // namespace transporter
