#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace transporter {

// Binary sequence of per-bin/per-stage spikes, one byte per bit (0 or 1).
struct SpikeTrain {
    std::vector<std::uint8_t> bits;

    SpikeTrain() = default;
    explicit SpikeTrain(std::size_t n) : bits(n, 0) {}
    explicit SpikeTrain(std::vector<std::uint8_t> b) : bits(std::move(b)) {}

    std::size_t size() const { return bits.size(); }
    std::size_t popcount() const;
    std::uint8_t operator[](std::size_t i) const { return bits[i]; }

    // ASCII '0'/'1' string of exactly size() characters.
    std::string to_string() const;
    // Throws FormatError on any character other than '0'/'1'.
    static SpikeTrain from_string(std::string_view s);

    friend bool operator==(const SpikeTrain&, const SpikeTrain&) = default;
};

// result[k] = train[(k - r) mod n]: right rotation by r positions.
SpikeTrain rotate(const SpikeTrain& train, std::int64_t r);

}  // namespace transporter
