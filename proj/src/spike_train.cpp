#include "transporter/spike_train.hpp"

#include <algorithm>

#include "transporter/error.hpp"

namespace transporter {

std::size_t SpikeTrain::popcount() const
{
    return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

std::string SpikeTrain::to_string() const
{
    std::string s(bits.size(), '0');
    for (std::size_t i = 0; i < bits.size(); ++i)
        if (bits[i])
            s[i] = '1';
    return s;
}

SpikeTrain SpikeTrain::from_string(std::string_view s)
{
    SpikeTrain t(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '1')
            t.bits[i] = 1;
        else if (s[i] != '0')
            throw FormatError("invalid bit character at position " + std::to_string(i));
    }
    return t;
}

SpikeTrain rotate(const SpikeTrain& train, std::int64_t r)
{
    const auto n = static_cast<std::int64_t>(train.size());
    if (n == 0)
        return train;
    r %= n;
    if (r < 0)
        r += n;
    SpikeTrain out(train.size());
    for (std::int64_t k = 0; k < n; ++k)
        out.bits[static_cast<std::size_t>((k + r) % n)] = train.bits[static_cast<std::size_t>(k)];
    return out;
}

}  // namespace transporter
