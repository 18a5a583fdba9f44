#include "transporter/oracle.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "transporter/error.hpp"

namespace transporter::oracle {

std::uint64_t PhaseHistogram::total() const
{
    return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
}

PhaseHistogram histogram(std::span<const double> phases, int n_bins, double bin_width)
{
    if (n_bins < 1)
        throw ConfigError("histogram needs at least one bin");
    if (!(bin_width > 0.0) || !std::isfinite(bin_width))
        throw ConfigError("bin width must be > 0");

    PhaseHistogram h;
    h.counts.assign(static_cast<std::size_t>(n_bins), 0);
    h.bin_width = bin_width;
    const double span = n_bins * bin_width;
    for (std::size_t i = 0; i < phases.size(); ++i) {
        const double p = phases[i];
        if (!(p >= 0.0) || !(p < span))
            throw ConfigError("phase " + std::to_string(i) + " = " + std::to_string(p) + " outside histogram range");
        auto k = static_cast<long long>(std::floor(p / bin_width));
        // Enforce k*w <= p < (k+1)*w exactly where the division rounded.
        while (k > 0 && k * bin_width > p)
            --k;
        while (k + 1 < n_bins && (k + 1) * bin_width <= p)
            ++k;
        if (k >= n_bins)
            k = n_bins - 1;
        ++h.counts[static_cast<std::size_t>(k)];
    }
    return h;
}

SpikeTrain binarize(const PhaseHistogram& h)
{
    SpikeTrain t(h.counts.size());
    for (std::size_t k = 0; k < h.counts.size(); ++k)
        t.bits[k] = h.counts[k] > 0 ? 1 : 0;
    return t;
}

SpikeTrain encode_reference(std::span<const photon::DetectionEvent> detections, int n_bins, double period_ns)
{
    std::vector<double> phases;
    phases.reserve(detections.size());
    for (const auto& d : detections)
        phases.push_back(d.phase);
    return binarize(histogram(phases, n_bins, period_ns / n_bins));
}

}  // namespace transporter::oracle
