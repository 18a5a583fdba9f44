#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "transporter/photon_sim.hpp"
#include "transporter/spike_train.hpp"

// Reference semantics for the ring: fold phases into a histogram, then keep
// one bit per bin. Deliberately written without any ring machinery.
namespace transporter::oracle {

struct PhaseHistogram {
    std::vector<std::uint64_t> counts;
    double bin_width = 1.0;

    std::uint64_t total() const;
    friend bool operator==(const PhaseHistogram&, const PhaseHistogram&) = default;
};

// counts[k] = #{p : k*w <= p < (k+1)*w}. Throws ConfigError for phases outside
// [0, n_bins*w).
PhaseHistogram histogram(std::span<const double> phases, int n_bins, double bin_width);

// bit k = counts[k] > 0
SpikeTrain binarize(const PhaseHistogram& h);

// Convenience: phases of the detections, histogrammed over one laser period.
SpikeTrain encode_reference(std::span<const photon::DetectionEvent> detections, int n_bins, double period_ns);

}  // namespace transporter::oracle
