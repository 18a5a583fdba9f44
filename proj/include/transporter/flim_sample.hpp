#pragma once

#include <cstdint>

#include "transporter/spike_train.hpp"

namespace transporter {

struct SampleMeta {
    std::uint32_t photon_count = 0;
    double background_fraction = 0.0;
    std::uint64_t seed = 0;

    friend bool operator==(const SampleMeta&, const SampleMeta&) = default;
};

// One labelled FLIM entry: binarized spike train plus ground-truth lifetime.
struct FlimSample {
    SpikeTrain spikes;
    double lifetime_ns = 0.0;
    SampleMeta meta;

    friend bool operator==(const FlimSample&, const FlimSample&) = default;
};

}  // namespace transporter
