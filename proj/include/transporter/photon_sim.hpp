#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "transporter/rng.hpp"

namespace transporter::photon {

// Laser repetition: all times are in nanoseconds.
struct LaserConfig {
    double period_ns = 128.0;
    std::int64_t n_periods = 1;

    double exposure_ns() const { return period_ns * static_cast<double>(n_periods); }
    void validate() const;
};

struct DecaySource {
    double lifetime_ns = 10.0;
    double background_fraction = 0.0;
    double mean_photons_per_period = 1.0;

    void validate() const;
};

enum class Origin : std::uint8_t { signal, background };

struct PhotonEvent {
    double t_abs = 0.0;
    Origin origin = Origin::signal;

    friend bool operator==(const PhotonEvent&, const PhotonEvent&) = default;
};

struct SpadModel {
    double pdp = 1.0;
    double dead_time_ns = 0.0;

    void validate() const;
};

struct DetectionEvent {
    double t_abs = 0.0;
    double phase = 0.0;  // t_abs mod laser period

    friend bool operator==(const DetectionEvent&, const DetectionEvent&) = default;
};

// One fluorescence phase in [0, period): exponential with mean `lifetime_ns`,
// redrawn until it lands inside the period.
double truncated_exponential_phase(double lifetime_ns, double period_ns, Rng& rng);

// Poisson photons per laser period; each is background (uniform phase) with
// probability background_fraction, else a truncated-exponential signal photon.
// Output is sorted by t_abs.
std::vector<PhotonEvent> gen_arrivals(const LaserConfig& laser, const DecaySource& src, std::uint64_t seed);

// Arrivals at 0, period_src, 2 period_src, ... strictly below `duration_ns`.
std::vector<PhotonEvent> gen_periodic_arrivals(double period_src_ns, const LaserConfig& laser, double duration_ns);

// PDP thinning (one uniform per event, in arrival order) followed by a
// non-paralyzable dead-time filter. Throws ConfigError on unsorted input.
std::vector<DetectionEvent> detect(std::span<const PhotonEvent> events, const SpadModel& spad,
                                   const LaserConfig& laser, std::uint64_t seed);

// t mod period, snapped into [0, period).
double phase_of(double t_abs, double period_ns);

}  // namespace transporter::photon
