#include "transporter/photon_sim.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "transporter/error.hpp"

namespace transporter::photon {

namespace {

bool finite_positive(double x) { return std::isfinite(x) && x > 0.0; }

}  // namespace

void LaserConfig::validate() const
{
    if (!finite_positive(period_ns))
        throw ConfigError("laser period must be > 0 ns, got " + std::to_string(period_ns));
    if (n_periods < 1)
        throw ConfigError("laser n_periods must be >= 1, got " + std::to_string(n_periods));
}

void DecaySource::validate() const
{
    if (!finite_positive(lifetime_ns))
        throw ConfigError("lifetime must be > 0 ns, got " + std::to_string(lifetime_ns));
    if (!(background_fraction >= 0.0 && background_fraction <= 1.0))
        throw ConfigError("background_fraction must lie in [0, 1]");
    if (!(mean_photons_per_period >= 0.0) || !std::isfinite(mean_photons_per_period))
        throw ConfigError("mean_photons_per_period must be finite and >= 0");
}

void SpadModel::validate() const
{
    if (!(pdp >= 0.0 && pdp <= 1.0))
        throw ConfigError("pdp must lie in [0, 1]");
    if (!(dead_time_ns >= 0.0) || !std::isfinite(dead_time_ns))
        throw ConfigError("dead_time must be finite and >= 0 ns");
}

double phase_of(double t_abs, double period_ns)
{
    double ph = std::fmod(t_abs, period_ns);
    if (ph < 0.0)
        ph += period_ns;
    if (ph >= period_ns)
        ph = 0.0;
    return ph;
}

double truncated_exponential_phase(double lifetime_ns, double period_ns, Rng& rng)
{
    for (;;) {
        const double ph = rng.exponential(lifetime_ns);
        if (ph < period_ns)
            return ph;
    }
}

std::vector<PhotonEvent> gen_arrivals(const LaserConfig& laser, const DecaySource& src, std::uint64_t seed)
{
    laser.validate();
    src.validate();

    Rng rng(seed);
    std::vector<PhotonEvent> out;
    std::vector<PhotonEvent> period_events;
    const double end = laser.exposure_ns();
    for (std::int64_t p = 0; p < laser.n_periods; ++p) {
        const double start = static_cast<double>(p) * laser.period_ns;
        const std::uint64_t n = rng.poisson(src.mean_photons_per_period);
        period_events.clear();
        for (std::uint64_t i = 0; i < n; ++i) {
            const bool background = rng.uniform() < src.background_fraction;
            const double ph = background ? rng.uniform() * laser.period_ns
                                         : truncated_exponential_phase(src.lifetime_ns, laser.period_ns, rng);
            double t = start + ph;
            // start + ph can round up onto the next boundary.
            const double next = start + laser.period_ns;
            if (t >= next || t >= end)
                t = std::nextafter(std::min(next, end), 0.0);
            period_events.push_back({t, background ? Origin::background : Origin::signal});
        }
        std::stable_sort(period_events.begin(), period_events.end(),
                         [](const PhotonEvent& a, const PhotonEvent& b) { return a.t_abs < b.t_abs; });
        out.insert(out.end(), period_events.begin(), period_events.end());
    }
    return out;
}

std::vector<PhotonEvent> gen_periodic_arrivals(double period_src_ns, const LaserConfig& laser, double duration_ns)
{
    laser.validate();
    if (!finite_positive(period_src_ns))
        throw ConfigError("source period must be > 0 ns");
    if (!(duration_ns > 0.0) || duration_ns > laser.exposure_ns())
        throw ConfigError("duration must lie in (0, exposure]");

    std::vector<PhotonEvent> out;
    for (std::int64_t k = 0;; ++k) {
        const double t = static_cast<double>(k) * period_src_ns;
        if (t >= duration_ns)
            break;
        out.push_back({t, Origin::signal});
    }
    return out;
}

std::vector<DetectionEvent> detect(std::span<const PhotonEvent> events, const SpadModel& spad,
                                   const LaserConfig& laser, std::uint64_t seed)
{
    spad.validate();
    laser.validate();
    for (std::size_t i = 1; i < events.size(); ++i)
        if (events[i].t_abs < events[i - 1].t_abs)
            throw ConfigError("detect: events not sorted at index " + std::to_string(i));

    Rng rng(seed);
    std::vector<DetectionEvent> out;
    bool have_last = false;
    double last = 0.0;
    for (const PhotonEvent& ev : events) {
        // Always consume the draw so thinning is monotone in pdp.
        const bool kept = rng.uniform() < spad.pdp;
        if (!kept)
            continue;
        if (have_last && ev.t_abs - last < spad.dead_time_ns)
            continue;
        // Equal timestamps cannot both be detected.
        if (have_last && ev.t_abs <= last)
            continue;
        out.push_back({ev.t_abs, phase_of(ev.t_abs, laser.period_ns)});
        last = ev.t_abs;
        have_last = true;
    }
    return out;
}

}  // namespace transporter::photon
