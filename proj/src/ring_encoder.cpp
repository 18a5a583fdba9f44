#include "transporter/ring_encoder.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "transporter/error.hpp"

namespace transporter::ring {

std::string to_string(Stopper s)
{
    switch (s) {
    case Stopper::at128:
        return "128";
    case Stopper::at256:
        return "256";
    case Stopper::disabled:
        break;
    }
    return "off";
}

Stopper parse_stopper(const std::string& s)
{
    if (s == "128")
        return Stopper::at128;
    if (s == "256")
        return Stopper::at256;
    if (s == "off" || s == "disabled")
        return Stopper::disabled;
    throw ConfigError("stopper must be 128, 256 or off, got '" + s + "'");
}

void EncoderConfig::validate() const
{
    laser.validate();
    if (n_stages < 2)
        throw ConfigError("n_stages must be >= 2");
    if (!(ring_clock_hz > 0.0) || !std::isfinite(ring_clock_hz))
        throw ConfigError("ring clock must be > 0 Hz");
    if (stopper != Stopper::disabled && stopper != Stopper::at128 && stopper != Stopper::at256)
        throw ConfigError("stopper must be 128, 256 or disabled");
    if (counter_bits < 1 || counter_bits > 31)
        throw ConfigError("counter_bits must lie in [1, 31]");
}

double EncoderConfig::ideal_clock_hz(int n_stages, double period_ns)
{
    return static_cast<double>(n_stages) / period_ns * 1e9;
}

ClockTiming clock_timing(const EncoderConfig& cfg)
{
    cfg.validate();
    const double period = cfg.laser.period_ns;
    const double n = cfg.n_stages;
    // Ticks that fit in one period; snap values within rounding of an integer.
    double fit = period * cfg.ring_clock_hz * 1e-9;
    const double nearest = std::round(fit);
    const bool integral = std::abs(fit - nearest) <= 1e-9 * std::max(1.0, fit);
    if (integral)
        fit = nearest;

    ClockTiming t;
    if (fit >= n) {
        t.ticks_per_period = cfg.n_stages;
        t.tick_period_ns = integral ? period / fit : 1e9 / cfg.ring_clock_hz;
        t.suppressed_ns = std::max(0.0, period - n * t.tick_period_ns);
        if (integral && fit == n)
            t.suppressed_ns = 0.0;
    }
    else {
        t.ticks_per_period = static_cast<int>(integral ? fit : std::ceil(fit));
        t.tick_period_ns = integral ? period / fit : 1e9 / cfg.ring_clock_hz;
        t.deficient = true;
    }
    return t;
}

TickSchedule gated_clock(const EncoderConfig& cfg)
{
    const ClockTiming timing = clock_timing(cfg);
    TickSchedule s;
    s.tick_period_ns = timing.tick_period_ns;
    s.suppressed_ns_per_period = timing.suppressed_ns;
    const auto periods = static_cast<std::size_t>(cfg.laser.n_periods);
    s.tick_times.reserve(periods * static_cast<std::size_t>(timing.ticks_per_period));
    for (std::size_t p = 0; p < periods; ++p) {
        const double start = static_cast<double>(p) * cfg.laser.period_ns;
        for (int j = 0; j < timing.ticks_per_period; ++j)
            s.tick_times.push_back(start + j * timing.tick_period_ns);
        s.per_period_counts.push_back(timing.ticks_per_period);
        s.deficient.push_back(timing.deficient ? 1 : 0);
    }
    return s;
}

RingState::RingState(int n_stages, int counter_bits)
    : storage_(static_cast<std::size_t>(n_stages < 2 ? 2 : n_stages), 0), counter_bits_(counter_bits)
{
    if (n_stages < 2)
        throw ConfigError("ring needs at least 2 stages");
}

RingState::RingState(std::span<const std::uint8_t> stage_bits, int counter_bits)
    : RingState(static_cast<int>(stage_bits.size()), counter_bits)
{
    for (std::size_t i = 0; i < stage_bits.size(); ++i) {
        storage_[i] = stage_bits[i] ? 1 : 0;
        set_bits_ += storage_[i];
    }
}

std::size_t RingState::slot(int stage) const
{
    return (head_ + static_cast<std::size_t>(stage)) % storage_.size();
}

bool RingState::bit(int stage) const
{
    return storage_[slot(stage)] != 0;
}

std::vector<std::uint8_t> RingState::bits() const
{
    std::vector<std::uint8_t> out(storage_.size());
    for (int s = 0; s < n_stages(); ++s)
        out[static_cast<std::size_t>(s)] = storage_[slot(s)];
    return out;
}

void RingState::step(bool inject)
{
    const std::size_t n = storage_.size();
    // The slot of stage N-1 becomes stage 0.
    head_ = (head_ + n - 1) % n;
    if (inject && injection_enabled && !storage_[head_]) {
        storage_[head_] = 1;
        ++set_bits_;
    }
    ++ticks_elapsed;
}

void RingState::advance(std::int64_t k)
{
    if (k <= 0)
        return;
    const auto n = static_cast<std::int64_t>(storage_.size());
    const auto shift = static_cast<std::size_t>(k % n);
    head_ = (head_ + storage_.size() - shift) % storage_.size();
    ticks_elapsed += k;
}

void RingState::count_photon()
{
    const std::uint32_t mask = (std::uint32_t{1} << counter_bits_) - 1;
    photon_count = (photon_count + 1) & mask;
}

bool operator==(const RingState& a, const RingState& b)
{
    return a.bits() == b.bits() && a.ticks_elapsed == b.ticks_elapsed && a.photon_count == b.photon_count
           && a.injection_enabled == b.injection_enabled && a.counter_bits_ == b.counter_bits_;
}

RingState step(RingState state, bool inject)
{
    state.step(inject);
    return state;
}

namespace {

struct Slot {
    std::int64_t period;
    int tick;  // -1 when the detection falls in the gated-off window
};

Slot locate(const photon::DetectionEvent& d, const EncoderConfig& cfg, const ClockTiming& timing,
            std::size_t index)
{
    const double period = cfg.laser.period_ns;
    if (!(d.t_abs >= 0.0) || !(d.t_abs < cfg.laser.exposure_ns()))
        throw ConfigError("detection " + std::to_string(index) + " at t=" + std::to_string(d.t_abs)
                          + " ns lies outside the exposure window");
    if (!(d.phase >= 0.0) || !(d.phase < period))
        throw ConfigError("detection " + std::to_string(index) + " has phase outside [0, period)");
    const auto p = static_cast<std::int64_t>(std::llround((d.t_abs - d.phase) / period));
    if (p < 0 || p >= cfg.laser.n_periods)
        throw ConfigError("detection " + std::to_string(index) + " maps outside the exposure window");
    auto j = static_cast<std::int64_t>(std::floor(d.phase / timing.tick_period_ns));
    if (j >= timing.ticks_per_period) {
        if (!timing.deficient)
            return {p, -1};
        j = timing.ticks_per_period - 1;
    }
    return {p, static_cast<int>(j)};
}

RingState run(std::span<const photon::DetectionEvent> detections, const EncoderConfig& cfg,
              std::vector<TickTrace>* trace, EncodeStats* stats_out)
{
    const ClockTiming timing = clock_timing(cfg);
    for (std::size_t i = 1; i < detections.size(); ++i)
        if (detections[i].t_abs < detections[i - 1].t_abs)
            throw ConfigError("encode: detections not sorted at index " + std::to_string(i));

    const std::int64_t per = timing.ticks_per_period;
    const std::int64_t total_ticks = cfg.laser.n_periods * per;
    const auto threshold = static_cast<std::uint32_t>(cfg.stopper);

    RingState state(cfg.n_stages, cfg.counter_bits);
    EncodeStats stats;

    auto emit = [&](std::int64_t g, int dets, int accepted, bool injected) {
        if (!trace)
            return;
        TickTrace t;
        t.tick = g;
        t.period = g / per;
        t.tick_in_period = static_cast<int>(g % per);
        t.time_ns = static_cast<double>(t.period) * cfg.laser.period_ns + t.tick_in_period * timing.tick_period_ns;
        t.detections = dets;
        t.accepted = accepted;
        t.injected = injected;
        t.set_bits = state.set_bits();
        t.photon_count = state.photon_count;
        t.injection_enabled = state.injection_enabled;
        t.stages = SpikeTrain(state.bits()).to_string();
        trace->push_back(std::move(t));
    };
    auto advance_to = [&](std::int64_t g) {
        if (!trace) {
            state.advance(g - state.ticks_elapsed);
            return;
        }
        while (state.ticks_elapsed < g) {
            const std::int64_t cur = state.ticks_elapsed;
            state.step(false);
            emit(cur, 0, 0, false);
        }
    };

    std::size_t i = 0;
    while (i < detections.size()) {
        const Slot s = locate(detections[i], cfg, timing, i);
        if (s.tick < 0) {
            ++stats.detections_lost;
            ++i;
            continue;
        }
        const std::int64_t g = s.period * per + s.tick;
        if (g < state.ticks_elapsed)
            throw ConfigError("encode: detection " + std::to_string(i) + " out of order");
        advance_to(g);

        int dets = 0;
        int accepted = 0;
        bool tripped = false;
        while (i < detections.size()) {
            const Slot o = locate(detections[i], cfg, timing, i);
            if (o.tick < 0 || o.period * per + o.tick != g)
                break;
            ++dets;
            ++i;
            if (!state.injection_enabled || tripped) {
                ++stats.detections_blocked;
                continue;
            }
            ++accepted;
            state.count_photon();
            if (cfg.stopper != Stopper::disabled && state.photon_count > threshold)
                tripped = true;
        }
        state.step(accepted > 0);
        if (tripped)
            state.injection_enabled = false;
        stats.detections_accepted += accepted;
        emit(g, dets, accepted, accepted > 0);
    }
    advance_to(total_ticks);

    if (stats_out)
        *stats_out = stats;
    return state;
}

}  // namespace

RingState encode(std::span<const photon::DetectionEvent> detections, const EncoderConfig& cfg, EncodeStats* stats)
{
    return run(detections, cfg, nullptr, stats);
}

RingState encode_traced(std::span<const photon::DetectionEvent> detections, const EncoderConfig& cfg,
                        std::vector<TickTrace>& trace, EncodeStats* stats)
{
    trace.clear();
    return run(detections, cfg, &trace, stats);
}

Readout readout(const RingState& state, double readout_clock_hz)
{
    if (!(readout_clock_hz > 0.0))
        throw ConfigError("readout clock must be > 0 Hz");
    const int n = state.n_stages();
    Readout r;
    r.train = SpikeTrain(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        r.train.bits[static_cast<std::size_t>(i)] = state.bit(n - 1 - i) ? 1 : 0;
    r.duration_ns = n / readout_clock_hz * 1e9;
    r.start_stage = n - 1;
    return r;
}

std::int64_t phase_offset(const RingState& state, const EncoderConfig& cfg)
{
    const std::int64_t n = cfg.n_stages;
    return ((state.ticks_elapsed % n) + n) % n;
}

SpikeTrain aligned_readout(const RingState& state, const EncoderConfig& cfg)
{
    // The readout clock only sets the serial duration, not the bit order.
    return rotate(readout(state, 1.0).train, phase_offset(state, cfg));
}

std::string serialize(const SpikeTrainRecord& rec)
{
    nlohmann::ordered_json h;
    h["format"] = "transporter-spike-train";
    h["version"] = 1;
    h["n_stages"] = rec.n_stages;
    h["laser_period_ns"] = rec.laser_period_ns;
    h["ring_clock_hz"] = rec.ring_clock_hz;
    h["stopper"] = to_string(rec.stopper);
    h["photon_count"] = rec.photon_count;
    h["phase_offset"] = rec.phase_offset;
    h["readout_start_stage"] = rec.readout_start_stage;
    h["aligned"] = rec.aligned;
    return h.dump() + "\n" + rec.train.to_string() + "\n";
}

SpikeTrainRecord parse_spike_train(const std::string& text)
{
    std::istringstream in(text);
    std::string header_line, bits_line;
    if (!std::getline(in, header_line))
        throw FormatError("spike train: missing header");
    if (!std::getline(in, bits_line))
        throw FormatError("spike train: missing bit string", 0);

    nlohmann::json h;
    try {
        h = nlohmann::json::parse(header_line);
    }
    catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("spike train: bad header: ") + e.what());
    }
    if (h.value("format", "") != "transporter-spike-train" || h.value("version", 0) != 1)
        throw FormatError("spike train: unsupported format or version");

    SpikeTrainRecord r;
    try {
        r.n_stages = h.at("n_stages").get<int>();
        r.laser_period_ns = h.at("laser_period_ns").get<double>();
        r.ring_clock_hz = h.at("ring_clock_hz").get<double>();
        r.stopper = parse_stopper(h.at("stopper").get<std::string>());
        r.photon_count = h.at("photon_count").get<std::uint32_t>();
        r.phase_offset = h.at("phase_offset").get<std::int64_t>();
        r.readout_start_stage = h.at("readout_start_stage").get<int>();
        r.aligned = h.at("aligned").get<bool>();
    }
    catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("spike train: bad header field: ") + e.what());
    }
    r.train = SpikeTrain::from_string(bits_line);
    if (static_cast<int>(r.train.size()) != r.n_stages)
        throw FormatError("spike train: bit string length does not match n_stages", 0);
    return r;
}

}  // namespace transporter::ring
