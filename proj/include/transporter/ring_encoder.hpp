#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "transporter/photon_sim.hpp"
#include "transporter/spike_train.hpp"

namespace transporter::ring {

// Photon-count threshold above which injection into the ring halts.
enum class Stopper : int { disabled = 0, at128 = 128, at256 = 256 };

std::string to_string(Stopper s);
Stopper parse_stopper(const std::string& s);  // "128" | "256" | "off"/"disabled"

struct EncoderConfig {
    int n_stages = 128;
    double ring_clock_hz = 1e9;
    photon::LaserConfig laser{128.0, 16};
    Stopper stopper = Stopper::disabled;
    int counter_bits = 12;

    void validate() const;
    // Ring clock that yields exactly n_stages ticks per laser period.
    static double ideal_clock_hz(int n_stages, double period_ns);
};

// Per-period ring clock behavior after gating.
struct ClockTiming {
    double tick_period_ns = 1.0;
    int ticks_per_period = 0;
    bool deficient = false;       // ring clock too slow to deliver n_stages ticks
    double suppressed_ns = 0.0;   // gated time at the end of each period
};

ClockTiming clock_timing(const EncoderConfig& cfg);

struct TickSchedule {
    std::vector<double> tick_times;
    std::vector<int> per_period_counts;
    std::vector<std::uint8_t> deficient;
    double tick_period_ns = 0.0;
    double suppressed_ns_per_period = 0.0;
};

// Ticks start at each laser boundary; after n_stages ticks the clock is held
// off until the next boundary.
TickSchedule gated_clock(const EncoderConfig& cfg);

// N-stage DFF ring. Stage 0 is the flop fed by the OR gate; stage N-1 feeds
// the OR gate's ring input. Storage is rotated through a head index so a
// clock edge costs O(1).
class RingState {
  public:
    explicit RingState(int n_stages, int counter_bits = 12);
    RingState(std::span<const std::uint8_t> stage_bits, int counter_bits = 12);

    int n_stages() const { return static_cast<int>(storage_.size()); }
    int counter_bits() const { return counter_bits_; }
    bool bit(int stage) const;
    std::vector<std::uint8_t> bits() const;  // stage order
    int set_bits() const { return set_bits_; }

    std::int64_t ticks_elapsed = 0;
    std::uint32_t photon_count = 0;
    bool injection_enabled = true;

    // One ring clock edge: shift by one stage; stage 0 receives
    // stage[N-1] | (inject & injection_enabled).
    void step(bool inject);
    // k injection-free edges.
    void advance(std::int64_t k);
    // Counts one accepted photon (wraps at 2^counter_bits).
    void count_photon();

    friend bool operator==(const RingState& a, const RingState& b);

  private:
    std::size_t slot(int stage) const;

    std::vector<std::uint8_t> storage_;
    std::size_t head_ = 0;  // storage slot of stage 0
    int counter_bits_;
    int set_bits_ = 0;
};

RingState step(RingState state, bool inject);

struct TickTrace {
    std::int64_t tick = 0;
    double time_ns = 0.0;
    std::int64_t period = 0;
    int tick_in_period = 0;
    int detections = 0;  // detections attributed to this tick
    int accepted = 0;    // of which accepted for injection
    bool injected = false;
    int set_bits = 0;
    std::uint32_t photon_count = 0;
    bool injection_enabled = true;
    std::string stages;  // ring contents after the edge, stage 0 first
};

struct EncodeStats {
    std::int64_t detections_accepted = 0;
    std::int64_t detections_blocked = 0;  // arrived after the stopper latched
    std::int64_t detections_lost = 0;     // arrived while the clock was gated off
};

// Runs the gated clock over the exposure, injecting each detection on the
// tick whose interval [t_k, t_k + T) contains its phase.
RingState encode(std::span<const photon::DetectionEvent> detections, const EncoderConfig& cfg,
                 EncodeStats* stats = nullptr);

// Same as encode() but stepping every edge and recording it.
RingState encode_traced(std::span<const photon::DetectionEvent> detections, const EncoderConfig& cfg,
                        std::vector<TickTrace>& trace, EncodeStats* stats = nullptr);

struct Readout {
    SpikeTrain train;
    double duration_ns = 0.0;
    int start_stage = 0;
};

// Serial shift-out: train[i] = stage (N-1-i), i.e. the bit at the OR gate's
// ring input comes out first.
Readout readout(const RingState& state, double readout_clock_hz);

// Rotation r with rotate(readout(state).train, r)[k] == phase bin k.
std::int64_t phase_offset(const RingState& state, const EncoderConfig& cfg);

// Readout aligned to laser-phase bins.
SpikeTrain aligned_readout(const RingState& state, const EncoderConfig& cfg);

// Spike-train file: one JSON header line then the bit string.
struct SpikeTrainRecord {
    SpikeTrain train;
    int n_stages = 0;
    double laser_period_ns = 0.0;
    double ring_clock_hz = 0.0;
    Stopper stopper = Stopper::disabled;
    std::uint32_t photon_count = 0;
    std::int64_t phase_offset = 0;
    int readout_start_stage = 0;
    bool aligned = false;  // bits already rotated into phase-bin order
};

std::string serialize(const SpikeTrainRecord& rec);
SpikeTrainRecord parse_spike_train(const std::string& text);

}  // namespace transporter::ring
