#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "transporter/flim_sample.hpp"
#include "transporter/photon_sim.hpp"

namespace transporter::dataset {

enum class EncoderPath { oracle, ring };

std::string to_string(EncoderPath p);
EncoderPath parse_encoder_path(const std::string& s);

// Optional SPAD stage in front of the encoder. When present, photons arrive as
// a Poisson stream per laser period and pass PDP thinning plus dead time; the
// first photons_per_sample detections form the sample.
struct DetectorStage {
    double pdp = 1.0;
    double dead_time_ns = 0.0;
    double photons_per_period = 1.0;

    friend bool operator==(const DetectorStage&, const DetectorStage&) = default;
};

struct DatasetSpec {
    int n_train = 20000;
    int n_val = 2000;
    int n_test = 2000;
    int photons_per_sample = 256;
    double background_fraction = 0.0;  // fraction of photons drawn uniform in phase
    double lifetime_min_ns = 5.0;
    double lifetime_max_ns = 20.0;
    EncoderPath encoder_path = EncoderPath::oracle;
    std::uint64_t seed = 1;
    int n_bins = 128;
    double laser_period_ns = 128.0;
    std::optional<DetectorStage> detector;

    void validate() const;
    friend bool operator==(const DatasetSpec&, const DatasetSpec&) = default;
};

// Strict conversion: unknown keys are ConfigErrors; missing keys keep defaults.
DatasetSpec spec_from_json(const nlohmann::json& j);
nlohmann::ordered_json spec_to_json(const DatasetSpec& spec);

enum class Split { train, val, test };
std::string to_string(Split s);

// Raw draw for one sample before encoding.
struct SampleDraw {
    double lifetime_ns = 0.0;
    std::vector<photon::DetectionEvent> detections;
    std::int64_t n_periods = 1;
    std::uint64_t seed = 0;
};

std::uint64_t sample_seed(const DatasetSpec& spec, Split split, std::size_t index);
SampleDraw draw_sample(const DatasetSpec& spec, Split split, std::size_t index);

// Encodes a draw through the oracle, or through the ring at `ring_clock_hz`
// (ideal clock when not given) with the readout rotated into phase order.
SpikeTrain encode_draw(const DatasetSpec& spec, const SampleDraw& draw, EncoderPath path,
                       std::optional<double> ring_clock_hz = std::nullopt);

FlimSample make_sample(const DatasetSpec& spec, Split split, std::size_t index);

struct Dataset {
    DatasetSpec spec;
    std::vector<FlimSample> train;
    std::vector<FlimSample> val;
    std::vector<FlimSample> test;

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct GenerateResult {
    Dataset data;
    std::vector<std::string> warnings;
};

GenerateResult generate(const DatasetSpec& spec, int threads = 1);
std::vector<FlimSample> generate_split(const DatasetSpec& spec, Split split, int threads = 1);

// Line-delimited file: JSON header, then "lifetime<TAB>bits" per record in
// train, val, test order.
void save(const Dataset& d, std::ostream& out);
void save(const Dataset& d, const std::filesystem::path& path);
Dataset load(std::istream& in);
Dataset load(const std::filesystem::path& path);

}  // namespace transporter::dataset
