#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "transporter/dataset.hpp"
#include "transporter/ring_encoder.hpp"
#include "transporter/snn.hpp"

namespace transporter::cli {

inline constexpr const char* kToolVersion = "1.0.0";

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kFailure = 1;
inline constexpr int kConfigError = 2;
inline constexpr int kNumericalError = 3;

std::string sha256_file(const std::filesystem::path& path);
std::string sha256_bytes(const std::string& bytes);

// Locale-independent shortest round-trip decimal.
std::string fmt(double x);

// Resolved options for each command. to_json() is what the manifest stores
// and replay feeds back into the command.
struct GenDatasetOptions {
    dataset::DatasetSpec spec;
    int threads = 1;
};

struct RingDemoOptions {
    double source_period_ns = 130.0;
    double laser_period_ns = 128.0;
    double ring_clock_hz = 1e9;
    double duration_ns = 2000.0;
    int n_stages = 128;
    ring::Stopper stopper = ring::Stopper::disabled;
    double readout_clock_hz = 200e6;
};

struct EncodeOptions {
    double lifetime_ns = 10.0;
    double background_fraction = 0.0;
    double mean_photons_per_period = 1.0;
    std::int64_t n_periods = 256;
    double pdp = 1.0;
    double dead_time_ns = 0.0;
    int n_stages = 128;
    double laser_period_ns = 128.0;
    std::optional<double> ring_clock_hz;  // ideal when unset
    ring::Stopper stopper = ring::Stopper::disabled;
    double readout_clock_hz = 200e6;
    std::uint64_t seed = 1;
    bool oracle = false;
};

struct TrainOptions {
    std::string dataset_path;
    snn::TrainConfig train;
};

struct EvalOptions {
    std::string model_path;
    std::string dataset_path;
    std::string split = "test";
};

struct CornersOptions {
    std::vector<double> freqs_hz{0.77e9, 1.068e9, 1.28e9, 1.346e9};
    double laser_period_ns = 100.0;
    std::int64_t n_periods = 100;
    int n_stages = 128;
    std::string model_path;                       // optional: enables the MAPE columns
    std::optional<dataset::DatasetSpec> dataset;  // test split regenerated per frequency
};

nlohmann::ordered_json to_json(const GenDatasetOptions& o);
nlohmann::ordered_json to_json(const RingDemoOptions& o);
nlohmann::ordered_json to_json(const EncodeOptions& o);
nlohmann::ordered_json to_json(const TrainOptions& o);
nlohmann::ordered_json to_json(const EvalOptions& o);
nlohmann::ordered_json to_json(const CornersOptions& o);

GenDatasetOptions gen_dataset_from_json(const nlohmann::json& j);
RingDemoOptions ring_demo_from_json(const nlohmann::json& j);
EncodeOptions encode_from_json(const nlohmann::json& j);
TrainOptions train_from_json(const nlohmann::json& j);
EvalOptions eval_from_json(const nlohmann::json& j);
CornersOptions corners_from_json(const nlohmann::json& j);

// Training section of a train config: unknown keys are errors.
snn::TrainConfig train_config_from_json(const nlohmann::json& j);

// Each command writes its outputs plus manifest.json into out_dir and returns
// the list of output file names (relative to out_dir).
std::vector<std::string> cmd_gen_dataset(const GenDatasetOptions& o, const std::filesystem::path& out_dir,
                                         std::ostream& log);
std::vector<std::string> cmd_ring_demo(const RingDemoOptions& o, const std::filesystem::path& out_dir,
                                       std::ostream& log);
std::vector<std::string> cmd_encode(const EncodeOptions& o, const std::filesystem::path& out_dir, std::ostream& log);
std::vector<std::string> cmd_train(const TrainOptions& o, const std::filesystem::path& out_dir, std::ostream& log);
std::vector<std::string> cmd_eval(const EvalOptions& o, const std::filesystem::path& out_dir, std::ostream& log);
std::vector<std::string> cmd_corners(const CornersOptions& o, const std::filesystem::path& out_dir,
                                     std::ostream& log);

// Re-executes the command recorded in a manifest into out_dir and compares
// output hashes. Returns true when every output is bitwise identical.
bool replay(const std::filesystem::path& manifest_path, const std::filesystem::path& out_dir, std::ostream& log);

// Full command-line entry point; returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace transporter::cli
