#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "transporter/flim_sample.hpp"
#include "transporter/spike_train.hpp"

namespace transporter::snn {

enum class Reset { to_zero, subtract };

std::string to_string(Reset r);
Reset parse_reset(const std::string& s);

// Discrete-time LIF: u = beta*v + I; spike = u >= v_thre; then reset.
struct LifParams {
    double beta = 0.95;
    double v_thre = 1.0;
    Reset reset = Reset::to_zero;

    void validate() const;
    friend bool operator==(const LifParams&, const LifParams&) = default;
};

inline constexpr int kHiddenUnits = 512;
inline constexpr int kSteps = 128;

// 1 input -> n_hidden feedforward LIF -> 1 leaky (non-spiking) integrator.
// prediction = tau_min + (tau_max - tau_min) * sigmoid(m[T-1] + b_out).
struct SnnModel {
    int n_hidden = kHiddenUnits;
    int n_steps = kSteps;
    std::vector<double> w_in;
    std::vector<double> w_out;
    double b_out = 0.0;
    LifParams lif;
    double beta_out = 0.98;  // output integrator leak per step
    double tau_min_ns = 5.0;
    double tau_max_ns = 20.0;

    void validate() const;
    // Weights drawn uniformly from +-1/sqrt(fan_in).
    static SnnModel initialize(int n_hidden, int n_steps, const LifParams& lif, double beta_out, std::uint64_t seed);

    friend bool operator==(const SnnModel&, const SnnModel&) = default;
};

// Single LIF update over a layer. Shapes of all spans must agree.
void lif_step(std::span<const double> v, std::span<const double> input_current, const LifParams& p,
              std::span<double> v_next, std::span<std::uint8_t> spikes);

// Derivative of the fast-sigmoid surrogate: 1 / (slope*|x| + 1)^2.
double surrogate_grad(double u_minus_thre, double slope);

// Spike nonlinearity used in the forward pass. `smooth` replaces the step by
// x/(1 + slope|x|), whose exact derivative is surrogate_grad; it exists so the
// analytic gradient can be checked against finite differences.
enum class SpikeMode { heaviside, smooth };

// Output-membrane value m[T-1] + b_out (the sigmoid's argument).
double forward_logit(const SnnModel& model, const SpikeTrain& x, SpikeMode mode = SpikeMode::heaviside,
                     double slope = 25.0);
double forward(const SnnModel& model, const SpikeTrain& x);

struct Gradients {
    std::vector<double> w_in;
    std::vector<double> w_out;
    double b_out = 0.0;

    void reset(int n_hidden);
    void add(const Gradients& o);
};

// Mean normalized MSE over `batch` and its BPTT gradient. The reset path is
// treated as a constant (detached) in the backward pass.
double loss_and_gradient(const SnnModel& model, std::span<const FlimSample> batch, double slope, Gradients& grad,
                         SpikeMode mode = SpikeMode::heaviside);

double normalized_target(const SnnModel& model, double lifetime_ns);

enum class LossKind { mse_normalized };

struct TrainConfig {
    double learning_rate = 3e-3;
    int batch_size = 64;
    int epochs = 200;
    int patience = 25;  // epochs without validation improvement before stopping
    double surrogate_slope = 25.0;
    std::uint64_t seed = 1;
    LossKind loss = LossKind::mse_normalized;
    int threads = 1;
    int n_hidden = kHiddenUnits;
    // a low threshold lets part of the U(-1,1) init fire on every input spike
    LifParams lif{.beta = 0.95, .v_thre = 0.25};
    double beta_out = 0.998;

    void validate() const;
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_mape = 0.0;
    double seconds = 0.0;
};

struct TrainResult {
    SnnModel model;  // best validation MAPE
    std::vector<EpochRecord> history;
    int best_epoch = 0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Minibatch Adam over BPTT gradients. Per-sample gradients are summed in
// sample order, so results do not depend on the thread count.
TrainResult train_bptt(std::span<const FlimSample> train_set, std::span<const FlimSample> val_set,
                       const TrainConfig& cfg, const EpochCallback& on_epoch = {});

// mean |pred - true| / true * 100
double evaluate_mape(const SnnModel& model, std::span<const FlimSample> test_set);
double mape(std::span<const double> predicted, std::span<const double> truth);
double evaluate_loss(const SnnModel& model, std::span<const FlimSample> set);

// Text model file: JSON header line then one decimal weight per line
// (w_in..., w_out..., b_out).
void save_model(const SnnModel& model, std::ostream& out);
SnnModel load_model(std::istream& in);

}  // namespace transporter::snn
