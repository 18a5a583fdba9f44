#include "transporter/snn.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <thread>

#include <json.hpp>

#include "transporter/error.hpp"
#include "transporter/rng.hpp"

namespace transporter::snn {

std::string to_string(Reset r)
{
    return r == Reset::to_zero ? "to_zero" : "subtract";
}

Reset parse_reset(const std::string& s)
{
    if (s == "to_zero")
        return Reset::to_zero;
    if (s == "subtract")
        return Reset::subtract;
    throw ConfigError("reset must be to_zero or subtract, got '" + s + "'");
}

void LifParams::validate() const
{
    if (!(beta > 0.0 && beta < 1.0))
        throw ConfigError("LIF beta must lie in (0, 1)");
    if (!(v_thre > 0.0) || !std::isfinite(v_thre))
        throw ConfigError("LIF threshold must be > 0");
}

void SnnModel::validate() const
{
    lif.validate();
    if (n_hidden < 1 || n_steps < 1)
        throw ConfigError("model needs n_hidden >= 1 and n_steps >= 1");
    if (w_in.size() != static_cast<std::size_t>(n_hidden) || w_out.size() != static_cast<std::size_t>(n_hidden))
        throw ConfigError("model weight vectors do not match n_hidden = " + std::to_string(n_hidden));
    if (!(beta_out > 0.0 && beta_out < 1.0))
        throw ConfigError("output leak must lie in (0, 1)");
    if (!(tau_min_ns < tau_max_ns))
        throw ConfigError("lifetime range must satisfy min < max");
    auto finite = [](double w) { return std::isfinite(w); };
    if (!std::all_of(w_in.begin(), w_in.end(), finite) || !std::all_of(w_out.begin(), w_out.end(), finite)
        || !std::isfinite(b_out))
        throw NumericalError("model contains non-finite weights");
}

SnnModel SnnModel::initialize(int n_hidden, int n_steps, const LifParams& lif, double beta_out, std::uint64_t seed)
{
    SnnModel m;
    m.n_hidden = n_hidden;
    m.n_steps = n_steps;
    m.lif = lif;
    m.beta_out = beta_out;
    Rng rng(derive_seed(seed, "snn-init"));
    // fan_in is 1 for the input layer and n_hidden for the readout.
    m.w_in.resize(static_cast<std::size_t>(n_hidden));
    for (double& w : m.w_in)
        w = rng.uniform(-1.0, 1.0);
    const double bound = 1.0 / std::sqrt(static_cast<double>(n_hidden));
    m.w_out.resize(static_cast<std::size_t>(n_hidden));
    for (double& w : m.w_out)
        w = rng.uniform(-bound, bound);
    m.b_out = 0.0;
    m.validate();
    return m;
}

void lif_step(std::span<const double> v, std::span<const double> input_current, const LifParams& p,
              std::span<double> v_next, std::span<std::uint8_t> spikes)
{
    if (input_current.size() != v.size() || v_next.size() != v.size() || spikes.size() != v.size())
        throw ConfigError("lif_step: shape mismatch");
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double u = p.beta * v[i] + input_current[i];
        const bool fired = u >= p.v_thre;
        spikes[i] = fired ? 1 : 0;
        if (!fired)
            v_next[i] = u;
        else
            v_next[i] = p.reset == Reset::to_zero ? 0.0 : u - p.v_thre;
    }
}

double surrogate_grad(double u_minus_thre, double slope)
{
    const double d = slope * std::abs(u_minus_thre) + 1.0;
    return 1.0 / (d * d);
}

namespace {

double sigmoid(double x)
{
    if (x >= 0.0)
        return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// Per-thread scratch for one unrolled sample.
struct Workspace {
    std::vector<double> u;      // [t * H + h] pre-reset membrane
    std::vector<double> spike;  // [t * H + h] forward spike value
    std::vector<double> v;
    std::vector<double> gv;

    void ensure(int steps, int hidden)
    {
        const auto n = static_cast<std::size_t>(steps) * static_cast<std::size_t>(hidden);
        if (u.size() != n) {
            u.assign(n, 0.0);
            spike.assign(n, 0.0);
        }
        v.assign(static_cast<std::size_t>(hidden), 0.0);
        gv.assign(static_cast<std::size_t>(hidden), 0.0);
    }
};

void check_input(const SnnModel& model, const SpikeTrain& x)
{
    if (static_cast<int>(x.size()) != model.n_steps)
        throw ConfigError("spike train length " + std::to_string(x.size()) + " does not match model n_steps "
                          + std::to_string(model.n_steps));
}

// Unrolled forward pass; fills ws.u / ws.spike when `record` is set.
double run_forward(const SnnModel& model, const SpikeTrain& x, SpikeMode mode, double slope, Workspace& ws,
                   bool record)
{
    const int H = model.n_hidden;
    const double beta = model.lif.beta;
    const double thr = model.lif.v_thre;
    const bool to_zero = model.lif.reset == Reset::to_zero;
    ws.v.assign(static_cast<std::size_t>(H), 0.0);
    double m = 0.0;
    for (int t = 0; t < model.n_steps; ++t) {
        const bool in = x.bits[static_cast<std::size_t>(t)] != 0;
        double* u_row = record ? &ws.u[static_cast<std::size_t>(t) * H] : nullptr;
        double* s_row = record ? &ws.spike[static_cast<std::size_t>(t) * H] : nullptr;
        double contrib = 0.0;
        for (int h = 0; h < H; ++h) {
            const double u = beta * ws.v[h] + (in ? model.w_in[h] : 0.0);
            const bool fired = u >= thr;
            double s;
            if (mode == SpikeMode::heaviside) {
                s = fired ? 1.0 : 0.0;
            }
            else {
                const double d = u - thr;
                s = d / (1.0 + slope * std::abs(d));
            }
            ws.v[h] = fired ? (to_zero ? 0.0 : u - thr) : u;
            contrib += model.w_out[h] * s;
            if (record) {
                u_row[h] = u;
                s_row[h] = s;
            }
        }
        m = model.beta_out * m + (1.0 - model.beta_out) * contrib;
    }
    return m + model.b_out;
}

// Loss of one sample and its gradient (scaled by `scale`) written into g.
double sample_gradient(const SnnModel& model, const FlimSample& sample, double slope, SpikeMode mode, double scale,
                       Workspace& ws, Gradients& g)
{
    check_input(model, sample.spikes);
    const int H = model.n_hidden;
    const int T = model.n_steps;
    ws.ensure(T, H);
    const double y = run_forward(model, sample.spikes, mode, slope, ws, true);
    const double sig = sigmoid(y);
    const double err = sig - normalized_target(model, sample.lifetime_ns);
    const double loss = err * err;
    const double dy = 2.0 * err * sig * (1.0 - sig) * scale;

    g.reset(H);
    g.b_out = dy;
    const double beta = model.lif.beta;
    const double thr = model.lif.v_thre;
    const bool to_zero = model.lif.reset == Reset::to_zero;
    std::fill(ws.gv.begin(), ws.gv.end(), 0.0);
    // dL/d(contrib[t]): contrib[t] reaches m[T-1] with gain (1 - beta_out) * beta_out^(T-1-t).
    double dm = dy * (1.0 - model.beta_out);
    for (int t = T - 1; t >= 0; --t) {
        const bool in = sample.spikes.bits[static_cast<std::size_t>(t)] != 0;
        const double* u_row = &ws.u[static_cast<std::size_t>(t) * H];
        const double* s_row = &ws.spike[static_cast<std::size_t>(t) * H];
        for (int h = 0; h < H; ++h) {
            const double u = u_row[h];
            g.w_out[h] += dm * s_row[h];
            const double keep = (to_zero && u >= thr) ? 0.0 : 1.0;
            const double gu = dm * model.w_out[h] * surrogate_grad(u - thr, slope) + ws.gv[h] * keep;
            if (in)
                g.w_in[h] += gu;
            ws.gv[h] = gu * beta;
        }
        dm *= model.beta_out;
    }
    return loss;
}

std::vector<double> flatten(const SnnModel& m)
{
    std::vector<double> p;
    p.reserve(m.w_in.size() * 2 + 1);
    p.insert(p.end(), m.w_in.begin(), m.w_in.end());
    p.insert(p.end(), m.w_out.begin(), m.w_out.end());
    p.push_back(m.b_out);
    return p;
}

}  // namespace

double normalized_target(const SnnModel& model, double lifetime_ns)
{
    return (lifetime_ns - model.tau_min_ns) / (model.tau_max_ns - model.tau_min_ns);
}

double forward_logit(const SnnModel& model, const SpikeTrain& x, SpikeMode mode, double slope)
{
    check_input(model, x);
    Workspace ws;
    return run_forward(model, x, mode, slope, ws, false);
}

double forward(const SnnModel& model, const SpikeTrain& x)
{
    const double y = forward_logit(model, x);
    return model.tau_min_ns + (model.tau_max_ns - model.tau_min_ns) * sigmoid(y);
}

void Gradients::reset(int n_hidden)
{
    w_in.assign(static_cast<std::size_t>(n_hidden), 0.0);
    w_out.assign(static_cast<std::size_t>(n_hidden), 0.0);
    b_out = 0.0;
}

void Gradients::add(const Gradients& o)
{
    for (std::size_t i = 0; i < w_in.size(); ++i)
        w_in[i] += o.w_in[i];
    for (std::size_t i = 0; i < w_out.size(); ++i)
        w_out[i] += o.w_out[i];
    b_out += o.b_out;
}

namespace {

// Batch loss/gradient: per-sample gradients summed in sample order.
double batch_gradient(const SnnModel& model, std::span<const FlimSample* const> batch, double slope, SpikeMode mode,
                      int threads, std::vector<Workspace>& ws, std::vector<Gradients>& per_sample, Gradients& grad)
{
    const std::size_t n = batch.size();
    const double scale = 1.0 / static_cast<double>(n);
    if (per_sample.size() < n)
        per_sample.resize(n);
    std::vector<double> losses(n, 0.0);
    const auto workers = static_cast<std::size_t>(std::max(1, std::min<int>(threads, static_cast<int>(n))));
    if (ws.size() < workers)
        ws.resize(workers);

    auto work = [&](std::size_t w) {
        for (std::size_t i = w; i < n; i += workers)
            losses[i] = sample_gradient(model, *batch[i], slope, mode, scale, ws[w], per_sample[i]);
    };
    if (workers == 1) {
        work(0);
    }
    else {
        std::vector<std::jthread> pool;
        for (std::size_t w = 1; w < workers; ++w)
            pool.emplace_back(work, w);
        work(0);
    }

    grad.reset(model.n_hidden);
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        grad.add(per_sample[i]);
        loss += losses[i];
    }
    return loss * scale;
}

}  // namespace

double loss_and_gradient(const SnnModel& model, std::span<const FlimSample> batch, double slope, Gradients& grad,
                         SpikeMode mode)
{
    model.validate();
    if (batch.empty())
        throw ConfigError("loss_and_gradient: empty batch");
    std::vector<const FlimSample*> ptrs;
    for (const auto& s : batch)
        ptrs.push_back(&s);
    std::vector<Workspace> ws;
    std::vector<Gradients> per_sample;
    return batch_gradient(model, ptrs, slope, mode, 1, ws, per_sample, grad);
}

void TrainConfig::validate() const
{
    lif.validate();
    if (!(learning_rate > 0.0) || batch_size < 1 || epochs < 1 || patience < 1 || !(surrogate_slope > 0.0)
        || threads < 1 || n_hidden < 1)
        throw ConfigError("training hyperparameters must be positive");
    if (!(beta_out > 0.0 && beta_out < 1.0))
        throw ConfigError("output leak must lie in (0, 1)");
}

double mape(std::span<const double> predicted, std::span<const double> truth)
{
    if (predicted.size() != truth.size() || truth.empty())
        throw ConfigError("mape: need equal, non-empty prediction and truth vectors");
    double sum = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (!(truth[i] > 0.0))
            throw ConfigError("mape: true lifetime must be > 0 (sample " + std::to_string(i) + ")");
        sum += std::abs(predicted[i] - truth[i]) / truth[i];
    }
    return 100.0 * sum / static_cast<double>(truth.size());
}

double evaluate_mape(const SnnModel& model, std::span<const FlimSample> test_set)
{
    if (test_set.empty())
        throw ConfigError("evaluate_mape: empty test set");
    std::vector<double> pred, truth;
    pred.reserve(test_set.size());
    truth.reserve(test_set.size());
    for (const auto& s : test_set) {
        if (!(s.lifetime_ns > 0.0))
            throw ConfigError("evaluate_mape: true lifetime must be > 0");
        pred.push_back(forward(model, s.spikes));
        truth.push_back(s.lifetime_ns);
    }
    return mape(pred, truth);
}

double evaluate_loss(const SnnModel& model, std::span<const FlimSample> set)
{
    double sum = 0.0;
    for (const auto& s : set) {
        const double err = sigmoid(forward_logit(model, s.spikes)) - normalized_target(model, s.lifetime_ns);
        sum += err * err;
    }
    return set.empty() ? 0.0 : sum / static_cast<double>(set.size());
}

TrainResult train_bptt(std::span<const FlimSample> train_set, std::span<const FlimSample> val_set,
                       const TrainConfig& cfg, const EpochCallback& on_epoch)
{
    cfg.validate();
    if (train_set.empty() || val_set.empty())
        throw ConfigError("train_bptt: training and validation sets must be non-empty");
    const auto steps = static_cast<int>(train_set.front().spikes.size());
    for (const auto& s : train_set)
        if (static_cast<int>(s.spikes.size()) != steps)
            throw ConfigError("train_bptt: inconsistent spike-train lengths in training set");
    for (const auto& s : val_set)
        if (static_cast<int>(s.spikes.size()) != steps)
            throw ConfigError("train_bptt: validation spike-train length differs from training set");

    SnnModel model = SnnModel::initialize(cfg.n_hidden, steps, cfg.lif, cfg.beta_out, cfg.seed);
    std::vector<double> params = flatten(model);
    std::vector<double> m1(params.size(), 0.0), m2(params.size(), 0.0);
    constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
    std::int64_t adam_t = 0;

    TrainResult result;
    result.model = model;
    double best = std::numeric_limits<double>::infinity();
    int since_best = 0;

    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<Workspace> ws;
    std::vector<Gradients> per_sample;
    Gradients grad;
    std::vector<const FlimSample*> batch;

    const std::size_t H = static_cast<std::size_t>(cfg.n_hidden);
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        Rng shuffle(derive_seed(cfg.seed, "shuffle", static_cast<std::uint64_t>(epoch)));
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle.below(i)]);

        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            batch.clear();
            for (std::size_t i = start; i < end; ++i)
                batch.push_back(&train_set[order[i]]);
            const double loss = batch_gradient(model, batch, cfg.surrogate_slope, SpikeMode::heaviside, cfg.threads,
                                               ws, per_sample, grad);
            if (!std::isfinite(loss))
                throw NumericalError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch starting "
                                     + std::to_string(start));
            loss_sum += loss * static_cast<double>(end - start);

            ++adam_t;
            const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(adam_t));
            const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(adam_t));
            auto update = [&](std::size_t k, double g) {
                m1[k] = kBeta1 * m1[k] + (1.0 - kBeta1) * g;
                m2[k] = kBeta2 * m2[k] + (1.0 - kBeta2) * g * g;
                params[k] -= cfg.learning_rate * (m1[k] / c1) / (std::sqrt(m2[k] / c2) + kEps);
            };
            for (std::size_t h = 0; h < H; ++h)
                update(h, grad.w_in[h]);
            for (std::size_t h = 0; h < H; ++h)
                update(H + h, grad.w_out[h]);
            update(2 * H, grad.b_out);
            std::copy(params.begin(), params.begin() + static_cast<std::ptrdiff_t>(H), model.w_in.begin());
            std::copy(params.begin() + static_cast<std::ptrdiff_t>(H), params.begin() + static_cast<std::ptrdiff_t>(2 * H),
                      model.w_out.begin());
            model.b_out = params[2 * H];
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(order.size());
        rec.val_loss = evaluate_loss(model, val_set);
        rec.val_mape = evaluate_mape(model, val_set);
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (!std::isfinite(rec.val_loss))
            throw NumericalError("non-finite validation loss at epoch " + std::to_string(epoch));
        result.history.push_back(rec);
        if (on_epoch)
            on_epoch(rec);

        if (rec.val_mape < best) {
            best = rec.val_mape;
            result.model = model;
            result.best_epoch = epoch;
            since_best = 0;
        }
        else if (++since_best >= cfg.patience) {
            break;
        }
    }
    return result;
}

namespace {

std::string format_double(double x)
{
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, r.ptr);
}

double parse_double(const std::string& s, std::size_t record)
{
    double x = 0.0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), x);
    if (r.ec != std::errc{} || r.ptr != s.data() + s.size())
        throw FormatError("model: cannot parse weight '" + s + "'", record);
    return x;
}

}  // namespace

void save_model(const SnnModel& model, std::ostream& out)
{
    model.validate();
    nlohmann::ordered_json h;
    h["format"] = "transporter-snn";
    h["version"] = 1;
    h["n_hidden"] = model.n_hidden;
    h["n_steps"] = model.n_steps;
    h["beta"] = model.lif.beta;
    h["v_thre"] = model.lif.v_thre;
    h["reset"] = to_string(model.lif.reset);
    h["beta_out"] = model.beta_out;
    h["tau_min_ns"] = model.tau_min_ns;
    h["tau_max_ns"] = model.tau_max_ns;
    h["layout"] = "w_in[n_hidden], w_out[n_hidden], b_out";
    out << h.dump() << '\n';
    for (double w : model.w_in)
        out << format_double(w) << '\n';
    for (double w : model.w_out)
        out << format_double(w) << '\n';
    out << format_double(model.b_out) << '\n';
}

SnnModel load_model(std::istream& in)
{
    std::string line;
    if (!std::getline(in, line))
        throw FormatError("model: missing header");
    nlohmann::json h;
    try {
        h = nlohmann::json::parse(line);
    }
    catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("model: bad header: ") + e.what());
    }
    if (h.value("format", "") != "transporter-snn" || h.value("version", 0) != 1)
        throw FormatError("model: unsupported format or version");

    SnnModel m;
    try {
        m.n_hidden = h.at("n_hidden").get<int>();
        m.n_steps = h.at("n_steps").get<int>();
        m.lif.beta = h.at("beta").get<double>();
        m.lif.v_thre = h.at("v_thre").get<double>();
        m.lif.reset = parse_reset(h.at("reset").get<std::string>());
        m.beta_out = h.at("beta_out").get<double>();
        m.tau_min_ns = h.at("tau_min_ns").get<double>();
        m.tau_max_ns = h.at("tau_max_ns").get<double>();
    }
    catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("model: bad header field: ") + e.what());
    }
    if (m.n_hidden < 1 || m.n_steps < 1)
        throw FormatError("model: n_hidden and n_steps must be positive");

    const auto H = static_cast<std::size_t>(m.n_hidden);
    std::vector<double> values;
    values.reserve(2 * H + 1);
    while (values.size() < 2 * H + 1) {
        if (!std::getline(in, line))
            throw FormatError("model: truncated weight list", values.size());
        values.push_back(parse_double(line, values.size()));
    }
    m.w_in.assign(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(H));
    m.w_out.assign(values.begin() + static_cast<std::ptrdiff_t>(H), values.begin() + static_cast<std::ptrdiff_t>(2 * H));
    m.b_out = values[2 * H];
    m.validate();
    return m;
}

}  // namespace transporter::snn
