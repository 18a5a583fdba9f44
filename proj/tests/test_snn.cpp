#include <doctest.h>

#include <cmath>
#include <sstream>
#include <vector>

#include "transporter/error.hpp"
#include "transporter/rng.hpp"
#include "transporter/snn.hpp"

using namespace transporter;
using namespace transporter::snn;

namespace {

// Independent re-statement of the surrogate-smoothed network used as the
// finite-difference oracle: spikes are x/(1+k|x|), reset gates use the hard
// threshold (constant almost everywhere, so FD sees them as detached).
struct SmoothOracle {
    double slope;
    double min_gap = 1e9;  // closest approach of any membrane to threshold

    double loss(const SnnModel& m, const std::vector<FlimSample>& batch)
    {
        double total = 0.0;
        for (const FlimSample& s : batch) {
            std::vector<double> v(static_cast<std::size_t>(m.n_hidden), 0.0);
            double out = 0.0;
            for (int t = 0; t < m.n_steps; ++t) {
                double drive = 0.0;
                for (int h = 0; h < m.n_hidden; ++h) {
                    const double u = m.lif.beta * v[h] + (s.spikes[t] ? m.w_in[h] : 0.0);
                    const double d = u - m.lif.v_thre;
                    min_gap = std::min(min_gap, std::abs(d));
                    drive += m.w_out[h] * d / (1.0 + slope * std::abs(d));
                    if (d >= 0.0)
                        v[h] = m.lif.reset == Reset::to_zero ? 0.0 : u - m.lif.v_thre;
                    else
                        v[h] = u;
                }
                out = m.beta_out * out + (1.0 - m.beta_out) * drive;
            }
            const double y = out + m.b_out;
            const double target = (s.lifetime_ns - m.tau_min_ns) / (m.tau_max_ns - m.tau_min_ns);
            const double e = 1.0 / (1.0 + std::exp(-y)) - target;
            total += e * e;
        }
        return total / static_cast<double>(batch.size());
    }
};

double rel_err(double a, double b)
{
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-7});
}

SnnModel random_tiny_model(Rng& rng)
{
    SnnModel m;
    m.n_hidden = 1 + static_cast<int>(rng.below(4));
    m.n_steps = 1 + static_cast<int>(rng.below(8));
    m.lif.beta = rng.uniform(0.5, 0.99);
    m.lif.v_thre = rng.uniform(0.5, 1.5);
    m.lif.reset = rng.uniform() < 0.5 ? Reset::to_zero : Reset::subtract;
    m.beta_out = rng.uniform(0.5, 0.99);
    for (int h = 0; h < m.n_hidden; ++h) {
        m.w_in.push_back(rng.uniform(-2.0, 2.0));
        m.w_out.push_back(rng.uniform(-2.0, 2.0));
    }
    m.b_out = rng.uniform(-1.0, 1.0);
    return m;
}

std::vector<FlimSample> random_batch(Rng& rng, int steps)
{
    std::vector<FlimSample> batch(1 + rng.below(3));
    for (auto& s : batch) {
        s.spikes = SpikeTrain(static_cast<std::size_t>(steps));
        for (auto& b : s.spikes.bits)
            b = rng.uniform() < 0.6;
        s.lifetime_ns = rng.uniform(5.0, 20.0);
    }
    return batch;
}

}  // namespace

TEST_CASE("lif_step: rest, threshold crossing and reset")
{
    const LifParams p{0.9, 1.0, Reset::to_zero};
    std::vector<double> v{0.0}, in{0.0}, next(1);
    std::vector<std::uint8_t> spk(1);
    lif_step(v, in, p, next, spk);
    CHECK(next[0] == 0.0);
    CHECK(spk[0] == 0);

    in[0] = 1.0;
    lif_step(v, in, p, next, spk);
    CHECK(spk[0] == 1);
    CHECK(next[0] == 0.0);

    const LifParams sub{0.9, 1.0, Reset::subtract};
    in[0] = 1.5;
    lif_step(v, in, sub, next, spk);
    CHECK(spk[0] == 1);
    CHECK(next[0] == doctest::Approx(0.5));

    std::vector<double> wrong(2);
    CHECK_THROWS_AS(lif_step(v, wrong, p, next, spk), ConfigError);
}

TEST_CASE("lif_step: constant drive 0.2 with beta 0.9 first fires at step 7")
{
    // 0.2 * sum_{k<n} 0.9^k = 2 (1 - 0.9^n) >= 1  <=>  n >= ln 0.5 / ln 0.9 = 6.58
    const LifParams p{0.9, 1.0, Reset::to_zero};
    std::vector<double> v{0.0}, in{0.2}, next(1);
    std::vector<std::uint8_t> spk(1);
    int first = 0;
    for (int step = 1; step <= 20 && first == 0; ++step) {
        lif_step(v, in, p, next, spk);
        if (spk[0])
            first = step;
        v = next;
    }
    CHECK(first == 7);
}

TEST_CASE("lif_step: membrane stays within the reset-to-zero bound")
{
    Rng rng(17);
    for (int trial = 0; trial < 50; ++trial) {
        const LifParams p{rng.uniform(0.1, 0.99), rng.uniform(0.2, 2.0), Reset::to_zero};
        const double M = rng.uniform(0.1, 3.0);
        std::vector<double> v(32, 0.0), in(32), next(32);
        std::vector<std::uint8_t> spk(32);
        for (int t = 0; t < 200; ++t) {
            for (auto& x : in)
                x = rng.uniform(-M, M);
            lif_step(v, in, p, next, spk);
            for (std::size_t i = 0; i < v.size(); ++i) {
                const double u = p.beta * v[i] + in[i];
                REQUIRE(u >= -M / (1.0 - p.beta) - 1e-12);
                REQUIRE(u <= p.v_thre + M + 1e-12);
            }
            v = next;
        }
    }
}

TEST_CASE("surrogate_grad")
{
    CHECK(surrogate_grad(0.0, 25.0) == 1.0);
    CHECK(surrogate_grad(0.04, 25.0) == doctest::Approx(0.25));
    CHECK(surrogate_grad(-0.04, 25.0) == doctest::Approx(0.25));
    Rng rng(3);
    for (int i = 0; i < 100; ++i) {
        const double d = rng.uniform(-3.0, 3.0);
        CHECK(surrogate_grad(d, 7.0) == surrogate_grad(-d, 7.0));
    }
}

TEST_CASE("forward: zero input maps to the middle of the lifetime range")
{
    SnnModel m = SnnModel::initialize(kHiddenUnits, kSteps, LifParams{}, 0.98, 5);
    m.b_out = 0.0;
    const SpikeTrain zeros(kSteps);
    CHECK(forward_logit(m, zeros) == 0.0);
    CHECK(forward(m, zeros) == 12.5);
}

TEST_CASE("forward: deterministic and shape-checked")
{
    const SnnModel m = SnnModel::initialize(kHiddenUnits, kSteps, LifParams{}, 0.98, 5);
    Rng rng(1);
    SpikeTrain x(kSteps);
    for (auto& b : x.bits)
        b = rng.uniform() < 0.3;
    CHECK(forward(m, x) == forward(m, x));
    const double y = forward(m, x);
    CHECK(y > 5.0);
    CHECK(y < 20.0);
    CHECK_THROWS_AS(forward(m, SpikeTrain(kSteps - 1)), ConfigError);
    CHECK_THROWS_AS(forward(m, SpikeTrain(kSteps + 1)), ConfigError);

    SnnModel bad = m;
    bad.w_out.pop_back();
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("BPTT gradient matches central finite differences on tiny nets")
{
    Rng rng(424242);
    int checked = 0;
    double worst = 0.0;
    while (checked < 150) {
        SnnModel m = random_tiny_model(rng);
        const auto batch = random_batch(rng, m.n_steps);
        const double slope = rng.uniform(1.0, 30.0);
        SmoothOracle oracle{slope};
        oracle.loss(m, batch);
        if (oracle.min_gap < 1e-3)
            continue;  // a perturbation could flip a hard reset gate

        Gradients g;
        const double loss = loss_and_gradient(m, batch, slope, g, SpikeMode::smooth);
        CHECK(loss == doctest::Approx(oracle.loss(m, batch)).epsilon(1e-12));

        const double h = 1e-5;
        auto fd = [&](double& param) {
            const double keep = param;
            param = keep + h;
            const double up = oracle.loss(m, batch);
            param = keep - h;
            const double down = oracle.loss(m, batch);
            param = keep;
            return (up - down) / (2.0 * h);
        };
        for (int k = 0; k < m.n_hidden; ++k) {
            const double a = fd(m.w_in[k]);
            const double b = fd(m.w_out[k]);
            worst = std::max({worst, rel_err(a, g.w_in[k]), rel_err(b, g.w_out[k])});
            REQUIRE(rel_err(a, g.w_in[k]) < 1e-4);
            REQUIRE(rel_err(b, g.w_out[k]) < 1e-4);
        }
        REQUIRE(rel_err(fd(m.b_out), g.b_out) < 1e-4);
        ++checked;
    }
    MESSAGE("worst relative error " << worst);
}

TEST_CASE("mape")
{
    const std::vector<double> t{10.0, 5.0};
    CHECK(mape(t, t) == 0.0);
    const std::vector<double> p{11.0}, q{10.0};
    CHECK(mape(p, q) == doctest::Approx(10.0));
    const std::vector<double> zero{0.0};
    CHECK_THROWS_AS(mape(p, zero), ConfigError);
    CHECK_THROWS_AS(evaluate_mape(SnnModel::initialize(4, 8, {}, 0.9, 1), {}), ConfigError);
}

namespace {

std::vector<FlimSample> toy_set(std::uint64_t seed, int n)
{
    // Spike density tracks the label so a tiny net can learn something.
    Rng rng(seed);
    std::vector<FlimSample> out(static_cast<std::size_t>(n));
    for (auto& s : out) {
        s.lifetime_ns = rng.uniform(5.0, 20.0);
        s.spikes = SpikeTrain(kSteps);
        const int on = static_cast<int>(s.lifetime_ns * 3.0);
        for (int t = 0; t < kSteps; ++t)
            s.spikes.bits[static_cast<std::size_t>(t)] = t < on || rng.uniform() < 0.05;
    }
    return out;
}

}  // namespace

TEST_CASE("train_bptt: loss decreases over the first epochs")
{
    const auto train = toy_set(1, 100);
    const auto val = toy_set(2, 50);
    TrainConfig cfg;
    cfg.epochs = 5;
    cfg.patience = 5;
    const TrainResult r = train_bptt(train, val, cfg);
    REQUIRE(r.history.size() == 5);
    for (std::size_t i = 1; i < r.history.size(); ++i)
        CHECK(r.history[i].train_loss < r.history[i - 1].train_loss);
}

TEST_CASE("train_bptt: deterministic, thread-count independent, returns best-validation model")
{
    const auto train = toy_set(3, 80);
    const auto val = toy_set(4, 40);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.n_hidden = 32;
    cfg.batch_size = 16;
    cfg.learning_rate = 1e-2;
    const TrainResult a = train_bptt(train, val, cfg);
    const TrainResult b = train_bptt(train, val, cfg);
    cfg.threads = 3;
    const TrainResult c = train_bptt(train, val, cfg);
    CHECK(a.model == b.model);
    CHECK(a.model == c.model);

    double best = 1e300;
    for (const auto& e : a.history)
        best = std::min(best, e.val_mape);
    CHECK(evaluate_mape(a.model, val) == doctest::Approx(best).epsilon(1e-12));
}

TEST_CASE("train_bptt: rejects empty or inconsistent sets")
{
    const auto train = toy_set(3, 10);
    CHECK_THROWS_AS(train_bptt(train, {}, TrainConfig{}), ConfigError);
    auto odd = toy_set(4, 5);
    odd[2].spikes.bits.pop_back();
    CHECK_THROWS_AS(train_bptt(train, odd, TrainConfig{}), ConfigError);
}

TEST_CASE("model file round trip and truncation")
{
    const SnnModel m = SnnModel::initialize(16, 8, LifParams{0.8, 1.2, Reset::subtract}, 0.9, 9);
    std::stringstream ss;
    save_model(m, ss);
    const std::string text = ss.str();
    std::istringstream in(text);
    CHECK(load_model(in) == m);

    std::istringstream cut(text.substr(0, text.size() / 2));
    CHECK_THROWS_AS(load_model(cut), FormatError);
}
