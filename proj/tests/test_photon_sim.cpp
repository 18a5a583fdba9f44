#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "transporter/error.hpp"
#include "transporter/photon_sim.hpp"

using namespace transporter;
using namespace transporter::photon;

namespace {

// Mean of exp(scale) truncated to [0, cut), by composite Simpson quadrature.
double truncated_exp_mean_quadrature(double scale, double cut)
{
    const int n = 20000;
    const double h = cut / n;
    double num = 0.0, den = 0.0;
    for (int i = 0; i <= n; ++i) {
        const double x = i * h;
        const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
        num += w * x * std::exp(-x / scale);
        den += w * std::exp(-x / scale);
    }
    return num / den;
}

}  // namespace

TEST_CASE("gen_arrivals: zero intensity gives no photons")
{
    const auto ev = gen_arrivals({128.0, 1000}, {10.0, 0.0, 0.0}, 1);
    CHECK(ev.empty());
}

TEST_CASE("gen_arrivals: signal phase mean matches the truncated exponential")
{
    const double expected = truncated_exp_mean_quadrature(10.0, 128.0);
    CHECK(expected == doctest::Approx(10.0 - 128.0 * std::exp(-12.8) / (1.0 - std::exp(-12.8))).epsilon(1e-9));

    // 10^6 photons: one per period on average over 10^6 periods.
    const LaserConfig laser{128.0, 1000000};
    const auto ev = gen_arrivals(laser, {10.0, 0.0, 1.0}, 2024);
    REQUIRE(ev.size() > 990000);
    double sum = 0.0;
    for (const auto& e : ev) {
        const double ph = phase_of(e.t_abs, laser.period_ns);
        REQUIRE(ph < 128.0);
        sum += ph;
    }
    CHECK(std::abs(sum / static_cast<double>(ev.size()) / expected - 1.0) < 0.01);
}

TEST_CASE("gen_arrivals: photon counts per period are Poisson")
{
    const LaserConfig laser{100.0, 200000};
    const auto ev = gen_arrivals(laser, {5.0, 0.0, 2.5}, 9);
    std::vector<int> per(laser.n_periods, 0);
    for (const auto& e : ev)
        ++per[static_cast<std::size_t>(e.t_abs / laser.period_ns)];
    double s = 0, s2 = 0;
    for (int c : per) {
        s += c;
        s2 += double(c) * c;
    }
    const double m = s / per.size();
    CHECK(m == doctest::Approx(2.5).epsilon(0.01));
    CHECK((s2 / per.size() - m * m) == doctest::Approx(2.5).epsilon(0.02));
}

TEST_CASE("gen_arrivals: sorted, inside the exposure, deterministic")
{
    const LaserConfig laser{128.0, 5000};
    const DecaySource src{7.0, 0.3, 3.0};
    const auto a = gen_arrivals(laser, src, 77);
    const auto b = gen_arrivals(laser, src, 77);
    const auto c = gen_arrivals(laser, src, 78);
    CHECK(a == b);
    CHECK(a != c);
    CHECK(std::is_sorted(a.begin(), a.end(), [](auto& x, auto& y) { return x.t_abs < y.t_abs; }));
    for (const auto& e : a) {
        CHECK(e.t_abs >= 0.0);
        CHECK(e.t_abs < laser.exposure_ns());
    }
    const auto bg = std::count_if(a.begin(), a.end(), [](auto& e) { return e.origin == Origin::background; });
    CHECK(static_cast<double>(bg) / a.size() == doctest::Approx(0.3).epsilon(0.03));
}

TEST_CASE("gen_arrivals: background phases pass a chi-square uniformity test")
{
    const LaserConfig laser{128.0, 100000};
    const auto ev = gen_arrivals(laser, {10.0, 1.0, 1.5}, 31337);
    REQUIRE(ev.size() >= 100000);
    std::vector<double> counts(128, 0.0);
    for (const auto& e : ev)
        counts[static_cast<std::size_t>(phase_of(e.t_abs, 128.0))] += 1.0;
    const double expect = static_cast<double>(ev.size()) / 128.0;
    double chi2 = 0.0;
    for (double c : counts)
        chi2 += (c - expect) * (c - expect) / expect;
    // chi-square(127) upper 0.001 quantile
    CHECK(chi2 < 181.993);
}

TEST_CASE("gen_arrivals: rejects invalid configs")
{
    CHECK_THROWS_AS(gen_arrivals({128.0, 1}, {0.0, 0.0, 1.0}, 1), ConfigError);
    CHECK_THROWS_AS(gen_arrivals({0.0, 1}, {10.0, 0.0, 1.0}, 1), ConfigError);
    CHECK_THROWS_AS(gen_arrivals({128.0, 0}, {10.0, 0.0, 1.0}, 1), ConfigError);
    CHECK_THROWS_AS(gen_arrivals({128.0, 1}, {10.0, 1.5, 1.0}, 1), ConfigError);
}

TEST_CASE("gen_periodic_arrivals")
{
    const LaserConfig laser{128.0, 16};
    const auto ev = gen_periodic_arrivals(130.0, laser, 2000.0);
    REQUIRE(ev.size() == 16);
    for (std::size_t k = 0; k < ev.size(); ++k)
        CHECK(ev[k].t_abs == 130.0 * k);
    CHECK(ev.back().t_abs == 1950.0);

    for (std::size_t k = 1; k < ev.size(); ++k) {
        const double d = phase_of(ev[k].t_abs, 128.0) - phase_of(ev[k - 1].t_abs, 128.0);
        CHECK(std::fmod(d + 128.0, 128.0) == 2.0);
    }

    const auto one = gen_periodic_arrivals(130.0, laser, 100.0);
    REQUIRE(one.size() == 1);
    CHECK(one[0].t_abs == 0.0);
    CHECK_THROWS_AS(gen_periodic_arrivals(0.0, laser, 100.0), ConfigError);
}

TEST_CASE("detect: transparent detector is the identity")
{
    const LaserConfig laser{128.0, 100};
    const auto ev = gen_arrivals(laser, {10.0, 0.1, 2.0}, 5);
    const auto det = detect(ev, {1.0, 0.0}, laser, 6);
    REQUIRE(det.size() == ev.size());
    for (std::size_t i = 0; i < ev.size(); ++i) {
        CHECK(det[i].t_abs == ev[i].t_abs);
        CHECK(det[i].phase == std::fmod(ev[i].t_abs, 128.0));
    }
}

TEST_CASE("detect: greedy dead time")
{
    const std::vector<PhotonEvent> ev{{0.0}, {5.0}, {20.0}};
    const auto det = detect(ev, {1.0, 10.0}, {128.0, 1}, 1);
    REQUIRE(det.size() == 2);
    CHECK(det[0].t_abs == 0.0);
    CHECK(det[1].t_abs == 20.0);
}

TEST_CASE("detect: pdp thinning concentrates at pdp")
{
    const LaserConfig laser{128.0, 1000000};
    std::vector<PhotonEvent> ev(1000000);
    for (std::size_t i = 0; i < ev.size(); ++i)
        ev[i].t_abs = 128.0 * i + 3.0;
    const auto det = detect(ev, {0.5, 0.0}, laser, 99);
    CHECK(std::abs(static_cast<double>(det.size()) / ev.size() - 0.5) < 0.005);
}

TEST_CASE("detect: dead-time gap and pdp monotonicity hold over random streams")
{
    const LaserConfig laser{50.0, 2000};
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto ev = gen_arrivals(laser, {8.0, 0.2, 3.0}, seed);
        const double dead = 0.5 * static_cast<double>(seed);
        std::size_t prev = 0;
        for (double pdp : {0.0, 0.1, 0.3, 0.5, 0.8, 1.0}) {
            const auto det = detect(ev, {pdp, dead}, laser, 1000 + seed);
            for (std::size_t i = 1; i < det.size(); ++i) {
                REQUIRE(det[i].t_abs > det[i - 1].t_abs);
                REQUIRE(det[i].t_abs - det[i - 1].t_abs >= dead);
            }
            CHECK(det.size() >= prev);
            prev = det.size();
        }
    }
}

TEST_CASE("detect: unsorted input is an error")
{
    const std::vector<PhotonEvent> ev{{5.0}, {1.0}};
    CHECK_THROWS_AS(detect(ev, {1.0, 0.0}, {128.0, 1}, 1), ConfigError);
}
