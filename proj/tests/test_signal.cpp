#include <qmem/analysis.hpp>
#include <qmem/errors.hpp>
#include <qmem/signal.hpp>

#include <doctest.h>

#include <cmath>
#include <numeric>

using namespace qmem;

namespace {

sim_grid time_grid(double duration, double dt)
{
    physical_params p;
    return make_grid(p, 2, duration, dt);
}

double rel_l2(const cvec& a, const cvec& b)
{
    double num = 0.0;
    double den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += std::norm(a[i] - b[i]);
        den += std::norm(b[i]);
    }
    return std::sqrt(num / den);
}

double sample_std(const std::vector<double>& v)
{
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) /
        static_cast<double>(v.size());
    double s = 0.0;
    for (double x : v) {
        s += (x - mean) * (x - mean);
    }
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}

TEST_CASE("gaussian pulse is a real positive envelope peaked at its centre")
{
    const auto grid = time_grid(20e-6, 4e-9);
    pulse_spec p;
    p.sigma = 2.5e-6;
    p.center = 10e-6;
    double clipped = 1.0;
    const auto tr = synthesize_input(p, grid, grid.duration(), &clipped);
    std::size_t imax = 0;
    for (std::size_t n = 0; n < tr.size(); ++n) {
        CHECK(tr.values[n].imag() == doctest::Approx(0.0));
        CHECK(tr.values[n].real() > 0.0);
        if (std::abs(tr.values[n]) > std::abs(tr.values[imax])) {
            imax = n;
        }
    }
    CHECK(tr.time(imax) == doctest::Approx(10e-6).epsilon(1e-12));
    CHECK(clipped < 1e-3);
}

TEST_CASE("two-tone envelope beats with zeros every 1/gap")
{
    const auto grid = time_grid(8e-6, 1e-9);
    pulse_spec p;
    p.kind = pulse_kind::two_tone;
    p.sigma = 1.5e-6;
    p.center = 4e-6;
    p.tone_gap = 2.0 * pi * 1e6;
    const auto tr = synthesize_input(p, grid, grid.duration());
    /* |e^{-i gap t/2} + e^{i gap t/2}| = 2 |cos(gap t / 2)| */
    for (std::size_t n = 0; n < tr.size(); n += 37) {
        const double t = tr.time(n);
        const double g = std::exp(-0.5 * std::pow((t - 4e-6) / 1.5e-6, 2));
        CHECK(std::abs(tr.values[n]) ==
              doctest::Approx(2.0 * g * std::abs(std::cos(pi * 1e6 * t)))
                  .epsilon(1e-9)
                  .scale(1.0));
    }
    for (double tz : {2.5e-6, 3.5e-6, 4.5e-6, 5.5e-6}) {
        CHECK(std::abs(tr.values[grid.t_index(tz)]) < 1e-9);
    }
}

TEST_CASE("double pulse has two resolved peaks one microsecond apart")
{
    const auto grid = time_grid(4e-6, 2e-9);
    pulse_spec p;
    p.kind = pulse_kind::double_pulse;
    p.sigma = 0.25e-6;
    p.separation = 1e-6;
    p.center = 2e-6;
    const auto tr = synthesize_input(p, grid, grid.duration());
    const auto pk = peak_find(times(tr), magnitudes(tr), 0.2e-6, 0.1);
    REQUIRE(pk.size() == 2);
    CHECK(pk[1].location - pk[0].location ==
          doctest::Approx(1e-6).epsilon(2e-3));
}

TEST_CASE("synthesized energy matches the analytic Gaussian energy")
{
    for (double sigma : {40e-9, 0.5e-6, 2.5e-6}) {
        const double dt = 4e-9;
        const auto grid = time_grid(24.0 * sigma + 1e-6, dt);
        pulse_spec p;
        p.sigma = sigma;
        p.center = 12.0 * sigma;
        p.amplitude = 0.7;
        p.detuning = 2.0 * pi * 0.3e6;
        const auto tr = synthesize_input(p, grid, grid.duration());
        const double analytic = 0.49 * sigma * std::sqrt(pi);
        CHECK(p.analytic_energy() == doctest::Approx(analytic).epsilon(1e-12));
        CHECK(tr.energy() == doctest::Approx(analytic).epsilon(1e-3));
    }
}

TEST_CASE("clipping by the window is reported")
{
    const auto grid = time_grid(10e-6, 4e-9);
    pulse_spec p;
    p.sigma = 1e-6;
    p.center = 4e-6;
    double clipped = 0.0;
    const auto tr = synthesize_input(p, grid, 4e-6, &clipped);
    CHECK(clipped == doctest::Approx(0.5).epsilon(1e-2));
    CHECK(tr.values[grid.t_index(5e-6)] == complex{});
}

TEST_CASE("pulse spec validation")
{
    pulse_spec p;
    p.sigma = 0.0;
    CHECK_THROWS_AS(p.validate(), validation_error);
    p.sigma = 1e-6;
    p.amplitude = -1.0;
    CHECK_THROWS_AS(p.validate(), validation_error);
    CHECK_THROWS_AS(parse_pulse_kind("square"), validation_error);
    CHECK(parse_pulse_kind("two_tone") == pulse_kind::two_tone);
}

TEST_CASE("heterodyne of zero and of a constant field")
{
    std::mt19937_64 rng(3);
    detection_spec det;
    complex_trace zero{cvec(100), 4e-9, 0.0};
    for (double v : heterodyne_trace(zero, det, rng).values) {
        CHECK(v == 0.0);
    }
    complex_trace one{cvec(1000, complex(1.0, 0.0)), 4e-9, 0.0};
    const auto tr = heterodyne_trace(one, det, rng);
    for (std::size_t n = 0; n < tr.size(); ++n) {
        CHECK(tr.values[n] == doctest::Approx(2.0 * std::cos(
                                  2.0 * pi * 5e6 * tr.time(n))));
    }
}

TEST_CASE("aliasing LO offsets are rejected")
{
    std::mt19937_64 rng(3);
    detection_spec det;
    det.lo_offset = 2.0 * pi * 200e6;
    complex_trace one{cvec(10, complex(1.0, 0.0)), 4e-9, 0.0};
    CHECK_THROWS_AS(heterodyne_trace(one, det, rng), validation_error);
}

TEST_CASE("heterodyne and demodulation round trip")
{
    const auto grid = time_grid(40e-6, 4e-9);
    detection_spec det;
    std::mt19937_64 rng(1);
    SUBCASE("long Gaussian recovered to the filter ripple")
    {
        pulse_spec p;
        p.sigma = 2.5e-6;
        p.center = 20e-6;
        const auto in = synthesize_input(p, grid, grid.duration());
        const auto out = demodulate(heterodyne_trace(in, det, rng), det,
                                    pulse_band(p));
        CHECK(rel_l2(out.values, in.values) < 1e-10);
    }
    SUBCASE("short detuned Gaussian")
    {
        pulse_spec p;
        p.sigma = 0.5e-6;
        p.center = 20e-6;
        p.detuning = 2.0 * pi * -0.4e6;
        p.phase = 0.7;
        const auto in = synthesize_input(p, grid, grid.duration());
        const auto out = demodulate(heterodyne_trace(in, det, rng), det,
                                    pulse_band(p));
        CHECK(rel_l2(out.values, in.values) < 1e-3);
    }
}

TEST_CASE("demodulation of a zero trace and band check")
{
    detection_spec det;
    real_trace z{std::vector<double>(500, 0.0), 4e-9, 0.0};
    for (const auto& v : demodulate(z, det, 1e6).values) {
        CHECK(v == complex{});
    }
    pulse_spec p;
    p.sigma = 0.1e-6;
    CHECK_THROWS_AS(demodulate(z, det, pulse_band(p)), validation_error);
}

TEST_CASE("demodulated two-tone keeps both tones at their offsets")
{
    const auto grid = time_grid(30e-6, 4e-9);
    pulse_spec p;
    p.kind = pulse_kind::two_tone;
    p.sigma = 2.5e-6;
    p.center = 15e-6;
    p.tone_gap = 2.0 * pi * 1e6;
    detection_spec det;
    std::mt19937_64 rng(1);
    const auto in = synthesize_input(p, grid, grid.duration());
    const auto out = demodulate(heterodyne_trace(in, det, rng), det,
                                pulse_band(p));
    const auto s = compute_spectrum(out, spectral_window::none, 8);
    const double bin = 2.0 * pi / (static_cast<double>(out.size()) * out.dt);
    const double top = *std::max_element(s.magnitude.begin(),
                                          s.magnitude.end());
    const auto pk = peak_find(s.omega, s.magnitude, 0.3 * p.tone_gap,
                              0.3 * top);
    REQUIRE(pk.size() == 2);
    CHECK(std::abs(pk[0].location + 0.5 * p.tone_gap) <= bin);
    CHECK(std::abs(pk[1].location - 0.5 * p.tone_gap) <= bin);
}

TEST_CASE("coherent averaging")
{
    SUBCASE("one trace is itself")
    {
        real_trace a{{1.0, -2.0, 3.5}, 1e-9, 0.0};
        const std::vector<real_trace> v{a};
        CHECK(coherent_average(v).values == a.values);
    }
    SUBCASE("alternating signs cancel")
    {
        std::vector<real_trace> v;
        for (int k = 0; k < 10; ++k) {
            const double s = (k % 2 == 0) ? 1.0 : -1.0;
            v.push_back({{0.3 * s, 1.7 * s, -2.2 * s}, 1e-9, 0.0});
        }
        for (double x : coherent_average(v).values) {
            CHECK(std::abs(x) < 1e-12);
        }
    }
    SUBCASE("mismatched lengths are rejected")
    {
        std::vector<real_trace> v{{{1.0, 2.0}, 1e-9, 0.0},
                                  {{1.0}, 1e-9, 0.0}};
        CHECK_THROWS_AS(coherent_average(v), validation_error);
    }
}

TEST_CASE("averaging 200 noisy sequences improves SNR by sqrt(200)")
{
    complex_trace field{cvec(4000, complex(0.5, 0.0)), 4e-9, 0.0};
    detection_spec det;
    det.noise_sigma = 1.0;
    det.n_sequences = 200;
    det.seed = 42;
    std::mt19937_64 rng(det.seed);
    const detection_spec clean{det.lo_offset, 0.0, 1, 0};
    const auto ideal = heterodyne_trace(field, clean, rng);

    auto noise_of = [&](const real_trace& tr) {
        std::vector<double> r(tr.size());
        for (std::size_t n = 0; n < tr.size(); ++n) {
            r[n] = tr.values[n] - ideal.values[n];
        }
        return sample_std(r);
    };
    std::vector<real_trace> traces;
    for (std::size_t k = 0; k < det.n_sequences; ++k) {
        traces.push_back(heterodyne_trace(field, det, rng));
    }
    const double single = noise_of(traces[0]);
    const double averaged = noise_of(coherent_average(traces));
    const double gain = single / averaged;
    CHECK(gain == doctest::Approx(std::sqrt(200.0)).epsilon(0.2));

    /* chi-square 99% band for the variance of the mean, 4000 samples */
    const double var = averaged * averaged * 200.0;
    CHECK(var > 0.94);
    CHECK(var < 1.06);

    const auto pipeline = averaged_heterodyne(field, det);
    CHECK(single / noise_of(pipeline) ==
          doctest::Approx(std::sqrt(200.0)).epsilon(0.2));
    const auto again = averaged_heterodyne(field, det);
    CHECK(again.values == pipeline.values);
}

TEST_CASE("demodulation filter metadata")
{
    const auto f = design_demod_filter(2.0 * pi * 5e6, 4e-9);
    CHECK(f.cutoff == doctest::Approx(2.0 * pi * 2.5e6));
    CHECK(f.taps.size() % 2 == 1);
    const double sum = std::accumulate(f.taps.begin(), f.taps.end(), 0.0);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-14));
    for (std::size_t k = 0; k < f.taps.size(); ++k) {
        CHECK(f.taps[k] == f.taps[f.taps.size() - 1 - k]);
    }
}
