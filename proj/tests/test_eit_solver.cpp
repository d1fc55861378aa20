#include <doctest.h>

#include "oracle_cases.hpp"

#include <qmem/eit_solver.hpp>
#include <qmem/errors.hpp>

#include <cmath>
#include <random>

using namespace qmem;

namespace {

const complex I{0.0, 1.0};

segment eit_segment(double start, double duration, coupling_ramp ramp,
                    bool open, segment_mode mode = segment_mode::eit)
{
    segment s;
    s.start = start;
    s.duration = duration;
    s.mode = mode;
    s.role = open ? segment_role::write : segment_role::hold;
    s.omega_c = ramp;
    s.input_open = open;
    return s;
}

complex_trace gaussian_input(const sim_grid& g, double tc, double sigma,
                             complex amp = 1.0)
{
    complex_trace tr;
    tr.dt = g.dt;
    tr.t0 = g.t0;
    for (std::size_t n = 0; n < g.nt; ++n) {
        const double x = (g.t(n) - tc) / sigma;
        tr.values.push_back(amp * std::exp(-0.5 * x * x));
    }
    return tr;
}

struct moments
{
    double centre;
    double sigma;
};

moments intensity_moments(const complex_trace& tr)
{
    double m0 = 0.0, m1 = 0.0, m2 = 0.0;
    for (std::size_t n = 0; n < tr.size(); ++n) {
        const double v = std::norm(tr.values[n]);
        const double t = tr.time(n);
        m0 += v;
        m1 += v * t;
        m2 += v * t * t;
    }
    const double c = m1 / m0;
    return {c, std::sqrt(m2 / m0 - c * c)};
}

double transit_delay(physical_params p, double omega, std::size_t nz,
                     double sigma, double duration)
{
    p.delta = 0.0;
    const double dt = 4e-9;
    const auto g = make_grid(p, nz, duration, dt);
    const auto d = flat_density(g);
    std::vector<segment> segs{
        eit_segment(0.0, duration, coupling_ramp::constant(omega), true)};
    const auto input = gaussian_input(g, 5.0 * sigma, sigma);
    const auto res = eit_run(eit_state::zero(nz), segs, input, g, d, p);
    return intensity_moments(res.exit).centre -
        intensity_moments(input).centre;
}

double rel_diff(const cvec& a, const cvec& b)
{
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += std::norm(a[i] - b[i]);
        den += std::norm(b[i]);
    }
    return std::sqrt(num / den);
}

std::vector<std::size_t> local_maxima(const std::vector<double>& v,
                                      double floor)
{
    std::vector<std::size_t> out;
    for (std::size_t j = 1; j + 1 < v.size(); ++j) {
        if (v[j] > floor && v[j] >= v[j - 1] && v[j] > v[j + 1]) {
            out.push_back(j);
        }
    }
    return out;
}

}

TEST_CASE("group_velocity limits and delay")
{
    physical_params p;
    CHECK(group_velocity(p, 0.0) == 0.0);
    physical_params empty = p;
    empty.od = 0.0;
    CHECK(group_velocity(empty, p.omega_c_max) == p.c_light);
    const double vg = group_velocity(p, p.omega_c_max);
    CHECK(vg > 0.0);
    CHECK(vg <= p.c_light);
    const double delay = p.length / vg - p.length / p.c_light;
    CHECK(delay == doctest::Approx(1.54e-6).epsilon(0.01));
    CHECK(delay == doctest::Approx(p.gamma * p.od /
                                   (p.omega_c_max * p.omega_c_max))
                       .epsilon(1e-9));
    CHECK_THROWS_AS(group_velocity(p, -1.0), validation_error);
}

TEST_CASE("eit_run: empty medium passes the input unchanged")
{
    physical_params p;
    p.od = 0.0;
    p.delta = 0.0;
    const double dt = 4e-9;
    const auto g = make_grid(p, 50, 6e-6, dt);
    const auto d = sample_density(4, 0.8 * p.length, g);
    std::vector<segment> segs{
        eit_segment(0.0, 6e-6, coupling_ramp::constant(p.omega_c_max), true)};
    const auto input = gaussian_input(g, 3e-6, 0.5e-6, complex{0.3, 0.7});
    const auto res = eit_run(eit_state::zero(g.nz), segs, input, g, d, p);
    REQUIRE(res.exit.size() == input.size());
    CHECK(rel_diff(res.exit.values, input.values) < 1e-10);
}

TEST_CASE("eit_run: slow-light delay of a long pulse")
{
    physical_params p;
    p.delta = 0.0;
    const double dt = 4e-9;
    const double sigma = 2.5e-6;
    const double duration = 40e-6;
    const auto g = make_grid(p, 400, duration, dt);
    const auto d = flat_density(g);
    std::vector<segment> segs{eit_segment(
        0.0, duration, coupling_ramp::constant(p.omega_c_max), true)};
    const auto input = gaussian_input(g, 12e-6, sigma);
    const auto res = eit_run(eit_state::zero(g.nz), segs, input, g, d, p);
    const auto in = intensity_moments(input);
    const auto out = intensity_moments(res.exit);
    const double expect =
        p.gamma * p.od / (p.omega_c_max * p.omega_c_max);
    CHECK(std::abs((out.centre - in.centre) / expect - 1.0) < 0.10);
    CHECK(out.sigma / in.sigma < 1.2);
}

TEST_CASE("eit_run: delay scales as 1/Omega^2")
{
    physical_params p;
    std::vector<double> lx, ly;
    for (double f : {3.45e6, 4.88e6, 6.9e6, 9.76e6, 13.8e6}) {
        const double omega = 2.0 * pi * f;
        const double delay = transit_delay(p, omega, 120, 2.5e-6, 36e-6);
        lx.push_back(std::log(omega));
        ly.push_back(std::log(delay));
    }
    const double n = static_cast<double>(lx.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
        sx += lx[i];
        sy += ly[i];
        sxx += lx[i] * lx[i];
        sxy += lx[i] * ly[i];
    }
    const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    CHECK(std::abs(slope + 2.0) < 0.1);
}

TEST_CASE("eit_run: store and release")
{
    physical_params p;
    p.delta = 0.0;
    const double dt = 4e-9;
    const double ramp = 1e-6, t_on = 2.4e-6, hold = 5e-6, tail = 12e-6;
    const double total = t_on + ramp + hold + ramp + tail;
    const auto g = make_grid(p, 400, total, dt);
    const auto d = flat_density(g);
    std::vector<segment> segs{
        eit_segment(0.0, t_on + ramp,
                    coupling_ramp::make(ramp_shape::tanh, p.omega_c_max, 0.0,
                                        ramp, t_on),
                    true),
        eit_segment(t_on + ramp, hold, coupling_ramp::constant(0.0), false,
                    segment_mode::dark),
        eit_segment(t_on + ramp + hold, ramp + tail,
                    coupling_ramp::make(ramp_shape::tanh, 0.0, p.omega_c_max,
                                        ramp),
                    false)};
    const double sigma = 0.4e-6, tc = 2e-6;
    const auto input = gaussian_input(g, tc, sigma);
    const auto res = eit_run(eit_state::zero(g.nz), segs, input, g, d, p);

    const double released = res.exit.energy(t_on + ramp + hold, total + dt);
    CHECK(released / input.energy() > 0.5);
    CHECK(res.exit.energy(t_on + ramp, t_on + ramp + hold) <
          1e-6 * input.energy());

    /* the spin wave at the stop instant: position and width */
    REQUIRE(res.stop_snapshot);
    CHECK(res.stop_time == doctest::Approx(t_on + ramp));
    const auto prof = stopped_spinwave_profile(res);
    const double vg = group_velocity(p, p.omega_c_max);
    double travel = vg * (t_on - tc);
    const std::size_t nq = 2000;
    for (std::size_t k = 0; k < nq; ++k) {
        const double s = t_on + (k + 0.5) * ramp / nq;
        travel += group_velocity(p, segs[0].omega_c.value(s)) * ramp / nq;
    }
    std::size_t arg = 0;
    double m0 = 0.0, m1 = 0.0, m2 = 0.0;
    for (std::size_t j = 0; j < g.nz; ++j) {
        if (prof[j] > prof[arg]) {
            arg = j;
        }
        const double v = prof[j] * prof[j];
        m0 += v;
        m1 += v * g.z(j);
        m2 += v * g.z(j) * g.z(j);
    }
    const double c = m1 / m0;
    const double width = std::sqrt(2.0 * (m2 / m0 - c * c));
    CHECK(std::abs(g.z(arg) / travel - 1.0) < 0.15);
    CHECK(std::abs(width / (vg * sigma) - 1.0) < 0.15);
}

TEST_CASE("eit_run: two stopped pulses give two lobes v_g dt apart")
{
    physical_params p;
    p.delta = 0.0;
    const double dt = 4e-9;
    const double ramp = 1e-6;
    const double sigma = 0.25e-6, t1 = 1.5e-6, sep = 1e-6;
    const auto g0 = make_grid(p, 400, dt, dt);
    const double vg = group_velocity(p, p.omega_c_max);

    /* stop when the pair is centred in the cloud */
    double ramp_travel = 0.0;
    for (std::size_t k = 0; k < 1000; ++k) {
        const double s = (k + 0.5) * ramp / 1000;
        const auto r =
            coupling_ramp::make(ramp_shape::tanh, p.omega_c_max, 0.0, ramp);
        ramp_travel += group_velocity(p, r.value(s)) * ramp / 1000;
    }
    const double mid = t1 + 0.5 * sep;
    double t_on = mid + (0.5 * p.length - ramp_travel) / vg;
    t_on = std::round(t_on / dt) * dt;
    const double total = t_on + ramp + 1e-6;
    const auto g = make_grid(p, 400, total, dt);
    (void)g0;
    const auto d = flat_density(g);
    std::vector<segment> segs{
        eit_segment(0.0, t_on + ramp,
                    coupling_ramp::make(ramp_shape::tanh, p.omega_c_max, 0.0,
                                        ramp, t_on),
                    true),
        eit_segment(t_on + ramp, 1e-6, coupling_ramp::constant(0.0), false,
                    segment_mode::dark)};
    auto input = gaussian_input(g, t1, sigma);
    const auto second = gaussian_input(g, t1 + sep, sigma);
    for (std::size_t n = 0; n < input.size(); ++n) {
        input.values[n] += second.values[n];
    }
    const auto res = eit_run(eit_state::zero(g.nz), segs, input, g, d, p);
    const auto prof = stopped_spinwave_profile(res);
    double top = 0.0;
    for (double v : prof) {
        top = std::max(top, v);
    }
    const auto peaks = local_maxima(prof, 0.2 * top);
    REQUIRE(peaks.size() == 2);
    const double gap = g.z(peaks[1]) - g.z(peaks[0]);
    CHECK(std::abs(gap / (vg * sep) - 1.0) < 0.15);
}

TEST_CASE("eit_run: zero input gives zero spin wave")
{
    physical_params p;
    p.delta = 0.0;
    const double dt = 4e-9;
    const auto g = make_grid(p, 40, 2e-6, dt);
    const auto d = flat_density(g);
    std::vector<segment> segs{eit_segment(
        0.0, 2e-6,
        coupling_ramp::make(ramp_shape::tanh, p.omega_c_max, 0.0, 1e-6), true)};
    complex_trace input;
    input.dt = dt;
    input.values.assign(g.nt, complex{});
    const auto res = eit_run(eit_state::zero(g.nz), segs, input, g, d, p);
    for (double v : stopped_spinwave_profile(res)) {
        CHECK(v == 0.0);
    }
}

TEST_CASE("stopped_spinwave_profile requires a stop")
{
    physical_params p;
    p.delta = 0.0;
    const double dt = 4e-9;
    const auto g = make_grid(p, 20, 0.4e-6, dt);
    const auto d = flat_density(g);
    std::vector<segment> segs{eit_segment(
        0.0, 0.4e-6, coupling_ramp::constant(p.omega_c_max), true)};
    complex_trace input;
    input.dt = dt;
    const auto res = eit_run(eit_state::zero(g.nz), segs, input, g, d, p);
    CHECK_THROWS_AS(stopped_spinwave_profile(res), solver_error);
}

TEST_CASE("eit_run: dark-state limit keeps S fixed")
{
    physical_params p;
    p.delta = 0.0;
    const double dt = 4e-9;
    const auto g = make_grid(p, 64, 3e-6, dt);
    const auto d = sample_density(4, 0.8 * p.length, g);
    auto st = eit_state::zero(g.nz);
    std::mt19937_64 rng(9);
    std::normal_distribution<double> nd(0.0, 1e8);
    for (auto& v : st.s) {
        v = complex{nd(rng), nd(rng)};
    }
    std::vector<segment> segs{eit_segment(0.0, 3e-6,
                                          coupling_ramp::constant(0.0), false,
                                          segment_mode::dark)};
    complex_trace input;
    input.dt = dt;
    const auto res = eit_run(st, segs, input, g, d, p);
    for (std::size_t j = 0; j < g.nz; ++j) {
        CHECK(std::abs(res.final_state.s[j] - st.s[j]) <=
              1e-12 * std::abs(st.s[j]));
        CHECK(res.final_state.p[j] == complex{});
    }
}

TEST_CASE("eit_run: excitation balance")
{
    physical_params p;
    p.delta = 0.0;
    const double dt = 4e-9;
    const std::size_t steps = 10000;
    const auto g = make_grid(p, 200, steps * dt, dt);
    const auto d = sample_density(4, 0.8 * p.length, g);
    const double gp = p.coupling_rate();
    auto st = eit_state::zero(g.nz);
    for (std::size_t j = 0; j < g.nz; ++j) {
        const double x = (g.z(j) - 0.4 * p.length) / (0.08 * p.length);
        st.s[j] = 0.05 * gp * std::exp(-0.5 * x * x);
    }
    std::vector<segment> segs{eit_segment(
        0.0, steps * dt,
        coupling_ramp::make(ramp_shape::tanh, 0.0, p.omega_c_max, 1e-6), false)};
    complex_trace input;
    input.dt = dt;

    SUBCASE("lossless: excitation plus outflow is conserved")
    {
        eit_options opt;
        opt.polarization_decay = 0.0;
        const auto res = eit_run(st, segs, input, g, d, p, opt);
        const double e0 = eit_excitation(st, d, p, g);
        const double e1 = eit_excitation(res.final_state, d, p, g);
        CHECK(res.exit_flux > 0.5 * e0);
        CHECK(std::abs((e1 + res.exit_flux) / e0 - 1.0) < 1e-6);
    }
    SUBCASE("with decay: excitation never increases")
    {
        eit_options opt;
        opt.record_stride = 100;
        const auto res = eit_run(st, segs, input, g, d, p, opt);
        REQUIRE(res.fields);
        double prev = eit_excitation(st, d, p, g);
        for (std::size_t k = 0; k < res.fields->times.size(); ++k) {
            eit_state snap = eit_state::zero(g.nz);
            snap.s = res.fields->coherence[k];
            /* P is not recorded; check the spin-wave part decays */
            const double e = eit_excitation(snap, d, p, g);
            CHECK(e <= prev * (1.0 + 1e-9));
            prev = e;
        }
        CHECK(eit_excitation(res.final_state, d, p, g) + res.exit_flux <=
              eit_excitation(st, d, p, g));
    }
}

TEST_CASE("eit_run: linearity")
{
    physical_params p;
    p.delta = 2.0 * pi * 0.3e6;
    p.omega0 = 2.0 * pi * 0.02e6;
    const double dt = 4e-9;
    const auto g = make_grid(p, 60, 3e-6, dt);
    const auto d = sample_density(4, 0.8 * p.length, g);
    std::vector<segment> segs{
        eit_segment(0.0, 2e-6,
                    coupling_ramp::make(ramp_shape::tanh, p.omega_c_max, 0.0,
                                        1e-6, 0.5e-6),
                    true),
        eit_segment(2e-6, 1e-6,
                    coupling_ramp::make(ramp_shape::linear, 0.0,
                                        p.omega_c_max, 0.5e-6),
                    false)};
    const auto input = gaussian_input(g, 0.6e-6, 0.2e-6, complex{0.4, 0.2});
    auto st = eit_state::zero(g.nz);
    for (std::size_t j = 0; j < g.nz; ++j) {
        st.s[j] = complex{std::sin(0.3 * j), std::cos(0.2 * j)} * 1e7;
    }
    const auto base = eit_run(st, segs, input, g, d, p);
    for (complex alpha : {complex{0.5}, complex{2.0}, I}) {
        CAPTURE(alpha);
        auto in2 = input;
        for (auto& v : in2.values) {
            v *= alpha;
        }
        auto st2 = st;
        for (auto& v : st2.s) {
            v *= alpha;
        }
        const auto res = eit_run(st2, segs, in2, g, d, p);
        auto scale = [&](cvec v) {
            for (auto& x : v) {
                x *= alpha;
            }
            return v;
        };
        CHECK(rel_diff(res.exit.values, scale(base.exit.values)) < 1e-10);
        CHECK(rel_diff(res.final_state.s, scale(base.final_state.s)) < 1e-10);
        CHECK(rel_diff(res.final_state.p, scale(base.final_state.p)) < 1e-10);
    }
}

TEST_CASE("eit_run: matrix-exponential oracle")
{
    const auto e = oracle::eit_case();
    CHECK(e.nt == 64);
    CHECK(e.state < 1e-6);
    CHECK(e.exit < 1e-6);
}

TEST_CASE("eit_run: explicit sub-step count is checked")
{
    physical_params p;
    p.delta = 0.0;
    const double dt = 4e-9;
    const auto g = make_grid(p, 40, 1e-6, dt);
    const auto d = flat_density(g);
    std::vector<segment> segs{eit_segment(
        0.0, 1e-6, coupling_ramp::constant(p.omega_c_max), true)};
    complex_trace input;
    input.dt = dt;
    eit_options opt;
    opt.substeps = 1;
    try {
        eit_run(eit_state::zero(g.nz), segs, input, g, d, p, opt);
        FAIL("expected step-control error");
    } catch (const solver_error& e) {
        CHECK(e.get_kind() == solver_error::kind::step_control);
    }
}
