#include <doctest.h>

#include "oracle_cases.hpp"

#include <qmem/errors.hpp>
#include <qmem/gem_solver.hpp>

#include <cmath>
#include <random>

using namespace qmem;

namespace {

const complex I{0.0, 1.0};

cvec random_row(std::size_t n, unsigned seed, double scale = 0.1)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, scale);
    cvec v(n);
    for (auto& x : v) {
        x = complex{nd(rng), nd(rng)};
    }
    return v;
}

segment make_segment(double start, double duration, segment_mode mode,
                     int sign, double beta, double omega, double delta,
                     bool open)
{
    segment s;
    s.start = start;
    s.duration = duration;
    s.mode = mode;
    s.role = open ? segment_role::write : segment_role::store;
    s.gradient_sign = sign;
    s.beta = beta;
    s.omega_c = coupling_ramp::constant(omega);
    s.delta = delta;
    s.input_open = open;
    return s;
}

complex_trace gaussian_trace(const sim_grid& g, double t0, double sigma,
                             double omega, complex amp = 1.0)
{
    complex_trace tr;
    tr.dt = g.dt;
    tr.t0 = g.t0;
    tr.values.resize(g.nt);
    for (std::size_t n = 0; n < g.nt; ++n) {
        const double t = g.t(n);
        const double x = (t - t0) / sigma;
        tr.values[n] = amp * std::exp(-0.5 * x * x) *
            std::polar(1.0, omega * t);
    }
    return tr;
}

double rel_diff(const cvec& a, const cvec& b)
{
    double num = 0.0;
    double den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += std::norm(a[i] - b[i]);
        den += std::norm(b[i]);
    }
    return std::sqrt(num / den);
}

/* k(z) = -i n OD Gamma / (L (4 Delta + 2i Gamma)) at nodes and midpoints */
void gem_coefficients(const physical_params& p, const density_profile& d,
                      double delta, std::vector<complex>& nodes,
                      std::vector<complex>& mids)
{
    const complex k0 =
        -I * p.od * p.gamma / (p.length * complex{4.0 * delta, 2.0 * p.gamma});
    nodes.clear();
    mids.clear();
    for (double v : d.samples) {
        nodes.push_back(k0 * v);
    }
    for (double v : d.midpoints) {
        mids.push_back(k0 * v);
    }
}

}

TEST_CASE("spatial_march: resonant absorption e^-OD")
{
    physical_params p;
    p.delta = 0.0;
    p.od = 80.0;
    const auto g = make_grid(p, 401, 1e-6, 1e-9);
    const auto d = flat_density(g);
    gem_drive drive;
    drive.input = complex{0.3, -0.4};
    const cvec zero(g.nz);
    const auto a = spatial_march(zero, drive, d, p, g);
    const double ratio = std::norm(a.back()) / std::norm(drive.input);
    CHECK(ratio / std::exp(-80.0) == doctest::Approx(1.0).epsilon(1e-4));
    for (std::size_t j = 0; j < g.nz; j += 50) {
        const double expect = std::exp(-p.od * g.z(j) / (2.0 * p.length));
        CHECK(std::abs(a[j]) / std::abs(drive.input) ==
              doctest::Approx(expect).epsilon(1e-4));
    }
}

TEST_CASE("spatial_march: zero input gives zero field")
{
    physical_params p;
    const auto g = make_grid(p, 33, 1e-6, 1e-9);
    const auto d = sample_density(4, 0.8 * p.length, g);
    gem_drive drive;
    drive.omega_c = p.omega_c_max;
    drive.delta = p.delta;
    const auto a = spatial_march(cvec(g.nz), drive, d, p, g);
    for (const auto& v : a) {
        CHECK(v == complex{});
    }
}

TEST_CASE("spatial_march: retrieval source against fine reference")
{
    physical_params p;
    p.od = 20.0;
    const double zc = 0.45 * p.length;
    const double wz = 0.08 * p.length;
    auto rho_at = [&](double z) {
        const double x = (z - zc) / wz;
        return 0.1 * std::exp(-0.5 * x * x) * std::polar(1.0, 300.0 * z);
    };
    const int m = 4;
    const double w = 0.8 * p.length;
    auto shape = [&](double z) {
        const double u = 2.0 * (z - 0.5 * p.length) / w;
        return std::exp(-std::pow(u * u, m));
    };

    const auto g = make_grid(p, 201, 1e-6, 1e-9);
    const auto d = sample_density(m, w, g);
    cvec rho(g.nz);
    for (std::size_t j = 0; j < g.nz; ++j) {
        rho[j] = rho_at(g.z(j));
    }
    gem_drive drive;
    drive.omega_c = p.omega_c_max;
    drive.delta = p.delta;
    const auto a = spatial_march(rho, drive, d, p, g);
    CHECK(std::abs(a.back()) > 0.0);

    /* fine RK4 with exact coefficient functions; normalization from d */
    const double norm = d.samples[100] / shape(g.z(100));
    const complex k0 = -I * p.od * p.gamma /
        (p.length * complex{4.0 * p.delta, 2.0 * p.gamma});
    auto rhs = [&](double z, complex av) {
        return k0 * norm * shape(z) * (av + drive.omega_c * rho_at(z));
    };
    const std::size_t refine = 64;
    const double h = g.dz / refine;
    complex av{};
    cvec ref(g.nz);
    for (std::size_t j = 0; j + 1 < g.nz; ++j) {
        for (std::size_t r = 0; r < refine; ++r) {
            const double z = g.z(j) + r * h;
            const complex k1 = rhs(z, av);
            const complex k2 = rhs(z + 0.5 * h, av + 0.5 * h * k1);
            const complex k3 = rhs(z + 0.5 * h, av + 0.5 * h * k2);
            const complex k4 = rhs(z + h, av + h * k3);
            av += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        ref[j + 1] = av;
    }
    CHECK(rel_diff(a, ref) < 1e-4);
}

TEST_CASE("coherence_advance: pure phase winding without coupling")
{
    physical_params p;
    const auto g = make_grid(p, 64, 1e-6, 1e-9);
    gem_state st{random_row(g.nz, 3), 0.0};
    gem_drive drive;
    drive.gradient_sign = 1;
    drive.beta = p.beta;
    const double dt = 37e-9;
    const auto next =
        coherence_advance(st, cvec(g.nz), drive, p, g, dt);
    for (std::size_t j = 0; j < g.nz; ++j) {
        const complex expect = st.rho[j] *
            std::polar(1.0, p.beta * (g.z(j) - 0.5 * p.length) * dt);
        CHECK(std::abs(next.rho[j] - expect) < 1e-12);
        CHECK(std::abs(std::abs(next.rho[j]) - std::abs(st.rho[j])) < 1e-12);
    }
    CHECK(next.t_now == doctest::Approx(dt));

    drive.gradient_sign = 0;
    const auto same = coherence_advance(st, cvec(g.nz), drive, p, g, dt);
    for (std::size_t j = 0; j < g.nz; ++j) {
        CHECK(std::abs(same.rho[j] - st.rho[j]) < 1e-12);
    }
}

TEST_CASE("coherence_advance: step-control violation")
{
    physical_params p;
    const auto g = make_grid(p, 16, 1e-6, 1e-9);
    gem_state st{cvec(g.nz), 0.0};
    gem_drive drive;
    drive.omega_c = p.omega_c_max;
    drive.delta = p.delta;
    drive.gradient_sign = 1;
    drive.beta = p.beta;
    try {
        coherence_advance(st, cvec(g.nz), drive, p, g, 1e-6);
        FAIL("expected step-control error");
    } catch (const solver_error& e) {
        CHECK(e.get_kind() == solver_error::kind::step_control);
    }
}

TEST_CASE("gem_run: matrix-exponential oracle")
{
    for (double delta : {2.0 * pi * 30e6, 0.0}) {
        CAPTURE(delta);
        const auto e = oracle::gem_case(delta);
        CHECK(e.nt == 64);
        CHECK(e.state < 1e-6);
        CHECK(e.exit < 1e-6);
    }
}

TEST_CASE("gem_run: linearity")
{
    physical_params p;
    const double dt = 4e-9;
    const auto g = make_grid(p, 60, 2e-6, dt);
    const auto d = sample_density(4, 0.8 * p.length, g);
    std::vector<segment> segs;
    segs.push_back(make_segment(0.0, 1e-6, segment_mode::gem, 1, p.beta,
                                p.omega_c_max, p.delta, true));
    segs.push_back(make_segment(1e-6, 0.4e-6, segment_mode::dark, -1, p.beta,
                                0.0, p.delta, false));
    segs.push_back(make_segment(1.4e-6, 0.6e-6, segment_mode::gem, -1, p.beta,
                                p.omega_c_max, p.delta, false));
    const auto input = gaussian_trace(g, 0.5e-6, 0.15e-6, 2.0 * pi * 0.2e6);
    const cvec rho0 = random_row(g.nz, 5, 0.02);
    const auto base = gem_run(gem_state{rho0, 0.0}, segs, input, g, d, p);

    for (complex alpha : {complex{0.5}, complex{2.0}, I}) {
        CAPTURE(alpha);
        complex_trace in2 = input;
        for (auto& v : in2.values) {
            v *= alpha;
        }
        cvec r2 = rho0;
        for (auto& v : r2) {
            v *= alpha;
        }
        const auto res = gem_run(gem_state{r2, 0.0}, segs, in2, g, d, p);
        cvec scaled = base.exit.values;
        for (auto& v : scaled) {
            v *= alpha;
        }
        CHECK(rel_diff(res.exit.values, scaled) < 1e-10);
        cvec rs = base.final_state.rho;
        for (auto& v : rs) {
            v *= alpha;
        }
        CHECK(rel_diff(res.final_state.rho, rs) < 1e-10);
    }
}

TEST_CASE("gem_run: zero input stays zero")
{
    physical_params p;
    const double dt = 4e-9;
    const auto g = make_grid(p, 40, 1e-6, dt);
    const auto d = sample_density(4, 0.8 * p.length, g);
    std::vector<segment> segs{make_segment(0.0, 1e-6, segment_mode::gem, 1,
                                           p.beta, p.omega_c_max, p.delta,
                                           true)};
    complex_trace input;
    input.dt = dt;
    input.values.assign(g.nt, complex{});
    const auto res = gem_run(gem_state{cvec(g.nz), 0.0}, segs, input, g, d, p);
    for (const auto& v : res.exit.values) {
        CHECK(v == complex{});
    }
    for (const auto& v : res.final_state.rho) {
        CHECK(v == complex{});
    }
}

TEST_CASE("gem_run: segment tiling is enforced")
{
    physical_params p;
    const double dt = 4e-9;
    const auto g = make_grid(p, 20, 2e-6, dt);
    const auto d = flat_density(g);
    complex_trace input;
    input.dt = dt;
    input.values.assign(g.nt, complex{});
    std::vector<segment> gap{
        make_segment(0.0, 1e-6, segment_mode::gem, 1, p.beta, p.omega_c_max,
                     p.delta, true),
        make_segment(1.2e-6, 0.8e-6, segment_mode::dark, 0, p.beta, 0.0,
                     p.delta, false)};
    CHECK_THROWS_AS(gem_run(gem_state{cvec(g.nz), 0.0}, gap, input, g, d, p),
                    validation_error);
    std::vector<segment> overlap = gap;
    overlap[1].start = 0.9e-6;
    CHECK_THROWS_AS(
        gem_run(gem_state{cvec(g.nz), 0.0}, overlap, input, g, d, p),
        validation_error);
}

TEST_CASE("gem_run: dark storage winds phase at beta T")
{
    physical_params p;
    const double dt = 4e-9;
    const double T = 3e-6;
    const auto g = make_grid(p, 200, T, dt);
    const auto d = flat_density(g);
    cvec rho0(g.nz);
    for (std::size_t j = 0; j < g.nz; ++j) {
        const double x = (g.z(j) - 0.5 * p.length) / (0.15 * p.length);
        rho0[j] = 0.1 * std::exp(-0.5 * x * x);
    }
    std::vector<segment> segs{make_segment(0.0, T, segment_mode::dark, 1,
                                           p.beta, 0.0, 0.0, false)};
    complex_trace input;
    input.dt = dt;
    gem_options opt;
    opt.record_stride = 50;
    const auto res =
        gem_run(gem_state{rho0, 0.0}, segs, input, g, d, p, opt);
    REQUIRE(res.fields);
    for (std::size_t k = 0; k < res.fields->times.size(); ++k) {
        const auto& row = res.fields->coherence[k];
        const double t = res.fields->times[k];
        for (std::size_t j = 0; j < g.nz; ++j) {
            CHECK(std::abs(std::abs(row[j]) - std::abs(rho0[j])) < 1e-10);
        }
        /* local wavevector from neighbouring phases */
        const std::size_t j = g.nz / 2;
        const double dphi = std::arg(row[j + 1] / row[j]);
        CHECK(dphi / g.dz == doctest::Approx(p.beta * t).epsilon(1e-9));
    }
}

TEST_CASE("gem_run: write maps frequency to position (optically thin)")
{
    physical_params p;
    p.od = 1.0;
    const double dt = 4e-9;
    const double T = 20e-6;
    const auto g = make_grid(p, 400, T, dt);
    const auto d = sample_density(4, 0.8 * p.length, g);
    std::vector<segment> segs{make_segment(0.0, T, segment_mode::gem, 1,
                                           p.beta, p.omega_c_max, p.delta,
                                           true)};
    for (double f : {-0.25e6, -0.1e6, 0.0, 0.15e6, 0.25e6}) {
        CAPTURE(f);
        const double omega = 2.0 * pi * f;
        const auto input = gaussian_trace(g, 10e-6, 2.5e-6, omega);
        const auto res =
            gem_run(gem_state{cvec(g.nz), 0.0}, segs, input, g, d, p);
        std::size_t arg = 0;
        for (std::size_t j = 0; j < g.nz; ++j) {
            if (std::abs(res.final_state.rho[j]) >
                std::abs(res.final_state.rho[arg])) {
                arg = j;
            }
        }
        const double zstar = 0.5 * p.length + omega / p.beta;
        CHECK(std::abs(g.z(arg) - zstar) <= g.dz);
    }
}

TEST_CASE("gem_run: passivity")
{
    physical_params p;
    const double dt = 4e-9;
    const auto g = make_grid(p, 200, 24e-6, dt);
    const auto d = sample_density(4, 0.8 * p.length, g);
    std::vector<segment> segs;
    segs.push_back(make_segment(0.0, 8e-6, segment_mode::gem, 1, p.beta,
                                p.omega_c_max, p.delta, true));
    segs.push_back(make_segment(8e-6, 2e-6, segment_mode::dark, 1, p.beta,
                                0.0, p.delta, false));
    segs.push_back(make_segment(10e-6, 14e-6, segment_mode::gem, -1, p.beta,
                                p.omega_c_max, p.delta, false));
    const auto input = gaussian_trace(g, 4e-6, 0.8e-6, 2.0 * pi * 0.1e6);
    const auto res = gem_run(gem_state{cvec(g.nz), 0.0}, segs, input, g, d, p);
    const double in = input.energy();
    const double out = res.exit.energy();
    CHECK(out <= in * (1.0 + 1e-6));
    CHECK(out > 0.0);
}
