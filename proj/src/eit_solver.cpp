#include <qmem/eit_solver.hpp>
#include <qmem/errors.hpp>
#include <qmem/spatial_propagator.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace qmem {

namespace {

const complex I{0.0, 1.0};

constexpr double growth_bound = 1e3;

double max_abs(std::span<const complex> v)
{
    double m = 0.0;
    for (const auto& x : v) {
        m = std::max(m, std::abs(x));
    }
    return m;
}

bool all_finite(std::span<const complex> v)
{
    for (const auto& x : v) {
        if (!std::isfinite(x.real()) || !std::isfinite(x.imag())) {
            return false;
        }
    }
    return true;
}

/* matter part of the excitation, Simpson over nodes and midpoints */
double matter_energy(std::span<const complex> p, std::span<const complex> s,
                     const density_profile& density, double g2, double dz,
                     cvec& mids_p, cvec& mids_s)
{
    if (g2 == 0.0) {
        return 0.0;
    }
    const std::size_t nz = p.size();
    interval_midpoints<complex>(p, mids_p);
    interval_midpoints<complex>(s, mids_s);
    double sum = 0.0;
    for (std::size_t j = 0; j + 1 < nz; ++j) {
        const double f0 = density.samples[j] * (std::norm(p[j]) + std::norm(s[j]));
        const double fh =
            density.midpoints[j] * (std::norm(mids_p[j]) + std::norm(mids_s[j]));
        const double f1 =
            density.samples[j + 1] * (std::norm(p[j + 1]) + std::norm(s[j + 1]));
        sum += f0 + 4.0 * fh + f1;
    }
    return sum * dz / 6.0 / g2;
}

class eit_integrator
{
public:
    eit_integrator(const sim_grid& grid, const density_profile& density,
                   const physical_params& params, const eit_options& options,
                   const complex_trace& input) :
        m_grid(grid), m_density(density), m_params(params),
        m_options(options), m_input(input), m_nz(grid.nz),
        m_g(params.coupling_rate()),
        m_decay(options.polarization_decay.value_or(0.5 * params.gamma)),
        m_mids(grid.nz - 1),
        m_mids2(grid.nz - 1), m_a(grid.nz), m_offsets(grid.nz)
    {
        for (auto* v : {&m_kp1, &m_kp2, &m_kp3, &m_kp4, &m_ks1, &m_ks2, &m_ks3,
                        &m_ks4, &m_tp, &m_ts}) {
            v->resize(m_nz);
        }
        for (std::size_t j = 0; j < m_nz; ++j) {
            m_offsets[j] = grid.z(j) - 0.5 * params.length;
        }
        const complex q0 = I * m_g / (2.0 * params.c_light);
        std::vector<complex> zn(m_nz), zm(m_nz - 1), qn(m_nz), qm(m_nz - 1);
        for (std::size_t j = 0; j < m_nz; ++j) {
            qn[j] = q0 * density.samples[j];
        }
        for (std::size_t j = 0; j + 1 < m_nz; ++j) {
            qm[j] = q0 * density.midpoints[j];
        }
        m_propagator = spatial_propagator(zn, zm, qn, qm, grid.dz);
    }

    std::size_t choose_substeps(std::span<const segment> segments,
                                double initial_gradient) const
    {
        double worst = 0.0;
        double previous = initial_gradient;
        for (const auto& seg : segments) {
            const double grad = std::max(std::abs(seg.gradient_sign * seg.beta),
                                         std::abs(previous));
            const double rate =
                std::abs(complex{m_decay, seg.delta}) +
                0.5 * seg.omega_c.max_value() +
                grad * 0.5 * m_params.length + std::abs(m_params.omega0) +
                m_params.ground_dephasing +
                0.25 * m_params.gamma * m_params.od * m_density.max();
            worst = std::max(worst, rate);
            previous = seg.gradient(seg.duration, previous);
        }
        const double x = worst * m_grid.dt / m_options.step_limit;
        if (m_options.substeps > 0) {
            if (x > static_cast<double>(m_options.substeps)) {
                std::ostringstream msg;
                msg << "eit solver: step-control violation, sub-step "
                    << m_grid.dt / m_options.substeps << " s times rate "
                    << worst << " rad/s exceeds " << m_options.step_limit;
                throw solver_error(solver_error::kind::step_control,
                                   msg.str());
            }
            return m_options.substeps;
        }
        return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(x)));
    }

    eit_run_result run(const eit_state& initial,
                       std::span<const segment> segments)
    {
        eit_run_result result;
        result.substeps = choose_substeps(segments, m_options.initial_gradient);
        m_sub = result.substeps;

        cvec p = initial.p;
        cvec s = initial.s;
        const double g2 = m_g * m_g;
        m_flux_scale = g2 > 0.0 ? m_params.c_light / g2 : 0.0;
        m_energy0 = matter_energy(p, s, m_density, g2, m_grid.dz, m_mids,
                                  m_mids2);

        std::size_t total = 0;
        for (const auto& seg : segments) {
            total += seg.steps(m_grid.dt);
        }
        result.exit.dt = m_grid.dt;
        result.exit.t0 = initial.t_now;
        result.exit.values.reserve(total + 1);
        if (m_options.record_stride > 0) {
            result.fields.emplace();
            result.fields->stride = m_options.record_stride;
        }

        double previous = m_options.initial_gradient;
        m_global_step = 0;
        for (const auto& seg : segments) {
            advance(seg, previous, p, s, result);
            previous = seg.gradient(seg.duration, previous);
        }

        const segment& last = segments.back();
        march(last, last.duration, p);
        result.exit.values.push_back(m_a[m_nz - 1]);
        note_maxima(result, p);
        maybe_stop(result, last, last.duration, s);
        record(result, last.end(), s, true);

        result.final_state.a = m_a;
        result.final_state.p = std::move(p);
        result.final_state.s = std::move(s);
        result.final_state.t_now = last.end();
        result.final_gradient = previous;
        return result;
    }

private:
    complex input_at(const segment& seg, double sv) const
    {
        return seg.input_open ? m_input.sample(seg.start + sv) : complex{};
    }

    void march(const segment& seg, double sv, std::span<const complex> p)
    {
        m_propagator.march(input_at(seg, sv), p, 1.0, m_mids, m_a);
    }

    void rhs(const segment& seg, double sv, double previous,
             std::span<const complex> p, std::span<const complex> s,
             std::span<complex> dp, std::span<complex> ds)
    {
        march(seg, sv, p);
        const double omega = seg.omega_c.value(sv);
        const complex lp{-m_decay, seg.delta};
        const complex hg = 0.5 * I * m_g;
        const complex ho = 0.5 * I * omega;
        const double grad = seg.gradient(sv, previous);
        for (std::size_t j = 0; j < m_nz; ++j) {
            dp[j] = lp * p[j] + hg * m_a[j] + ho * s[j];
            const complex ls{-m_params.ground_dephasing,
                             m_params.omega0 + grad * m_offsets[j]};
            ds[j] = ho * p[j] + ls * s[j];
        }
    }

    void note_maxima(eit_run_result& result, std::span<const complex> p)
    {
        result.max_abs_a = std::max(result.max_abs_a, max_abs(m_a));
        result.max_abs_p = std::max(result.max_abs_p, max_abs(p));
    }

    void maybe_stop(eit_run_result& result, const segment& seg, double sv,
                    std::span<const complex> s)
    {
        if (!result.stop_snapshot && seg.omega_c.value(sv) == 0.0) {
            result.stop_snapshot.emplace(s.begin(), s.end());
            result.stop_time = seg.start + sv;
        }
    }

    void record(eit_run_result& result, double t, std::span<const complex> s,
                bool force = false)
    {
        if (!result.fields) {
            return;
        }
        if (!force && m_global_step % m_options.record_stride != 0) {
            return;
        }
        if (!result.fields->times.empty() &&
            std::abs(result.fields->times.back() - t) < 1e-6 * m_grid.dt) {
            return;
        }
        result.fields->times.push_back(t);
        result.fields->signal.emplace_back(m_a.begin(), m_a.end());
        result.fields->coherence.emplace_back(s.begin(), s.end());
    }

    void check_state(eit_run_result& result, std::span<const complex> p,
                     std::span<const complex> s, double t)
    {
        if (!all_finite(p) || !all_finite(s) || !all_finite(m_a)) {
            std::ostringstream msg;
            msg << "eit solver: non-finite field at t = " << t << " s";
            throw solver_error(solver_error::kind::non_finite, msg.str());
        }
        if (m_flux_scale == 0.0) {
            return;
        }
        const double e = matter_energy(p, s, m_density, m_g * m_g, m_grid.dz,
                                       m_mids, m_mids2);
        const double budget = m_energy0 + result.entrance_flux;
        if (e > growth_bound * budget && e > 0.0) {
            std::ostringstream msg;
            msg << "eit solver: excitation " << e << " exceeds " << growth_bound
                << " x the supplied energy " << budget << " at t = " << t
                << " s (unstable step?)";
            throw solver_error(solver_error::kind::blow_up, msg.str());
        }
    }

    void advance(const segment& seg, double previous, cvec& p, cvec& s,
                 eit_run_result& result)
    {
        if (seg.mode == segment_mode::gem) {
            throw validation_error("eit_run: gem segment in an EIT schedule");
        }
        const std::size_t n = seg.steps(m_grid.dt);
        const double h = m_grid.dt / static_cast<double>(m_sub);

        for (std::size_t i = 0; i < n; ++i, ++m_global_step) {
            const double s0 = static_cast<double>(i) * m_grid.dt;
            for (std::size_t k = 0; k < m_sub; ++k) {
                const double sv = s0 + static_cast<double>(k) * h;
                rhs(seg, sv, previous, p, s, m_kp1, m_ks1);
                const double fa1 = std::norm(m_a[m_nz - 1]);
                const double fi1 = std::norm(input_at(seg, sv));
                if (k == 0) {
                    result.exit.values.push_back(m_a[m_nz - 1]);
                    note_maxima(result, p);
                    maybe_stop(result, seg, sv, s);
                    record(result, seg.start + sv, s);
                }
                for (std::size_t j = 0; j < m_nz; ++j) {
                    m_tp[j] = p[j] + 0.5 * h * m_kp1[j];
                    m_ts[j] = s[j] + 0.5 * h * m_ks1[j];
                }
                rhs(seg, sv + 0.5 * h, previous, m_tp, m_ts, m_kp2, m_ks2);
                const double fa2 = std::norm(m_a[m_nz - 1]);
                for (std::size_t j = 0; j < m_nz; ++j) {
                    m_tp[j] = p[j] + 0.5 * h * m_kp2[j];
                    m_ts[j] = s[j] + 0.5 * h * m_ks2[j];
                }
                rhs(seg, sv + 0.5 * h, previous, m_tp, m_ts, m_kp3, m_ks3);
                const double fa3 = std::norm(m_a[m_nz - 1]);
                const double fih = std::norm(input_at(seg, sv + 0.5 * h));
                for (std::size_t j = 0; j < m_nz; ++j) {
                    m_tp[j] = p[j] + h * m_kp3[j];
                    m_ts[j] = s[j] + h * m_ks3[j];
                }
                rhs(seg, sv + h, previous, m_tp, m_ts, m_kp4, m_ks4);
                const double fa4 = std::norm(m_a[m_nz - 1]);
                const double fi4 = std::norm(input_at(seg, sv + h));
                for (std::size_t j = 0; j < m_nz; ++j) {
                    p[j] += h / 6.0 *
                        (m_kp1[j] + 2.0 * m_kp2[j] + 2.0 * m_kp3[j] + m_kp4[j]);
                    s[j] += h / 6.0 *
                        (m_ks1[j] + 2.0 * m_ks2[j] + 2.0 * m_ks3[j] + m_ks4[j]);
                }
                result.exit_flux += m_flux_scale * h / 6.0 *
                    (fa1 + 2.0 * fa2 + 2.0 * fa3 + fa4);
                result.entrance_flux += m_flux_scale * h / 6.0 *
                    (fi1 + 4.0 * fih + fi4);
            }
            check_state(result, p, s, seg.start + s0 + m_grid.dt);
        }
    }

    const sim_grid& m_grid;
    const density_profile& m_density;
    const physical_params& m_params;
    const eit_options& m_options;
    const complex_trace& m_input;
    std::size_t m_nz;
    double m_g;
    double m_decay;
    std::size_t m_sub = 1;
    std::size_t m_global_step = 0;
    double m_flux_scale = 0.0;
    double m_energy0 = 0.0;
    spatial_propagator m_propagator;
    cvec m_mids, m_mids2, m_a;
    cvec m_kp1, m_kp2, m_kp3, m_kp4, m_ks1, m_ks2, m_ks3, m_ks4, m_tp, m_ts;
    std::vector<double> m_offsets;
};

void check_row(const cvec& v, std::size_t nz, const char* name)
{
    if (v.size() != nz) {
        throw validation_error(std::string("initial ") + name +
                               " does not match the grid");
    }
    if (!all_finite(v)) {
        throw validation_error(std::string("initial ") + name +
                               " contains non-finite values");
    }
}

}

eit_state eit_state::zero(std::size_t nz, double t)
{
    eit_state st;
    st.a.assign(nz, complex{});
    st.p.assign(nz, complex{});
    st.s.assign(nz, complex{});
    st.t_now = t;
    return st;
}

double group_velocity(const physical_params& params, double omega_c)
{
    params.validate();
    if (!(omega_c >= 0.0) || !std::isfinite(omega_c)) {
        throw validation_error("coupling Rabi frequency must be >= 0");
    }
    const double g2 = params.c_light * params.gamma * params.od / params.length;
    if (g2 == 0.0) {
        return params.c_light;
    }
    const double o2 = omega_c * omega_c;
    return params.c_light * o2 / (o2 + g2);
}

double eit_excitation(const eit_state& state, const density_profile& density,
                      const physical_params& params, const sim_grid& grid)
{
    const double g = params.coupling_rate();
    if (g == 0.0) {
        return 0.0;
    }
    cvec m1(grid.nz - 1), m2(grid.nz - 1);
    double e = matter_energy(state.p, state.s, density, g * g, grid.dz, m1, m2);
    if (!state.a.empty()) {
        std::vector<double> an(grid.nz), am(grid.nz - 1);
        interval_midpoints<complex>(state.a, m1);
        for (std::size_t j = 0; j < grid.nz; ++j) {
            an[j] = std::norm(state.a[j]);
        }
        for (std::size_t j = 0; j + 1 < grid.nz; ++j) {
            am[j] = std::norm(m1[j]);
        }
        e += integrate_with_midpoints(an, am, grid.dz) / (g * g);
    }
    return e;
}

eit_run_result eit_run(const eit_state& initial,
                       std::span<const segment> segments,
                       const complex_trace& input, const sim_grid& grid,
                       const density_profile& density,
                       const physical_params& params,
                       const eit_options& options)
{
    params.validate();
    if (density.samples.size() != grid.nz ||
        density.midpoints.size() + 1 != grid.nz) {
        throw validation_error("density profile does not match the grid");
    }
    check_row(initial.p, grid.nz, "polarization");
    check_row(initial.s, grid.nz, "spin wave");
    if (options.polarization_decay &&
        !(*options.polarization_decay >= 0.0)) {
        throw validation_error("polarization decay must be >= 0");
    }
    if (!(options.step_limit > 0.0)) {
        throw validation_error("eit step limit must be positive");
    }
    validate_segments(segments, initial.t_now, grid.dt);
    if (!input.values.empty() &&
        std::abs(input.dt - grid.dt) > 1e-9 * grid.dt) {
        throw validation_error("input trace time step differs from the grid");
    }
    input.check_finite();

    eit_integrator integrator(grid, density, params, options, input);
    return integrator.run(initial, segments);
}

std::vector<double> stopped_spinwave_profile(const eit_run_result& result)
{
    if (!result.stop_snapshot) {
        throw solver_error(solver_error::kind::handoff,
                           "coupling never reached zero during the run");
    }
    std::vector<double> out;
    out.reserve(result.stop_snapshot->size());
    for (const auto& v : *result.stop_snapshot) {
        out.push_back(std::abs(v));
    }
    return out;
}

}
