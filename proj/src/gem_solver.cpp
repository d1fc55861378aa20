#include <qmem/gem_solver.hpp>
#include <qmem/errors.hpp>
#include <qmem/spatial_propagator.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace qmem {

namespace {

constexpr double rho_bound = 10.0;
constexpr double field_growth_bound = 1e6;

const complex I{0.0, 1.0};

complex gem_denominator(double delta, double gamma)
{
    return complex{4.0 * delta, 2.0 * gamma};
}

/* builds the propagator for dA/dz = k(z) (A + Omega rho) */
spatial_propagator make_gem_propagator(double delta,
                                       const density_profile& density,
                                       const physical_params& params,
                                       std::size_t nz, double dz)
{
    const complex k0 = -I * params.od * params.gamma /
        (params.length * gem_denominator(delta, params.gamma));
    std::vector<complex> a_nodes(nz);
    std::vector<complex> a_mids(nz - 1);
    for (std::size_t j = 0; j < nz; ++j) {
        a_nodes[j] = k0 * density.samples[j];
    }
    for (std::size_t j = 0; j + 1 < nz; ++j) {
        a_mids[j] = k0 * density.midpoints[j];
    }
    return spatial_propagator(a_nodes, a_mids, a_nodes, a_mids, dz);
}

void check_density(const density_profile& density, const sim_grid& grid)
{
    if (density.samples.size() != grid.nz ||
        density.midpoints.size() + 1 != grid.nz) {
        throw validation_error("density profile does not match the grid");
    }
}

double max_abs(std::span<const complex> v)
{
    double m = 0.0;
    for (const auto& x : v) {
        m = std::max(m, std::abs(x));
    }
    return m;
}

void check_rho(std::span<const complex> rho, double t)
{
    for (std::size_t j = 0; j < rho.size(); ++j) {
        const complex v = rho[j];
        if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) {
            std::ostringstream msg;
            msg << "gem solver: non-finite coherence at z index " << j
                << ", t = " << t << " s";
            throw solver_error(solver_error::kind::non_finite, msg.str());
        }
        if (std::abs(v) > rho_bound) {
            std::ostringstream msg;
            msg << "gem solver: |rho_gh| = " << std::abs(v)
                << " exceeds " << rho_bound << " at z index " << j
                << ", t = " << t << " s (unstable step?)";
            throw solver_error(solver_error::kind::blow_up, msg.str());
        }
    }
}

void check_field(std::span<const complex> field, double reference, double t)
{
    const double m = max_abs(field);
    if (!std::isfinite(m)) {
        std::ostringstream msg;
        msg << "gem solver: non-finite field at t = " << t << " s";
        throw solver_error(solver_error::kind::non_finite, msg.str());
    }
    if (m > field_growth_bound * reference && m > 0.0) {
        std::ostringstream msg;
        msg << "gem solver: field magnitude " << m << " exceeds "
            << field_growth_bound << " x its source scale at t = " << t
            << " s";
        throw solver_error(solver_error::kind::blow_up, msg.str());
    }
}

void check_step(double dt, double max_detuning, double omega_c_max,
                double delta, const physical_params& params, double limit)
{
    const double coupling_rate = omega_c_max * omega_c_max /
        std::abs(gem_denominator(delta, params.gamma));
    const double rate = std::max(max_detuning, coupling_rate);
    if (dt * rate > limit) {
        std::ostringstream msg;
        msg << "gem solver: step-control violation, dt * rate = "
            << dt * rate << " rad exceeds " << limit << " (dt = " << dt
            << " s, max |delta(z)| = " << max_detuning
            << " rad/s, Omega^2/|4 Delta + 2i Gamma| = " << coupling_rate
            << " rad/s)";
        throw solver_error(solver_error::kind::step_control, msg.str());
    }
}

/* phi(x) = (exp(x) - 1) / x */
complex expm1_over(complex x)
{
    if (std::abs(x) < 1e-5) {
        return 1.0 + x * (0.5 + x / 6.0);
    }
    return (std::exp(x) - 1.0) / x;
}

class gem_integrator
{
public:
    gem_integrator(const sim_grid& grid, const density_profile& density,
                   const physical_params& params, const gem_options& options,
                   const complex_trace& input) :
        m_grid(grid), m_density(density), m_params(params),
        m_options(options), m_input(input), m_nz(grid.nz),
        m_mids(grid.nz - 1), m_field(grid.nz), m_k1(grid.nz),
        m_k2(grid.nz), m_k3(grid.nz), m_k4(grid.nz), m_tmp(grid.nz),
        m_offsets(grid.nz)
    {
        for (std::size_t j = 0; j < m_nz; ++j) {
            m_offsets[j] = grid.z(j) - 0.5 * params.length;
        }
    }

    gem_run_result run(const gem_state& initial,
                       std::span<const segment> segments)
    {
        gem_run_result result;
        cvec rho = initial.rho;
        double previous_gradient = m_options.initial_gradient;

        std::size_t total_steps = 0;
        for (const auto& seg : segments) {
            total_steps += seg.steps(m_grid.dt);
        }
        result.exit.dt = m_grid.dt;
        result.exit.t0 = initial.t_now;
        result.exit.values.reserve(total_steps + 1);
        if (m_options.record_stride > 0) {
            result.fields.emplace();
            result.fields->stride = m_options.record_stride;
        }

        m_global_step = 0;
        for (const auto& seg : segments) {
            if (seg.omega_c.always_zero() && !seg.input_open) {
                advance_dark(seg, previous_gradient, rho, result);
            } else {
                advance_coupled(seg, previous_gradient, rho, result);
            }
            previous_gradient = seg.gradient(seg.duration, previous_gradient);
        }

        /* closing sample with the drive of the last segment */
        const segment& last = segments.back();
        evaluate_field(last, last.duration, rho, m_field,
                       previous_gradient_for(segments));
        result.exit.values.push_back(m_field[m_nz - 1]);
        result.max_abs_field = std::max(result.max_abs_field,
                                        max_abs(m_field));
        record(result, last.end(), rho, m_field, true);

        result.final_state.rho = std::move(rho);
        result.final_state.t_now = segments.back().end();
        result.final_gradient = previous_gradient;
        return result;
    }

private:
    double previous_gradient_for(std::span<const segment> segments) const
    {
        double g = m_options.initial_gradient;
        for (std::size_t k = 0; k + 1 < segments.size(); ++k) {
            g = segments[k].gradient(segments[k].duration, g);
        }
        return g;
    }

    double compensation(double omega_c, double delta) const
    {
        return m_options.compensate_light_shift ?
            gem_light_shift(omega_c, delta, m_params.gamma) : 0.0;
    }

    void record(gem_run_result& result, double t, std::span<const complex> rho,
                std::span<const complex> field, bool force = false)
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
        result.fields->signal.emplace_back(field.begin(), field.end());
        result.fields->coherence.emplace_back(rho.begin(), rho.end());
    }

    /* coupling off, input closed: A = 0 and rho_gh only rotates */
    void advance_dark(const segment& seg, double previous_gradient, cvec& rho,
                      gem_run_result& result)
    {
        const std::size_t n = seg.steps(m_grid.dt);
        std::fill(m_field.begin(), m_field.end(), complex{});
        for (std::size_t i = 0; i < n; ++i) {
            result.exit.values.push_back(complex{});
        }

        if (result.fields) {
            /* step-wise so that snapshots land on the grid */
            cvec start = rho;
            for (std::size_t i = 0; i < n; ++i, ++m_global_step) {
                if (m_global_step % m_options.record_stride == 0) {
                    apply_dark_phase(seg, previous_gradient,
                                     static_cast<double>(i) * m_grid.dt,
                                     start, rho);
                    record(result, seg.start + i * m_grid.dt, rho, m_field);
                }
            }
            apply_dark_phase(seg, previous_gradient, seg.duration, start, rho);
        } else {
            cvec start = rho;
            apply_dark_phase(seg, previous_gradient, seg.duration, start, rho);
            m_global_step += n;
        }
        check_rho(rho, seg.end());
    }

    void apply_dark_phase(const segment& seg, double previous_gradient,
                          double elapsed, const cvec& start, cvec& out) const
    {
        segment partial = seg;
        partial.duration = elapsed;
        const double area = partial.gradient_area(previous_gradient);
        const double decay =
            std::exp(-m_params.ground_dephasing * elapsed);
        for (std::size_t j = 0; j < m_nz; ++j) {
            const double phase =
                area * m_offsets[j] + m_params.omega0 * elapsed;
            out[j] = start[j] * decay * std::polar(1.0, phase);
        }
    }

    void evaluate_field(const segment& seg, double s, std::span<const complex> rho,
                        std::span<complex> field, double previous_gradient)
    {
        (void)previous_gradient;
        const double omega = seg.omega_c.value(s);
        const complex u =
            seg.input_open ? m_input.sample(seg.start + s) : complex{};
        m_propagator.march(u, rho, omega, m_mids, field);
    }

    /* d rho / dt at segment time s; also leaves A(z) in `field` */
    void rhs(const segment& seg, double s, double previous_gradient,
             std::span<const complex> rho, std::span<complex> field,
             std::span<complex> out)
    {
        const double omega = seg.omega_c.value(s);
        const complex u =
            seg.input_open ? m_input.sample(seg.start + s) : complex{};
        m_propagator.march(u, rho, omega, m_mids, field);

        const complex d4 = gem_denominator(seg.delta, m_params.gamma);
        const complex source = -I * omega / d4;
        const complex base = -I * omega * omega / d4 +
            I * (m_params.omega0 + compensation(omega, seg.delta)) -
            m_params.ground_dephasing;
        const double g = seg.gradient(s, previous_gradient);
        for (std::size_t j = 0; j < m_nz; ++j) {
            out[j] = source * field[j] +
                (base + I * (g * m_offsets[j])) * rho[j];
        }
    }

    void advance_coupled(const segment& seg, double previous_gradient,
                         cvec& rho, gem_run_result& result)
    {
        const std::size_t n = seg.steps(m_grid.dt);
        const double dt = m_grid.dt;
        const double max_gradient =
            std::max(std::abs(seg.gradient_sign * seg.beta),
                     std::abs(previous_gradient));
        const double max_detuning =
            max_gradient * 0.5 * m_params.length + std::abs(m_params.omega0);
        check_step(dt, max_detuning, seg.omega_c.max_value(), seg.delta,
                   m_params, m_options.step_limit);

        m_propagator = make_gem_propagator(seg.delta, m_density, m_params,
                                           m_nz, m_grid.dz);

        for (std::size_t i = 0; i < n; ++i, ++m_global_step) {
            const double s = static_cast<double>(i) * dt;
            const double t = seg.start + s;

            rhs(seg, s, previous_gradient, rho, m_field, m_k1);
            result.exit.values.push_back(m_field[m_nz - 1]);
            const double ref = std::abs(seg.input_open ?
                                            m_input.sample(t) : complex{}) +
                seg.omega_c.value(s) * max_abs(rho);
            check_field(m_field, ref, t);
            result.max_abs_field = std::max(result.max_abs_field,
                                            max_abs(m_field));
            record(result, t, rho, m_field);

            for (std::size_t j = 0; j < m_nz; ++j) {
                m_tmp[j] = rho[j] + 0.5 * dt * m_k1[j];
            }
            rhs(seg, s + 0.5 * dt, previous_gradient, m_tmp, m_field, m_k2);
            for (std::size_t j = 0; j < m_nz; ++j) {
                m_tmp[j] = rho[j] + 0.5 * dt * m_k2[j];
            }
            rhs(seg, s + 0.5 * dt, previous_gradient, m_tmp, m_field, m_k3);
            for (std::size_t j = 0; j < m_nz; ++j) {
                m_tmp[j] = rho[j] + dt * m_k3[j];
            }
            rhs(seg, s + dt, previous_gradient, m_tmp, m_field, m_k4);
            for (std::size_t j = 0; j < m_nz; ++j) {
                rho[j] += dt / 6.0 *
                    (m_k1[j] + 2.0 * m_k2[j] + 2.0 * m_k3[j] + m_k4[j]);
            }
            check_rho(rho, t + dt);
        }
    }

    const sim_grid& m_grid;
    const density_profile& m_density;
    const physical_params& m_params;
    const gem_options& m_options;
    const complex_trace& m_input;
    std::size_t m_nz;
    std::size_t m_global_step = 0;
    spatial_propagator m_propagator;
    cvec m_mids, m_field, m_k1, m_k2, m_k3, m_k4, m_tmp;
    std::vector<double> m_offsets;
};

}

double gem_detuning(double gradient, double z, const physical_params& params)
{
    return gradient * (z - 0.5 * params.length) + params.omega0;
}

double gem_light_shift(double omega_c, double delta, double gamma)
{
    return 4.0 * delta * omega_c * omega_c /
        (16.0 * delta * delta + 4.0 * gamma * gamma);
}

cvec spatial_march(std::span<const complex> rho_row, const gem_drive& drive,
                   const density_profile& density,
                   const physical_params& params, const sim_grid& grid)
{
    params.validate();
    check_density(density, grid);
    if (rho_row.size() != grid.nz) {
        throw validation_error("coherence row does not match the grid");
    }
    for (const auto& v : rho_row) {
        if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) {
            throw validation_error("coherence row contains non-finite values");
        }
    }
    const auto prop =
        make_gem_propagator(drive.delta, density, params, grid.nz, grid.dz);
    cvec mids(grid.nz - 1);
    cvec field(grid.nz);
    prop.march(drive.input, rho_row, drive.omega_c, mids, field);
    check_field(field,
                std::abs(drive.input) + drive.omega_c * max_abs(rho_row), 0.0);
    return field;
}

gem_state coherence_advance(const gem_state& state,
                            std::span<const complex> field,
                            const gem_drive& drive,
                            const physical_params& params,
                            const sim_grid& grid, double dt,
                            bool compensate_light_shift)
{
    if (state.rho.size() != grid.nz || field.size() != grid.nz) {
        throw validation_error("state or field does not match the grid");
    }
    if (!(dt > 0.0) || !std::isfinite(dt)) {
        throw validation_error("time step must be positive");
    }
    if (drive.gradient_sign < -1 || drive.gradient_sign > 1) {
        throw validation_error("gradient sign must be -1, 0 or +1");
    }
    const double gradient = drive.gradient_sign * drive.beta;
    const double omega = drive.omega_c;
    if (omega != 0.0) {
        const double max_detuning = std::abs(gradient) * 0.5 * params.length +
            std::abs(params.omega0);
        check_step(dt, max_detuning, omega, drive.delta, params, 0.1);
    }

    const complex d4 = gem_denominator(drive.delta, params.gamma);
    const complex source = -I * omega / d4;
    const double shift = compensate_light_shift ?
        gem_light_shift(omega, drive.delta, params.gamma) : 0.0;
    const complex base =
        -I * omega * omega / d4 + I * shift - params.ground_dephasing;

    gem_state next;
    next.t_now = state.t_now + dt;
    next.rho.resize(grid.nz);
    for (std::size_t j = 0; j < grid.nz; ++j) {
        const double delta_z = gem_detuning(gradient, grid.z(j), params);
        if (omega == 0.0 && params.ground_dephasing == 0.0) {
            next.rho[j] = state.rho[j] * std::polar(1.0, delta_z * dt);
            continue;
        }
        const complex lambda = base + I * delta_z;
        const complex x = lambda * dt;
        next.rho[j] = std::exp(x) * state.rho[j] +
            dt * expm1_over(x) * source * field[j];
    }
    check_rho(next.rho, next.t_now);
    return next;
}

gem_run_result gem_run(const gem_state& initial,
                       std::span<const segment> segments,
                       const complex_trace& input, const sim_grid& grid,
                       const density_profile& density,
                       const physical_params& params,
                       const gem_options& options)
{
    params.validate();
    check_density(density, grid);
    if (initial.rho.size() != grid.nz) {
        throw validation_error("initial coherence does not match the grid");
    }
    validate_segments(segments, initial.t_now, grid.dt);
    for (std::size_t k = 0; k < segments.size(); ++k) {
        if (segments[k].mode == segment_mode::eit) {
            throw validation_error("gem_run: segment " + std::to_string(k) +
                                   " is an EIT segment");
        }
    }
    if (!input.values.empty() && std::abs(input.dt - grid.dt) >
        1e-9 * grid.dt) {
        throw validation_error("input trace time step differs from the grid");
    }
    input.check_finite();
    check_rho(initial.rho, initial.t_now);

    gem_integrator integrator(grid, density, params, options, input);
    return integrator.run(initial, segments);
}

}
