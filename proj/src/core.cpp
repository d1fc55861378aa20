#include <qmem/core.hpp>
#include <qmem/errors.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace qmem {

namespace {

void require_finite(double v, const char* name)
{
    if (!std::isfinite(v)) {
        throw validation_error(std::string(name) + " must be finite");
    }
}

}

void physical_params::validate() const
{
    require_finite(od, "od");
    require_finite(gamma, "gamma");
    require_finite(length, "length");
    require_finite(beta, "beta");
    require_finite(delta, "delta");
    require_finite(omega_c_max, "omega_c_max");
    require_finite(c_light, "c_light");
    require_finite(omega0, "omega0");
    require_finite(ground_dephasing, "ground_dephasing");
    /* od = 0 is accepted: it is the free-propagation limit */
    if (od < 0.0) {
        throw validation_error("od must be non-negative");
    }
    if (gamma <= 0.0) {
        throw validation_error("gamma must be positive");
    }
    if (length <= 0.0) {
        throw validation_error("length must be positive");
    }
    if (omega_c_max < 0.0) {
        throw validation_error("omega_c_max must be non-negative");
    }
    if (c_light <= 0.0) {
        throw validation_error("c_light must be positive");
    }
    if (ground_dephasing < 0.0) {
        throw validation_error("ground_dephasing must be non-negative");
    }
}

double physical_params::coupling_rate() const
{
    return std::sqrt(c_light * gamma * od / length);
}

double physical_params::memory_bandwidth_hz() const
{
    return std::abs(beta) * length / (2.0 * pi);
}

std::size_t sim_grid::z_index(double zv) const
{
    const double x = std::round(zv / dz);
    if (x <= 0.0) {
        return 0;
    }
    return std::min(static_cast<std::size_t>(x), nz - 1);
}

std::size_t sim_grid::t_index(double tv) const
{
    const double x = std::round((tv - t0) / dt);
    if (x <= 0.0) {
        return 0;
    }
    return std::min(static_cast<std::size_t>(x), nt - 1);
}

sim_grid make_grid(const physical_params& params, std::size_t nz,
                   double duration, double dt, double t0)
{
    if (nz < 2) {
        throw validation_error("grid needs at least 2 spatial points");
    }
    if (!std::isfinite(duration) || !std::isfinite(dt) || dt <= 0.0) {
        throw validation_error("time step must be positive and finite");
    }
    if (duration < dt) {
        throw validation_error("duration must be at least one time step");
    }
    if (!(params.length > 0.0)) {
        throw validation_error("length must be positive");
    }
    const double steps = duration / dt;
    const double rounded = std::round(steps);
    if (std::abs(steps - rounded) > 1e-6 * std::max(1.0, steps)) {
        std::ostringstream msg;
        msg << "duration " << duration << " s is not a multiple of dt "
            << dt << " s";
        throw validation_error(msg.str());
    }

    sim_grid g;
    g.nz = nz;
    g.nt = static_cast<std::size_t>(rounded) + 1;
    g.length = params.length;
    g.dz = params.length / static_cast<double>(nz - 1);
    g.dt = dt;
    g.t0 = t0;
    return g;
}

double integrate_with_midpoints(std::span<const double> values,
                                std::span<const double> mids, double dz)
{
    double sum = 0.0;
    for (std::size_t j = 0; j + 1 < values.size(); ++j) {
        sum += values[j] + 4.0 * mids[j] + values[j + 1];
    }
    return sum * dz / 6.0;
}

double density_profile::max() const
{
    double m = 0.0;
    for (double v : samples) {
        m = std::max(m, v);
    }
    for (double v : midpoints) {
        m = std::max(m, v);
    }
    return m;
}

namespace {

void normalize(density_profile& p, const sim_grid& grid)
{
    const double total =
        integrate_with_midpoints(p.samples, p.midpoints, grid.dz);
    if (!(total > 0.0)) {
        throw validation_error("density profile integrates to zero");
    }
    const double scale = grid.length / total;
    for (double& v : p.samples) {
        v *= scale;
    }
    for (double& v : p.midpoints) {
        v *= scale;
    }
}

}

density_profile sample_density(int order, double width, const sim_grid& grid)
{
    if (order < 1) {
        throw validation_error("super-Gaussian order must be >= 1");
    }
    if (!std::isfinite(width) || width <= 0.0) {
        throw validation_error("super-Gaussian width must be positive");
    }

    density_profile p;
    p.order = order;
    p.width = width;
    p.samples.resize(grid.nz);
    p.midpoints.resize(grid.nz - 1);

    const double centre = 0.5 * grid.length;
    auto shape = [&](double z) {
        const double u = 2.0 * (z - centre) / width;
        return std::exp(-std::pow(u * u, order));
    };
    for (std::size_t j = 0; j < grid.nz; ++j) {
        p.samples[j] = shape(grid.z(j));
    }
    for (std::size_t j = 0; j + 1 < grid.nz; ++j) {
        p.midpoints[j] = shape(grid.z(j) + 0.5 * grid.dz);
    }
    normalize(p, grid);
    return p;
}

density_profile flat_density(const sim_grid& grid)
{
    density_profile p;
    p.order = 0;
    p.width = grid.length;
    p.samples.assign(grid.nz, 1.0);
    p.midpoints.assign(grid.nz - 1, 1.0);
    return p;
}

complex complex_trace::sample(double t) const
{
    const std::size_t n = values.size();
    if (n == 0) {
        return {};
    }
    const double x = (t - t0) / dt;
    const double last = static_cast<double>(n - 1);
    const double eps = 1e-9;
    if (x < -eps || x > last + eps) {
        return {};
    }
    const double xc = std::clamp(x, 0.0, last);
    auto i = static_cast<std::size_t>(std::floor(xc));
    if (i >= n - 1) {
        return values[n - 1];
    }
    const double theta = xc - static_cast<double>(i);
    if (theta == 0.0) {
        return values[i];
    }
    if (n < 4) {
        return (1.0 - theta) * values[i] + theta * values[i + 1];
    }

    /* 4-point stencil k..k+3 containing [i, i+1], shifted at the ends */
    std::size_t k = (i == 0) ? 0 : i - 1;
    if (k + 3 >= n) {
        k = n - 4;
    }
    const double s = xc - static_cast<double>(k);
    complex out{};
    for (std::size_t a = 0; a < 4; ++a) {
        double w = 1.0;
        for (std::size_t b = 0; b < 4; ++b) {
            if (b != a) {
                w *= (s - static_cast<double>(b)) /
                    (static_cast<double>(a) - static_cast<double>(b));
            }
        }
        out += w * values[k + a];
    }
    return out;
}

double complex_trace::energy(double t_begin, double t_end) const
{
    double e = 0.0;
    const double tol = 1e-6 * dt;
    for (std::size_t n = 0; n < values.size(); ++n) {
        const double tn = time(n);
        if (tn >= t_begin - tol && tn < t_end - tol) {
            e += std::norm(values[n]);
        }
    }
    return e * dt;
}

double complex_trace::energy() const
{
    double e = 0.0;
    for (const auto& v : values) {
        e += std::norm(v);
    }
    return e * dt;
}

void complex_trace::check_finite() const
{
    for (std::size_t n = 0; n < values.size(); ++n) {
        if (!std::isfinite(values[n].real()) ||
            !std::isfinite(values[n].imag())) {
            throw validation_error("trace contains a non-finite sample at "
                                   "index " + std::to_string(n));
        }
    }
}

void field_record::append(const field_record& other)
{
    if (stride == 0) {
        stride = other.stride;
    }
    times.insert(times.end(), other.times.begin(), other.times.end());
    signal.insert(signal.end(), other.signal.begin(), other.signal.end());
    coherence.insert(coherence.end(), other.coherence.begin(),
                     other.coherence.end());
}

double mhz_to_rad_s(double f_mhz) { return 2.0 * pi * f_mhz * 1e6; }
double rad_s_to_mhz(double omega) { return omega / (2.0 * pi * 1e6); }
double us_to_s(double t_us) { return t_us * 1e-6; }
double s_to_us(double t) { return t * 1e6; }
double mm_to_m(double l_mm) { return l_mm * 1e-3; }
double m_to_mm(double l) { return l * 1e3; }

physical_params convert_units(const lab_params& lab)
{
    require_finite(lab.od, "od");
    require_finite(lab.gamma_mhz, "gamma");
    require_finite(lab.length_mm, "length");
    require_finite(lab.gradient_mhz_per_mm, "gradient");
    require_finite(lab.delta_mhz, "delta");
    require_finite(lab.omega_c_max_mhz, "omega_c_max");
    require_finite(lab.c_light, "c_light");
    require_finite(lab.omega0_mhz, "omega0");
    require_finite(lab.ground_dephasing_per_us, "ground_dephasing");

    physical_params p;
    p.od = lab.od;
    p.gamma = mhz_to_rad_s(lab.gamma_mhz);
    p.length = mm_to_m(lab.length_mm);
    /* MHz/mm -> (rad/s)/m */
    p.beta = mhz_to_rad_s(lab.gradient_mhz_per_mm) / mm_to_m(1.0);
    p.delta = mhz_to_rad_s(lab.delta_mhz);
    p.omega_c_max = mhz_to_rad_s(lab.omega_c_max_mhz);
    p.c_light = lab.c_light;
    p.omega0 = mhz_to_rad_s(lab.omega0_mhz);
    p.ground_dephasing = lab.ground_dephasing_per_us / us_to_s(1.0);
    return p;
}

lab_params to_lab_units(const physical_params& params)
{
    lab_params lab;
    lab.od = params.od;
    lab.gamma_mhz = rad_s_to_mhz(params.gamma);
    lab.length_mm = m_to_mm(params.length);
    lab.gradient_mhz_per_mm = rad_s_to_mhz(params.beta) * mm_to_m(1.0);
    lab.delta_mhz = rad_s_to_mhz(params.delta);
    lab.omega_c_max_mhz = rad_s_to_mhz(params.omega_c_max);
    lab.c_light = params.c_light;
    lab.omega0_mhz = rad_s_to_mhz(params.omega0);
    lab.ground_dephasing_per_us = params.ground_dephasing * us_to_s(1.0);
    return lab;
}

}
