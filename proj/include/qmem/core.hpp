#ifndef QMEM_CORE_HPP
#define QMEM_CORE_HPP

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace qmem {

using complex = std::complex<double>;
using cvec = std::vector<complex>;

inline constexpr double pi = 3.14159265358979323846;
inline constexpr double speed_of_light = 299792458.0;

/**
 * Atomic and optical constants of the Lambda-type ensemble, SI units with
 * angular frequencies in rad/s.
 */
struct physical_params
{
    /* on-resonance optical depth of the whole cloud */
    double od = 80.0;

    /* excited-state decay rate, rad/s */
    double gamma = 2.0 * pi * 5.75e6;

    /* medium length, m */
    double length = 10e-3;

    /* two-photon detuning gradient, rad/(s m); sign sets the direction */
    double beta = 2.0 * pi * 1e6 / 10e-3;

    /* single-photon detuning, rad/s */
    double delta = 2.0 * pi * 30e6;

    /* peak coupling Rabi frequency, rad/s */
    double omega_c_max = 2.0 * pi * 6.9e6;

    double c_light = speed_of_light;

    /* offset of the two-photon resonance, rad/s */
    double omega0 = 0.0;

    /* ground-state dephasing rate, 1/s */
    double ground_dephasing = 0.0;

    /* throws validation_error when an invariant is violated */
    void validate() const;

    /* collective coupling g_P = sqrt(c Gamma OD / L) */
    double coupling_rate() const;

    /* memory bandwidth beta L / 2pi in Hz */
    double memory_bandwidth_hz() const;
};

/**
 * Uniform discretization of z in [0, length] and t in [t0, t0 + (nt-1) dt].
 */
struct sim_grid
{
    std::size_t nz = 0;
    std::size_t nt = 0;
    double dz = 0.0;
    double dt = 0.0;
    double t0 = 0.0;
    double length = 0.0;

    double z(std::size_t j) const { return static_cast<double>(j) * dz; }
    double t(std::size_t n) const { return t0 + static_cast<double>(n) * dt; }
    double duration() const { return static_cast<double>(nt - 1) * dt; }

    /* nearest grid index, clamped to the grid */
    std::size_t z_index(double z) const;
    std::size_t t_index(double t) const;
};

sim_grid make_grid(const physical_params& params, std::size_t nz,
                   double duration, double dt, double t0 = 0.0);

/**
 * Normalized atomic density n(z) with (1/L) integral n dz = 1, so the
 * configured OD is the total optical depth regardless of shape.
 *
 * Samples are held at the grid points and at the interval midpoints; the
 * normalization integral is the Simpson rule over those points, which is
 * the quadrature the spatial integrators apply.
 */
struct density_profile
{
    /* super-Gaussian exponent m; 0 marks a flat profile */
    int order = 0;
    double width = 0.0;
    std::vector<double> samples;
    std::vector<double> midpoints;

    double max() const;
};

density_profile sample_density(int order, double width, const sim_grid& grid);
density_profile flat_density(const sim_grid& grid);

/* Simpson integral over grid values plus interval midpoints */
double integrate_with_midpoints(std::span<const double> values,
                                std::span<const double> mids, double dz);

struct complex_trace
{
    cvec values;
    double dt = 0.0;
    double t0 = 0.0;

    std::size_t size() const { return values.size(); }
    double time(std::size_t n) const
    {
        return t0 + static_cast<double>(n) * dt;
    }
    double end_time() const
    {
        return values.empty() ? t0 : time(values.size() - 1);
    }

    /* cubic interpolation at an arbitrary time, zero outside the trace */
    complex sample(double t) const;

    /* rectangle-rule integral of |A|^2 over [t_begin, t_end) */
    double energy(double t_begin, double t_end) const;
    double energy() const;

    void check_finite() const;
};

/**
 * Space-time snapshots taken every `stride` time steps: the signal field and
 * the ground-state coherence rho_gh over z.
 */
struct field_record
{
    std::size_t stride = 0;
    std::vector<double> times;
    std::vector<cvec> signal;
    std::vector<cvec> coherence;

    void append(const field_record& other);
};

/**
 * Values as written in configuration documents: ordinary frequencies in
 * MHz, times in microseconds, lengths in millimetres.
 */
struct lab_params
{
    double od = 80.0;
    double gamma_mhz = 5.75;
    double length_mm = 10.0;
    double gradient_mhz_per_mm = 0.1;
    double delta_mhz = 30.0;
    double omega_c_max_mhz = 6.9;
    double c_light = speed_of_light;
    double omega0_mhz = 0.0;
    double ground_dephasing_per_us = 0.0;
};

double mhz_to_rad_s(double f_mhz);
double rad_s_to_mhz(double omega);
double us_to_s(double t_us);
double s_to_us(double t);
double mm_to_m(double l_mm);
double m_to_mm(double l);

physical_params convert_units(const lab_params& lab);
lab_params to_lab_units(const physical_params& params);

/*
 * Cubic (4-point Lagrange) values at the nz-1 interval midpoints of f.
 * Boundary intervals use one-sided stencils; grids of 2 or 3 points fall
 * back to linear or quadratic interpolation.
 */
template <typename T>
void interval_midpoints(std::span<const T> f, std::span<T> mids)
{
    const std::size_t n = f.size();
    if (n < 2) {
        return;
    }
    if (n == 2) {
        mids[0] = 0.5 * (f[0] + f[1]);
        return;
    }
    if (n == 3) {
        mids[0] = (3.0 * f[0] + 6.0 * f[1] - f[2]) / 8.0;
        mids[1] = (-f[0] + 6.0 * f[1] + 3.0 * f[2]) / 8.0;
        return;
    }
    mids[0] = (5.0 * f[0] + 15.0 * f[1] - 5.0 * f[2] + f[3]) / 16.0;
    for (std::size_t j = 1; j + 2 < n; ++j) {
        mids[j] = (9.0 * (f[j] + f[j + 1]) - f[j - 1] - f[j + 2]) / 16.0;
    }
    mids[n - 2] = (f[n - 4] - 5.0 * f[n - 3] + 15.0 * f[n - 2] +
                   5.0 * f[n - 1]) / 16.0;
}

}

#endif
