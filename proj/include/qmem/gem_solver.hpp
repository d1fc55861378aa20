#ifndef QMEM_GEM_SOLVER_HPP
#define QMEM_GEM_SOLVER_HPP

#include <qmem/core.hpp>
#include <qmem/schedule.hpp>

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace qmem {

/* ground-state coherence rho_gh over z at time t_now */
struct gem_state
{
    cvec rho;
    double t_now = 0.0;
};

/* instantaneous drive of the gradient-echo system */
struct gem_drive
{
    double omega_c = 0.0;
    double delta = 0.0;
    int gradient_sign = 0;
    double beta = 0.0;
    /* boundary value A(t, z = 0) */
    complex input{};
};

struct gem_options
{
    /*
     * Retune the two-photon resonance by the coupling light shift
     * 4 Delta Omega^2 / (16 Delta^2 + 4 Gamma^2) while the coupling is on,
     * so that rho_gh at z = L/2 + omega/beta is resonant with input detuning
     * omega.
     */
    bool compensate_light_shift = true;

    /* record fields every `record_stride` steps; 0 disables recording */
    std::size_t record_stride = 0;

    /* bound on dt * max(|delta(z)|, Omega^2 / |4 Delta + 2i Gamma|) */
    double step_limit = 0.1;

    /* gradient value before the first segment, for gradient ramps */
    double initial_gradient = 0.0;
};

struct gem_run_result
{
    /* A(t, z = L) sampled at every grid time of the run, both ends included */
    complex_trace exit;
    gem_state final_state;
    std::optional<field_record> fields;
    /* largest |A(t, z)| seen anywhere during the run */
    double max_abs_field = 0.0;
    /* gradient value at the end of the run */
    double final_gradient = 0.0;
};

/* two-photon detuning delta(z) = g (z - L/2) + omega0 */
double gem_detuning(double gradient, double z, const physical_params& params);

/* rotation rate removed from rho_gh when light-shift compensation is on */
double gem_light_shift(double omega_c, double delta, double gamma);

/**
 * Integrates dA/dz = -i n(z) OD Gamma / (L (4 Delta + 2i Gamma))
 * (Omega_C rho_gh + A) from z = 0 with A(0) = drive.input, using fourth
 * order steps in dz.
 */
cvec spatial_march(std::span<const complex> rho_row, const gem_drive& drive,
                   const density_profile& density,
                   const physical_params& params, const sim_grid& grid);

/**
 * Advances rho_gh by dt holding the field A fixed. Each z-point is a
 * scalar linear ODE, integrated exactly; with Omega_C = 0 the update is
 * the phase factor exp(i delta(z) dt).
 */
gem_state coherence_advance(const gem_state& state,
                            std::span<const complex> field,
                            const gem_drive& drive,
                            const physical_params& params,
                            const sim_grid& grid, double dt,
                            bool compensate_light_shift = true);

/**
 * Runs the coupled system over a list of gem/dark segments that tile the
 * run from initial.t_now. Coupling-on segments use RK4 in time where every
 * stage re-integrates the field along z from the stage coherence. Segments
 * with the coupling off and the input closed are advanced analytically.
 */
gem_run_result gem_run(const gem_state& initial,
                       std::span<const segment> segments,
                       const complex_trace& input, const sim_grid& grid,
                       const density_profile& density,
                       const physical_params& params,
                       const gem_options& options = {});

}

#endif
