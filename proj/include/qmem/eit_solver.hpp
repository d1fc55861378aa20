#ifndef QMEM_EIT_SOLVER_HPP
#define QMEM_EIT_SOLVER_HPP

#include <qmem/core.hpp>
#include <qmem/schedule.hpp>

#include <optional>
#include <span>
#include <vector>

namespace qmem {

/* signal A, polarization P = g_P rho_ge and spin wave S = g_P rho_gh over z */
struct eit_state
{
    cvec a;
    cvec p;
    cvec s;
    double t_now = 0.0;

    static eit_state zero(std::size_t nz, double t = 0.0);
};

struct eit_options
{
    /* RK4 sub-steps per grid step; 0 picks the smallest stable count */
    std::size_t substeps = 0;

    /* bound on h * (fastest local or collective rate) per sub-step */
    double step_limit = 0.3;

    std::size_t record_stride = 0;
    double initial_gradient = 0.0;

    /*
     * damping of P in place of Gamma/2; g_P keeps using Gamma. Setting 0
     * gives the lossless system.
     */
    std::optional<double> polarization_decay;
};

struct eit_run_result
{
    complex_trace exit;
    eit_state final_state;
    std::optional<field_record> fields;

    /* S(z) at the first grid time where the coupling is fully off */
    std::optional<cvec> stop_snapshot;
    double stop_time = 0.0;

    double max_abs_a = 0.0;
    double max_abs_p = 0.0;

    /* (c / g_P^2) times the time integrals of |A(L)|^2 and |A(0)|^2 */
    double exit_flux = 0.0;
    double entrance_flux = 0.0;

    std::size_t substeps = 0;
    double final_gradient = 0.0;
};

/*
 * v_g = c Omega^2 / (Omega^2 + g_P^2); zero with the coupling off and c
 * in an empty medium.
 */
double group_velocity(const physical_params& params, double omega_c);

/*
 * (1/g_P^2) times the integral of |A|^2 + n (|P|^2 + |S|^2) over the medium;
 * zero for an empty medium. Together with (c/g_P^2) times the fluence
 * through the faces it is the balance conserved by the lossless system.
 */
double eit_excitation(const eit_state& state, const density_profile& density,
                      const physical_params& params, const sim_grid& grid);

/**
 * Integrates the slow-light system in the retarded frame tau = t - z/c:
 *
 *     dA/dz = i g_P n(z) / (2c) P
 *     dP/dt = (-Gamma/2 + i Delta) P + i g_P/2 A + i Omega/2 S
 *     dS/dt = i Omega/2 P + (i delta(z) - gamma_d) S
 *
 * over eit/dark segments. A is re-integrated along z at every RK4 stage.
 */
eit_run_result eit_run(const eit_state& initial,
                       std::span<const segment> segments,
                       const complex_trace& input, const sim_grid& grid,
                       const density_profile& density,
                       const physical_params& params,
                       const eit_options& options = {});

/* |S(z)| at the stop instant of a run */
std::vector<double> stopped_spinwave_profile(const eit_run_result& result);

}

#endif
