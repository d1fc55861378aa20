#ifndef QMEM_SEQUENCE_HPP
#define QMEM_SEQUENCE_HPP

#include <qmem/core.hpp>
#include <qmem/eit_solver.hpp>
#include <qmem/gem_solver.hpp>
#include <qmem/schedule.hpp>
#include <qmem/signal.hpp>

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace qmem {

enum class protocol_kind { gem_eit, eit_gem, gem_only, eit_only };

/* eit_only either lets the pulse through or stops, holds and releases it */
enum class eit_only_mode { transit, store };

std::string to_string(protocol_kind p);
protocol_kind parse_protocol(const std::string& name);
std::string to_string(eit_only_mode m);
eit_only_mode parse_eit_mode(const std::string& name);

/**
 * Segment timings, s. Unset optionals are derived from the pulse and the
 * medium when the timeline is built.
 */
struct timing_config
{
    /* storage time after the write with the write gradient on */
    double t1 = 10e-6;
    /* reversed-gradient time; automatic value cancels the gradient area */
    std::optional<double> t2;
    /* coupling-on time after the last pulse lobe in a GEM write */
    double write_margin = 0.5e-6;
    /* EIT read: coupling ramp-up time (tanh) */
    double read_on_ramp = 0.5e-6;
    /* EIT write: coupling ramp-down time (tanh) */
    double stop_ramp = 1e-6;
    /* EIT write: start of the ramp-down; automatic value stops the pulse
       centroid at L/2 */
    std::optional<double> stop_time;
    /* EIT write: coupling-off time before the hand-off to GEM */
    double settle = 1.5e-6;
    /* eit_only store: coupling-off hold */
    double hold = 5e-6;
    /* GEM read: time from the read start to the echo */
    std::optional<double> read_lead;
    std::optional<double> read_duration;
    /* linear gradient switching time */
    double gradient_ramp = 0.0;
};

struct protocol_config
{
    protocol_kind protocol = protocol_kind::gem_eit;
    eit_only_mode eit_mode = eit_only_mode::store;
    physical_params params;

    std::size_t nz = 400;
    double dt = 4e-9;

    /* super-Gaussian order (0 selects a flat cloud) and width / L */
    int density_order = 4;
    double density_width = 0.8;

    /* coupling Rabi frequency while GEM segments interact, rad/s */
    double gem_coupling = 2.0 * pi * 3e6;
    /* coupling for EIT segments; unset means params.omega_c_max */
    std::optional<double> eit_coupling;
    /* single-photon detuning during EIT segments, rad/s */
    double eit_delta = 0.0;
    /* gradient sign of the GEM write; eit_gem stores with the opposite
       sign and reads with this one */
    int write_sign = 1;

    pulse_spec pulse;
    /* place the first pulse lobe's -4 sigma point at t = 0 */
    bool auto_center = true;

    detection_spec detection;
    timing_config timing;

    bool compensate_light_shift = true;
    double eit_step_limit = 0.3;
    std::size_t record_stride = 0;

    void validate() const;
    double eit_omega() const;
};

/* one segment of the executed timeline with the coherence at its end */
struct segment_record
{
    segment seg;
    std::string solver;
    cvec coherence_end;
};

struct run_result
{
    protocol_kind protocol = protocol_kind::gem_eit;
    physical_params params;
    sim_grid grid;
    density_profile density;
    pulse_spec pulse;

    complex_trace input;
    complex_trace exit;
    /* averaged detector record and its demodulated envelope */
    real_trace heterodyne;
    complex_trace detected;

    std::vector<segment_record> segments;
    /* rho_gh over z at the end of the run (S / g_P after EIT segments) */
    cvec final_coherence;
    std::optional<field_record> fields;

    double write_begin = 0.0;
    double write_end = 0.0;
    double read_begin = 0.0;
    double read_end = 0.0;

    std::map<std::string, double> metrics;
    /* echo lobes in the read window: times (s) and frequencies (rad/s) */
    std::vector<double> peak_times;
    std::vector<double> peak_freqs;
    std::vector<std::string> warnings;

    double total_duration() const;

    /* coherence at the end of the first segment with the given role */
    const cvec& coherence_after(segment_role role) const;
};

/* S = g_P rho_gh, P = A = 0 */
eit_state handoff_gem_to_eit(const gem_state& gem,
                             const physical_params& params);

/**
 * Reference scales for the hand-off check: the coupling at the hand-off
 * instant must be zero and |A|, |P| at most 1e-6 of the given maxima.
 * Zero references fall back to max |S|.
 */
struct handoff_limits
{
    double omega_c = 0.0;
    double a_ref = 0.0;
    double p_ref = 0.0;
};

/* rho_gh = S / g_P; throws solver_error(handoff) on live excitation */
gem_state handoff_eit_to_gem(const eit_state& eit,
                             const physical_params& params,
                             const handoff_limits& limits = {});

/* the timeline that run_protocol executes */
protocol_schedule build_schedule(const protocol_config& config);

/* pulse placement after auto_center */
pulse_spec placed_pulse(const protocol_config& config);

run_result run_protocol(const protocol_config& config);

/* energy-weighted centre of the pulse lobes, s */
double pulse_centroid(const pulse_spec& pulse);

/* integral of the group velocity over a coupling ramp from omega to 0 */
double ramp_travel(const physical_params& params, const coupling_ramp& ramp);

}

#endif
