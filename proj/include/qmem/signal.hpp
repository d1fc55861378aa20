#ifndef QMEM_SIGNAL_HPP
#define QMEM_SIGNAL_HPP

#include <qmem/core.hpp>

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace qmem {

enum class pulse_kind { gaussian, two_tone, double_pulse };

std::string to_string(pulse_kind k);
pulse_kind parse_pulse_kind(const std::string& name);

/**
 * Input envelope A(t, z = 0). Every component is
 * a exp(-(t - t_c)^2 / (2 sigma^2)) exp(i (omega t + phi)).
 *
 * gaussian:     one component at `detuning`.
 * two_tone:     two components sharing `center`, at detuning -+ tone_gap/2.
 * double_pulse: two components at center -+ separation/2, both at
 *               `detuning`; the second uses sigma_second when it is set.
 */
struct pulse_spec
{
    pulse_kind kind = pulse_kind::gaussian;
    double sigma = 2.5e-6;
    /* second lobe width for double_pulse; 0 means equal to sigma */
    double sigma_second = 0.0;
    double center = 0.0;
    double detuning = 0.0;
    double tone_gap = 2.0 * pi * 1e6;
    double separation = 1e-6;
    double amplitude = 1.0;
    double amplitude_second = 1.0;
    double phase = 0.0;
    double phase_second = 0.0;

    void validate() const;

    /* smallest component width */
    double min_sigma() const;

    /* [first peak - 4 sigma, last peak + 4 sigma] */
    double support_begin() const;
    double support_end() const;

    /* largest |carrier offset| of any component, rad/s */
    double max_offset() const;

    complex value(double t) const;

    /* sum of the component energies a^2 sigma sqrt(pi), cross terms
       included */
    double analytic_energy() const;
};

/**
 * Samples the pulse on [grid.t0, window_end]; the trace spans the whole
 * grid and is zero after window_end. `clipped` receives the fraction of
 * the pulse energy outside the window.
 */
complex_trace synthesize_input(const pulse_spec& spec, const sim_grid& grid,
                               double window_end, double* clipped = nullptr);

/* real detector record */
struct real_trace
{
    std::vector<double> values;
    double dt = 0.0;
    double t0 = 0.0;

    std::size_t size() const { return values.size(); }
    double time(std::size_t n) const
    {
        return t0 + static_cast<double>(n) * dt;
    }
};

struct detection_spec
{
    /* local-oscillator offset, rad/s */
    double lo_offset = 2.0 * pi * 5e6;
    /* standard deviation of the additive detector noise per sample */
    double noise_sigma = 0.0;
    std::size_t n_sequences = 1;
    std::uint64_t seed = 1;

    void validate() const;
};

/* v(t) = 2 Re[A(t) exp(-i w_LO t)] + noise; rejects |w_LO| dt >= pi */
real_trace heterodyne_trace(const complex_trace& field,
                            const detection_spec& det, std::mt19937_64& rng);

/* samplewise mean of traces sharing length, dt and t0 */
real_trace coherent_average(std::span<const real_trace> traces);

/* coherent average of n_sequences noisy beat notes of the same field,
   drawn from one generator seeded with det.seed */
real_trace averaged_heterodyne(const complex_trace& field,
                               const detection_spec& det);

/* low-pass filter used by demodulate */
struct demod_filter
{
    std::vector<double> taps;
    /* cutoff and transition width, rad/s */
    double cutoff = 0.0;
    double transition = 0.0;
    double attenuation_db = 0.0;
};

demod_filter design_demod_filter(double lo_offset, double dt);

/**
 * Shifts the beat note back to baseband with exp(+i w_LO t) and removes
 * the image at -2 w_LO with a Kaiser-windowed sinc of cutoff |w_LO|/2.
 * `band` is the half-width of the signal band around zero offset, rad/s;
 * it must stay inside the filter passband (0.4 |w_LO|).
 */
complex_trace demodulate(const real_trace& trace, const detection_spec& det,
                         double band);

/* signal band half-width used for a pulse: max offset + 3 / sigma_min */
double pulse_band(const pulse_spec& spec);

}

#endif
