#ifndef QMEM_ANALYSIS_HPP
#define QMEM_ANALYSIS_HPP

#include <qmem/core.hpp>

#include <span>
#include <string>
#include <vector>

namespace qmem {

enum class spectral_window { none, hann };

/**
 * Unnormalized DFT X_k = sum_n x_n exp(-i w_k (t_n - t_0)), so that
 * sum |x|^2 = (1/N) sum |X|^2 with N the transform length. The axis is in
 * rad/s, ascending, with zero frequency at index N/2.
 */
struct spectrum
{
    std::vector<double> omega;
    cvec amplitude;
    std::vector<double> magnitude;

    double bin_width() const
    {
        return omega.size() > 1 ? omega[1] - omega[0] : 0.0;
    }
};

/* `pad` > 1 appends zeros up to pad times the trace length */
/* version string of the FFT library */
std::string fft_library_version();

spectrum compute_spectrum(const complex_trace& trace,
                          spectral_window window = spectral_window::none,
                          std::size_t pad = 1);

/* y = amplitude exp(-(x - center)^2 / (2 sigma^2)) + baseline */
struct gaussian_fit
{
    double amplitude = 0.0;
    double center = 0.0;
    double sigma = 0.0;
    double baseline = 0.0;
    /* ||y - model|| / ||y|| */
    double residual_l2 = 0.0;
    int iterations = 0;

    double operator()(double x) const;
};

/**
 * Levenberg-Marquardt fit started from the moments of the data above its
 * minimum. Requires a single dominant lobe: the peak must be at least
 * three times the median and no second lobe above a quarter of the
 * range may be present.
 */
gaussian_fit fit_gaussian_envelope(std::span<const double> x,
                                   std::span<const double> y);

struct peak
{
    double location = 0.0;
    double height = 0.0;
    double prominence = 0.0;
    std::size_t index = 0;
};

/**
 * Local maxima with prominence >= min_prominence, accepted greedily from
 * the highest down when at least min_separation (in x units) from every
 * accepted peak. Locations are refined by a 3-point parabola; the list is
 * sorted by location.
 */
std::vector<peak> peak_find(std::span<const double> x,
                            std::span<const double> y, double min_separation,
                            double min_prominence);

/* energy of output over [read_begin, read_end) divided by the energy of
   input over [write_begin, write_end) */
double efficiency(const complex_trace& input, const complex_trace& output,
                  double write_begin, double write_end, double read_begin,
                  double read_end);

/*
 * max over tau of |integral conj(out(t)) in(tau - t) dt| / (||out|| ||in||),
 * evaluated at whole-sample shifts.
 */
double time_mirror_overlap(const complex_trace& input,
                           const complex_trace& output);

/* the same without the time reversal: in(t - tau) */
double plain_overlap(const complex_trace& input,
                     const complex_trace& output);

/* power-weighted mean wavenumber of a field sampled at spacing dz, rad/m;
   a row proportional to exp(i k z) gives k */
double k_centroid(std::span<const complex> row, double dz);

/* magnitudes of a trace */
std::vector<double> magnitudes(const complex_trace& trace);

/* sample times of a trace */
std::vector<double> times(const complex_trace& trace);

}

#endif
