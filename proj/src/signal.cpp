#include <qmem/signal.hpp>
#include <qmem/errors.hpp>

#include <algorithm>
#include <cmath>

namespace qmem {

namespace {

struct component
{
    double amplitude;
    double sigma;
    double center;
    double omega;
    double phase;
};

std::vector<component> components(const pulse_spec& p)
{
    const double s2 = p.sigma_second > 0.0 ? p.sigma_second : p.sigma;
    switch (p.kind) {
    case pulse_kind::gaussian:
        return {{p.amplitude, p.sigma, p.center, p.detuning, p.phase}};
    case pulse_kind::two_tone:
        return {{p.amplitude, p.sigma, p.center,
                 p.detuning - 0.5 * p.tone_gap, p.phase},
                {p.amplitude_second, p.sigma, p.center,
                 p.detuning + 0.5 * p.tone_gap, p.phase_second}};
    case pulse_kind::double_pulse:
        return {{p.amplitude, p.sigma, p.center - 0.5 * p.separation,
                 p.detuning, p.phase},
                {p.amplitude_second, s2, p.center + 0.5 * p.separation,
                 p.detuning, p.phase_second}};
    }
    return {};
}

void require_finite(double v, const char* name)
{
    if (!std::isfinite(v)) {
        throw validation_error(std::string("pulse ") + name +
                               " must be finite");
    }
}

}

std::string to_string(pulse_kind k)
{
    switch (k) {
    case pulse_kind::gaussian:
        return "gaussian";
    case pulse_kind::two_tone:
        return "two_tone";
    case pulse_kind::double_pulse:
        return "double_pulse";
    }
    return "unknown";
}

pulse_kind parse_pulse_kind(const std::string& name)
{
    if (name == "gaussian") {
        return pulse_kind::gaussian;
    }
    if (name == "two_tone") {
        return pulse_kind::two_tone;
    }
    if (name == "double_pulse") {
        return pulse_kind::double_pulse;
    }
    throw validation_error("unknown pulse kind '" + name +
                           "' (expected gaussian, two_tone or double_pulse)");
}

void pulse_spec::validate() const
{
    require_finite(sigma, "sigma");
    require_finite(sigma_second, "sigma_second");
    require_finite(center, "center");
    require_finite(detuning, "detuning");
    require_finite(tone_gap, "tone_gap");
    require_finite(separation, "separation");
    require_finite(amplitude, "amplitude");
    require_finite(amplitude_second, "amplitude_second");
    require_finite(phase, "phase");
    require_finite(phase_second, "phase_second");
    if (sigma <= 0.0) {
        throw validation_error("pulse sigma must be positive");
    }
    if (sigma_second < 0.0) {
        throw validation_error("pulse sigma_second must be >= 0");
    }
    if (amplitude < 0.0 || amplitude_second < 0.0) {
        throw validation_error("pulse amplitudes must be >= 0");
    }
}

double pulse_spec::min_sigma() const
{
    double s = sigma;
    for (const auto& c : components(*this)) {
        s = std::min(s, c.sigma);
    }
    return s;
}

double pulse_spec::support_begin() const
{
    double t = center;
    for (const auto& c : components(*this)) {
        t = std::min(t, c.center - 4.0 * c.sigma);
    }
    return t;
}

double pulse_spec::support_end() const
{
    double t = center;
    for (const auto& c : components(*this)) {
        t = std::max(t, c.center + 4.0 * c.sigma);
    }
    return t;
}

double pulse_spec::max_offset() const
{
    double w = 0.0;
    for (const auto& c : components(*this)) {
        w = std::max(w, std::abs(c.omega));
    }
    return w;
}

complex pulse_spec::value(double t) const
{
    complex out{};
    for (const auto& c : components(*this)) {
        const double x = (t - c.center) / c.sigma;
        out += c.amplitude * std::exp(-0.5 * x * x) *
            std::polar(1.0, c.omega * t + c.phase);
    }
    return out;
}

double pulse_spec::analytic_energy() const
{
    /* integral of exp(-alpha t^2 + b t + c0) = sqrt(pi/alpha)
       exp(b^2 / (4 alpha) + c0) */
    const auto comps = components(*this);
    double e = 0.0;
    for (const auto& j : comps) {
        for (const auto& k : comps) {
            const double alpha = 0.5 / (j.sigma * j.sigma) +
                0.5 / (k.sigma * k.sigma);
            const complex b(j.center / (j.sigma * j.sigma) +
                                k.center / (k.sigma * k.sigma),
                            j.omega - k.omega);
            const double c0 = -0.5 * j.center * j.center /
                    (j.sigma * j.sigma) -
                0.5 * k.center * k.center / (k.sigma * k.sigma);
            const complex v = std::sqrt(pi / alpha) *
                std::exp(b * b / (4.0 * alpha) + c0 +
                         complex(0.0, j.phase - k.phase));
            e += j.amplitude * k.amplitude * v.real();
        }
    }
    return e;
}

complex_trace synthesize_input(const pulse_spec& spec, const sim_grid& grid,
                               double window_end, double* clipped)
{
    spec.validate();
    complex_trace tr;
    tr.dt = grid.dt;
    tr.t0 = grid.t0;
    tr.values.assign(grid.nt, complex{});

    const double tol = 1e-9 * grid.dt;
    double inside = 0.0;
    for (std::size_t n = 0; n < grid.nt; ++n) {
        const double t = grid.t(n);
        if (t > window_end + tol) {
            break;
        }
        tr.values[n] = spec.value(t);
        inside += std::norm(tr.values[n]);
    }
    inside *= grid.dt;

    if (clipped != nullptr) {
        /* same rectangle rule over a span that holds the whole pulse */
        const double lo = std::min(grid.t0, spec.support_begin() -
                                   4.0 * spec.sigma);
        const double hi = spec.support_end() + 4.0 * spec.sigma;
        const auto first = static_cast<long long>(
            std::floor((lo - grid.t0) / grid.dt));
        const auto last = static_cast<long long>(
            std::ceil((hi - grid.t0) / grid.dt));
        double total = 0.0;
        for (long long n = first; n <= last; ++n) {
            total += std::norm(spec.value(grid.t0 +
                                          static_cast<double>(n) * grid.dt));
        }
        total *= grid.dt;
        *clipped = total > 0.0 ? std::max(0.0, 1.0 - inside / total) : 0.0;
    }
    return tr;
}

void detection_spec::validate() const
{
    if (!std::isfinite(lo_offset) || !std::isfinite(noise_sigma)) {
        throw validation_error("detection parameters must be finite");
    }
    if (lo_offset == 0.0) {
        throw validation_error("detection lo_offset must be non-zero");
    }
    if (noise_sigma < 0.0) {
        throw validation_error("detection noise_sigma must be >= 0");
    }
    if (n_sequences < 1) {
        throw validation_error("detection n_sequences must be >= 1");
    }
}

real_trace heterodyne_trace(const complex_trace& field,
                            const detection_spec& det, std::mt19937_64& rng)
{
    det.validate();
    if (std::abs(det.lo_offset) * field.dt >= pi) {
        throw validation_error("LO offset aliases on the time grid "
                               "(|lo_offset| dt >= pi)");
    }
    real_trace out;
    out.dt = field.dt;
    out.t0 = field.t0;
    out.values.resize(field.size());
    std::normal_distribution<double> noise(0.0, 1.0);
    for (std::size_t n = 0; n < field.size(); ++n) {
        const complex lo = std::polar(1.0, -det.lo_offset * field.time(n));
        double v = 2.0 * (field.values[n] * lo).real();
        if (det.noise_sigma > 0.0) {
            v += det.noise_sigma * noise(rng);
        }
        out.values[n] = v;
    }
    return out;
}

real_trace coherent_average(std::span<const real_trace> traces)
{
    if (traces.empty()) {
        throw validation_error("coherent_average needs at least one trace");
    }
    real_trace out;
    out.dt = traces[0].dt;
    out.t0 = traces[0].t0;
    out.values.assign(traces[0].size(), 0.0);
    for (const auto& tr : traces) {
        if (tr.size() != out.size()) {
            throw validation_error("coherent_average: trace lengths differ");
        }
        if (tr.dt != out.dt || tr.t0 != out.t0) {
            throw validation_error("coherent_average: time axes differ");
        }
        for (std::size_t n = 0; n < tr.size(); ++n) {
            out.values[n] += tr.values[n];
        }
    }
    const double inv = 1.0 / static_cast<double>(traces.size());
    for (double& v : out.values) {
        v *= inv;
    }
    return out;
}

real_trace averaged_heterodyne(const complex_trace& field,
                               const detection_spec& det)
{
    det.validate();
    std::mt19937_64 rng(det.seed);
    if (det.noise_sigma == 0.0 || det.n_sequences == 1) {
        return heterodyne_trace(field, det, rng);
    }
    real_trace sum = heterodyne_trace(field, det, rng);
    for (std::size_t k = 1; k < det.n_sequences; ++k) {
        const real_trace tr = heterodyne_trace(field, det, rng);
        for (std::size_t n = 0; n < tr.size(); ++n) {
            sum.values[n] += tr.values[n];
        }
    }
    const double inv = 1.0 / static_cast<double>(det.n_sequences);
    for (double& v : sum.values) {
        v *= inv;
    }
    return sum;
}

demod_filter design_demod_filter(double lo_offset, double dt)
{
    const double w_lo = std::abs(lo_offset);
    demod_filter f;
    f.cutoff = 0.5 * w_lo;
    f.transition = 0.2 * w_lo;
    f.attenuation_db = 200.0;

    /* Kaiser design: N - 1 = (A - 8) / (2.285 dw) with dw in rad/sample */
    const double dw = f.transition * dt;
    const double a = f.attenuation_db;
    const double beta = 0.1102 * (a - 8.7);
    auto half = static_cast<std::size_t>(
        std::ceil((a - 8.0) / (2.285 * dw) / 2.0));
    half = std::max<std::size_t>(half, 1);
    const std::size_t ntaps = 2 * half + 1;

    const double wc = f.cutoff * dt;
    const double i0_beta = std::cyl_bessel_i(0.0, beta);
    f.taps.resize(ntaps);
    double sum = 0.0;
    for (std::size_t k = 0; k < ntaps; ++k) {
        const double m = static_cast<double>(k) - static_cast<double>(half);
        const double r = m / static_cast<double>(half);
        const double win =
            std::cyl_bessel_i(0.0, beta * std::sqrt(std::max(0.0,
                                                             1.0 - r * r))) /
            i0_beta;
        const double sinc = (m == 0.0) ? wc / pi
                                       : std::sin(wc * m) / (pi * m);
        f.taps[k] = sinc * win;
        sum += f.taps[k];
    }
    for (double& h : f.taps) {
        h /= sum;
    }
    return f;
}

complex_trace demodulate(const real_trace& trace, const detection_spec& det,
                         double band)
{
    det.validate();
    const double w_lo = std::abs(det.lo_offset);
    if (!(band >= 0.0) || band > 0.4 * w_lo) {
        throw validation_error(
            "single-sideband condition violated: signal band " +
            std::to_string(band / (2.0 * pi * 1e6)) +
            " MHz exceeds 0.4 |lo_offset| = " +
            std::to_string(0.4 * w_lo / (2.0 * pi * 1e6)) + " MHz");
    }
    if (w_lo * trace.dt >= pi) {
        throw validation_error("LO offset aliases on the time grid "
                               "(|lo_offset| dt >= pi)");
    }

    const std::size_t n = trace.size();
    cvec shifted(n);
    for (std::size_t k = 0; k < n; ++k) {
        shifted[k] = trace.values[k] *
            std::polar(1.0, det.lo_offset * trace.time(k));
    }

    const demod_filter f = design_demod_filter(det.lo_offset, trace.dt);
    const auto half = static_cast<long long>(f.taps.size() / 2);
    const auto len = static_cast<long long>(n);

    complex_trace out;
    out.dt = trace.dt;
    out.t0 = trace.t0;
    out.values.assign(n, complex{});
    for (long long k = 0; k < len; ++k) {
        const long long lo = std::max(-half, k - len + 1);
        const long long hi = std::min(half, k);
        complex acc{};
        for (long long m = lo; m <= hi; ++m) {
            acc += f.taps[static_cast<std::size_t>(m + half)] *
                shifted[static_cast<std::size_t>(k - m)];
        }
        out.values[static_cast<std::size_t>(k)] = acc;
    }
    return out;
}

double pulse_band(const pulse_spec& spec)
{
    return spec.max_offset() + 3.0 / spec.min_sigma();
}

}
