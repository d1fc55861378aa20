#include <qmem/analysis.hpp>
#include <qmem/errors.hpp>

#include <fftw3.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <mutex>
#include <numeric>

namespace qmem {

namespace {

/* FFTW planning is not thread-safe; execution on distinct plans is */
std::mutex planner_mutex;

/* in-place unnormalized DFT; sign -1 is forward */
void dft(cvec& data, int sign)
{
    const int n = static_cast<int>(data.size());
    auto* ptr = reinterpret_cast<fftw_complex*>(data.data());
    fftw_plan plan;
    {
        std::lock_guard<std::mutex> lock(planner_mutex);
        plan = fftw_plan_dft_1d(n, ptr, ptr,
                                sign < 0 ? FFTW_FORWARD : FFTW_BACKWARD,
                                FFTW_ESTIMATE);
    }
    if (plan == nullptr) {
        throw analysis_error("FFT planning failed");
    }
    fftw_execute(plan);
    std::lock_guard<std::mutex> lock(planner_mutex);
    fftw_destroy_plan(plan);
}

std::size_t next_pow2(std::size_t n)
{
    std::size_t p = 1;
    while (p < n) {
        p <<= 1;
    }
    return p;
}

void require_finite_trace(const complex_trace& tr)
{
    for (const auto& v : tr.values) {
        if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) {
            throw analysis_error("trace contains NaN or Inf");
        }
    }
}

double trace_norm(const complex_trace& tr)
{
    double s = 0.0;
    for (const auto& v : tr.values) {
        s += std::norm(v);
    }
    return std::sqrt(s);
}

void check_same_step(const complex_trace& a, const complex_trace& b)
{
    if (std::abs(a.dt - b.dt) > 1e-9 * std::max(a.dt, b.dt)) {
        throw analysis_error("overlap needs traces with the same dt");
    }
}

/* max_s |sum_n conj(a[n]) b[n + s]| over every shift with overlap; the
   padding keeps negative shifts in the upper half of the circular result */
double correlation_peak(const cvec& a, const cvec& b)
{
    const std::size_t n = next_pow2(a.size() + b.size() - 1);
    cvec fa(n, complex{});
    cvec fb(n, complex{});
    std::copy(a.begin(), a.end(), fa.begin());
    std::copy(b.begin(), b.end(), fb.begin());
    dft(fa, -1);
    dft(fb, -1);
    for (std::size_t k = 0; k < n; ++k) {
        fa[k] = std::conj(fa[k]) * fb[k];
    }
    dft(fa, +1);
    double best = 0.0;
    for (const auto& v : fa) {
        best = std::max(best, std::abs(v));
    }
    return best / static_cast<double>(n);
}

double median_of(std::vector<double> v)
{
    const std::size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<long>(mid), v.end());
    double m = v[mid];
    if (v.size() % 2 == 0) {
        m = 0.5 * (m + *std::max_element(v.begin(),
                                         v.begin() + static_cast<long>(mid)));
    }
    return m;
}

/* solves the 4x4 system m x = r by Gaussian elimination with pivoting */
bool solve4(std::array<std::array<double, 4>, 4> m, std::array<double, 4>& r)
{
    for (int c = 0; c < 4; ++c) {
        int piv = c;
        for (int k = c + 1; k < 4; ++k) {
            if (std::abs(m[k][c]) > std::abs(m[piv][c])) {
                piv = k;
            }
        }
        if (m[piv][c] == 0.0) {
            return false;
        }
        std::swap(m[c], m[piv]);
        std::swap(r[c], r[piv]);
        for (int k = c + 1; k < 4; ++k) {
            const double f = m[k][c] / m[c][c];
            for (int j = c; j < 4; ++j) {
                m[k][j] -= f * m[c][j];
            }
            r[k] -= f * r[c];
        }
    }
    for (int c = 3; c >= 0; --c) {
        double s = r[c];
        for (int j = c + 1; j < 4; ++j) {
            s -= m[c][j] * r[j];
        }
        r[c] = s / m[c][c];
    }
    return true;
}

}

std::string fft_library_version()
{
    return fftw_version;
}

spectrum compute_spectrum(const complex_trace& trace, spectral_window window,
                          std::size_t pad)
{
    if (trace.size() < 8) {
        throw analysis_error("spectrum needs at least 8 samples");
    }
    require_finite_trace(trace);
    if (pad < 1) {
        pad = 1;
    }
    const std::size_t n0 = trace.size();
    const std::size_t n = n0 * pad;
    cvec data(n, complex{});
    for (std::size_t k = 0; k < n0; ++k) {
        double w = 1.0;
        if (window == spectral_window::hann) {
            w = 0.5 * (1.0 - std::cos(2.0 * pi * static_cast<double>(k) /
                                      static_cast<double>(n0 - 1)));
        }
        data[k] = w * trace.values[k];
    }
    dft(data, -1);

    spectrum s;
    s.omega.resize(n);
    s.amplitude.resize(n);
    s.magnitude.resize(n);
    const double dw = 2.0 * pi / (static_cast<double>(n) * trace.dt);
    const std::size_t half = n / 2;
    for (std::size_t j = 0; j < n; ++j) {
        /* index j holds bin j - n/2 */
        const std::size_t src = (j + n - half) % n;
        s.omega[j] = (static_cast<double>(j) - static_cast<double>(half)) * dw;
        s.amplitude[j] = data[src];
        s.magnitude[j] = std::abs(data[src]);
    }
    return s;
}

double gaussian_fit::operator()(double x) const
{
    const double u = (x - center) / sigma;
    return amplitude * std::exp(-0.5 * u * u) + baseline;
}

gaussian_fit fit_gaussian_envelope(std::span<const double> x,
                                   std::span<const double> y)
{
    const std::size_t n = x.size();
    if (n != y.size()) {
        throw analysis_error("fit: x and y lengths differ");
    }
    if (n < 5) {
        throw analysis_error("fit needs at least 5 samples");
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(x[i]) || !std::isfinite(y[i])) {
            throw analysis_error("fit data contains NaN or Inf");
        }
    }

    const auto imax = static_cast<std::size_t>(
        std::max_element(y.begin(), y.end()) - y.begin());
    const double ymax = y[imax];
    const double ymin = *std::min_element(y.begin(), y.end());
    const double med = median_of(std::vector<double>(y.begin(), y.end()));
    if (!(ymax > 0.0) || ymax < 3.0 * std::abs(med) || ymax == ymin) {
        throw analysis_error("fit: no dominant lobe (flat data)");
    }
    const double range = ymax - ymin;
    const double spacing = std::abs(x[n - 1] - x[0]) /
        static_cast<double>(n - 1);
    if (peak_find(x, y, spacing, 0.3 * range).size() > 1) {
        throw analysis_error("fit: data has several lobes; use peak_find");
    }

    /* initial guess from the half-maximum crossings around the peak */
    const double half = ymin + 0.5 * range;
    std::size_t lo = imax;
    while (lo > 0 && y[lo] > half) {
        --lo;
    }
    std::size_t hi = imax;
    while (hi + 1 < n && y[hi] > half) {
        ++hi;
    }
    double sigma0 = std::abs(x[hi] - x[lo]) / 2.3548200450309493;
    if (!(sigma0 > 0.0)) {
        sigma0 = spacing;
    }

    /* work in units where the guess is (1, 0, 1, ymin / ymax) */
    const double xc = x[imax];
    const double xs = sigma0;
    const double ys = ymax;
    std::vector<double> u(n);
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) {
        u[i] = (x[i] - xc) / xs;
        v[i] = y[i] / ys;
    }

    std::array<double, 4> p{(ymax - ymin) / ys, 0.0, 1.0, ymin / ys};
    auto cost = [&](const std::array<double, 4>& q) {
        double c = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = (u[i] - q[1]) / q[2];
            const double r = v[i] - (q[0] * std::exp(-0.5 * d * d) + q[3]);
            c += r * r;
        }
        return c;
    };

    double lambda = 1e-3;
    double c_now = cost(p);
    int iter = 0;
    bool converged = false;
    for (; iter < 200; ++iter) {
        std::array<std::array<double, 4>, 4> jtj{};
        std::array<double, 4> g{};
        for (std::size_t i = 0; i < n; ++i) {
            const double d = (u[i] - p[1]) / p[2];
            const double e = std::exp(-0.5 * d * d);
            const double r = v[i] - (p[0] * e + p[3]);
            const std::array<double, 4> jac{e, p[0] * e * d / p[2],
                                            p[0] * e * d * d / p[2], 1.0};
            for (int a = 0; a < 4; ++a) {
                g[a] += jac[a] * r;
                for (int b = 0; b < 4; ++b) {
                    jtj[a][b] += jac[a] * jac[b];
                }
            }
        }
        double gnorm = 0.0;
        for (double gi : g) {
            gnorm = std::max(gnorm, std::abs(gi));
        }
        if (gnorm < 1e-10) {
            converged = true;
            break;
        }

        bool accepted = false;
        while (lambda < 1e12) {
            auto m = jtj;
            for (int a = 0; a < 4; ++a) {
                m[a][a] += lambda * std::max(jtj[a][a], 1e-12);
            }
            auto step = g;
            if (!solve4(m, step)) {
                lambda *= 10.0;
                continue;
            }
            std::array<double, 4> trial{};
            for (int a = 0; a < 4; ++a) {
                trial[a] = p[a] + step[a];
            }
            if (trial[2] <= 0.0) {
                lambda *= 10.0;
                continue;
            }
            const double c_trial = cost(trial);
            if (c_trial <= c_now) {
                double rel = 0.0;
                for (int a = 0; a < 4; ++a) {
                    rel = std::max(rel, std::abs(step[a]) /
                                   std::max(1.0, std::abs(p[a])));
                }
                p = trial;
                c_now = c_trial;
                lambda = std::max(lambda * 0.1, 1e-12);
                accepted = true;
                if (rel < 1e-15) {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if (!accepted) {
            /* no descent direction left at machine precision */
            converged = true;
            break;
        }
        if (converged) {
            ++iter;
            break;
        }
    }
    if (!converged) {
        throw analysis_error("Gaussian fit did not converge in 200 "
                             "iterations");
    }

    gaussian_fit f;
    f.amplitude = p[0] * ys;
    f.center = xc + p[1] * xs;
    f.sigma = p[2] * xs;
    f.baseline = p[3] * ys;
    f.iterations = iter;
    double num = 0.0;
    double den = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double r = y[i] - f(x[i]);
        num += r * r;
        den += y[i] * y[i];
    }
    f.residual_l2 = den > 0.0 ? std::sqrt(num / den) : 0.0;
    return f;
}

std::vector<peak> peak_find(std::span<const double> x,
                            std::span<const double> y, double min_separation,
                            double min_prominence)
{
    if (!(min_separation > 0.0)) {
        throw validation_error("peak_find: min_separation must be positive");
    }
    if (x.size() != y.size()) {
        throw analysis_error("peak_find: x and y lengths differ");
    }
    const std::size_t n = y.size();
    std::vector<peak> cand;
    for (std::size_t i = 0; i < n; ++i) {
        const bool left_ok = (i == 0) || y[i] > y[i - 1];
        if (!left_ok) {
            continue;
        }
        /* the right side may be a plateau that eventually descends */
        std::size_t j = i;
        while (j + 1 < n && y[j + 1] == y[i]) {
            ++j;
        }
        const bool right_ok = (j + 1 == n) ? (i > 0) : y[j + 1] < y[i];
        if (!right_ok) {
            continue;
        }
        double left_min = y[i];
        for (std::size_t k = i; k-- > 0;) {
            if (y[k] > y[i]) {
                break;
            }
            left_min = std::min(left_min, y[k]);
        }
        double right_min = y[i];
        for (std::size_t k = j + 1; k < n; ++k) {
            if (y[k] > y[i]) {
                break;
            }
            right_min = std::min(right_min, y[k]);
        }
        const double prom = y[i] - std::max(left_min, right_min);
        if (prom >= min_prominence && prom > 0.0) {
            peak p;
            p.index = i;
            p.height = y[i];
            p.prominence = prom;
            p.location = x[i];
            if (i > 0 && i + 1 < n) {
                const double den = y[i - 1] - 2.0 * y[i] + y[i + 1];
                if (den < 0.0) {
                    const double off = 0.5 * (y[i - 1] - y[i + 1]) / den;
                    const double h = x[i + 1] - x[i];
                    p.location = x[i] + std::clamp(off, -0.5, 0.5) * h;
                    p.height = y[i] - 0.25 * (y[i - 1] - y[i + 1]) * off;
                }
            }
            cand.push_back(p);
        }
        i = j;
    }

    std::stable_sort(cand.begin(), cand.end(),
                     [](const peak& a, const peak& b) {
                         return a.height > b.height;
                     });
    std::vector<peak> out;
    for (const auto& c : cand) {
        bool far = true;
        for (const auto& a : out) {
            if (std::abs(a.location - c.location) < min_separation) {
                far = false;
                break;
            }
        }
        if (far) {
            out.push_back(c);
        }
    }
    std::sort(out.begin(), out.end(), [](const peak& a, const peak& b) {
        return a.location < b.location;
    });
    return out;
}

double efficiency(const complex_trace& input, const complex_trace& output,
                  double write_begin, double write_end, double read_begin,
                  double read_end)
{
    if (!(write_end > write_begin) || !(read_end > read_begin)) {
        throw analysis_error("efficiency windows must be non-empty");
    }
    const double e_in = input.energy(write_begin, write_end);
    if (!(e_in > 0.0)) {
        throw analysis_error("efficiency: input has zero energy");
    }
    return output.energy(read_begin, read_end) / e_in;
}

double time_mirror_overlap(const complex_trace& input,
                           const complex_trace& output)
{
    check_same_step(input, output);
    const double na = trace_norm(output);
    const double nb = trace_norm(input);
    if (!(na > 0.0) || !(nb > 0.0)) {
        throw analysis_error("overlap: zero-energy trace");
    }
    cvec rev(input.values.rbegin(), input.values.rend());
    return correlation_peak(output.values, rev) / (na * nb);
}

double plain_overlap(const complex_trace& input, const complex_trace& output)
{
    check_same_step(input, output);
    const double na = trace_norm(output);
    const double nb = trace_norm(input);
    if (!(na > 0.0) || !(nb > 0.0)) {
        throw analysis_error("overlap: zero-energy trace");
    }
    return correlation_peak(output.values, input.values) / (na * nb);
}

double k_centroid(std::span<const complex> row, double dz)
{
    if (row.size() < 2 || !(dz > 0.0)) {
        throw analysis_error("k_centroid needs at least 2 samples");
    }
    complex_trace tr;
    tr.values.assign(row.begin(), row.end());
    tr.dt = dz;
    if (tr.size() < 8) {
        tr.values.resize(8, complex{});
    }
    const spectrum s = compute_spectrum(tr, spectral_window::none, 4);
    double num = 0.0;
    double den = 0.0;
    for (std::size_t j = 0; j < s.omega.size(); ++j) {
        const double p = s.magnitude[j] * s.magnitude[j];
        num += s.omega[j] * p;
        den += p;
    }
    if (!(den > 0.0)) {
        throw analysis_error("k_centroid of a zero row");
    }
    return num / den;
}

std::vector<double> magnitudes(const complex_trace& trace)
{
    std::vector<double> m(trace.size());
    for (std::size_t n = 0; n < trace.size(); ++n) {
        m[n] = std::abs(trace.values[n]);
    }
    return m;
}

std::vector<double> times(const complex_trace& trace)
{
    std::vector<double> t(trace.size());
    for (std::size_t n = 0; n < trace.size(); ++n) {
        t[n] = trace.time(n);
    }
    return t;
}

}
