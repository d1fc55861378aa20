#include <qmem/sequence.hpp>
#include <qmem/analysis.hpp>
#include <qmem/errors.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace qmem {

namespace {

constexpr double nan_value = std::numeric_limits<double>::quiet_NaN();

enum class solver_kind { gem, eit };

struct timeline
{
    protocol_schedule schedule;
    /* gradient area is checked over [phase_ref, echo_time] */
    bool check_area = false;
    double phase_ref = 0.0;
    double echo_time = 0.0;
};

double snap(double duration, double dt)
{
    return std::max(1.0, std::round(duration / dt)) * dt;
}

void require_positive(double v, const char* name)
{
    if (!std::isfinite(v) || v <= 0.0) {
        throw validation_error(std::string(name) + " must be positive");
    }
}

void require_non_negative(double v, const char* name)
{
    if (!std::isfinite(v) || v < 0.0) {
        throw validation_error(std::string(name) + " must be >= 0");
    }
}

solver_kind solver_for(const segment& seg)
{
    switch (seg.mode) {
    case segment_mode::gem:
        return solver_kind::gem;
    case segment_mode::eit:
        return solver_kind::eit;
    case segment_mode::dark:
        break;
    }
    /* coupling-off holds after an EIT write stay in the EIT picture so that
       residual light can leave; gradient phases belong to GEM */
    return seg.role == segment_role::hold ? solver_kind::eit
                                          : solver_kind::gem;
}

segment make_segment(double duration, segment_mode mode, segment_role role,
                     int sign, const coupling_ramp& omega, double delta,
                     bool input_open, const protocol_config& c)
{
    segment s;
    s.duration = duration;
    s.mode = mode;
    s.role = role;
    s.gradient_sign = sign;
    s.beta = c.params.beta;
    s.omega_c = omega;
    s.delta = delta;
    s.input_open = input_open;
    s.gradient_ramp = sign != 0 ? c.timing.gradient_ramp : 0.0;
    return s;
}

double slow_light_time(const protocol_config& c)
{
    return c.params.length / group_velocity(c.params, c.eit_omega());
}

/* EIT write whose coupling is ramped to zero with the pulse inside */
double eit_stop_start(const protocol_config& c, const pulse_spec& p)
{
    if (c.timing.stop_time) {
        return *c.timing.stop_time;
    }
    const double vg = group_velocity(c.params, c.eit_omega());
    const auto ramp = coupling_ramp::make(ramp_shape::tanh, c.eit_omega(),
                                          0.0, c.timing.stop_ramp);
    const double travel = ramp_travel(c.params, ramp);
    const double start = pulse_centroid(p) +
        (0.5 * c.params.length - travel) / vg;
    return std::max(start, 0.0);
}

segment eit_write(const protocol_config& c, const pulse_spec& p)
{
    const double stop = eit_stop_start(c, p);
    const double dur = snap(stop + c.timing.stop_ramp, c.dt);
    const auto ramp = coupling_ramp::make(ramp_shape::tanh, c.eit_omega(),
                                          0.0, c.timing.stop_ramp, stop);
    return make_segment(dur, segment_mode::eit, segment_role::write, 0, ramp,
                        c.eit_delta, true, c);
}

segment eit_read(const protocol_config& c)
{
    const double dur = c.timing.read_duration ?
        snap(*c.timing.read_duration, c.dt) :
        snap(c.timing.read_on_ramp + 3.0 * slow_light_time(c) + 2e-6, c.dt);
    const auto ramp = coupling_ramp::make(ramp_shape::tanh, 0.0,
                                          c.eit_omega(),
                                          c.timing.read_on_ramp);
    return make_segment(dur, segment_mode::eit, segment_role::read, 0, ramp,
                        c.eit_delta, false, c);
}

timeline build_timeline(const protocol_config& c)
{
    c.validate();
    const pulse_spec p = placed_pulse(c);
    const double tc = pulse_centroid(p);
    const double dt = c.dt;
    const int ws = c.write_sign;
    const auto off = coupling_ramp::constant(0.0);
    const auto gem_on = coupling_ramp::constant(c.gem_coupling);
    const double t1 = snap(c.timing.t1, dt);

    timeline tl;
    auto& sched = tl.schedule;

    auto gem_write = [&]() {
        const double dur = snap(p.support_end() + c.timing.write_margin, dt);
        sched.append(make_segment(dur, segment_mode::gem, segment_role::write,
                                  ws, gem_on, c.params.delta, true, c));
        return dur;
    };

    switch (c.protocol) {
    case protocol_kind::gem_eit: {
        const double tw = gem_write();
        const double t2 = snap(c.timing.t2.value_or(t1 + tw - tc), dt);
        sched.append(make_segment(t1, segment_mode::dark, segment_role::store,
                                  ws, off, 0.0, false, c));
        sched.append(make_segment(t2, segment_mode::dark,
                                  segment_role::unwind, -ws, off, 0.0, false,
                                  c));
        const segment& rd = sched.append(eit_read(c));
        tl.check_area = true;
        tl.phase_ref = tc;
        tl.echo_time = rd.start;
        break;
    }
    case protocol_kind::gem_only: {
        const double tw = gem_write();
        const double lead = c.timing.read_lead.value_or(
            p.support_end() - tc + 1e-6);
        const double t2 = c.timing.t2.value_or(t1 + tw - tc);
        if (t2 - lead < dt) {
            throw validation_error("timing.t2 must exceed timing.read_lead "
                                   "by at least one time step");
        }
        sched.append(make_segment(t1, segment_mode::dark, segment_role::store,
                                  ws, off, 0.0, false, c));
        sched.append(make_segment(snap(t2 - lead, dt), segment_mode::dark,
                                  segment_role::unwind, -ws, off, 0.0, false,
                                  c));
        const double rdur = c.timing.read_duration ?
            snap(*c.timing.read_duration, dt) :
            snap(lead + (tc - p.support_begin()) + 2e-6, dt);
        const segment& rd = sched.append(
            make_segment(rdur, segment_mode::gem, segment_role::read, -ws,
                         gem_on, c.params.delta, false, c));
        tl.check_area = true;
        tl.phase_ref = tc;
        tl.echo_time = rd.start + lead;
        break;
    }
    case protocol_kind::eit_gem: {
        sched.append(eit_write(c, p));
        sched.append(make_segment(snap(c.timing.settle, dt),
                                  segment_mode::dark, segment_role::hold, 0,
                                  off, 0.0, false, c));
        const double vg = group_velocity(c.params, c.eit_omega());
        const double sigma_z = vg * p.min_sigma();
        const double lead = c.timing.read_lead.value_or(
            3.0 / (std::abs(c.params.beta) * sigma_z) + 1e-6);
        const double t2 = c.timing.t2.value_or(t1);
        if (t2 - lead < dt) {
            throw validation_error("timing.t2 must exceed timing.read_lead "
                                   "by at least one time step");
        }
        const segment& st = sched.append(
            make_segment(t1, segment_mode::dark, segment_role::store, -ws,
                         off, 0.0, false, c));
        const double store_start = st.start;
        sched.append(make_segment(snap(t2 - lead, dt), segment_mode::dark,
                                  segment_role::unwind, ws, off, 0.0, false,
                                  c));
        const double rdur = c.timing.read_duration ?
            snap(*c.timing.read_duration, dt) : snap(2.0 * lead + 1e-6, dt);
        const segment& rd = sched.append(
            make_segment(rdur, segment_mode::gem, segment_role::read, ws,
                         gem_on, c.params.delta, false, c));
        tl.check_area = true;
        tl.phase_ref = store_start;
        tl.echo_time = rd.start + lead;
        break;
    }
    case protocol_kind::eit_only: {
        if (c.eit_mode == eit_only_mode::transit) {
            const double dur = c.timing.read_duration ?
                snap(*c.timing.read_duration, dt) :
                snap(p.support_end() + 3.0 * slow_light_time(c) + 2e-6, dt);
            sched.append(make_segment(
                dur, segment_mode::eit, segment_role::transit, 0,
                coupling_ramp::constant(c.eit_omega()), c.eit_delta, true,
                c));
        } else {
            sched.append(eit_write(c, p));
            sched.append(make_segment(snap(c.timing.hold, dt),
                                      segment_mode::dark, segment_role::hold,
                                      0, off, 0.0, false, c));
            sched.append(eit_read(c));
        }
        break;
    }
    }
    return tl;
}

/* integral of the gradient over [a, b], with the absolute integral */
std::pair<double, double> gradient_area(const protocol_schedule& sched,
                                        double a, double b)
{
    double area = 0.0;
    double total = 0.0;
    double previous = 0.0;
    for (const auto& seg : sched.segments) {
        const double lo = std::max(a, seg.start);
        const double hi = std::min(b, seg.end());
        if (hi > lo) {
            const int n = 400;
            const double h = (hi - lo) / n;
            for (int k = 0; k <= n; ++k) {
                const double w = (k == 0 || k == n) ? 1.0 :
                    (k % 2 == 1 ? 4.0 : 2.0);
                const double g = seg.gradient(lo - seg.start + k * h,
                                              previous);
                area += w * g * h / 3.0;
                total += w * std::abs(g) * h / 3.0;
            }
        }
        previous = seg.gradient(seg.duration, previous);
    }
    return {area, total};
}

void append_exit(complex_trace& dst, const complex_trace& src, bool first)
{
    if (first) {
        dst = src;
        return;
    }
    dst.values.insert(dst.values.end(), src.values.begin() + 1,
                      src.values.end());
}

double max_abs(std::span<const complex> v)
{
    double m = 0.0;
    for (const auto& x : v) {
        m = std::max(m, std::abs(x));
    }
    return m;
}

cvec scaled(std::span<const complex> v, double f)
{
    cvec out(v.size());
    for (std::size_t j = 0; j < v.size(); ++j) {
        out[j] = f * v[j];
    }
    return out;
}

complex_trace slice(const complex_trace& tr, double a, double b)
{
    complex_trace out;
    out.dt = tr.dt;
    const double tol = 1e-6 * tr.dt;
    bool started = false;
    for (std::size_t n = 0; n < tr.size(); ++n) {
        const double t = tr.time(n);
        if (t >= a - tol && t <= b + tol) {
            if (!started) {
                out.t0 = t;
                started = true;
            }
            out.values.push_back(tr.values[n]);
        }
    }
    return out;
}

void compute_metrics(run_result& r, const protocol_config& c,
                     const timeline& tl)
{
    auto& m = r.metrics;
    const auto& p = c.params;
    const double vg = group_velocity(p, c.eit_omega());
    m["memory_bandwidth_hz"] = p.memory_bandwidth_hz();
    m["coupling_rate"] = p.coupling_rate();
    m["group_velocity"] = vg;
    m["slow_light_delay"] = vg > 0.0 ? p.length / vg - p.length / p.c_light
                                     : nan_value;
    m["retardation"] = p.length / p.c_light;
    m["pulse_center"] = pulse_centroid(r.pulse);
    m["total_duration"] = r.total_duration();

    if (tl.check_area) {
        const auto [area, total] = gradient_area(tl.schedule, tl.phase_ref,
                                                 tl.echo_time);
        const double rel = total > 0.0 ? std::abs(area) / (0.5 * total)
                                       : 0.0;
        m["gradient_area_residual"] = rel;
        if (rel > 0.01) {
            std::ostringstream msg;
            msg << "gradient areas do not cancel at the read-out: residual "
                << rel * 100.0 << "% of the winding area";
            r.warnings.push_back(msg.str());
        }
    }

    const double e_in = r.input.energy(r.write_begin, r.write_end);
    if (e_in > 0.0) {
        m["efficiency"] = efficiency(r.input, r.exit, r.write_begin,
                                     r.write_end, r.read_begin, r.read_end);
        if (r.read_begin > r.write_begin) {
            m["leak"] = r.exit.energy(r.write_begin, r.write_end) / e_in;
        }
    } else {
        m["efficiency"] = nan_value;
        r.warnings.push_back("input pulse has zero energy");
        return;
    }

    /* where the write left the excitation */
    const cvec& stored = r.coherence_after(segment_role::write);
    if (!stored.empty() && max_abs(stored) > 0.0) {
        std::size_t jmax = 0;
        for (std::size_t j = 0; j < stored.size(); ++j) {
            if (std::abs(stored[j]) > std::abs(stored[jmax])) {
                jmax = j;
            }
        }
        m["stored_peak_z"] = r.grid.z(jmax);
    }

    const complex_trace out = slice(r.detected, r.read_begin, r.read_end);
    const auto mag = magnitudes(out);
    const double top = mag.empty() ? 0.0 :
        *std::max_element(mag.begin(), mag.end());
    m["delay"] = nan_value;
    m["sigma_out"] = nan_value;
    if (top > 0.0) {
        const auto t = times(out);
        const auto pk = peak_find(t, mag, r.pulse.min_sigma(), 0.25 * top);
        for (const auto& x : pk) {
            r.peak_times.push_back(x.location);
        }
        m["n_time_peaks"] = static_cast<double>(pk.size());
        bool fitted = false;
        if (pk.size() == 1) {
            try {
                const auto fit = fit_gaussian_envelope(t, mag);
                m["delay"] = fit.center - m["pulse_center"];
                m["sigma_out"] = fit.sigma;
                m["fit_residual"] = fit.residual_l2;
                fitted = true;
            } catch (const analysis_error& e) {
                r.warnings.push_back(std::string("envelope fit: ") +
                                     e.what());
            }
        }
        if (!fitted && !pk.empty()) {
            const auto best = std::max_element(
                pk.begin(), pk.end(), [](const peak& a, const peak& b) {
                    return a.height < b.height;
                });
            m["delay"] = best->location - m["pulse_center"];
        }

        if (out.size() >= 8) {
            const auto s = compute_spectrum(out, spectral_window::none, 8);
            const double smax = *std::max_element(s.magnitude.begin(),
                                                  s.magnitude.end());
            const double natural = 2.0 * pi /
                (static_cast<double>(out.size()) * out.dt);
            const auto sp = peak_find(s.omega, s.magnitude, 3.0 * natural,
                                      0.2 * smax);
            for (const auto& x : sp) {
                r.peak_freqs.push_back(x.location);
            }
            m["n_spectral_peaks"] = static_cast<double>(sp.size());
            double num = 0.0;
            double den = 0.0;
            std::size_t jbest = 0;
            for (std::size_t j = 0; j < s.omega.size(); ++j) {
                const double w = s.magnitude[j] * s.magnitude[j];
                num += w * s.omega[j];
                den += w;
                if (s.magnitude[j] > s.magnitude[jbest]) {
                    jbest = j;
                }
            }
            m["spectral_peak"] = s.omega[jbest];
            m["spectral_centroid"] = num / den;
        }
    }

    if (c.protocol == protocol_kind::gem_only) {
        const complex_trace echo = slice(r.exit, r.read_begin, r.read_end);
        const complex_trace in = slice(r.input, r.write_begin, r.write_end);
        if (max_abs(echo.values) > 0.0) {
            m["mirror_overlap"] = time_mirror_overlap(in, echo);
            m["plain_overlap"] = plain_overlap(in, echo);
        }
    }
}

}

std::string to_string(protocol_kind p)
{
    switch (p) {
    case protocol_kind::gem_eit:
        return "gem_eit";
    case protocol_kind::eit_gem:
        return "eit_gem";
    case protocol_kind::gem_only:
        return "gem_only";
    case protocol_kind::eit_only:
        return "eit_only";
    }
    return "unknown";
}

protocol_kind parse_protocol(const std::string& name)
{
    for (auto p : {protocol_kind::gem_eit, protocol_kind::eit_gem,
                   protocol_kind::gem_only, protocol_kind::eit_only}) {
        if (to_string(p) == name) {
            return p;
        }
    }
    throw validation_error("unknown protocol '" + name +
                           "' (expected gem_eit, eit_gem, gem_only or "
                           "eit_only)");
}

std::string to_string(eit_only_mode m)
{
    return m == eit_only_mode::transit ? "transit" : "store";
}

eit_only_mode parse_eit_mode(const std::string& name)
{
    if (name == "transit") {
        return eit_only_mode::transit;
    }
    if (name == "store") {
        return eit_only_mode::store;
    }
    throw validation_error("unknown eit mode '" + name +
                           "' (expected transit or store)");
}

double protocol_config::eit_omega() const
{
    return eit_coupling.value_or(params.omega_c_max);
}

void protocol_config::validate() const
{
    params.validate();
    pulse.validate();
    detection.validate();
    if (nz < 2) {
        throw validation_error("grid.nz must be >= 2");
    }
    require_positive(dt, "grid.dt");
    if (density_order < 0) {
        throw validation_error("density.order must be >= 0");
    }
    if (density_order > 0) {
        require_positive(density_width, "density.width");
    }
    require_positive(gem_coupling, "gem_coupling");
    if (gem_coupling > params.omega_c_max * (1.0 + 1e-12)) {
        throw validation_error("gem_coupling exceeds omega_c_max");
    }
    require_positive(eit_omega(), "eit_coupling");
    if (eit_omega() > params.omega_c_max * (1.0 + 1e-12)) {
        throw validation_error("eit_coupling exceeds omega_c_max");
    }
    if (!std::isfinite(eit_delta)) {
        throw validation_error("eit_delta must be finite");
    }
    if (write_sign != 1 && write_sign != -1) {
        throw validation_error("write_sign must be +1 or -1");
    }
    const bool uses_gem = protocol != protocol_kind::eit_only;
    if (uses_gem && params.beta == 0.0) {
        throw validation_error("gradient must be non-zero for GEM protocols");
    }
    if (protocol == protocol_kind::eit_gem && params.od <= 0.0) {
        throw validation_error("od must be positive for the EIT to GEM "
                               "hand-off");
    }
    const auto& t = timing;
    require_positive(t.t1, "timing.t1");
    if (t.t2) {
        require_positive(*t.t2, "timing.t2");
    }
    require_non_negative(t.write_margin, "timing.write_margin");
    require_non_negative(t.read_on_ramp, "timing.read_on_ramp");
    require_non_negative(t.stop_ramp, "timing.stop_ramp");
    if (t.stop_time) {
        require_non_negative(*t.stop_time, "timing.stop_time");
    }
    require_positive(t.settle, "timing.settle");
    require_positive(t.hold, "timing.hold");
    if (t.read_lead) {
        require_non_negative(*t.read_lead, "timing.read_lead");
    }
    if (t.read_duration) {
        require_positive(*t.read_duration, "timing.read_duration");
    }
    require_non_negative(t.gradient_ramp, "timing.gradient_ramp");
    require_positive(eit_step_limit, "eit_step_limit");
}

double run_result::total_duration() const
{
    double d = 0.0;
    for (const auto& s : segments) {
        d += s.seg.duration;
    }
    return d;
}

const cvec& run_result::coherence_after(segment_role role) const
{
    static const cvec empty;
    for (const auto& s : segments) {
        if (s.seg.role == role) {
            return s.coherence_end;
        }
    }
    return empty;
}

eit_state handoff_gem_to_eit(const gem_state& gem,
                             const physical_params& params)
{
    const double g = params.coupling_rate();
    eit_state e = eit_state::zero(gem.rho.size(), gem.t_now);
    for (std::size_t j = 0; j < gem.rho.size(); ++j) {
        e.s[j] = g * gem.rho[j];
    }
    return e;
}

gem_state handoff_eit_to_gem(const eit_state& eit,
                             const physical_params& params,
                             const handoff_limits& limits)
{
    if (limits.omega_c != 0.0) {
        throw solver_error(solver_error::kind::handoff,
                           "hand-off to GEM with the coupling still on");
    }
    const double g = params.coupling_rate();
    if (!(g > 0.0)) {
        throw validation_error("hand-off to GEM needs od > 0");
    }
    const double s_ref = max_abs(eit.s);
    const double a_ref = limits.a_ref > 0.0 ? limits.a_ref : s_ref;
    const double p_ref = limits.p_ref > 0.0 ? limits.p_ref : s_ref;
    const double a_now = max_abs(eit.a);
    const double p_now = max_abs(eit.p);
    if (a_now > 1e-6 * a_ref || p_now > 1e-6 * p_ref) {
        std::ostringstream msg;
        msg << "hand-off to GEM would discard live excitation: max|A| = "
            << a_now << " (limit " << 1e-6 * a_ref << "), max|P| = " << p_now
            << " (limit " << 1e-6 * p_ref << ")";
        throw solver_error(solver_error::kind::handoff, msg.str());
    }
    gem_state out;
    out.t_now = eit.t_now;
    out.rho = scaled(eit.s, 1.0 / g);
    return out;
}

double pulse_centroid(const pulse_spec& p)
{
    if (p.kind != pulse_kind::double_pulse) {
        return p.center;
    }
    const double s2 = p.sigma_second > 0.0 ? p.sigma_second : p.sigma;
    const double w1 = p.amplitude * p.amplitude * p.sigma;
    const double w2 = p.amplitude_second * p.amplitude_second * s2;
    if (w1 + w2 == 0.0) {
        return p.center;
    }
    return (w1 * (p.center - 0.5 * p.separation) +
            w2 * (p.center + 0.5 * p.separation)) / (w1 + w2);
}

double ramp_travel(const physical_params& params, const coupling_ramp& ramp)
{
    const double a = ramp.delay;
    const double b = ramp.delay + ramp.duration;
    if (!(b > a)) {
        return 0.0;
    }
    const int n = 400;
    const double h = (b - a) / n;
    double sum = 0.0;
    for (int k = 0; k <= n; ++k) {
        const double w = (k == 0 || k == n) ? 1.0 : (k % 2 == 1 ? 4.0 : 2.0);
        sum += w * group_velocity(params, ramp.value(a + k * h));
    }
    return sum * h / 3.0;
}

pulse_spec placed_pulse(const protocol_config& config)
{
    pulse_spec p = config.pulse;
    if (config.auto_center) {
        p.center -= p.support_begin();
    }
    return p;
}

protocol_schedule build_schedule(const protocol_config& config)
{
    return build_timeline(config).schedule;
}

run_result run_protocol(const protocol_config& config)
{
    const timeline tl = build_timeline(config);
    const auto& sched = tl.schedule;
    sched.validate(config.dt);
    const auto& params = config.params;

    run_result r;
    r.protocol = config.protocol;
    r.params = params;
    r.pulse = placed_pulse(config);
    r.grid = make_grid(params, config.nz, sched.total_duration(), config.dt);
    r.density = config.density_order == 0 ?
        flat_density(r.grid) :
        sample_density(config.density_order,
                       config.density_width * params.length, r.grid);

    for (const auto& seg : sched.segments) {
        if (seg.input_open) {
            r.write_begin = seg.start;
            r.write_end = seg.end();
        }
        if (seg.role == segment_role::read ||
            seg.role == segment_role::transit) {
            if (r.read_end == 0.0) {
                r.read_begin = seg.start;
            }
            r.read_end = seg.end();
        }
    }
    if (config.protocol == protocol_kind::eit_only &&
        config.eit_mode == eit_only_mode::transit) {
        r.read_begin = sched.start();
        r.read_end = sched.end();
    }

    double clipped = 0.0;
    r.input = synthesize_input(r.pulse, r.grid, r.write_end, &clipped);
    if (clipped > 1e-3) {
        std::ostringstream msg;
        msg << "input pulse clipped by the write window: " << clipped * 100.0
            << "% of its energy falls outside";
        r.warnings.push_back(msg.str());
    }
    if (config.protocol == protocol_kind::gem_eit ||
        config.protocol == protocol_kind::gem_only) {
        const double band = r.pulse.max_offset() + 1.0 / r.pulse.min_sigma();
        if (band > 0.5 * std::abs(params.beta) * params.length) {
            r.warnings.push_back("pulse bandwidth exceeds half the memory "
                                 "bandwidth");
        }
    }

    const double g = params.coupling_rate();
    gem_options gopt;
    gopt.compensate_light_shift = config.compensate_light_shift;
    gopt.record_stride = config.record_stride;
    eit_options eopt;
    eopt.step_limit = config.eit_step_limit;
    eopt.record_stride = config.record_stride;

    gem_state gstate{cvec(config.nz), 0.0};
    eit_state estate = eit_state::zero(config.nz, 0.0);
    std::optional<solver_kind> current;
    double gradient = 0.0;
    double stage_max_a = 0.0;
    double stage_max_p = 0.0;
    double last_omega = 0.0;
    bool first = true;

    for (const auto& seg : sched.segments) {
        const solver_kind kind = solver_for(seg);
        if (current && *current != kind) {
            if (kind == solver_kind::eit) {
                estate = handoff_gem_to_eit(gstate, params);
            } else {
                gstate = handoff_eit_to_gem(
                    estate, params, {last_omega, stage_max_a, stage_max_p});
            }
            stage_max_a = 0.0;
            stage_max_p = 0.0;
        }
        current = kind;

        segment_record rec;
        rec.seg = seg;
        std::optional<field_record> fields;
        if (kind == solver_kind::gem) {
            gopt.initial_gradient = gradient;
            auto res = gem_run(gstate, std::span<const segment>(&seg, 1),
                               r.input, r.grid, r.density, params, gopt);
            append_exit(r.exit, res.exit, first);
            gstate = std::move(res.final_state);
            gradient = res.final_gradient;
            fields = std::move(res.fields);
            rec.solver = "gem";
            rec.coherence_end = gstate.rho;
        } else {
            eopt.initial_gradient = gradient;
            auto res = eit_run(estate, std::span<const segment>(&seg, 1),
                               r.input, r.grid, r.density, params, eopt);
            append_exit(r.exit, res.exit, first);
            estate = std::move(res.final_state);
            gradient = res.final_gradient;
            stage_max_a = std::max(stage_max_a, res.max_abs_a);
            stage_max_p = std::max(stage_max_p, res.max_abs_p);
            fields = std::move(res.fields);
            if (fields) {
                for (auto& row : fields->coherence) {
                    row = scaled(row, g > 0.0 ? 1.0 / g : 0.0);
                }
            }
            rec.solver = "eit";
            rec.coherence_end = scaled(estate.s, g > 0.0 ? 1.0 / g : 0.0);
        }
        last_omega = seg.omega_c.value(seg.duration);
        if (fields) {
            if (!r.fields) {
                r.fields.emplace();
            }
            if (!r.fields->times.empty() && !fields->times.empty() &&
                std::abs(fields->times.front() - r.fields->times.back()) <
                    1e-6 * config.dt) {
                fields->times.erase(fields->times.begin());
                fields->signal.erase(fields->signal.begin());
                fields->coherence.erase(fields->coherence.begin());
            }
            r.fields->append(*fields);
        }
        r.segments.push_back(std::move(rec));
        first = false;
    }
    r.final_coherence = r.segments.back().coherence_end;

    if (r.exit.size() != r.grid.nt) {
        throw solver_error(solver_error::kind::non_finite,
                           "internal: stitched exit trace has " +
                               std::to_string(r.exit.size()) +
                               " samples for " + std::to_string(r.grid.nt) +
                               " grid times");
    }

    r.heterodyne = averaged_heterodyne(r.exit, config.detection);
    double band = pulse_band(r.pulse);
    if (config.protocol != protocol_kind::eit_only) {
        band = std::max(band, 0.5 * std::abs(params.beta) * params.length);
    }
    r.detected = demodulate(r.heterodyne, config.detection, band);

    compute_metrics(r, config, tl);
    return r;
}

}
