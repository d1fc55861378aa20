#include <qmem/schedule.hpp>
#include <qmem/errors.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace qmem {

coupling_ramp coupling_ramp::constant(double value)
{
    coupling_ramp r;
    r.shape = ramp_shape::constant;
    r.start = value;
    r.end = value;
    return r;
}

coupling_ramp coupling_ramp::make(ramp_shape shape, double from, double to,
                                  double duration, double delay)
{
    coupling_ramp r;
    r.shape = shape;
    r.start = from;
    r.end = to;
    r.duration = duration;
    r.delay = delay;
    return r;
}

double coupling_ramp::value(double s) const
{
    if (shape == ramp_shape::constant) {
        return start;
    }
    if (s <= delay) {
        return start;
    }
    if (duration <= 0.0 || s >= delay + duration) {
        return end;
    }
    const double x = (s - delay) / duration;
    double f = x;
    if (shape == ramp_shape::tanh) {
        f = 0.5 * (1.0 + std::tanh(4.0 * (x - 0.5)) / std::tanh(2.0));
    }
    return start + (end - start) * f;
}

double coupling_ramp::max_value() const
{
    if (shape == ramp_shape::constant) {
        return start;
    }
    return std::max(start, end);
}

bool coupling_ramp::always_zero() const
{
    return max_value() == 0.0;
}

void coupling_ramp::validate() const
{
    if (!std::isfinite(start) || !std::isfinite(end) ||
        !std::isfinite(duration) || !std::isfinite(delay)) {
        throw validation_error("coupling ramp values must be finite");
    }
    if (start < 0.0 || end < 0.0) {
        throw validation_error("coupling Rabi frequency must be >= 0");
    }
    if (duration < 0.0 || delay < 0.0) {
        throw validation_error("coupling ramp times must be >= 0");
    }
}

std::string to_string(segment_mode m)
{
    switch (m) {
    case segment_mode::gem:
        return "gem";
    case segment_mode::eit:
        return "eit";
    case segment_mode::dark:
        return "dark";
    }
    return "?";
}

std::string to_string(segment_role r)
{
    switch (r) {
    case segment_role::write:
        return "write";
    case segment_role::store:
        return "store";
    case segment_role::unwind:
        return "unwind";
    case segment_role::hold:
        return "hold";
    case segment_role::read:
        return "read";
    case segment_role::transit:
        return "transit";
    }
    return "?";
}

double segment::gradient(double s, double previous) const
{
    const double target = gradient_sign * beta;
    if (gradient_ramp <= 0.0 || s >= gradient_ramp) {
        return target;
    }
    return previous + (target - previous) * (s / gradient_ramp);
}

double segment::gradient_area(double previous) const
{
    const double target = gradient_sign * beta;
    if (gradient_ramp <= 0.0) {
        return target * duration;
    }
    const double r = std::min(gradient_ramp, duration);
    const double at_r = gradient(r, previous);
    return 0.5 * (previous + at_r) * r + target * (duration - r);
}

std::size_t segment::steps(double dt) const
{
    const double x = duration / dt;
    const double n = std::round(x);
    if (n < 1.0 || std::abs(x - n) > 1e-6 * std::max(1.0, x)) {
        std::ostringstream msg;
        msg << "segment duration " << duration
            << " s is not a positive multiple of dt " << dt << " s";
        throw validation_error(msg.str());
    }
    return static_cast<std::size_t>(n);
}

void validate_segments(std::span<const segment> segments, double t_start,
                       double dt)
{
    if (segments.empty()) {
        throw validation_error("schedule has no segments");
    }
    double expected = t_start;
    for (std::size_t k = 0; k < segments.size(); ++k) {
        const segment& s = segments[k];
        if (!std::isfinite(s.duration) || s.duration <= 0.0) {
            throw validation_error("segment " + std::to_string(k) +
                                   ": duration must be positive");
        }
        const double gap = s.start - expected;
        if (std::abs(gap) > 1e-6 * dt) {
            throw validation_error(
                "segment " + std::to_string(k) +
                (gap > 0.0 ? ": gap before segment" : ": segments overlap"));
        }
        if (s.gradient_sign < -1 || s.gradient_sign > 1) {
            throw validation_error("segment " + std::to_string(k) +
                                   ": gradient sign must be -1, 0 or +1");
        }
        if (!std::isfinite(s.beta) || !std::isfinite(s.delta) ||
            !std::isfinite(s.gradient_ramp) || s.gradient_ramp < 0.0) {
            throw validation_error("segment " + std::to_string(k) +
                                   ": non-finite drive parameter");
        }
        s.omega_c.validate();
        if (s.mode == segment_mode::dark && !s.omega_c.always_zero()) {
            throw validation_error("segment " + std::to_string(k) +
                                   ": dark segment with coupling on");
        }
        s.steps(dt);
        expected = s.end();
    }
}

double protocol_schedule::start() const
{
    return segments.empty() ? 0.0 : segments.front().start;
}

double protocol_schedule::end() const
{
    return segments.empty() ? 0.0 : segments.back().end();
}

double protocol_schedule::total_duration() const
{
    double total = 0.0;
    for (const auto& s : segments) {
        total += s.duration;
    }
    return total;
}

segment& protocol_schedule::append(segment s)
{
    if (!segments.empty()) {
        s.start = end();
    }
    segments.push_back(s);
    return segments.back();
}

void protocol_schedule::validate(double dt) const
{
    validate_segments(segments, start(), dt);
    const auto open = std::count_if(
        segments.begin(), segments.end(),
        [](const segment& s) { return s.input_open; });
    if (open != 1) {
        throw validation_error(
            "schedule must have exactly one segment with the input open");
    }
}

}
