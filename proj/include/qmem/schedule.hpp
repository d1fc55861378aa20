#ifndef QMEM_SCHEDULE_HPP
#define QMEM_SCHEDULE_HPP

#include <span>
#include <string>
#include <vector>

namespace qmem {

enum class ramp_shape { constant, linear, tanh };

/**
 * Coupling Rabi frequency envelope within one segment. The value holds
 * `start` until `delay`, moves to `end` over `duration`, then holds `end`.
 * The tanh shape is normalized so that both end values are reached exactly.
 */
struct coupling_ramp
{
    ramp_shape shape = ramp_shape::constant;
    double start = 0.0;
    double end = 0.0;
    double duration = 0.0;
    double delay = 0.0;

    static coupling_ramp constant(double value);
    static coupling_ramp make(ramp_shape shape, double from, double to,
                              double duration, double delay = 0.0);

    /* value at time s after the segment start, rad/s */
    double value(double s) const;
    double max_value() const;
    bool always_zero() const;
    void validate() const;
};

enum class segment_mode { gem, eit, dark };

/* what a segment does in the protocol; used for windows and metadata */
enum class segment_role { write, store, unwind, hold, read, transit };

std::string to_string(segment_mode m);
std::string to_string(segment_role r);

struct segment
{
    /* absolute start time, s */
    double start = 0.0;
    double duration = 0.0;
    segment_mode mode = segment_mode::dark;
    segment_role role = segment_role::store;
    int gradient_sign = 0;
    double beta = 0.0;
    coupling_ramp omega_c;
    /* single-photon detuning, rad/s */
    double delta = 0.0;
    bool input_open = false;
    /* linear ramp time from the previous segment's gradient, s */
    double gradient_ramp = 0.0;

    double end() const { return start + duration; }

    /* gradient sign*beta at time s after start, given the previous value */
    double gradient(double s, double previous) const;

    /* integral of gradient(s) over the whole segment */
    double gradient_area(double previous) const;

    /* number of dt steps; throws when the duration is not a multiple */
    std::size_t steps(double dt) const;
};

/**
 * Ordered, gap-free list of segments. Exactly one segment has its input
 * gate open.
 */
struct protocol_schedule
{
    std::vector<segment> segments;

    double start() const;
    double end() const;
    double total_duration() const;

    /* appends a segment starting at the current end */
    segment& append(segment s);

    void validate(double dt) const;
};

/* shared by both solvers: contiguity, dt alignment, gradient signs */
void validate_segments(std::span<const segment> segments, double t_start,
                       double dt);

}

#endif
