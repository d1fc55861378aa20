#ifndef QMEM_CONFIG_HPP
#define QMEM_CONFIG_HPP

#include <qmem/analysis.hpp>
#include <qmem/sequence.hpp>

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace qmem {

/* selectable output groups */
enum class emit_kind { trace, spectrum, metrics, fields };

std::string to_string(emit_kind e);
emit_kind parse_emit(const std::string& name);

/* one swept parameter with its values already converted to SI */
struct sweep_axis
{
    std::string key;
    std::vector<double> values;
    /* values as written, in configuration units */
    std::vector<double> config_values;
};

struct output_spec
{
    std::set<emit_kind> emit{emit_kind::trace, emit_kind::spectrum,
                             emit_kind::metrics};
    spectral_window window = spectral_window::none;
    /* time steps between field snapshots under emit fields */
    std::size_t field_stride = 25;
};

/**
 * A validated configuration document: the base protocol run, its sweep
 * axes and output selection.
 */
struct run_config
{
    protocol_config protocol;
    output_spec output;
    std::vector<sweep_axis> axes;
    /* concurrent sweep runs; 0 uses the hardware concurrency */
    std::size_t workers = 0;
    /* dotted keys that took their default value */
    std::vector<std::string> defaulted;
    /* the sweep section was present */
    bool has_sweep = false;
};

/**
 * Parses a YAML configuration document. Unknown keys, malformed values,
 * bad unit suffixes and invariant violations raise validation_error with
 * the source name, line and column.
 *
 * Bare numbers use the configuration units: frequencies in MHz (converted
 * to rad/s), times in us, lengths in mm, gradients in MHz/mm and rates in
 * 1/us. A value may carry an explicit unit suffix instead, e.g. "250 kHz".
 */
run_config parse_config(const std::string& text,
                        const std::string& source = "<config>");
run_config load_config(const std::string& path);

/* every dotted key of the schema, in document order */
std::vector<std::string> config_keys();

/* keys that accept a numeric sweep axis */
bool sweepable(const std::string& key);

/* sets one numeric key from an SI value */
void apply_value(protocol_config& config, const std::string& key,
                 double si_value);

/* the Cartesian product of the axes, first axis slowest */
struct sweep_point
{
    std::size_t index = 0;
    std::vector<double> values;
    std::vector<double> config_values;
};

std::vector<sweep_point> sweep_plan(const std::vector<sweep_axis>& axes);

/* configuration-unit label of a key, e.g. "MHz" or "" */
std::string config_unit(const std::string& key);

/**
 * Resolved values of every scalar key in SI units (rad/s, s, m), or
 * "auto" for unset optional timings.
 */
std::vector<std::pair<std::string, std::string>>
resolved_values(const protocol_config& config);

/* %.17g */
std::string format_double(double v);

}

#endif
