#include <qmem/config.hpp>
#include <qmem/errors.hpp>

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace qmem {

namespace {

enum class unit_kind {
    none, frequency, time, length, gradient, rate, phase, integer, flag,
    choice
};

enum class bound { any, non_negative, positive };

struct key_def
{
    std::string key;
    unit_kind unit = unit_kind::none;
    bound limit = bound::any;
    bool optional = false;
    bool sweep = true;
    std::vector<std::string> choices;
    std::function<void(protocol_config&, double)> set;
    std::function<void(protocol_config&, const std::string&)> set_text;
    std::function<std::string(const protocol_config&)> get;
};

struct suffix
{
    const char* name;
    double factor;
};

const double two_pi = 2.0 * pi;

const std::vector<suffix>& suffixes(unit_kind u)
{
    static const std::vector<suffix> none;
    static const std::vector<suffix> freq{
        {"Hz", two_pi}, {"kHz", two_pi * 1e3}, {"MHz", two_pi * 1e6},
        {"GHz", two_pi * 1e9}, {"rad/s", 1.0}};
    static const std::vector<suffix> time{
        {"s", 1.0}, {"ms", 1e-3}, {"us", 1e-6}, {"\xc2\xb5s", 1e-6},
        {"ns", 1e-9}};
    static const std::vector<suffix> length{
        {"m", 1.0}, {"cm", 1e-2}, {"mm", 1e-3}, {"um", 1e-6},
        {"\xc2\xb5m", 1e-6}};
    static const std::vector<suffix> gradient{
        {"MHz/mm", two_pi * 1e9}, {"kHz/mm", two_pi * 1e6},
        {"MHz/cm", two_pi * 1e8}, {"Hz/m", two_pi}, {"rad/s/m", 1.0}};
    static const std::vector<suffix> rate{
        {"1/s", 1.0}, {"1/ms", 1e3}, {"1/us", 1e6}, {"/s", 1.0},
        {"/ms", 1e3}, {"/us", 1e6}};
    static const std::vector<suffix> phase{{"rad", 1.0},
                                           {"deg", pi / 180.0}};
    switch (u) {
    case unit_kind::frequency: return freq;
    case unit_kind::time: return time;
    case unit_kind::length: return length;
    case unit_kind::gradient: return gradient;
    case unit_kind::rate: return rate;
    case unit_kind::phase: return phase;
    default: return none;
    }
}

/* SI value of one configuration unit */
double config_factor(unit_kind u)
{
    switch (u) {
    case unit_kind::frequency: return two_pi * 1e6;
    case unit_kind::time: return 1e-6;
    case unit_kind::length: return 1e-3;
    case unit_kind::gradient: return two_pi * 1e9;
    case unit_kind::rate: return 1e6;
    default: return 1.0;
    }
}

const char* config_unit_name(unit_kind u)
{
    switch (u) {
    case unit_kind::frequency: return "MHz";
    case unit_kind::time: return "us";
    case unit_kind::length: return "mm";
    case unit_kind::gradient: return "MHz/mm";
    case unit_kind::rate: return "1/us";
    case unit_kind::phase: return "rad";
    default: return "";
    }
}

const char* unit_family(unit_kind u)
{
    switch (u) {
    case unit_kind::frequency: return "a frequency";
    case unit_kind::time: return "a time";
    case unit_kind::length: return "a length";
    case unit_kind::gradient: return "a detuning gradient";
    case unit_kind::rate: return "a rate";
    case unit_kind::phase: return "a phase";
    default: return "a dimensionless number";
    }
}

key_def quantity(std::string key, unit_kind unit, bound limit,
                 std::function<double&(protocol_config&)> ref)
{
    key_def d;
    d.key = std::move(key);
    d.unit = unit;
    d.limit = limit;
    d.set = [ref](protocol_config& c, double v) { ref(c) = v; };
    d.get = [ref](const protocol_config& c) {
        return format_double(ref(const_cast<protocol_config&>(c)));
    };
    return d;
}

key_def optional_quantity(
    std::string key, unit_kind unit, bound limit,
    std::function<std::optional<double>&(protocol_config&)> ref)
{
    key_def d;
    d.key = std::move(key);
    d.unit = unit;
    d.limit = limit;
    d.optional = true;
    d.set = [ref](protocol_config& c, double v) { ref(c) = v; };
    d.get = [ref](const protocol_config& c) {
        const auto& v = ref(const_cast<protocol_config&>(c));
        return v ? format_double(*v) : std::string("auto");
    };
    return d;
}

key_def integer(std::string key, bound limit,
                std::function<void(protocol_config&, long long)> set,
                std::function<long long(const protocol_config&)> get)
{
    key_def d;
    d.key = std::move(key);
    d.unit = unit_kind::integer;
    d.limit = limit;
    d.set = [set](protocol_config& c, double v) {
        set(c, static_cast<long long>(v));
    };
    d.get = [get](const protocol_config& c) {
        return std::to_string(get(c));
    };
    return d;
}

key_def flag(std::string key, std::function<bool&(protocol_config&)> ref)
{
    key_def d;
    d.key = std::move(key);
    d.unit = unit_kind::flag;
    d.sweep = false;
    d.set_text = [ref](protocol_config& c, const std::string& v) {
        ref(c) = v == "true";
    };
    d.get = [ref](const protocol_config& c) {
        return std::string(ref(const_cast<protocol_config&>(c)) ? "true"
                                                                : "false");
    };
    return d;
}

key_def choice(std::string key, std::vector<std::string> choices,
               std::function<void(protocol_config&, const std::string&)> set,
               std::function<std::string(const protocol_config&)> get)
{
    key_def d;
    d.key = std::move(key);
    d.unit = unit_kind::choice;
    d.sweep = false;
    d.choices = std::move(choices);
    d.set_text = std::move(set);
    d.get = std::move(get);
    return d;
}

using pc = protocol_config;
using U = unit_kind;
using B = bound;

const std::vector<key_def>& schema()
{
    static const std::vector<key_def> table = [] {
        std::vector<key_def> t;
        t.push_back(choice(
            "protocol", {"gem_eit", "eit_gem", "gem_only", "eit_only"},
            [](pc& c, const std::string& v) {
                c.protocol = parse_protocol(v);
            },
            [](const pc& c) { return to_string(c.protocol); }));
        t.push_back(choice(
            "eit_mode", {"transit", "store"},
            [](pc& c, const std::string& v) {
                c.eit_mode = parse_eit_mode(v);
            },
            [](const pc& c) { return to_string(c.eit_mode); }));

        t.push_back(quantity("medium.od", U::none, B::non_negative,
                             [](pc& c) -> double& { return c.params.od; }));
        t.push_back(quantity("medium.gamma", U::frequency, B::positive,
                             [](pc& c) -> double& {
                                 return c.params.gamma;
                             }));
        t.push_back(quantity("medium.length", U::length, B::positive,
                             [](pc& c) -> double& {
                                 return c.params.length;
                             }));
        t.push_back(quantity("medium.gradient", U::gradient, B::any,
                             [](pc& c) -> double& { return c.params.beta; }));
        t.push_back(quantity("medium.delta", U::frequency, B::any,
                             [](pc& c) -> double& {
                                 return c.params.delta;
                             }));
        t.push_back(quantity("medium.omega_c_max", U::frequency,
                             B::non_negative, [](pc& c) -> double& {
                                 return c.params.omega_c_max;
                             }));
        t.push_back(quantity("medium.omega0", U::frequency, B::any,
                             [](pc& c) -> double& {
                                 return c.params.omega0;
                             }));
        t.push_back(quantity("medium.ground_dephasing", U::rate,
                             B::non_negative, [](pc& c) -> double& {
                                 return c.params.ground_dephasing;
                             }));
        t.push_back(integer(
            "medium.density_order", B::non_negative,
            [](pc& c, long long v) { c.density_order = static_cast<int>(v); },
            [](const pc& c) { return c.density_order; }));
        t.push_back(quantity("medium.density_width", U::none, B::positive,
                             [](pc& c) -> double& {
                                 return c.density_width;
                             }));

        t.push_back(integer(
            "grid.nz", B::positive,
            [](pc& c, long long v) { c.nz = static_cast<std::size_t>(v); },
            [](const pc& c) { return static_cast<long long>(c.nz); }));
        t.push_back(quantity("grid.dt", U::time, B::positive,
                             [](pc& c) -> double& { return c.dt; }));

        t.push_back(quantity("coupling.gem", U::frequency, B::non_negative,
                             [](pc& c) -> double& {
                                 return c.gem_coupling;
                             }));
        t.push_back(optional_quantity(
            "coupling.eit", U::frequency, B::non_negative,
            [](pc& c) -> std::optional<double>& { return c.eit_coupling; }));
        t.push_back(quantity("coupling.eit_delta", U::frequency, B::any,
                             [](pc& c) -> double& { return c.eit_delta; }));
        t.push_back(integer(
            "coupling.write_sign", B::any,
            [](pc& c, long long v) { c.write_sign = static_cast<int>(v); },
            [](const pc& c) { return c.write_sign; }));
        t.push_back(flag("coupling.compensate_light_shift",
                         [](pc& c) -> bool& {
                             return c.compensate_light_shift;
                         }));

        t.push_back(choice(
            "pulse.kind", {"gaussian", "two_tone", "double_pulse"},
            [](pc& c, const std::string& v) {
                c.pulse.kind = parse_pulse_kind(v);
            },
            [](const pc& c) { return to_string(c.pulse.kind); }));
        t.push_back(quantity("pulse.sigma", U::time, B::positive,
                             [](pc& c) -> double& { return c.pulse.sigma; }));
        t.push_back(quantity("pulse.sigma_second", U::time, B::non_negative,
                             [](pc& c) -> double& {
                                 return c.pulse.sigma_second;
                             }));
        t.push_back(quantity("pulse.center", U::time, B::any,
                             [](pc& c) -> double& {
                                 return c.pulse.center;
                             }));
        t.push_back(flag("pulse.auto_center",
                         [](pc& c) -> bool& { return c.auto_center; }));
        t.push_back(quantity("pulse.detuning", U::frequency, B::any,
                             [](pc& c) -> double& {
                                 return c.pulse.detuning;
                             }));
        t.push_back(quantity("pulse.tone_gap", U::frequency, B::any,
                             [](pc& c) -> double& {
                                 return c.pulse.tone_gap;
                             }));
        t.push_back(quantity("pulse.separation", U::time, B::any,
                             [](pc& c) -> double& {
                                 return c.pulse.separation;
                             }));
        t.push_back(quantity("pulse.amplitude", U::none, B::non_negative,
                             [](pc& c) -> double& {
                                 return c.pulse.amplitude;
                             }));
        t.push_back(quantity("pulse.amplitude_second", U::none,
                             B::non_negative, [](pc& c) -> double& {
                                 return c.pulse.amplitude_second;
                             }));
        t.push_back(quantity("pulse.phase", U::phase, B::any,
                             [](pc& c) -> double& { return c.pulse.phase; }));
        t.push_back(quantity("pulse.phase_second", U::phase, B::any,
                             [](pc& c) -> double& {
                                 return c.pulse.phase_second;
                             }));

        t.push_back(quantity("detection.lo_offset", U::frequency, B::any,
                             [](pc& c) -> double& {
                                 return c.detection.lo_offset;
                             }));
        t.push_back(quantity("detection.noise_sigma", U::none,
                             B::non_negative, [](pc& c) -> double& {
                                 return c.detection.noise_sigma;
                             }));
        t.push_back(integer(
            "detection.n_sequences", B::positive,
            [](pc& c, long long v) {
                c.detection.n_sequences = static_cast<std::size_t>(v);
            },
            [](const pc& c) {
                return static_cast<long long>(c.detection.n_sequences);
            }));
        {
            auto seed = integer(
                "detection.seed", B::non_negative,
                [](pc& c, long long v) {
                    c.detection.seed = static_cast<std::uint64_t>(v);
                },
                [](const pc& c) {
                    return static_cast<long long>(c.detection.seed);
                });
            seed.sweep = false;
            t.push_back(seed);
        }

        t.push_back(quantity("timing.t1", U::time, B::non_negative,
                             [](pc& c) -> double& { return c.timing.t1; }));
        t.push_back(optional_quantity(
            "timing.t2", U::time, B::non_negative,
            [](pc& c) -> std::optional<double>& { return c.timing.t2; }));
        t.push_back(quantity("timing.write_margin", U::time, B::non_negative,
                             [](pc& c) -> double& {
                                 return c.timing.write_margin;
                             }));
        t.push_back(quantity("timing.read_on_ramp", U::time, B::non_negative,
                             [](pc& c) -> double& {
                                 return c.timing.read_on_ramp;
                             }));
        t.push_back(quantity("timing.stop_ramp", U::time, B::non_negative,
                             [](pc& c) -> double& {
                                 return c.timing.stop_ramp;
                             }));
        t.push_back(optional_quantity(
            "timing.stop_time", U::time, B::non_negative,
            [](pc& c) -> std::optional<double>& {
                return c.timing.stop_time;
            }));
        t.push_back(quantity("timing.settle", U::time, B::positive,
                             [](pc& c) -> double& {
                                 return c.timing.settle;
                             }));
        t.push_back(quantity("timing.hold", U::time, B::positive,
                             [](pc& c) -> double& { return c.timing.hold; }));
        t.push_back(optional_quantity(
            "timing.read_lead", U::time, B::positive,
            [](pc& c) -> std::optional<double>& {
                return c.timing.read_lead;
            }));
        t.push_back(optional_quantity(
            "timing.read_duration", U::time, B::positive,
            [](pc& c) -> std::optional<double>& {
                return c.timing.read_duration;
            }));
        t.push_back(quantity("timing.gradient_ramp", U::time,
                             B::non_negative, [](pc& c) -> double& {
                                 return c.timing.gradient_ramp;
                             }));

        t.push_back(quantity("solver.eit_step_limit", U::none, B::positive,
                             [](pc& c) -> double& {
                                 return c.eit_step_limit;
                             }));
        return t;
    }();
    return table;
}

/* keys handled outside the protocol table */
const std::vector<std::string> extra_keys{
    "output.emit", "output.spectrum_window", "output.field_stride",
    "sweep.workers", "sweep.axes"};

const std::vector<std::string> sections{
    "medium", "grid", "coupling", "pulse", "detection", "timing", "solver",
    "output", "sweep"};

const key_def* find_key(const std::string& key)
{
    for (const auto& d : schema()) {
        if (d.key == key) {
            return &d;
        }
    }
    return nullptr;
}

class located
{
public:
    explicit located(std::string source) : m_source(std::move(source)) {}

    [[noreturn]] void fail(const YAML::Node& at, const std::string& key,
                           const std::string& msg) const
    {
        std::ostringstream os;
        os << m_source;
        const auto m = at.Mark();
        if (!m.is_null()) {
            os << ":" << m.line + 1 << ":" << m.column + 1;
        }
        os << ": " << key << ": " << msg;
        throw validation_error(os.str());
    }

    const std::string& source() const { return m_source; }

private:
    std::string m_source;
};

std::string trim(const std::string& s)
{
    const auto a = s.find_first_not_of(" \t");
    if (a == std::string::npos) {
        return "";
    }
    const auto b = s.find_last_not_of(" \t");
    return s.substr(a, b - a + 1);
}

std::string scalar_text(const located& loc, const YAML::Node& n,
                        const std::string& key)
{
    if (!n.IsScalar()) {
        loc.fail(n, key, "expected a scalar value");
    }
    return n.Scalar();
}

struct parsed_number
{
    double si = 0.0;
    double config = 0.0;
};

parsed_number parse_number(const located& loc, const YAML::Node& n,
                           const key_def& d)
{
    const std::string text = trim(scalar_text(loc, n, d.key));
    double v = 0.0;
    const char* first = text.data();
    const char* last = text.data() + text.size();
    if (!text.empty() && *first == '+') {
        ++first;
    }
    const auto res = std::from_chars(first, last, v);
    if (res.ec != std::errc() || res.ptr == first) {
        loc.fail(n, d.key, "expected a number, got '" + text + "'");
    }
    const std::string unit = trim(std::string(res.ptr, last));
    double factor = config_factor(d.unit);
    if (!unit.empty()) {
        const auto& table = suffixes(d.unit);
        bool found = false;
        for (const auto& s : table) {
            if (unit == s.name) {
                factor = s.factor;
                found = true;
            }
        }
        if (!found) {
            std::string allowed;
            for (const auto& s : table) {
                allowed += allowed.empty() ? "" : ", ";
                allowed += s.name;
            }
            loc.fail(n, d.key, "unit '" + unit + "' is not valid for " +
                                   unit_family(d.unit) +
                                   (allowed.empty() ? " (no unit allowed)"
                                                    : " (use " + allowed +
                                                          ")"));
        }
    }
    if (!std::isfinite(v)) {
        loc.fail(n, d.key, "value must be finite");
    }
    if (d.unit == unit_kind::integer && v != std::floor(v)) {
        loc.fail(n, d.key, "expected an integer, got '" + text + "'");
    }
    if (d.limit == bound::non_negative && v < 0.0) {
        loc.fail(n, d.key, "must be >= 0, got " + text);
    }
    if (d.limit == bound::positive && !(v > 0.0)) {
        loc.fail(n, d.key, "must be > 0, got " + text);
    }
    parsed_number out;
    out.si = v * factor;
    out.config = factor == config_factor(d.unit) ?
                     v :
                     out.si / config_factor(d.unit);
    return out;
}

YAML::Node lookup(const YAML::Node& root, const std::string& key)
{
    const auto dot = key.find('.');
    if (dot == std::string::npos) {
        return root[key];
    }
    const YAML::Node sec = root[key.substr(0, dot)];
    if (!sec || !sec.IsMap()) {
        return YAML::Node(YAML::NodeType::Undefined);
    }
    return sec[key.substr(dot + 1)];
}

bool is_auto(const YAML::Node& n)
{
    return n.IsNull() || (n.IsScalar() && trim(n.Scalar()) == "auto");
}

void apply_node(const located& loc, const YAML::Node& n, const key_def& d,
                protocol_config& c)
{
    switch (d.unit) {
    case unit_kind::flag: {
        const std::string v = scalar_text(loc, n, d.key);
        bool b = false;
        if (!YAML::convert<bool>::decode(n, b)) {
            loc.fail(n, d.key, "expected true or false, got '" + v + "'");
        }
        d.set_text(c, b ? "true" : "false");
        return;
    }
    case unit_kind::choice: {
        const std::string v = trim(scalar_text(loc, n, d.key));
        for (const auto& ch : d.choices) {
            if (ch == v) {
                d.set_text(c, v);
                return;
            }
        }
        std::string allowed;
        for (const auto& ch : d.choices) {
            allowed += allowed.empty() ? "" : ", ";
            allowed += ch;
        }
        loc.fail(n, d.key, "unknown value '" + v + "' (use " + allowed +
                               ")");
    }
    default:
        if (d.optional && is_auto(n)) {
            return;
        }
        d.set(c, parse_number(loc, n, d).si);
    }
}

spectral_window parse_window(const located& loc, const YAML::Node& n)
{
    const std::string v = trim(scalar_text(loc, n, "output.spectrum_window"));
    if (v == "none") {
        return spectral_window::none;
    }
    if (v == "hann") {
        return spectral_window::hann;
    }
    loc.fail(n, "output.spectrum_window",
             "unknown value '" + v + "' (use none, hann)");
}

std::size_t parse_count(const located& loc, const YAML::Node& n,
                        const std::string& key, bool allow_zero)
{
    key_def d;
    d.key = key;
    d.unit = unit_kind::integer;
    d.limit = allow_zero ? bound::non_negative : bound::positive;
    return static_cast<std::size_t>(parse_number(loc, n, d).si);
}

void parse_output(const located& loc, const YAML::Node& sec, run_config& rc,
                  std::set<std::string>& seen)
{
    if (const auto e = sec["emit"]) {
        seen.insert("output.emit");
        rc.output.emit.clear();
        auto add = [&](const YAML::Node& item) {
            const std::string v = trim(scalar_text(loc, item, "output.emit"));
            if (v == "all") {
                rc.output.emit = {emit_kind::trace, emit_kind::spectrum,
                                  emit_kind::metrics, emit_kind::fields};
                return;
            }
            try {
                rc.output.emit.insert(parse_emit(v));
            } catch (const validation_error& err) {
                loc.fail(item, "output.emit", err.what());
            }
        };
        if (e.IsSequence()) {
            for (const auto& item : e) {
                add(item);
            }
        } else {
            add(e);
        }
    }
    if (const auto w = sec["spectrum_window"]) {
        seen.insert("output.spectrum_window");
        rc.output.window = parse_window(loc, w);
    }
    if (const auto s = sec["field_stride"]) {
        seen.insert("output.field_stride");
        rc.output.field_stride = parse_count(loc, s, "output.field_stride",
                                             false);
    }
}

void parse_sweep(const located& loc, const YAML::Node& sec, run_config& rc,
                 std::set<std::string>& seen)
{
    rc.has_sweep = true;
    if (const auto w = sec["workers"]) {
        seen.insert("sweep.workers");
        rc.workers = parse_count(loc, w, "sweep.workers", true);
    }
    const auto axes = sec["axes"];
    if (!axes) {
        loc.fail(sec, "sweep.axes", "a sweep needs at least one axis");
    }
    seen.insert("sweep.axes");
    if (!axes.IsSequence() || axes.size() == 0) {
        loc.fail(axes, "sweep.axes", "expected a non-empty list of axes");
    }
    std::set<std::string> used;
    for (std::size_t i = 0; i < axes.size(); ++i) {
        const auto ax = axes[i];
        const std::string where = "sweep.axes[" + std::to_string(i) + "]";
        if (!ax.IsMap()) {
            loc.fail(ax, where, "expected a map with param and values");
        }
        for (const auto& kv : ax) {
            const std::string k = kv.first.Scalar();
            if (k != "param" && k != "values") {
                loc.fail(kv.first, where + "." + k, "unknown key");
            }
        }
        const auto pn = ax["param"];
        if (!pn) {
            loc.fail(ax, where + ".param", "missing");
        }
        const std::string key = trim(scalar_text(loc, pn, where + ".param"));
        const key_def* d = find_key(key);
        if (d == nullptr) {
            loc.fail(pn, where + ".param", "unknown parameter '" + key + "'");
        }
        if (!d->sweep) {
            loc.fail(pn, where + ".param",
                     "'" + key + "' cannot be swept (numeric keys only)");
        }
        if (!used.insert(key).second) {
            loc.fail(pn, where + ".param", "'" + key + "' is swept twice");
        }
        const auto vals = ax["values"];
        if (!vals || !vals.IsSequence() || vals.size() == 0) {
            loc.fail(vals ? vals : ax, where + ".values",
                     "expected a non-empty list of values");
        }
        sweep_axis axis;
        axis.key = key;
        for (const auto& v : vals) {
            const auto p = parse_number(loc, v, *d);
            axis.values.push_back(p.si);
            axis.config_values.push_back(p.config);
        }
        rc.axes.push_back(std::move(axis));
    }
}

}

std::string format_double(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string to_string(emit_kind e)
{
    switch (e) {
    case emit_kind::trace: return "trace";
    case emit_kind::spectrum: return "spectrum";
    case emit_kind::metrics: return "metrics";
    case emit_kind::fields: return "fields";
    }
    return "";
}

emit_kind parse_emit(const std::string& name)
{
    for (auto e : {emit_kind::trace, emit_kind::spectrum, emit_kind::metrics,
                   emit_kind::fields}) {
        if (to_string(e) == name) {
            return e;
        }
    }
    throw validation_error("unknown output '" + name +
                           "' (use fields, trace, spectrum, metrics, all)");
}

std::vector<std::string> config_keys()
{
    std::vector<std::string> keys;
    for (const auto& d : schema()) {
        keys.push_back(d.key);
    }
    keys.insert(keys.end(), extra_keys.begin(), extra_keys.end());
    return keys;
}

bool sweepable(const std::string& key)
{
    const key_def* d = find_key(key);
    return d != nullptr && d->sweep;
}

void apply_value(protocol_config& config, const std::string& key,
                 double si_value)
{
    const key_def* d = find_key(key);
    if (d == nullptr || !d->sweep) {
        throw validation_error("cannot set '" + key + "' numerically");
    }
    d->set(config, si_value);
}

std::string config_unit(const std::string& key)
{
    const key_def* d = find_key(key);
    return d == nullptr ? "" : config_unit_name(d->unit);
}

std::vector<sweep_point> sweep_plan(const std::vector<sweep_axis>& axes)
{
    std::vector<sweep_point> plan;
    if (axes.empty()) {
        return plan;
    }
    std::size_t total = 1;
    for (const auto& a : axes) {
        if (a.values.empty()) {
            throw validation_error("sweep axis '" + a.key + "' is empty");
        }
        total *= a.values.size();
    }
    for (std::size_t i = 0; i < total; ++i) {
        sweep_point p;
        p.index = i;
        std::size_t rest = i;
        std::vector<std::size_t> idx(axes.size());
        for (std::size_t k = axes.size(); k-- > 0;) {
            idx[k] = rest % axes[k].values.size();
            rest /= axes[k].values.size();
        }
        for (std::size_t k = 0; k < axes.size(); ++k) {
            p.values.push_back(axes[k].values[idx[k]]);
            p.config_values.push_back(axes[k].config_values[idx[k]]);
        }
        plan.push_back(std::move(p));
    }
    return plan;
}

std::vector<std::pair<std::string, std::string>>
resolved_values(const protocol_config& config)
{
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& d : schema()) {
        out.emplace_back(d.key, d.get(config));
    }
    return out;
}

run_config parse_config(const std::string& text, const std::string& source)
{
    const located loc(source);
    YAML::Node doc;
    try {
        doc = YAML::Load(text);
    } catch (const YAML::ParserException& e) {
        std::ostringstream os;
        os << source << ":" << e.mark.line + 1 << ":" << e.mark.column + 1
           << ": syntax error: " << e.msg;
        throw validation_error(os.str());
    }
    const YAML::Node& root = doc;
    if (!root.IsMap()) {
        throw validation_error(source +
                               ": the document must be a map of settings");
    }

    run_config rc;
    std::set<std::string> seen;
    auto& c = rc.protocol;

    for (const auto& kv : root) {
        const std::string name = kv.first.Scalar();
        const bool is_section =
            std::find(sections.begin(), sections.end(), name) !=
            sections.end();
        if (is_section) {
            if (!kv.second.IsMap()) {
                loc.fail(kv.second, name, "expected a map");
            }
            for (const auto& sub : kv.second) {
                const std::string key = name + "." + sub.first.Scalar();
                const bool extra = std::find(extra_keys.begin(),
                                             extra_keys.end(), key) !=
                    extra_keys.end();
                if (find_key(key) == nullptr && !extra) {
                    loc.fail(sub.first, key, "unknown key");
                }
            }
            continue;
        }
        if (find_key(name) == nullptr) {
            loc.fail(kv.first, name, "unknown key");
        }
    }

    for (const auto& d : schema()) {
        const YAML::Node n = lookup(root, d.key);
        if (!n) {
            continue;
        }
        seen.insert(d.key);
        apply_node(loc, n, d, c);
    }
    if (const auto out = root["output"]) {
        parse_output(loc, out, rc, seen);
    }
    if (const auto sw = root["sweep"]) {
        parse_sweep(loc, sw, rc, seen);
    }
    if (c.write_sign != 1 && c.write_sign != -1) {
        loc.fail(lookup(root, "coupling.write_sign"), "coupling.write_sign",
                 "must be 1 or -1");
    }

    for (const auto& k : config_keys()) {
        if (!seen.count(k)) {
            rc.defaulted.push_back(k);
        }
    }

    try {
        c.validate();
    } catch (const validation_error& e) {
        throw validation_error(source + ": " + e.what());
    }
    return rc;
}

run_config load_config(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw validation_error(path + ": cannot open configuration file");
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path);
}

}
