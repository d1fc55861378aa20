#include <qmem/cli.hpp>
#include <qmem/errors.hpp>

#include <openssl/evp.h>
#include <openssl/crypto.h>
#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#ifndef QMEM_VERSION
#define QMEM_VERSION "0.0.0"
#endif
#ifndef QMEM_YAML_CPP_VERSION
#define QMEM_YAML_CPP_VERSION "unknown"
#endif

namespace qmem {

namespace {

namespace fs = std::filesystem;

const std::vector<std::string> unit_names{
    "frequency: rad/s", "time: s", "length: m",
    "gradient: rad/(s m)", "rate: 1/s", "phase: rad"};

std::string us(double t)
{
    return format_double(s_to_us(t));
}

std::string utc_now()
{
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

emitted_file write_file(const fs::path& dir, const std::string& name,
                        const std::string& body)
{
    const fs::path p = dir / name;
    std::ofstream out(p, std::ios::binary);
    if (!out) {
        throw validation_error("cannot write " + p.string());
    }
    out << body;
    out.close();
    if (!out) {
        throw validation_error("failed writing " + p.string());
    }
    return {name, body.size(), sha256_hex(body)};
}

std::string read_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string csv_quote(const std::string& s)
{
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"') {
            out += '"';
        }
        out += (ch == '\n' || ch == '\r') ? ' ' : ch;
    }
    return out + "\"";
}

double metric_or_nan(const run_result& r, const char* key)
{
    const auto it = r.metrics.find(key);
    return it == r.metrics.end() ? std::numeric_limits<double>::quiet_NaN()
                                 : it->second;
}

protocol_config with_run_settings(const run_config& rc, std::uint64_t seed)
{
    protocol_config c = rc.protocol;
    c.detection.seed = seed;
    c.record_stride = rc.output.emit.count(emit_kind::fields) ?
        rc.output.field_stride : 0;
    return c;
}

/* resolved keys grouped by section, SI values */
void emit_resolved(YAML::Emitter& y, const protocol_config& c)
{
    const auto values = resolved_values(c);
    y << YAML::Key << "resolved" << YAML::Value << YAML::BeginMap;
    std::string open;
    for (const auto& [key, value] : values) {
        const auto dot = key.find('.');
        const std::string sec = dot == std::string::npos ? "" :
                                                           key.substr(0, dot);
        if (sec != open) {
            if (!open.empty()) {
                y << YAML::EndMap;
            }
            if (!sec.empty()) {
                y << YAML::Key << sec << YAML::Value << YAML::BeginMap;
            }
            open = sec;
        }
        const std::string leaf = dot == std::string::npos ?
            key : key.substr(dot + 1);
        y << YAML::Key << leaf << YAML::Value << value;
    }
    if (!open.empty()) {
        y << YAML::EndMap;
    }
    y << YAML::EndMap;
}

void emit_derived(YAML::Emitter& y, const physical_params& p)
{
    const double vg = group_velocity(p, p.omega_c_max);
    y << YAML::Key << "derived" << YAML::Value << YAML::BeginMap;
    y << YAML::Key << "coupling_rate" << YAML::Value
      << format_double(p.coupling_rate());
    y << YAML::Key << "group_velocity_at_omega_c_max" << YAML::Value
      << format_double(vg);
    y << YAML::Key << "memory_bandwidth_hz" << YAML::Value
      << format_double(p.memory_bandwidth_hz());
    y << YAML::Key << "slow_light_delay" << YAML::Value
      << format_double(p.length / vg - p.length / p.c_light);
    y << YAML::EndMap;
}

void emit_versions(YAML::Emitter& y)
{
    y << YAML::Key << "versions" << YAML::Value << YAML::BeginMap;
    y << YAML::Key << "qmem" << YAML::Value << QMEM_VERSION;
    y << YAML::Key << "compiler" << YAML::Value << __VERSION__;
    y << YAML::Key << "yaml-cpp" << YAML::Value << QMEM_YAML_CPP_VERSION;
    y << YAML::Key << "fftw" << YAML::Value << fft_library_version();
    y << YAML::Key << "openssl" << YAML::Value
      << OpenSSL_version(OPENSSL_VERSION);
    y << YAML::EndMap;
}

void emit_files(YAML::Emitter& y, const std::vector<emitted_file>& files)
{
    y << YAML::Key << "files" << YAML::Value << YAML::BeginSeq;
    for (const auto& f : files) {
        y << YAML::BeginMap;
        y << YAML::Key << "name" << YAML::Value << f.name;
        y << YAML::Key << "bytes" << YAML::Value << f.bytes;
        y << YAML::Key << "sha256" << YAML::Value << f.sha256;
        y << YAML::EndMap;
    }
    y << YAML::EndSeq;
}

struct manifest_context
{
    std::string command;
    std::string config_path;
    std::string config_sha;
    seed_choice seed;
    std::string started;
    std::string finished;
    double wall_seconds = 0.0;
    std::vector<std::string> defaulted;
};

void emit_header(YAML::Emitter& y, const manifest_context& m)
{
    y << YAML::Key << "tool" << YAML::Value << "qmem";
    y << YAML::Key << "command" << YAML::Value << m.command;
    y << YAML::Key << "config" << YAML::Value << YAML::BeginMap;
    y << YAML::Key << "path" << YAML::Value << m.config_path;
    y << YAML::Key << "sha256" << YAML::Value << m.config_sha;
    y << YAML::EndMap;
    y << YAML::Key << "seed" << YAML::Value << YAML::BeginMap;
    y << YAML::Key << "value" << YAML::Value << m.seed.value;
    y << YAML::Key << "source" << YAML::Value << m.seed.source;
    y << YAML::EndMap;
    y << YAML::Key << "started_utc" << YAML::Value << m.started;
    y << YAML::Key << "finished_utc" << YAML::Value << m.finished;
    y << YAML::Key << "wall_seconds" << YAML::Value
      << format_double(m.wall_seconds);
    emit_versions(y);
    y << YAML::Key << "units" << YAML::Value << YAML::Flow << unit_names;
    y << YAML::Key << "defaulted" << YAML::Value << YAML::BeginSeq;
    for (const auto& k : m.defaulted) {
        y << k;
    }
    y << YAML::EndSeq;
}

void emit_result(YAML::Emitter& y, const run_result& r)
{
    y << YAML::Key << "timeline" << YAML::Value << YAML::BeginSeq;
    for (const auto& s : r.segments) {
        y << YAML::Flow << YAML::BeginMap;
        y << YAML::Key << "role" << YAML::Value << to_string(s.seg.role);
        y << YAML::Key << "mode" << YAML::Value << to_string(s.seg.mode);
        y << YAML::Key << "solver" << YAML::Value << s.solver;
        y << YAML::Key << "start" << YAML::Value
          << format_double(s.seg.start);
        y << YAML::Key << "duration" << YAML::Value
          << format_double(s.seg.duration);
        y << YAML::Key << "gradient_sign" << YAML::Value
          << s.seg.gradient_sign;
        y << YAML::EndMap;
    }
    y << YAML::EndSeq;
    y << YAML::Key << "metrics" << YAML::Value << YAML::BeginMap;
    for (const auto& [k, v] : r.metrics) {
        y << YAML::Key << k << YAML::Value << format_double(v);
    }
    y << YAML::EndMap;
    y << YAML::Key << "peak_times" << YAML::Value << YAML::Flow
      << YAML::BeginSeq;
    for (double t : r.peak_times) {
        y << format_double(t);
    }
    y << YAML::EndSeq;
    y << YAML::Key << "peak_freqs" << YAML::Value << YAML::Flow
      << YAML::BeginSeq;
    for (double w : r.peak_freqs) {
        y << format_double(w);
    }
    y << YAML::EndSeq;
    y << YAML::Key << "warnings" << YAML::Value << YAML::BeginSeq;
    for (const auto& w : r.warnings) {
        y << w;
    }
    y << YAML::EndSeq;
}

std::string finish(YAML::Emitter& y)
{
    if (!y.good()) {
        throw std::logic_error("manifest emitter: " + y.GetLastError());
    }
    return std::string(y.c_str()) + "\n";
}

std::string run_manifest(const manifest_context& m, const protocol_config& c,
                         const run_result& r,
                         const std::vector<emitted_file>& files)
{
    YAML::Emitter y;
    y << YAML::BeginMap;
    emit_header(y, m);
    emit_resolved(y, c);
    emit_derived(y, c.params);
    emit_result(y, r);
    emit_files(y, files);
    y << YAML::EndMap;
    return finish(y);
}

std::string sweep_row_text(const sweep_row& row)
{
    return row.ok ? "ok" : "failed: " + row.error;
}

void prepare_dir(const fs::path& dir)
{
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw validation_error("cannot create output directory " +
                               dir.string() + ": " + ec.message());
    }
}

struct loaded
{
    run_config config;
    std::string text;
    seed_choice seed;
};

loaded load(const cli_options& opt)
{
    loaded l;
    if (opt.config_path.empty()) {
        throw validation_error("--config is required");
    }
    l.text = read_file(opt.config_path);
    l.config = load_config(opt.config_path);
    if (opt.emit) {
        l.config.output.emit = *opt.emit;
    }
    l.seed = resolve_seed(l.config, opt.seed, std::getenv("QMEM_SEED"));
    return l;
}

template <typename F>
exit_status guarded(std::ostream& err, F&& body)
{
    try {
        return body();
    } catch (const validation_error& e) {
        err << "qmem: invalid input: " << e.what() << "\n";
        return exit_status::validation;
    } catch (const solver_error& e) {
        err << "qmem: solver failure: " << e.what() << "\n";
        return exit_status::solver;
    } catch (const analysis_error& e) {
        err << "qmem: analysis failure: " << e.what() << "\n";
        return exit_status::solver;
    }
}

}

seed_choice resolve_seed(const run_config& config,
                         std::optional<std::uint64_t> flag,
                         const char* env_value)
{
    if (flag) {
        return {*flag, "flag"};
    }
    if (env_value != nullptr && *env_value != '\0') {
        const std::string s = env_value;
        std::uint64_t v = 0;
        const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
        if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
            throw validation_error("QMEM_SEED must be a non-negative "
                                   "integer, got '" + s + "'");
        }
        return {v, "env"};
    }
    const bool defaulted = std::find(config.defaulted.begin(),
                                     config.defaulted.end(),
                                     "detection.seed") !=
        config.defaulted.end();
    return {config.protocol.detection.seed,
            defaulted ? "default" : "config"};
}

std::string sha256_hex(const std::string& bytes)
{
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(),
                   nullptr) != 1) {
        throw std::runtime_error("SHA-256 digest failed");
    }
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[md[i] >> 4];
        out += hex[md[i] & 0xf];
    }
    return out;
}

std::string trace_csv(const complex_trace& tr)
{
    std::string s = "time_us,re,im\n";
    for (std::size_t n = 0; n < tr.size(); ++n) {
        s += us(tr.time(n)) + "," + format_double(tr.values[n].real()) +
            "," + format_double(tr.values[n].imag()) + "\n";
    }
    return s;
}

std::string heterodyne_csv(const real_trace& tr)
{
    std::string s = "time_us,volts\n";
    for (std::size_t n = 0; n < tr.size(); ++n) {
        s += us(tr.time(n)) + "," + format_double(tr.values[n]) + "\n";
    }
    return s;
}

std::string spectrum_csv(const spectrum& sp)
{
    std::string s = "freq_MHz,re,im,mag\n";
    for (std::size_t j = 0; j < sp.omega.size(); ++j) {
        s += format_double(rad_s_to_mhz(sp.omega[j])) + "," +
            format_double(sp.amplitude[j].real()) + "," +
            format_double(sp.amplitude[j].imag()) + "," +
            format_double(sp.magnitude[j]) + "\n";
    }
    return s;
}

std::string metrics_csv(const run_result& r)
{
    std::string s = "name,value\n";
    for (const auto& [k, v] : r.metrics) {
        s += k + "," + format_double(v) + "\n";
    }
    return s;
}

std::string peaks_csv(const run_result& r)
{
    std::string s = "domain,location\n";
    for (double t : r.peak_times) {
        s += "time_us," + us(t) + "\n";
    }
    for (double w : r.peak_freqs) {
        s += "freq_MHz," + format_double(rad_s_to_mhz(w)) + "\n";
    }
    return s;
}

std::string field_csv(const std::vector<double>& times,
                      const std::vector<cvec>& rows, double dz)
{
    std::string s = "t_us,z_mm,re,im\n";
    for (std::size_t n = 0; n < times.size(); ++n) {
        const std::string t = us(times[n]) + ",";
        for (std::size_t j = 0; j < rows[n].size(); ++j) {
            s += t + format_double(m_to_mm(static_cast<double>(j) * dz)) +
                "," + format_double(rows[n][j].real()) + "," +
                format_double(rows[n][j].imag()) + "\n";
        }
    }
    return s;
}

spectrum readout_spectrum(const run_result& r, spectral_window window)
{
    complex_trace out;
    out.dt = r.detected.dt;
    for (std::size_t n = 0; n < r.detected.size(); ++n) {
        const double t = r.detected.time(n);
        if (t >= r.read_begin && t <= r.read_end) {
            if (out.values.empty()) {
                out.t0 = t;
            }
            out.values.push_back(r.detected.values[n]);
        }
    }
    return compute_spectrum(out, window, 8);
}

std::vector<emitted_file> write_run_outputs(const run_result& r,
                                            const output_spec& out,
                                            const fs::path& dir)
{
    prepare_dir(dir);
    std::vector<emitted_file> files;
    if (out.emit.count(emit_kind::trace)) {
        files.push_back(write_file(dir, "input.csv", trace_csv(r.input)));
        files.push_back(write_file(dir, "exit.csv", trace_csv(r.exit)));
        files.push_back(write_file(dir, "detected.csv",
                                   trace_csv(r.detected)));
        files.push_back(write_file(dir, "heterodyne.csv",
                                   heterodyne_csv(r.heterodyne)));
    }
    if (out.emit.count(emit_kind::spectrum)) {
        files.push_back(write_file(dir, "spectrum.csv",
                                   spectrum_csv(readout_spectrum(
                                       r, out.window))));
    }
    if (out.emit.count(emit_kind::metrics)) {
        files.push_back(write_file(dir, "metrics.csv", metrics_csv(r)));
        files.push_back(write_file(dir, "peaks.csv", peaks_csv(r)));
    }
    if (out.emit.count(emit_kind::fields) && r.fields) {
        files.push_back(write_file(
            dir, "field_signal.csv",
            field_csv(r.fields->times, r.fields->signal, r.grid.dz)));
        files.push_back(write_file(
            dir, "field_coherence.csv",
            field_csv(r.fields->times, r.fields->coherence, r.grid.dz)));
    }
    return files;
}

std::string aggregate_csv(const std::vector<sweep_axis>& axes,
                          const std::vector<sweep_row>& rows)
{
    std::string s;
    for (const auto& a : axes) {
        const std::string unit = config_unit(a.key);
        s += a.key + (unit.empty() ? "" : "_" + unit) + ",";
    }
    s += "delay_us,sigma_us,efficiency,n_peaks,peak_freqs_MHz,status,"
         "error\n";
    for (const auto& row : rows) {
        for (double v : row.point.config_values) {
            s += format_double(v) + ",";
        }
        if (row.ok) {
            std::string peaks;
            for (double w : row.peak_freqs) {
                peaks += (peaks.empty() ? "" : ";") +
                    format_double(rad_s_to_mhz(w));
            }
            s += us(row.delay) + "," + us(row.sigma) + "," +
                format_double(row.efficiency) + "," +
                std::to_string(row.peak_freqs.size()) + "," + peaks +
                ",ok,\n";
        } else {
            s += ",,,,,failed," + csv_quote(row.error) + "\n";
        }
    }
    return s;
}

std::vector<sweep_row> run_sweep(const run_config& config,
                                 std::uint64_t seed, const fs::path& dir,
                                 std::size_t workers, std::ostream* log)
{
    const auto plan = sweep_plan(config.axes);
    std::vector<sweep_row> rows(plan.size());
    if (workers == 0) {
        workers = std::max(1u, std::thread::hardware_concurrency());
    }
    workers = std::min(workers, plan.size());
    std::atomic<std::size_t> next{0};
    std::atomic<std::size_t> done{0};
    std::mutex log_mutex;

    auto job = [&](const sweep_point& pt) {
        sweep_row row;
        row.point = pt;
        char name[32];
        std::snprintf(name, sizeof name, "run_%04zu", pt.index);
        try {
            protocol_config c = with_run_settings(config, seed + pt.index);
            for (std::size_t k = 0; k < config.axes.size(); ++k) {
                apply_value(c, config.axes[k].key, pt.values[k]);
            }
            const auto t0 = std::chrono::steady_clock::now();
            const auto started = utc_now();
            const auto r = run_protocol(c);
            const auto files = write_run_outputs(r, config.output,
                                                 dir / name);
            manifest_context m;
            m.command = "sweep";
            m.seed = {c.detection.seed, "sweep"};
            m.started = started;
            m.finished = utc_now();
            m.wall_seconds = std::chrono::duration<double>(
                std::chrono::steady_clock::now() - t0).count();
            m.defaulted = config.defaulted;
            write_file(dir / name, "manifest.yaml",
                       run_manifest(m, c, r, files));
            row.ok = true;
            row.delay = metric_or_nan(r, "delay");
            row.sigma = metric_or_nan(r, "sigma_out");
            row.efficiency = metric_or_nan(r, "efficiency");
            row.peak_freqs = r.peak_freqs;
        } catch (const validation_error& e) {
            row.error = e.what();
            row.failure = exit_status::validation;
        } catch (const solver_error& e) {
            row.error = e.what();
            row.failure = exit_status::solver;
        } catch (const analysis_error& e) {
            row.error = e.what();
            row.failure = exit_status::solver;
        }
        return row;
    };

    auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= plan.size()) {
                return;
            }
            rows[i] = job(plan[i]);
            const std::size_t n = ++done;
            if (log != nullptr) {
                std::lock_guard<std::mutex> lock(log_mutex);
                *log << "qmem: run " << n << "/" << plan.size() << " (#"
                     << i << ") " << sweep_row_text(rows[i]) << "\n";
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t w = 1; w < workers; ++w) {
        pool.emplace_back(worker);
    }
    worker();
    for (auto& t : pool) {
        t.join();
    }
    return rows;
}

exit_status command_run(const cli_options& opt, std::ostream& err)
{
    return guarded(err, [&]() {
        const auto l = load(opt);
        if (l.config.has_sweep && !opt.quiet) {
            err << "qmem: run ignores the sweep section; use qmem sweep\n";
        }
        prepare_dir(opt.out_dir);
        const protocol_config c = with_run_settings(l.config, l.seed.value);
        const auto t0 = std::chrono::steady_clock::now();
        manifest_context m;
        m.command = "run";
        m.config_path = opt.config_path;
        m.config_sha = sha256_hex(l.text);
        m.seed = l.seed;
        m.started = utc_now();
        m.defaulted = l.config.defaulted;

        const auto r = run_protocol(c);
        const auto files = write_run_outputs(r, l.config.output,
                                             opt.out_dir);
        m.finished = utc_now();
        m.wall_seconds = std::chrono::duration<double>(
            std::chrono::steady_clock::now() - t0).count();
        write_file(opt.out_dir, "manifest.yaml",
                   run_manifest(m, c, r, files));
        if (!opt.quiet) {
            for (const auto& w : r.warnings) {
                err << "qmem: warning: " << w << "\n";
            }
            err << "qmem: " << to_string(c.protocol) << " done, "
                << files.size() + 1 << " files in " << opt.out_dir.string()
                << "\n";
        }
        return exit_status::ok;
    });
}

exit_status command_sweep(const cli_options& opt, std::ostream& err)
{
    return guarded(err, [&]() {
        const auto l = load(opt);
        if (l.config.axes.empty()) {
            throw validation_error(opt.config_path +
                                   ": sweep.axes: a sweep needs at least "
                                   "one axis");
        }
        prepare_dir(opt.out_dir);
        const auto t0 = std::chrono::steady_clock::now();
        manifest_context m;
        m.command = "sweep";
        m.config_path = opt.config_path;
        m.config_sha = sha256_hex(l.text);
        m.seed = l.seed;
        m.started = utc_now();
        m.defaulted = l.config.defaulted;

        const auto rows = run_sweep(l.config, l.seed.value, opt.out_dir,
                                    l.config.workers,
                                    opt.quiet ? nullptr : &err);
        std::vector<emitted_file> files{write_file(
            opt.out_dir, "aggregate.csv", aggregate_csv(l.config.axes,
                                                        rows))};
        m.finished = utc_now();
        m.wall_seconds = std::chrono::duration<double>(
            std::chrono::steady_clock::now() - t0).count();

        std::size_t failed = 0;
        YAML::Emitter y;
        y << YAML::BeginMap;
        emit_header(y, m);
        emit_resolved(y, l.config.protocol);
        emit_derived(y, l.config.protocol.params);
        y << YAML::Key << "axes" << YAML::Value << YAML::BeginSeq;
        for (const auto& a : l.config.axes) {
            y << YAML::BeginMap;
            y << YAML::Key << "param" << YAML::Value << a.key;
            y << YAML::Key << "values" << YAML::Value << YAML::Flow
              << YAML::BeginSeq;
            for (double v : a.values) {
                y << format_double(v);
            }
            y << YAML::EndSeq << YAML::EndMap;
        }
        y << YAML::EndSeq;
        y << YAML::Key << "runs" << YAML::Value << YAML::BeginSeq;
        for (const auto& row : rows) {
            char name[32];
            std::snprintf(name, sizeof name, "run_%04zu", row.point.index);
            y << YAML::Flow << YAML::BeginMap;
            y << YAML::Key << "dir" << YAML::Value << name;
            y << YAML::Key << "seed" << YAML::Value
              << l.seed.value + row.point.index;
            y << YAML::Key << "status" << YAML::Value
              << (row.ok ? "ok" : "failed");
            if (!row.ok) {
                y << YAML::Key << "error" << YAML::Value << row.error;
                ++failed;
            }
            y << YAML::EndMap;
        }
        y << YAML::EndSeq;
        emit_files(y, files);
        y << YAML::EndMap;
        write_file(opt.out_dir, "manifest.yaml", finish(y));

        if (!opt.quiet) {
            err << "qmem: sweep done, " << rows.size() - failed << "/"
                << rows.size() << " runs succeeded\n";
        }
        return failed == 0 ? exit_status::ok : exit_status::partial_sweep;
    });
}

}
