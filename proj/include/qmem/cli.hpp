#ifndef QMEM_CLI_HPP
#define QMEM_CLI_HPP

#include <qmem/config.hpp>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace qmem {

/* process exit status */
enum class exit_status : int {
    ok = 0,
    validation = 1,
    solver = 2,
    partial_sweep = 3
};

struct cli_options
{
    std::string config_path;
    std::filesystem::path out_dir = ".";
    std::optional<std::uint64_t> seed;
    /* overrides output.emit when set */
    std::optional<std::set<emit_kind>> emit;
    bool quiet = false;
};

struct seed_choice
{
    std::uint64_t value = 0;
    /* flag, env, config or default */
    std::string source;
};

/* --seed, then the QMEM_SEED variable, then detection.seed */
seed_choice resolve_seed(const run_config& config,
                         std::optional<std::uint64_t> flag,
                         const char* env_value);

std::string sha256_hex(const std::string& bytes);

struct emitted_file
{
    std::string name;
    std::size_t bytes = 0;
    std::string sha256;
};

/* CSV bodies, numbers printed with 17 significant digits */
std::string trace_csv(const complex_trace& tr);
std::string heterodyne_csv(const real_trace& tr);
std::string spectrum_csv(const spectrum& s);
std::string metrics_csv(const run_result& r);
std::string peaks_csv(const run_result& r);
/* rows ordered by time, then z */
std::string field_csv(const std::vector<double>& times,
                      const std::vector<cvec>& rows, double dz);

/* spectrum of the demodulated read-out window */
spectrum readout_spectrum(const run_result& r, spectral_window window);

/* writes the selected outputs of one run into dir */
std::vector<emitted_file> write_run_outputs(const run_result& r,
                                            const output_spec& out,
                                            const std::filesystem::path& dir);

/* one row of the sweep aggregate */
struct sweep_row
{
    sweep_point point;
    bool ok = false;
    std::string error;
    exit_status failure = exit_status::ok;
    double delay = 0.0;
    double sigma = 0.0;
    double efficiency = 0.0;
    std::vector<double> peak_freqs;
};

std::string aggregate_csv(const std::vector<sweep_axis>& axes,
                          const std::vector<sweep_row>& rows);

/*
 * Runs every plan point on up to `workers` threads. Each run writes its
 * outputs under dir/run_NNNN; rows come back in plan order.
 */
std::vector<sweep_row> run_sweep(const run_config& config,
                                 std::uint64_t seed,
                                 const std::filesystem::path& dir,
                                 std::size_t workers, std::ostream* log);

/* the run and sweep subcommands; diagnostics go to err */
exit_status command_run(const cli_options& opt, std::ostream& err);
exit_status command_sweep(const cli_options& opt, std::ostream& err);

}

#endif
