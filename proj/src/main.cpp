#include <qmem/cli.hpp>
#include <qmem/errors.hpp>

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv)
{
    CLI::App app{"qmem: Maxwell-Bloch simulation of gradient echo and EIT "
                 "memories"};
    app.require_subcommand(1);

    qmem::cli_options opt;
    std::string out_dir = ".";
    std::vector<std::string> emit;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", opt.config_path,
                        "YAML configuration file")
            ->required();
        sub->add_option("--out-dir", out_dir, "directory for output files");
        sub->add_option("--seed", opt.seed,
                        "noise seed; overrides QMEM_SEED and the config");
        sub->add_option("--emit", emit,
                        "outputs: fields, trace, spectrum, metrics, all")
            ->check(CLI::IsMember(
                {"fields", "trace", "spectrum", "metrics", "all"}));
        sub->add_flag("--quiet", opt.quiet, "suppress progress messages");
    };
    auto* run = app.add_subcommand("run", "execute one protocol run");
    auto* sweep = app.add_subcommand("sweep", "execute a parameter sweep");
    add_common(run);
    add_common(sweep);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : static_cast<int>(qmem::exit_status::validation);
    }

    opt.out_dir = out_dir;
    if (!emit.empty()) {
        std::set<qmem::emit_kind> kinds;
        for (const auto& e : emit) {
            if (e == "all") {
                kinds = {qmem::emit_kind::trace, qmem::emit_kind::spectrum,
                         qmem::emit_kind::metrics, qmem::emit_kind::fields};
            } else {
                kinds.insert(qmem::parse_emit(e));
            }
        }
        opt.emit = kinds;
    }

    const auto status = run->parsed() ? qmem::command_run(opt, std::cerr) :
                                        qmem::command_sweep(opt, std::cerr);
    return static_cast<int>(status);
}
