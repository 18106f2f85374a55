#include <cstdio>
#include <exception>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "misical/errors.hpp"
#include "misical/harness/config.hpp"
#include "misical/harness/runner.hpp"
#include "misical/harness/verify.hpp"
#include "misical/pool_io.hpp"

namespace {

using namespace misical;
using namespace misical::harness;

enum ExitCode : int { kOk = 0, kFailure = 1, kConfig = 2 };

/// Short flags per subcommand, each an alias of a schema key.
using Aliases = std::map<std::string, std::vector<std::string>>;

struct ConfiguredCommand {
    CLI::App* app = nullptr;
    std::map<std::string, std::string> values;
    std::map<std::string, CLI::Option*> options;
    std::string config_file;
    bool force = false;
};

void register_keys(ConfiguredCommand& cmd, const Aliases& aliases) {
    for (const auto& key : config_keys()) {
        std::string names = "--" + key.name;
        if (auto it = aliases.find(key.name); it != aliases.end()) {
            for (const auto& a : it->second) names += "," + a;
        }
        cmd.options[key.name] = cmd.app->add_option(names, cmd.values[key.name], key.help)->group("Config keys");
    }
    cmd.app->add_option("--config", cmd.config_file, "INI config file; CLI flags override its keys");
    cmd.app->add_flag("--force", cmd.force, "overwrite existing outputs");
}

RunConfig resolve(const ConfiguredCommand& cmd) {
    ConfigLayer file;
    if (!cmd.config_file.empty()) file = read_config_file(cmd.config_file);
    ConfigLayer cli;
    for (const auto& [name, opt] : cmd.options) {
        if (opt->count() > 0) cli[name] = cmd.values.at(name);
    }
    return resolve_config(file, cli);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"misical: reinforcement-learned single-class patch acquisition"};
    app.require_subcommand(1);

    const Aliases run_aliases{{"run.pool", {"--pool"}},
                              {"run.target_class", {"--target-class"}},
                              {"run.policy", {"--policy"}},
                              {"run.seeds", {"--seeds"}},
                              {"run.out", {"--out"}},
                              {"run.preset", {"--preset"}},
                              {"budget.budget_frac", {"--budget-frac"}},
                              {"budget.initial_frac", {"--initial-frac"}}};
    Aliases compare_aliases = run_aliases;
    compare_aliases.erase("run.policy");
    compare_aliases["run.policies"] = {"--policy", "--policies"};
    const Aliases synth_aliases{{"synth.out", {"--out"}},
                                {"synth.classes", {"--classes"}},
                                {"synth.patches", {"--patches"}},
                                {"synth.seed", {"--seed"}},
                                {"run.preset", {"--preset"}}};

    ConfiguredCommand run, compare, synth;
    run.app = app.add_subcommand("run", "pretrain and explore one policy over the configured seeds");
    compare.app = app.add_subcommand("compare", "run several policies over shared seeds and tabulate them");
    synth.app = app.add_subcommand("synth", "generate a synthetic pool file");
    register_keys(run, run_aliases);
    register_keys(compare, compare_aliases);
    register_keys(synth, synth_aliases);

    auto* verify = app.add_subcommand("verify", "run the fast property suites");
    std::string fixture;
    verify->add_option("--pool-fixture", fixture, "pool file that must also read cleanly");

    auto* dump = app.add_subcommand("inspect", "print a pool file header, or the whole pool as CSV");
    std::string inspect_path;
    bool as_csv = false;
    dump->add_option("pool", inspect_path, "pool file")->required();
    dump->add_flag("--csv", as_csv, "export every record as CSV");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfig;
    }

    try {
        if (run.app->parsed()) {
            cmd_run(resolve(run), run.force, std::cout);
        } else if (compare.app->parsed()) {
            cmd_compare(resolve(compare), compare.force, std::cout);
        } else if (synth.app->parsed()) {
            cmd_synth(resolve(synth), synth.force, std::cout);
        } else if (verify->parsed()) {
            std::optional<std::filesystem::path> path;
            if (!fixture.empty()) path = fixture;
            bool ok = true;
            for (const auto& r : run_verify(path, std::cout)) ok = ok && r.passed;
            return ok ? kOk : kFailure;
        } else if (dump->parsed()) {
            const auto data = io::read_pool_file(inspect_path);
            if (as_csv) {
                io::export_csv(std::cout, data);
            } else {
                std::cout << "version " << data.header.version << ", " << data.header.n_patches << " patches, "
                          << data.header.n_classes << " classes, capacity " << data.header.patch_capacity
                          << (data.header.has_entropy() ? ", entropy column" : "") << '\n';
            }
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kConfig;
    } catch (const io::FormatError& e) {
        std::fprintf(stderr, "pool format error: %s\n", e.what());
        return kFailure;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kFailure;
    }
    return kOk;
}
