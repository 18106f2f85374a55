#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "misical/agent.hpp"
#include "misical/baselines.hpp"
#include "misical/pool.hpp"
#include "misical/synth.hpp"

namespace misical::harness {

struct IouSettings {
    bool simulate = true;
    std::uint64_t seed = 7;
    double k_max = 0.25;
    double h_min = 1e4;
    double saturation = std::numeric_limits<double>::infinity();
};

struct RunConfig {
    std::filesystem::path pool;
    std::size_t target_class = 9;
    PolicyKind policy = PolicyKind::misical;
    std::vector<PolicyKind> policies{PolicyKind::misical, PolicyKind::random};
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    std::filesystem::path out = "out";
    RewardKind reward = RewardKind::categorical;
    std::string preset = "default";
    BudgetConfig budget;  ///< seed is replaced by the run seed
    AgentConfig agent;
    IouSettings iou;
    synth::SynthConfig synth = synth::default_config();
    std::filesystem::path synth_out = "pool.msal";

    /// Range checks across all sections; throws ConfigError naming the key.
    void validate() const;
};

/// One "section.key" entry of the schema. Every key is settable from a config file and a CLI flag.
struct ConfigKey {
    std::string name;
    std::string help;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

const std::vector<ConfigKey>& config_keys();

/// key -> raw value, applied in order over the built-in defaults.
using ConfigLayer = std::map<std::string, std::string>;

/// "default" or "appendix"; throws ConfigError for any other name.
ConfigLayer preset_layer(std::string_view name);
std::vector<std::string> preset_names();

/// INI file with [section] headers. Unknown sections or keys are rejected.
ConfigLayer read_config_file(const std::filesystem::path& path);
ConfigLayer parse_config_text(std::string_view text);

/// Built-in defaults < preset < file < cli. The preset is named by run.preset in cli, else file.
RunConfig resolve_config(const ConfigLayer& file, const ConfigLayer& cli);

/// Applies layers in order without any preset lookup.
RunConfig apply_layers(const std::vector<const ConfigLayer*>& layers);

/// Effective configuration as INI text, readable by read_config_file.
std::string dump_config(const RunConfig& config);

std::string format_double(double v);

}  // namespace misical::harness
