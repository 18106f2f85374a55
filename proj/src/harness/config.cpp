#include "misical/harness/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <fstream>
#include <cmath>
#include <sstream>

#include "misical/errors.hpp"

namespace misical::harness {

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    while (true) {
        const auto pos = s.find(sep, start);
        auto piece = trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (!piece.empty()) parts.push_back(std::move(piece));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return parts;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
    throw ConfigError(key + ": cannot parse '" + value + "' as " + expected);
}

std::uint64_t parse_u64(const std::string& key, const std::string& raw) {
    const auto v = trim(raw);
    std::uint64_t out = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || ptr != v.data() + v.size() || v.empty()) bad_value(key, raw, "an unsigned integer");
    return out;
}

std::size_t parse_size(const std::string& key, const std::string& raw) {
    return static_cast<std::size_t>(parse_u64(key, raw));
}

double parse_double(const std::string& key, const std::string& raw) {
    const auto v = trim(raw);
    if (v == "inf") return std::numeric_limits<double>::infinity();
    double out = 0.0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || ptr != v.data() + v.size() || v.empty() || std::isnan(out)) {
        bad_value(key, raw, "a number");
    }
    return out;
}

bool parse_bool(const std::string& key, const std::string& raw) {
    const auto v = trim(raw);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    bad_value(key, raw, "a boolean");
}

template <typename T, typename F>
std::vector<T> parse_list(const std::string& raw, F&& each) {
    std::vector<T> out;
    for (const auto& piece : split(raw, ',')) out.push_back(each(piece));
    return out;
}

template <typename T, typename F>
std::string join(const std::vector<T>& xs, F&& each) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) out += ',';
        out += each(xs[i]);
    }
    return out;
}

std::string reward_name(RewardKind r) { return r == RewardKind::categorical ? "categorical" : "delta_iou"; }

RewardKind parse_reward(const std::string& key, const std::string& raw) {
    const auto v = trim(raw);
    if (v == "categorical") return RewardKind::categorical;
    if (v == "delta_iou") return RewardKind::delta_iou;
    bad_value(key, raw, "categorical or delta_iou");
}

PolicyKind policy_value(const std::string& key, const std::string& raw) {
    try {
        return parse_policy(trim(raw));
    } catch (const ConfigError& e) {
        throw ConfigError(key + ": " + e.what());
    }
}

std::vector<synth::CoOccurrence> parse_cooccurrence(const std::string& key, const std::string& raw) {
    std::vector<synth::CoOccurrence> rules;
    if (trim(raw) == "none") return rules;
    for (const auto& rule : split(raw, ',')) {
        const auto fields = split(rule, ':');
        if (fields.size() != 3) bad_value(key, rule, "given:then:probability");
        rules.push_back({parse_size(key, fields[0]), parse_size(key, fields[1]), parse_double(key, fields[2])});
    }
    return rules;
}

std::string size_str(std::size_t v) { return std::to_string(v); }

ConfigKey size_key(std::string name, std::string help, std::size_t RunConfig::*outer) {
    return {name, std::move(help), [name, outer](RunConfig& c, const std::string& v) { c.*outer = parse_size(name, v); },
            [outer](const RunConfig& c) { return size_str(c.*outer); }};
}

template <typename Section, typename Field>
ConfigKey nested(std::string name, std::string help, Section RunConfig::*section, Field Section::*field) {
    ConfigKey key{name, std::move(help), {}, {}};
    if constexpr (std::is_same_v<Field, double>) {
        key.set = [name, section, field](RunConfig& c, const std::string& v) { c.*section.*field = parse_double(name, v); };
        key.get = [section, field](const RunConfig& c) { return format_double(c.*section.*field); };
    } else if constexpr (std::is_same_v<Field, bool>) {
        key.set = [name, section, field](RunConfig& c, const std::string& v) { c.*section.*field = parse_bool(name, v); };
        key.get = [section, field](const RunConfig& c) { return std::string(c.*section.*field ? "true" : "false"); };
    } else {
        key.set = [name, section, field](RunConfig& c, const std::string& v) {
            const auto parsed = parse_u64(name, v);
            if (parsed > std::numeric_limits<Field>::max()) bad_value(name, v, "an in-range integer");
            c.*section.*field = static_cast<Field>(parsed);
        };
        key.get = [section, field](const RunConfig& c) { return std::to_string(c.*section.*field); };
    }
    return key;
}

std::vector<ConfigKey> build_keys() {
    std::vector<ConfigKey> keys;
    auto add = [&](ConfigKey k) { keys.push_back(std::move(k)); };

    add({"run.pool", "pool file to run on",
         [](RunConfig& c, const std::string& v) { c.pool = trim(v); }, [](const RunConfig& c) { return c.pool.string(); }});
    add(size_key("run.target_class", "class index rewarded by the categorical and delta_iou rewards",
                 &RunConfig::target_class));
    add({"run.policy", "acquisition policy: misical, random, entropy, bald or coreset",
         [](RunConfig& c, const std::string& v) { c.policy = policy_value("run.policy", v); },
         [](const RunConfig& c) { return std::string(to_string(c.policy)); }});
    add({"run.policies", "comma-separated policies for compare",
         [](RunConfig& c, const std::string& v) {
             c.policies = parse_list<PolicyKind>(v, [](const std::string& p) { return policy_value("run.policies", p); });
         },
         [](const RunConfig& c) { return join(c.policies, [](PolicyKind p) { return std::string(to_string(p)); }); }});
    add({"run.seeds", "comma-separated run seeds",
         [](RunConfig& c, const std::string& v) {
             c.seeds = parse_list<std::uint64_t>(v, [](const std::string& s) { return parse_u64("run.seeds", s); });
         },
         [](const RunConfig& c) { return join(c.seeds, [](std::uint64_t s) { return std::to_string(s); }); }});
    add({"run.out", "output directory",
         [](RunConfig& c, const std::string& v) { c.out = trim(v); }, [](const RunConfig& c) { return c.out.string(); }});
    add({"run.reward", "categorical or delta_iou",
         [](RunConfig& c, const std::string& v) { c.reward = parse_reward("run.reward", v); },
         [](const RunConfig& c) { return reward_name(c.reward); }});
    add({"run.preset", "hyperparameter preset: default or appendix",
         [](RunConfig& c, const std::string& v) { c.preset = trim(v); }, [](const RunConfig& c) { return c.preset; }});

    add(nested("budget.initial_frac", "initial labelled fraction of the pool", &RunConfig::budget,
               &BudgetConfig::initial_fraction));
    add(nested("budget.budget_frac", "total labelled fraction at which acquisition stops", &RunConfig::budget,
               &BudgetConfig::total_fraction));
    add({"budget.initial_count", "initial labelled patch count; 0 uses budget.initial_frac",
         [](RunConfig& c, const std::string& v) {
             const auto n = parse_size("budget.initial_count", v);
             c.budget.initial_count = n == 0 ? std::nullopt : std::optional<std::size_t>(n);
         },
         [](const RunConfig& c) { return size_str(c.budget.initial_count.value_or(0)); }});

    using A = AgentConfig;
    add(nested("agent.candidates", "candidate subset size m", &RunConfig::agent, &A::candidates));
    add(nested("agent.k", "patches acquired per selection event", &RunConfig::agent, &A::k));
    add(nested("agent.batch", "replay batch size", &RunConfig::agent, &A::batch));
    add(nested("agent.buffer", "replay buffer capacity", &RunConfig::agent, &A::buffer));
    add(nested("agent.n_step", "reward accumulation horizon", &RunConfig::agent, &A::n_step));
    add(nested("agent.gamma", "discount factor", &RunConfig::agent, &A::gamma));
    add(nested("agent.beta", "soft target update rate", &RunConfig::agent, &A::beta));
    add(nested("agent.eta", "priority exponent", &RunConfig::agent, &A::eta));
    add(nested("agent.zeta_start", "initial importance-sampling exponent", &RunConfig::agent, &A::zeta_start));
    add(nested("agent.p_min", "priority floor", &RunConfig::agent, &A::p_min));
    add(nested("agent.grad_clip", "per-component gradient clip; <= 0 disables", &RunConfig::agent, &A::grad_clip));
    add({"agent.learning_rate", "RMSProp learning rate",
         [](RunConfig& c, const std::string& v) { c.agent.optimizer.learning_rate = parse_double("agent.learning_rate", v); },
         [](const RunConfig& c) { return format_double(c.agent.optimizer.learning_rate); }});
    add({"agent.rho", "RMSProp smoothing constant",
         [](RunConfig& c, const std::string& v) { c.agent.optimizer.rho = parse_double("agent.rho", v); },
         [](const RunConfig& c) { return format_double(c.agent.optimizer.rho); }});
    add({"agent.rms_epsilon", "RMSProp denominator epsilon",
         [](RunConfig& c, const std::string& v) { c.agent.optimizer.epsilon = parse_double("agent.rms_epsilon", v); },
         [](const RunConfig& c) { return format_double(c.agent.optimizer.epsilon); }});
    add({"agent.weight_decay", "L2 weight decay",
         [](RunConfig& c, const std::string& v) { c.agent.optimizer.weight_decay = parse_double("agent.weight_decay", v); },
         [](const RunConfig& c) { return format_double(c.agent.optimizer.weight_decay); }});
    add({"agent.hidden", "comma-separated hidden layer widths",
         [](RunConfig& c, const std::string& v) {
             c.agent.hidden = parse_list<std::size_t>(v, [](const std::string& s) { return parse_size("agent.hidden", s); });
         },
         [](const RunConfig& c) { return join(c.agent.hidden, size_str); }});
    add(nested("agent.pretrain_epochs", "scratch epochs over the initial set", &RunConfig::agent, &A::pretrain_epochs));
    add(nested("agent.pretrain_epsilon", "exploration rate during pretraining", &RunConfig::agent, &A::pretrain_epsilon));

    add({"epsilon.kind", "constant or linear",
         [](RunConfig& c, const std::string& v) {
             const auto s = trim(v);
             if (s == "constant") c.agent.epsilon.kind = EpsilonSchedule::Kind::constant;
             else if (s == "linear") c.agent.epsilon.kind = EpsilonSchedule::Kind::linear;
             else bad_value("epsilon.kind", v, "constant or linear");
         },
         [](const RunConfig& c) {
             return std::string(c.agent.epsilon.kind == EpsilonSchedule::Kind::constant ? "constant" : "linear");
         }});
    add({"epsilon.value", "constant exploration rate",
         [](RunConfig& c, const std::string& v) { c.agent.epsilon.value = parse_double("epsilon.value", v); },
         [](const RunConfig& c) { return format_double(c.agent.epsilon.value); }});
    add({"epsilon.start", "linear schedule start",
         [](RunConfig& c, const std::string& v) { c.agent.epsilon.start = parse_double("epsilon.start", v); },
         [](const RunConfig& c) { return format_double(c.agent.epsilon.start); }});
    add({"epsilon.end", "linear schedule end",
         [](RunConfig& c, const std::string& v) { c.agent.epsilon.end = parse_double("epsilon.end", v); },
         [](const RunConfig& c) { return format_double(c.agent.epsilon.end); }});
    add({"epsilon.steps", "linear schedule length in events; 0 spans the whole run",
         [](RunConfig& c, const std::string& v) { c.agent.epsilon.steps = parse_size("epsilon.steps", v); },
         [](const RunConfig& c) { return size_str(c.agent.epsilon.steps); }});

    add(nested("iou.simulate", "log simulated mean IoU", &RunConfig::iou, &IouSettings::simulate));
    add(nested("iou.seed", "seed for the per-class K draw", &RunConfig::iou, &IouSettings::seed));
    add(nested("iou.k_max", "upper bound of the K draw", &RunConfig::iou, &IouSettings::k_max));
    add(nested("iou.h_min", "pixel count below which a class scores 0", &RunConfig::iou, &IouSettings::h_min));
    add(nested("iou.saturation", "per-class IoU cap (inf disables)", &RunConfig::iou, &IouSettings::saturation));

    using S = synth::SynthConfig;
    add(nested("synth.patches", "number of patches", &RunConfig::synth, &S::n_patches));
    add(nested("synth.classes", "number of classes", &RunConfig::synth, &S::n_classes));
    add(nested("synth.imbalance", "prevalence power-law exponent", &RunConfig::synth, &S::imbalance));
    add(nested("synth.max_prevalence", "prevalence of class 0", &RunConfig::synth, &S::max_prevalence));
    add(nested("synth.flip", "presence-bit flip probability", &RunConfig::synth, &S::flip_probability));
    add(nested("synth.sigma", "BALD level noise", &RunConfig::synth, &S::bald_sigma));
    add(nested("synth.entropy", "write the entropy column", &RunConfig::synth, &S::entropy_column));
    add(nested("synth.padding", "fraction of padding patches", &RunConfig::synth, &S::padding_fraction));
    add(nested("synth.capacity", "pixels per patch", &RunConfig::synth, &S::patch_capacity));
    add(nested("synth.seed", "generator seed", &RunConfig::synth, &S::seed));
    add({"synth.cooccurrence", "rules given:then:probability, comma-separated, or none",
         [](RunConfig& c, const std::string& v) { c.synth.cooccurrence = parse_cooccurrence("synth.cooccurrence", v); },
         [](const RunConfig& c) {
             if (c.synth.cooccurrence.empty()) return std::string("none");
             return join(c.synth.cooccurrence, [](const synth::CoOccurrence& r) {
                 return std::to_string(r.given) + ":" + std::to_string(r.then) + ":" + format_double(r.probability);
             });
         }});
    add({"synth.out", "pool file written by synth",
         [](RunConfig& c, const std::string& v) { c.synth_out = trim(v); },
         [](const RunConfig& c) { return c.synth_out.string(); }});
    return keys;
}

const ConfigKey& find_key(const std::string& name) {
    for (const auto& k : config_keys()) {
        if (k.name == name) return k;
    }
    throw ConfigError("unknown config key '" + name + "'");
}

}  // namespace

std::string format_double(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = build_keys();
    return keys;
}

void RunConfig::validate() const {
    if (seeds.empty()) throw ConfigError("run.seeds must list at least one seed");
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        for (std::size_t j = 0; j < i; ++j) {
            if (seeds[i] == seeds[j]) throw ConfigError("run.seeds lists seed " + std::to_string(seeds[i]) + " twice");
        }
    }
    if (policies.empty()) throw ConfigError("run.policies must not be empty");
    if (!(budget.initial_fraction > 0.0 && budget.initial_fraction <= 1.0)) {
        throw ConfigError("budget.initial_frac must lie in (0, 1]");
    }
    if (!(budget.total_fraction > 0.0 && budget.total_fraction <= 1.0)) {
        throw ConfigError("budget.budget_frac must lie in (0, 1]");
    }
    if (!budget.initial_count && budget.initial_fraction > budget.total_fraction) {
        throw ConfigError("budget.initial_frac must not exceed budget.budget_frac");
    }
    if (!(iou.k_max >= 0.0)) throw ConfigError("iou.k_max must be >= 0");
    if (!(iou.h_min >= 1.0)) throw ConfigError("iou.h_min must be >= 1");
    if (!(iou.saturation > 0.0)) throw ConfigError("iou.saturation must be > 0");
    if (reward == RewardKind::delta_iou && !iou.simulate) {
        throw ConfigError("run.reward = delta_iou needs iou.simulate = true");
    }
    if (preset != "default" && preset != "appendix") throw ConfigError("run.preset must be default or appendix");
    agent.validate();
    synth.validate();
}

std::vector<std::string> preset_names() { return {"default", "appendix"}; }

ConfigLayer preset_layer(std::string_view name) {
    if (name == "default") return {};
    if (name == "appendix") {
        return {{"agent.candidates", "1280"}, {"agent.k", "64"},        {"agent.buffer", "6400"},
                {"budget.initial_count", "250"}, {"epsilon.kind", "linear"}, {"epsilon.start", "1"},
                {"epsilon.end", "0.1"},          {"epsilon.steps", "0"},      {"run.preset", "appendix"}};
    }
    throw ConfigError("unknown preset '" + std::string(name) + "' (expected default or appendix)");
}

ConfigLayer parse_config_text(std::string_view text) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    std::istringstream in{std::string(text)};
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(std::string("config file: ") + e.what());
    }
    ConfigLayer layer;
    for (const auto& [section, body] : tree) {
        if (body.empty()) throw ConfigError("config key '" + section + "' must sit inside a [section]");
        for (const auto& [key, value] : body) {
            const std::string name = section + "." + key;
            find_key(name);
            layer[name] = value.get_value<std::string>();
        }
    }
    return layer;
}

ConfigLayer read_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    std::ostringstream text;
    text << in.rdbuf();
    return parse_config_text(text.str());
}

RunConfig apply_layers(const std::vector<const ConfigLayer*>& layers) {
    RunConfig config;
    for (const auto* layer : layers) {
        for (const auto& [name, value] : *layer) find_key(name).set(config, value);
    }
    config.validate();
    return config;
}

RunConfig resolve_config(const ConfigLayer& file, const ConfigLayer& cli) {
    std::string preset = "default";
    if (auto it = file.find("run.preset"); it != file.end()) preset = trim(it->second);
    if (auto it = cli.find("run.preset"); it != cli.end()) preset = trim(it->second);
    const ConfigLayer base = preset_layer(preset);
    return apply_layers({&base, &file, &cli});
}

std::string dump_config(const RunConfig& config) {
    std::string out;
    std::string section;
    for (const auto& key : config_keys()) {
        const auto dot = key.name.find('.');
        const auto sec = key.name.substr(0, dot);
        if (sec != section) {
            if (!section.empty()) out += '\n';
            out += "[" + sec + "]\n";
            section = sec;
        }
        out += key.name.substr(dot + 1) + " = " + key.get(config) + "\n";
    }
    return out;
}

}  // namespace misical::harness
