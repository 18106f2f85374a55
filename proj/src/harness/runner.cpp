#include "misical/harness/runner.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <future>
#include <limits>
#include <map>

#include "misical/errors.hpp"
#include "misical/harness/stats.hpp"

namespace misical::harness {

namespace fs = std::filesystem;

std::string format_cell(double v, int significant) {
    if (std::isnan(v)) return {};
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", significant, v);
    return buf;
}

double printed(double v) { return std::strtod(format_cell(v, 6).c_str(), nullptr); }

SeedResult run_seed(const RunConfig& config, const io::PoolData& data, PolicyKind policy, std::uint64_t seed) {
    BudgetConfig budget = config.budget;
    budget.seed = seed;
    Pool pool(data.records, data.header.n_classes, data.header.patch_capacity, budget);
    // The pool draws its initial set from the bare seed; decorrelate the run stream from it.
    Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);

    std::optional<synth::IouModel> iou;
    if (config.iou.simulate) {
        iou = synth::make_iou_model(pool.n_classes(), config.iou.seed, config.iou.k_max, config.iou.h_min);
        iou->saturation = config.iou.saturation;
    }
    ExploreOptions options;
    options.policy = policy;
    options.candidates = config.agent.candidates;
    options.k = config.agent.k;
    options.target_class = config.target_class;
    options.reward = config.reward;
    options.epsilon = config.agent.epsilon;
    options.iou = iou ? &*iou : nullptr;

    SeedResult result;
    result.seed = seed;
    result.policy = policy;
    result.initial_labelled = pool.labelled_count();
    if (policy == PolicyKind::misical) {
        Agent agent(config.agent, kBaldFeatureCount + pool.n_classes(), rng);
        agent.set_zeta_horizon(config.agent.pretrain_epochs *
                                   pretrain_events_per_epoch(pool.initial_indices().size(), options.k) +
                               planned_events(pool, options.k));
        if (config.agent.pretrain_epochs > 0 && !pool.initial_indices().empty()) {
            result.pretrain = pretrain(agent, pool, options, rng);
        }
        result.log = explore(pool, options, &agent, rng);
    } else {
        result.log = explore(pool, options, nullptr, rng);
    }
    return result;
}

FinalMetrics final_metrics(const SeedResult& result) {
    FinalMetrics m;
    m.labelled_count = static_cast<double>(result.initial_labelled);
    m.mean_iou = std::numeric_limits<double>::quiet_NaN();
    if (result.log.events.empty()) return m;
    const auto& last = result.log.events.back();
    m.cumulative_reward = last.cumulative_reward;
    m.target_patches = static_cast<double>(last.target_patches);
    m.labelled_count = static_cast<double>(last.labelled_count);
    m.histogram_entropy = last.histogram_entropy;
    if (last.mean_iou) m.mean_iou = *last.mean_iou;
    return m;
}

double target_patches_at(const RunLog& log, std::size_t acquisitions) {
    for (const auto& ev : log.events) {
        if (ev.labelled_count - log.initial_labelled >= acquisitions) return static_cast<double>(ev.target_patches);
    }
    return log.events.empty() ? 0.0 : static_cast<double>(log.events.back().target_patches);
}

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double opt_or_nan(const std::optional<double>& v) { return v ? *v : kNaN; }

}  // namespace

void write_run_csv(std::ostream& out, const RunLog& log) {
    out << "event,epsilon,cumulative_reward,labelled_count,histogram_entropy,dqn_loss,simulated_mean_iou,"
           "target_patches\n";
    for (const auto& ev : log.events) {
        out << ev.event << ',' << format_cell(ev.epsilon) << ',' << format_cell(ev.cumulative_reward) << ','
            << ev.labelled_count << ',' << format_cell(ev.histogram_entropy) << ',' << format_cell(opt_or_nan(ev.loss))
            << ',' << format_cell(opt_or_nan(ev.mean_iou)) << ',' << ev.target_patches << '\n';
    }
}

void write_timing_csv(std::ostream& out, const RunLog& log) {
    out << "event,wall_ms\n";
    for (const auto& ev : log.events) out << ev.event << ',' << format_cell(ev.wall_ms, 6) << '\n';
}

void write_smoothed_csv(std::ostream& out, const RunLog& log, std::size_t window) {
    std::vector<double> loss, entropy;
    for (const auto& ev : log.events) {
        loss.push_back(opt_or_nan(ev.loss));
        entropy.push_back(ev.histogram_entropy);
    }
    const auto loss_s = moving_average(loss, window);
    const auto entropy_s = moving_average(entropy, window);
    out << "event,dqn_loss_smoothed,histogram_entropy_smoothed\n";
    for (std::size_t i = 0; i < log.events.size(); ++i) {
        out << log.events[i].event << ',' << format_cell(loss_s[i]) << ',' << format_cell(entropy_s[i]) << '\n';
    }
}

void write_pretrain_csv(std::ostream& out, const std::vector<PretrainEpoch>& epochs) {
    out << "epoch,event,epsilon,cumulative_reward,target_patches,target_total,dqn_loss\n";
    for (const auto& epoch : epochs) {
        for (const auto& ev : epoch.log) {
            out << epoch.epoch << ',' << ev.event << ',' << format_cell(ev.epsilon) << ','
                << format_cell(ev.cumulative_reward) << ',' << ev.target_patches << ',' << epoch.target_total << ','
                << format_cell(opt_or_nan(ev.loss)) << '\n';
        }
    }
}

void write_summary_csv(std::ostream& out, const std::vector<SeedResult>& results) {
    out << "seed,policy,events,labelled_count,cumulative_reward,target_patches,histogram_entropy,simulated_mean_iou\n";
    std::vector<std::vector<double>> columns(5);
    for (const auto& r : results) {
        const auto m = final_metrics(r);
        const double values[] = {m.labelled_count, m.cumulative_reward, m.target_patches, m.histogram_entropy,
                                 m.mean_iou};
        out << r.seed << ',' << to_string(r.policy) << ',' << r.log.events.size();
        for (std::size_t c = 0; c < 5; ++c) {
            out << ',' << format_cell(values[c], 6);
            columns[c].push_back(printed(values[c]));
        }
        out << '\n';
    }
    auto stat_row = [&](const char* label, auto&& fn) {
        out << label << ",,";
        for (const auto& col : columns) {
            const bool any_nan = std::any_of(col.begin(), col.end(), [](double v) { return std::isnan(v); });
            out << ',' << (any_nan || col.empty() ? std::string() : format_cell(fn(col), 6));
        }
        out << '\n';
    };
    stat_row("mean", [](const std::vector<double>& c) { return mean(c); });
    stat_row("std", [](const std::vector<double>& c) { return sample_std(c); });
}

namespace {

void guard_outputs(const std::vector<fs::path>& paths, bool force) {
    if (force) return;
    for (const auto& p : paths) {
        if (fs::exists(p)) throw OutputExistsError(p.string() + " exists; pass --force to overwrite");
    }
}

void write_file(const fs::path& path, const std::function<void(std::ostream&)>& body, CommandReport& report) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    body(out);
    if (!out) throw std::runtime_error("write failed for " + path.string());
    report.written.push_back(path);
}

std::vector<fs::path> seed_paths(const fs::path& dir, std::uint64_t seed, PolicyKind policy) {
    const std::string s = std::to_string(seed);
    std::vector<fs::path> paths{dir / ("run_seed" + s + ".csv"), dir / ("run_seed" + s + ".timing.csv"),
                                dir / ("run_seed" + s + "_smoothed.csv")};
    if (policy == PolicyKind::misical) paths.push_back(dir / ("pretrain_seed" + s + ".csv"));
    return paths;
}

void write_seed_files(const fs::path& dir, const SeedResult& r, CommandReport& report) {
    const auto paths = seed_paths(dir, r.seed, r.policy);
    write_file(paths[0], [&](std::ostream& o) { write_run_csv(o, r.log); }, report);
    write_file(paths[1], [&](std::ostream& o) { write_timing_csv(o, r.log); }, report);
    write_file(paths[2], [&](std::ostream& o) { write_smoothed_csv(o, r.log); }, report);
    if (paths.size() > 3) write_file(paths[3], [&](std::ostream& o) { write_pretrain_csv(o, r.pretrain); }, report);
}

io::PoolData load_pool(const RunConfig& config) {
    if (config.pool.empty()) throw ConfigError("run.pool (--pool) is required");
    if (!fs::exists(config.pool)) throw ConfigError("pool file " + config.pool.string() + " does not exist");
    auto data = io::read_pool_file(config.pool);
    if (config.target_class >= data.header.n_classes) {
        throw ConfigError("run.target_class " + std::to_string(config.target_class) + " outside the pool's " +
                          std::to_string(data.header.n_classes) + " classes");
    }
    return data;
}

std::vector<SeedResult> run_seeds(const RunConfig& config, const io::PoolData& data, PolicyKind policy) {
    std::vector<std::future<SeedResult>> jobs;
    for (auto seed : config.seeds) {
        jobs.push_back(std::async(std::launch::async, [&config, &data, policy, seed] {
            return run_seed(config, data, policy, seed);
        }));
    }
    std::vector<SeedResult> results;
    for (auto& j : jobs) results.push_back(j.get());
    return results;
}

void log_finals(std::ostream& log, const std::vector<SeedResult>& results) {
    for (const auto& r : results) {
        const auto m = final_metrics(r);
        log << "  " << to_string(r.policy) << " seed " << r.seed << ": " << r.log.events.size() << " events, "
            << m.target_patches << " target patches, labelled " << m.labelled_count << '\n';
    }
}

}  // namespace

CommandReport cmd_run(const RunConfig& config, bool force, std::ostream& log) {
    config.validate();
    std::vector<fs::path> planned{config.out / "summary.csv", config.out / "config.ini"};
    for (auto seed : config.seeds) {
        for (auto& p : seed_paths(config.out, seed, config.policy)) planned.push_back(p);
    }
    guard_outputs(planned, force);
    const auto data = load_pool(config);
    log << "run: policy " << to_string(config.policy) << ", " << config.seeds.size() << " seed(s), pool "
        << data.header.n_patches << " patches\n";
    const auto results = run_seeds(config, data, config.policy);

    CommandReport report;
    write_file(config.out / "config.ini", [&](std::ostream& o) { o << dump_config(config); }, report);
    for (const auto& r : results) write_seed_files(config.out, r, report);
    write_file(config.out / "summary.csv", [&](std::ostream& o) { write_summary_csv(o, results); }, report);
    log_finals(log, results);
    return report;
}

std::vector<CompareRow> compare_table(const std::vector<std::vector<SeedResult>>& per_policy) {
    std::vector<CompareRow> rows;
    std::vector<std::vector<double>> yields;
    for (const auto& results : per_policy) {
        CompareRow row;
        row.policy = results.empty() ? PolicyKind::random : results.front().policy;
        std::vector<double> y, iou;
        for (const auto& r : results) {
            const auto m = final_metrics(r);
            y.push_back(printed(m.target_patches));
            iou.push_back(printed(m.mean_iou));
        }
        row.yield_mean = mean(y);
        row.yield_std = sample_std(y);
        row.iou_mean = mean(iou);
        row.iou_std = sample_std(iou);
        rows.push_back(row);
        yields.push_back(std::move(y));
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        if (rows[i].yield_mean > rows[best].yield_mean) best = i;
    }
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (i == best || yields[i].size() < 2 || yields[best].size() < 2) continue;
        rows[i].p_value = welch_t_test(yields[best], yields[i]).p_value;
    }
    // Only the best row carries the flag: it is set when every other row differs at p < 0.05.
    bool best_significant = rows.size() > 1;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (i != best) best_significant = best_significant && rows[i].p_value && *rows[i].p_value < 0.05;
    }
    rows[best].significant = best_significant;
    return rows;
}

CommandReport cmd_compare(const RunConfig& config, bool force, std::ostream& log) {
    config.validate();
    if (config.policies.size() < 2) throw ConfigError("compare needs at least two policies in run.policies");
    std::vector<std::string> dirs;
    std::map<PolicyKind, int> seen;
    for (auto p : config.policies) {
        const int n = ++seen[p];
        dirs.push_back(std::string(to_string(p)) + (n > 1 ? "_" + std::to_string(n) : ""));
    }
    std::vector<fs::path> planned{config.out / "compare.csv", config.out / "curves.csv", config.out / "config.ini"};
    for (std::size_t i = 0; i < dirs.size(); ++i) {
        planned.push_back(config.out / dirs[i] / "summary.csv");
        for (auto seed : config.seeds) {
            for (auto& p : seed_paths(config.out / dirs[i], seed, config.policies[i])) planned.push_back(p);
        }
    }
    guard_outputs(planned, force);
    const auto data = load_pool(config);

    CommandReport report;
    write_file(config.out / "config.ini", [&](std::ostream& o) { o << dump_config(config); }, report);
    std::vector<std::vector<SeedResult>> per_policy;
    for (std::size_t i = 0; i < config.policies.size(); ++i) {
        log << "compare: running " << dirs[i] << '\n';
        auto results = run_seeds(config, data, config.policies[i]);
        for (const auto& r : results) write_seed_files(config.out / dirs[i], r, report);
        write_file(config.out / dirs[i] / "summary.csv", [&](std::ostream& o) { write_summary_csv(o, results); },
                   report);
        log_finals(log, results);
        per_policy.push_back(std::move(results));
    }

    const auto rows = compare_table(per_policy);
    write_file(config.out / "compare.csv",
               [&](std::ostream& o) {
                   o << "policy,target_patches_mean,target_patches_std,simulated_mean_iou_mean,"
                        "simulated_mean_iou_std,p_value,significant\n";
                   for (std::size_t i = 0; i < rows.size(); ++i) {
                       const auto& r = rows[i];
                       o << dirs[i] << ',' << format_cell(r.yield_mean, 6) << ',' << format_cell(r.yield_std, 6) << ','
                         << format_cell(r.iou_mean, 6) << ',' << format_cell(r.iou_std, 6) << ','
                         << (r.p_value ? format_cell(*r.p_value, 6) : std::string()) << ','
                         << (r.significant ? "yes" : "no") << '\n';
                   }
               },
               report);
    write_file(config.out / "curves.csv",
               [&](std::ostream& o) {
                   o << "policy,event,target_patches_mean,target_patches_std,simulated_mean_iou_mean\n";
                   for (std::size_t i = 0; i < per_policy.size(); ++i) {
                       std::size_t events = std::numeric_limits<std::size_t>::max();
                       for (const auto& r : per_policy[i]) events = std::min(events, r.log.events.size());
                       for (std::size_t e = 0; e < events; ++e) {
                           std::vector<double> y, iou;
                           for (const auto& r : per_policy[i]) {
                               y.push_back(static_cast<double>(r.log.events[e].target_patches));
                               iou.push_back(opt_or_nan(r.log.events[e].mean_iou));
                           }
                           o << dirs[i] << ',' << e + 1 << ',' << format_cell(mean(y)) << ','
                             << format_cell(sample_std(y)) << ',' << format_cell(mean(iou)) << '\n';
                       }
                   }
               },
               report);

    log << "policy          yield (mean +- std)     mean IoU (mean +- std)   p-value   sig\n";
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = rows[i];
        char line[256];
        std::snprintf(line, sizeof line, "%-15s %9.2f +- %-9.2f   %9.4f +- %-9.4f  %-9s %s\n", dirs[i].c_str(),
                      r.yield_mean, r.yield_std, r.iou_mean, r.iou_std,
                      r.p_value ? format_cell(*r.p_value, 3).c_str() : "-", r.significant ? "*" : "");
        log << line;
    }
    return report;
}

CommandReport cmd_synth(const RunConfig& config, bool force, std::ostream& log) {
    config.synth.validate();
    guard_outputs({config.synth_out}, force);
    const auto data = synth::generate_pool(config.synth);
    if (config.synth_out.has_parent_path()) fs::create_directories(config.synth_out.parent_path());
    io::write_pool_file(config.synth_out, data.header, data.records);
    CommandReport report;
    report.written.push_back(config.synth_out);

    const auto base = synth::base_prevalences(config.synth);
    const auto empirical = synth::empirical_prevalences(data.records, config.synth.n_classes);
    log << "synth: wrote " << config.synth_out.string() << " (" << data.header.n_patches << " patches, "
        << data.header.n_classes << " classes, capacity " << data.header.patch_capacity << ", "
        << fs::file_size(config.synth_out) << " bytes)\n";
    log << "class  base_prevalence  empirical_prevalence\n";
    for (std::size_t c = 0; c < base.size(); ++c) {
        char line[96];
        std::snprintf(line, sizeof line, "%5zu  %15.4f  %20.4f\n", c, base[c], empirical[c]);
        log << line;
    }
    return report;
}

}  // namespace misical::harness
