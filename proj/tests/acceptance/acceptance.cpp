// One verdict line per acceptance criterion. Tolerances are pinned below; nothing is tuned at runtime.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <iostream>
#include <iterator>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <boost/math/distributions/chi_squared.hpp>

#include "misical/agent.hpp"
#include "misical/harness/config.hpp"
#include "misical/harness/runner.hpp"
#include "misical/harness/stats.hpp"
#include "misical/harness/verify.hpp"
#include "misical/pool_io.hpp"
#include "misical/qnetwork.hpp"
#include "misical/replay.hpp"
#include "misical/synth.hpp"

using namespace misical;
using namespace misical::harness;
namespace fs = std::filesystem;

namespace {

constexpr double kPerFrequencyTolerance = 0.02;
constexpr double kPerUniformityAlpha = 0.01;
constexpr double kPerSeconds = 10.0;
constexpr double kNStepSeconds = 1.0;
constexpr std::size_t kGradientInstances = 100;
constexpr double kGradientSeconds = 30.0;
constexpr double kContractionRelTolerance = 1e-9;
constexpr double kSpeedupFactor = 3.0;
constexpr double kSpeedupSeconds = 600.0;
constexpr double kBalancedGapFraction = 0.05;
constexpr double kThoughtSeconds = 5.0;
constexpr std::size_t kFuzzPools = 1000;  // ten corruptions each
const std::vector<std::uint64_t> kSeeds{1, 2, 3, 4, 5};

using Clock = std::chrono::steady_clock;

struct Verdict {
    bool passed = false;
    std::string detail;
};

template <typename... Args>
std::string fmt(const char* format, Args... args) {
    char buf[320];
    std::snprintf(buf, sizeof buf, format, args...);
    return buf;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

/// The default synthetic pool, in memory and on disk.
struct Workspace {
    fs::path dir;
    fs::path pool_path;
    io::PoolData pool;

    Workspace() {
        dir = fs::temp_directory_path() / ("misical_acceptance_" + std::to_string(::getpid()));
        fs::remove_all(dir);
        fs::create_directories(dir);
        pool_path = dir / "pool.msal";
        synth::write_pool(synth::default_config(), pool_path);
        pool = io::read_pool_file(pool_path);
    }
    ~Workspace() {
        std::error_code ec;
        fs::remove_all(dir, ec);
    }
};

RunConfig config_for(const Workspace& ws, const std::string& preset, ConfigLayer extra = {}) {
    extra["run.preset"] = preset;
    extra["run.pool"] = ws.pool_path.string();
    return resolve_config({}, extra);
}

std::vector<SeedResult> run_all(const RunConfig& config, const io::PoolData& pool, PolicyKind policy) {
    std::vector<std::future<SeedResult>> jobs;
    for (auto seed : kSeeds) {
        jobs.push_back(std::async(std::launch::async, [&, seed] { return run_seed(config, pool, policy, seed); }));
    }
    std::vector<SeedResult> out;
    for (auto& j : jobs) out.push_back(j.get());
    return out;
}

std::vector<double> column(const std::vector<SeedResult>& runs, const std::function<double(const SeedResult&)>& f) {
    std::vector<double> out;
    for (const auto& r : runs) out.push_back(f(r));
    return out;
}

Verdict per_correctness() {
    const auto t0 = Clock::now();
    const auto freq = verify_replay_frequencies();

    // eta = 0 flattens any priority vector to the uniform distribution.
    Rng rng(41);
    PrioritizedReplay buffer(64, 0.0);
    std::vector<std::size_t> leaves(64);
    std::vector<double> td(64);
    std::uniform_real_distribution<double> pri(0.0, 5.0);
    for (std::size_t i = 0; i < 64; ++i) {
        buffer.push(Experience{{0.0}, 0.0, nullptr, 0});
        leaves[i] = i;
        td[i] = pri(rng);
    }
    buffer.update_priorities(leaves, td);
    std::vector<double> counts(64, 0.0);
    // 100 strata do not align with 64 equal leaves, so the draw is genuinely random
    const std::size_t draws = 1'000'000, batch = 100;
    std::size_t drawn = 0;
    while (drawn < draws) {
        for (auto leaf : buffer.sample(std::min(batch, draws - drawn), 1.0, rng).leaf_ids) counts[leaf] += 1.0;
        drawn += std::min(batch, draws - drawn);
    }
    const double expected = static_cast<double>(draws) / 64.0;
    double chi2 = 0.0;
    for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
    const double p = boost::math::cdf(boost::math::complement(boost::math::chi_squared(63.0), chi2));
    const double secs = seconds_since(t0);
    return {freq.passed && p > kPerUniformityAlpha && secs < kPerSeconds,
            freq.detail + fmt("; eta=0 chi-square %.1f on 63 df, p %.3f (limit > %.2f); %.2f s (limit %.0f s)", chi2, p,
                              kPerUniformityAlpha, secs, kPerSeconds)};
}

Verdict nstep_oracle() {
    const auto r = verify_nstep();
    return {r.passed && r.seconds < kNStepSeconds, r.detail + fmt("; %.3f s (limit %.0f s)", r.seconds, kNStepSeconds)};
}

Verdict gradient_check() {
    const auto r = verify_gradients(kGradientInstances);
    return {r.passed && r.seconds < kGradientSeconds,
            r.detail + fmt("; %.2f s (limit %.0f s)", r.seconds, kGradientSeconds)};
}

Verdict soft_update_contraction() {
    double worst = 0.0;
    for (double beta : {0.002, 0.02, 0.2}) {
        Rng rng(97);
        const std::size_t dims[] = {19, 128, 64, 1};
        const QNetwork local(dims, rng);
        QNetwork target(dims, rng);
        const auto l = local.parameters();
        const auto t0 = target.parameters();
        double gap0 = 0.0;
        for (std::size_t i = 0; i < l.size(); ++i) gap0 = std::max(gap0, std::fabs(t0[i] - l[i]));
        for (std::size_t k = 1; k <= 10000; ++k) {
            soft_update(target, local, beta);
            if (k % 100 != 0 && k > 10) continue;
            const auto t = target.parameters();
            const double decay = std::pow(1.0 - beta, static_cast<double>(k));
            for (std::size_t i = 0; i < l.size(); ++i) {
                const double predicted = l[i] + decay * (t0[i] - l[i]);
                worst = std::max(worst, std::fabs(t[i] - predicted) / gap0);
            }
        }
    }
    return {worst <= kContractionRelTolerance,
            fmt("max |theta_k - predicted| / max|theta_0 - local| = %.3g over k <= 1e4, beta in {0.002, 0.02, 0.2} "
                "(limit %.0e)",
                worst, kContractionRelTolerance)};
}

Verdict acquisition_speedup(const Workspace& ws) {
    const auto t0 = Clock::now();
    const auto config = config_for(ws, "appendix");
    const auto ours = run_all(config, ws.pool, PolicyKind::misical);
    const auto rand = run_all(config, ws.pool, PolicyKind::random);
    // Half-budget mark: half of the acquisitions available after the initial set.
    const auto half = [](const SeedResult& r) {
        const std::size_t acquired = r.log.events.back().labelled_count - r.log.initial_labelled;
        return target_patches_at(r.log, acquired / 2);
    };
    const double m_ours = median(column(ours, half));
    const double m_rand = median(column(rand, half));
    const double ratio = m_ours / std::max(m_rand, 1.0);
    const double secs = seconds_since(t0);
    return {ratio >= kSpeedupFactor && secs < kSpeedupSeconds,
            fmt("median target patches at half budget: misical %.0f, random %.0f, ratio %.2f (limit >= %.1f); "
                "%.1f s (limit %.0f s)",
                m_ours, m_rand, ratio, kSpeedupFactor, secs, kSpeedupSeconds)};
}

Verdict pretrain_saturation(const Workspace& ws) {
    const auto runs = run_all(config_for(ws, "default"), ws.pool, PolicyKind::misical);
    const std::size_t epochs = runs.front().pretrain.size();
    std::vector<double> medians;
    bool saturates = epochs >= 2;
    std::string detail = "median events to saturation per epoch:";
    for (std::size_t e = 0; e < epochs; ++e) {
        std::vector<double> events;
        for (const auto& r : runs) {
            const auto& ep = r.pretrain[e];
            // unsaturated epochs count as one past the last event
            events.push_back(ep.events_to_saturation ? double(*ep.events_to_saturation) : double(ep.events + 1));
        }
        medians.push_back(median(events));
        const double per_epoch = double(runs.front().pretrain[e].events);
        if (e >= 1 && !(medians.back() < per_epoch)) saturates = false;
        detail += fmt(" %.0f/%.0f", medians.back(), per_epoch);
    }
    bool monotone = true;
    for (std::size_t e = 1; e < medians.size(); ++e) monotone = monotone && medians[e] <= medians[e - 1];
    detail += fmt(" (T = %.0f target patches, median); epochs >= 2 before exhaustion: %s; non-increasing: %s",
                  median(column(runs, [](const SeedResult& r) { return double(r.pretrain.front().target_total); })),
                  saturates ? "yes" : "no", monotone ? "yes" : "no");
    return {saturates && monotone, detail};
}

// The appendix-figure analogues (speedup, gamma ordering, reward variants) share the appendix preset.
Verdict gamma_ordering(const Workspace& ws) {
    const auto myopic = run_all(config_for(ws, "appendix", {{"agent.gamma", "0"}}), ws.pool, PolicyKind::misical);
    const auto farsighted = run_all(config_for(ws, "appendix", {{"agent.gamma", "0.99"}}), ws.pool, PolicyKind::misical);
    const auto entropy = [](const SeedResult& r) { return r.log.events.back().histogram_entropy; };
    const double h0 = median(column(myopic, entropy));
    const double h99 = median(column(farsighted, entropy));

    bool dominates = true;
    std::string quartiles;
    for (int q = 1; q <= 4; ++q) {
        const auto at = [q](const SeedResult& r) {
            const std::size_t n = r.log.events.size();
            return r.log.events[std::max<std::size_t>(1, (n * q + 3) / 4) - 1].cumulative_reward;
        };
        const double a = median(column(myopic, at));
        const double b = median(column(farsighted, at));
        dominates = dominates && a >= b;
        quartiles += fmt(" Q%d %.0f vs %.0f", q, a, b);
    }
    return {h0 < h99 && dominates,
            fmt("median final histogram entropy gamma=0 %.5f vs gamma=0.99 %.5f; median cumulative reward", h0, h99) +
                quartiles};
}

Verdict thought_experiment_gap() {
    const auto t0 = Clock::now();
    // Sixteen classes with equal K = 0.1, 10^4-pixel threshold, 100 steps of 5 * 10^4 pixels.
    const auto model = synth::equal_iou_model(16, 0.1, 1e4);
    std::vector<double> gaps;
    double balanced_fraction = 0.0;
    std::string detail = "final uniform - random gap:";
    for (double rho : {0.0, 0.5, 1.0, 1.5}) {
        const auto curves = synth::thought_experiment(model, synth::power_law_distribution(16, rho), 100, 5e4);
        const double gap = curves.uniform.back() - curves.random.back();
        if (rho == 0.0) balanced_fraction = std::fabs(gap) / curves.uniform.back();
        gaps.push_back(gap);
        detail += fmt(" rho %.1f: %.4f", rho, gap);
    }
    bool increasing = true;
    for (std::size_t i = 1; i < gaps.size(); ++i) increasing = increasing && gaps[i] > gaps[i - 1];
    const double secs = seconds_since(t0);
    detail += fmt("; balanced gap %.2f%% of final (limit %.0f%%); strictly increasing: %s; %.3f s", 100.0 * balanced_fraction,
                  100.0 * kBalancedGapFraction, increasing ? "yes" : "no", secs);
    return {balanced_fraction < kBalancedGapFraction && increasing && secs < kThoughtSeconds, detail};
}

Verdict reward_variant_ordering(const Workspace& ws) {
    const auto yield = [](const SeedResult& r) { return double(r.log.events.back().target_patches); };
    const double cat = median(column(run_all(config_for(ws, "appendix"), ws.pool, PolicyKind::misical), yield));
    const double iou = median(
        column(run_all(config_for(ws, "appendix", {{"run.reward", "delta_iou"}}), ws.pool, PolicyKind::misical), yield));
    return {iou < cat, fmt("median final target patches: delta_iou %.0f vs categorical %.0f", iou, cat)};
}

Verdict format_robustness() {
    const auto r = verify_pool_io(std::nullopt, kFuzzPools);
    return {r.passed, r.detail};
}

Verdict determinism(const Workspace& ws) {
    auto config = config_for(ws, "default", {{"run.policy", "misical"}});
    std::ostringstream sink;
    config.out = ws.dir / "det_a";
    cmd_run(config, false, sink);
    config.out = ws.dir / "det_b";
    cmd_run(config, false, sink);
    const auto slurp = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(in), {});
    };
    std::size_t compared = 0, differing = 0;
    for (const auto& entry : fs::directory_iterator(ws.dir / "det_a")) {
        const auto name = entry.path().filename().string();
        // wall-clock timings are the one intentionally non-reproducible file
        if (entry.path().extension() != ".csv" || name.find(".timing.") != std::string::npos) continue;
        ++compared;
        if (slurp(entry.path()) != slurp(ws.dir / "det_b" / name)) ++differing;
    }
    return {compared > 0 && differing == 0,
            fmt("%zu CSVs compared across two identical runs, %zu differ (timing files excluded)", compared, differing)};
}

}  // namespace

int main() {
    const auto start = Clock::now();
    std::unique_ptr<Workspace> ws;
    try {
        ws = std::make_unique<Workspace>();
    } catch (const std::exception& e) {
        std::cerr << "cannot prepare the synthetic pool: " << e.what() << '\n';
        return 1;
    }

    const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
        {"per-correctness", per_correctness},
        {"n-step-oracle", nstep_oracle},
        {"gradient-check", gradient_check},
        {"soft-update-contraction", soft_update_contraction},
        {"acquisition-speedup", [&] { return acquisition_speedup(*ws); }},
        {"pretrain-saturation", [&] { return pretrain_saturation(*ws); }},
        {"gamma-ordering", [&] { return gamma_ordering(*ws); }},
        {"thought-experiment", thought_experiment_gap},
        {"reward-variant-ordering", [&] { return reward_variant_ordering(*ws); }},
        {"format-robustness", format_robustness},
        {"determinism", [&] { return determinism(*ws); }},
    };

    std::size_t failed = 0;
    for (const auto& [name, check] : criteria) {
        const auto t0 = Clock::now();
        Verdict v;
        try {
            v = check();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        failed += v.passed ? 0 : 1;
        std::cout << (v.passed ? "PASS  " : "FAIL  ") << fmt("%-24s (%6.2f s)  ", name.c_str(), seconds_since(t0))
                  << v.detail << std::endl;
    }
    std::cout << criteria.size() - failed << "/" << criteria.size() << " criteria passed in "
              << fmt("%.1f s", seconds_since(start)) << '\n';
    return failed == 0 ? 0 : 1;
}
