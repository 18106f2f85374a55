#include "misical/harness/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>


#include "misical/errors.hpp"
#include "misical/pool.hpp"
#include "misical/pool_io.hpp"
#include "misical/qnetwork.hpp"
#include "misical/replay.hpp"

namespace misical::harness {

namespace {

using Clock = std::chrono::steady_clock;

template <typename F>
SuiteResult timed(std::string name, F&& body) {
    SuiteResult r;
    r.name = std::move(name);
    const auto t0 = Clock::now();
    try {
        body(r);
    } catch (const std::exception& e) {
        r.passed = false;
        r.detail = std::string("exception: ") + e.what();
    }
    r.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    return r;
}

std::string fmt(const char* format, double a, double b = 0.0) {
    char buf[160];
    std::snprintf(buf, sizeof buf, format, a, b);
    return buf;
}

PatchRecord random_record(std::uint64_t id, std::size_t classes, bool entropy, std::uint32_t capacity, Rng& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double ln_c = std::log(static_cast<double>(classes));
    PatchRecord r;
    r.id = id;
    double a = static_cast<float>(unit(rng) * ln_c), b = static_cast<float>(unit(rng) * ln_c),
           c = static_cast<float>(unit(rng) * ln_c);
    double lo = std::min({a, b, c}), hi = std::max({a, b, c});
    double mid = a + b + c - lo - hi;
    r.features = {hi, lo, mid};
    for (std::size_t i = 0; i < classes; ++i) r.features.push_back(unit(rng) < 0.3 ? 1.0 : 0.0);
    r.gt_pixel_counts.assign(classes, 0);
    std::uint32_t left = capacity;
    for (std::size_t i = 0; i < classes && left > 0; ++i) {
        if (unit(rng) < 0.4) {
            const auto n = std::uniform_int_distribution<std::uint32_t>(0, left)(rng);
            r.gt_pixel_counts[i] = n;
            left -= n;
        }
    }
    if (entropy) r.entropy_mean = static_cast<float>(unit(rng) * ln_c);
    return r;
}

}  // namespace

SuiteResult verify_replay_frequencies() {
    return timed("replay-frequencies", [](SuiteResult& r) {
        Rng rng(11);
        PrioritizedReplay buffer(64, 0.6);
        for (std::size_t i = 0; i < 64; ++i) buffer.push(Experience{{0.0}, 0.0, nullptr, 0});
        std::vector<std::size_t> leaves(64);
        std::vector<double> td(64);
        std::uniform_real_distribution<double> pri(0.2, 3.0);
        for (std::size_t i = 0; i < 64; ++i) {
            leaves[i] = i;
            td[i] = pri(rng);
        }
        buffer.update_priorities(leaves, td);
        std::vector<double> counts(64, 0.0);
        const std::size_t draws = 1'000'000, batch = 250;
        for (std::size_t d = 0; d < draws / batch; ++d) {
            for (auto leaf : buffer.sample(batch, 1.0, rng).leaf_ids) counts[leaf] += 1.0;
        }
        double worst = 0.0;
        for (std::size_t i = 0; i < 64; ++i) {
            const double expected = buffer.probability(i) * static_cast<double>(draws);
            worst = std::max(worst, std::fabs(counts[i] - expected) / expected);
        }
        r.passed = worst < 0.02;
        r.detail = fmt("max relative frequency error %.4f (limit 0.02)", worst);
    });
}

SuiteResult verify_gradients(std::size_t instances) {
    return timed("gradient-check", [instances](SuiteResult& r) {
        Rng rng(23);
        std::uniform_int_distribution<std::size_t> width(1, 8), batch_size(1, 6);
        std::normal_distribution<double> gauss(0.0, 1.0);
        std::uniform_real_distribution<double> weight(0.1, 1.0);
        double worst = 0.0;
        for (std::size_t trial = 0; trial < instances; ++trial) {
            std::vector<std::size_t> dims{width(rng) + 1, width(rng), width(rng), 1};
            QNetwork net(dims, rng);
            // Fresh networks have zero biases, which parks dead units exactly on the ReLU kink.
            auto start = net.parameters();
            for (auto& v : start) v = 0.5 * gauss(rng);
            net.set_parameters(start);
            const std::size_t b = batch_size(rng);
            Eigen::MatrixXd x(dims[0], b);
            for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = gauss(rng);
            std::vector<double> t(b), w(b);
            for (std::size_t i = 0; i < b; ++i) {
                t[i] = gauss(rng);
                w[i] = weight(rng);
            }
            auto grads = net.zero_gradients();
            net.loss_and_gradient(x, t, w, grads);
            std::vector<double> analytic;
            for (const auto& layer : grads) {
                for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) {
                    for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) analytic.push_back(layer.weight(i, j));
                }
                for (Eigen::Index i = 0; i < layer.bias.size(); ++i) analytic.push_back(layer.bias(i));
            }
            auto params = net.parameters();
            auto scratch = net.zero_gradients();
            const double h = 1e-6;
            for (std::size_t p = 0; p < params.size(); ++p) {
                const double keep = params[p];
                params[p] = keep + h;
                net.set_parameters(params);
                const double up = net.loss_and_gradient(x, t, w, scratch);
                params[p] = keep - h;
                net.set_parameters(params);
                const double down = net.loss_and_gradient(x, t, w, scratch);
                params[p] = keep;
                net.set_parameters(params);
                const double numeric = (up - down) / (2.0 * h);
                const double scale = std::max({std::fabs(analytic[p]), std::fabs(numeric), 1e-4});
                worst = std::max(worst, std::fabs(analytic[p] - numeric) / scale);
            }
        }
        r.passed = worst < 1e-4;
        r.detail = fmt("max relative gradient error %.3g over %.0f networks (limit 1e-4)", worst,
                       static_cast<double>(instances));
    });
}

SuiteResult verify_nstep() {
    return timed("n-step-oracle", [](SuiteResult& r) {
        Rng rng(5);
        std::uniform_real_distribution<double> unit(-1.0, 1.0);
        double worst = 0.0;
        for (double gamma : {0.0, 0.1, 0.5, 0.99}) {
            for (std::size_t n : {1u, 3u, 5u}) {
                std::vector<double> rewards(1000);
                for (auto& x : rewards) x = unit(rng);
                NStepAccumulator<std::size_t> acc(n, gamma);
                std::vector<std::pair<std::size_t, double>> got;
                for (std::size_t t = 0; t < rewards.size(); ++t) {
                    if (auto e = acc.push(rewards[t], t)) got.emplace_back(e->payload, e->reward_n);
                }
                for (auto& e : acc.flush()) got.emplace_back(e.payload, e.reward_n);
                if (got.size() != rewards.size()) throw InvariantError("accumulator lost entries");
                for (const auto& [t, value] : got) {
                    double expect = 0.0;
                    for (std::size_t i = 0; i < n && t + i < rewards.size(); ++i) {
                        expect += std::pow(gamma, static_cast<double>(i)) * rewards[t + i];
                    }
                    worst = std::max(worst, std::fabs(expect - value));
                }
            }
        }
        r.passed = worst <= 1e-12;
        r.detail = fmt("max deviation from window sums %.3g (limit 1e-12)", worst);
    });
}

SuiteResult verify_pool_io(const std::optional<std::filesystem::path>& fixture, std::size_t pools) {
    return timed("pool-io", [&](SuiteResult& r) {
        Rng rng(31);
        std::size_t mismatches = 0, detected = 0, trials = 0;
        for (std::size_t pool_i = 0; pool_i < pools; ++pool_i) {
            const std::size_t classes = std::uniform_int_distribution<std::size_t>(2, 20)(rng);
            const std::size_t n = std::uniform_int_distribution<std::size_t>(0, 12)(rng);
            const bool entropy = pool_i % 2 == 0;
            std::vector<PatchRecord> records;
            std::uint64_t id = 0;
            for (std::size_t i = 0; i < n; ++i) {
                id += 1 + rng() % 5;
                records.push_back(random_record(id, classes, entropy, 4096, rng));
            }
            const auto header = io::make_header(static_cast<std::uint16_t>(classes), 4096, records);
            std::ostringstream out;
            io::write_pool(out, header, records);
            const std::string bytes = out.str();
            std::istringstream in(bytes);
            const auto back = io::read_pool(in);
            if (back.records != records) ++mismatches;
            for (int c = 0; c < 10; ++c) {
                std::string bad = bytes;
                const std::size_t pos = rng() % bad.size();
                bad[pos] = static_cast<char>(bad[pos] ^ static_cast<char>(1 + rng() % 255));
                std::istringstream bin(bad);
                ++trials;
                try {
                    io::read_pool(bin);
                } catch (const io::FormatError&) {
                    ++detected;
                }
            }
        }
        const double rate = static_cast<double>(detected) / static_cast<double>(trials);
        r.passed = mismatches == 0 && rate >= 0.99;
        r.detail = fmt("round-trip mismatches %.0f, corruption detection %.4f (limit 0.99)",
                       static_cast<double>(mismatches), rate);
        r.detail += " over " + std::to_string(pools) + " pools and " + std::to_string(trials) + " corruptions";
        if (fixture) {
            try {
                const auto data = io::read_pool_file(*fixture);
                r.detail += "; fixture " + fixture->string() + " ok (" + std::to_string(data.records.size()) + " records)";
            } catch (const std::exception& e) {
                r.passed = false;
                r.detail += "; fixture " + fixture->string() + " rejected: " + e.what();
            }
        }
    });
}

std::vector<SuiteResult> run_verify(const std::optional<std::filesystem::path>& fixture, std::ostream& out) {
    const auto t0 = Clock::now();
    std::vector<SuiteResult> results{verify_replay_frequencies(), verify_gradients(), verify_nstep(),
                                     verify_pool_io(fixture)};
    for (const auto& r : results) {
        char line[64];
        std::snprintf(line, sizeof line, "%-20s %s  (%.2f s)  ", r.name.c_str(), r.passed ? "PASS" : "FAIL", r.seconds);
        out << line << r.detail << '\n';
    }
    const double total = std::chrono::duration<double>(Clock::now() - t0).count();
    if (total > 120.0) out << "warning: verification took " << total << " s (budget 120 s)\n";
    return results;
}

}  // namespace misical::harness
