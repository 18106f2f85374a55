#include "misical/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "misical/errors.hpp"

namespace misical::synth {

void SynthConfig::validate() const {
    if (n_patches == 0) throw ConfigError("synth.patches must be at least 1");
    if (n_classes < 2 || n_classes > 65535) throw ConfigError("synth.classes must lie in [2, 65535]");
    if (!(imbalance >= 0.0)) throw ConfigError("synth.imbalance must be >= 0");
    if (!(max_prevalence > 0.0 && max_prevalence <= 1.0)) throw ConfigError("synth.max_prevalence must lie in (0, 1]");
    if (!(flip_probability >= 0.0 && flip_probability < 0.5)) throw ConfigError("synth.flip must lie in [0, 0.5)");
    if (!(bald_sigma >= 0.0)) throw ConfigError("synth.sigma must be >= 0");
    if (!(padding_fraction >= 0.0 && padding_fraction < 1.0)) throw ConfigError("synth.padding must lie in [0, 1)");
    if (patch_capacity == 0) throw ConfigError("synth.capacity must be at least 1");
    for (const auto& rule : cooccurrence) {
        if (rule.given >= n_classes || rule.then >= n_classes || rule.given == rule.then) {
            throw ConfigError("synth.cooccurrence rule " + std::to_string(rule.given) + ":" +
                              std::to_string(rule.then) + " names an invalid class pair");
        }
        if (!(rule.probability >= 0.0 && rule.probability <= 1.0)) {
            throw ConfigError("synth.cooccurrence probability must lie in [0, 1]");
        }
    }
}

SynthConfig default_config() {
    SynthConfig cfg;
    // Class 9 (prevalence 0.5 / 10 = 5%) plays the rare target; class 0 is the ubiquitous
    // companion and class 12 the distinctive one, like skis with person and snow.
    cfg.cooccurrence = {{9, 0, 0.9}, {9, 12, 0.8}, {3, 1, 0.6}, {5, 2, 0.7}, {14, 4, 0.8}};
    return cfg;
}

std::vector<double> base_prevalences(const SynthConfig& cfg) {
    std::vector<double> p(cfg.n_classes);
    for (std::size_t c = 0; c < cfg.n_classes; ++c) {
        p[c] = cfg.max_prevalence * std::pow(static_cast<double>(c + 1), -cfg.imbalance);
    }
    return p;
}

std::vector<PatchRecord> generate_records(const SynthConfig& cfg) {
    cfg.validate();
    const std::size_t C = cfg.n_classes;
    const auto prevalence = base_prevalences(cfg);
    const double ln_c = std::log(static_cast<double>(C));
    const double rarest = -std::log(*std::min_element(prevalence.begin(), prevalence.end()));
    std::vector<double> rarity(C);
    for (std::size_t c = 0; c < C; ++c) rarity[c] = rarest > 0.0 ? -std::log(prevalence[c]) / rarest : 0.0;

    Rng rng(cfg.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    auto bernoulli = [&](double p) { return unit(rng) < p; };
    auto as_float = [](double v) { return static_cast<double>(static_cast<float>(v)); };

    std::vector<PatchRecord> records;
    records.reserve(cfg.n_patches);
    std::vector<std::uint8_t> present(C);
    std::vector<double> weight(C);
    for (std::size_t i = 0; i < cfg.n_patches; ++i) {
        PatchRecord r;
        r.id = i;
        r.gt_pixel_counts.assign(C, 0);
        const bool padding = bernoulli(cfg.padding_fraction);
        std::fill(present.begin(), present.end(), 0);
        if (!padding) {
            for (std::size_t c = 0; c < C; ++c) present[c] = bernoulli(prevalence[c]) ? 1 : 0;
            for (const auto& rule : cfg.cooccurrence) {
                if (present[rule.given]) present[rule.then] = bernoulli(rule.probability) ? 1 : 0;
            }
            double total_w = 0.0;
            for (std::size_t c = 0; c < C; ++c) {
                weight[c] = present[c] ? 0.2 + 0.8 * unit(rng) : 0.0;
                total_w += weight[c];
            }
            if (total_w > 0.0) {
                const double fill = 0.3 + 0.7 * unit(rng);
                std::uint64_t sum = 0;
                for (std::size_t c = 0; c < C; ++c) {
                    if (!present[c]) continue;
                    const double share = fill * cfg.patch_capacity * weight[c] / total_w;
                    r.gt_pixel_counts[c] = std::max<std::uint32_t>(1, static_cast<std::uint32_t>(share));
                    sum += r.gt_pixel_counts[c];
                }
                // Tiny capacities: the one-pixel floor can overshoot, trim the largest classes.
                while (sum > cfg.patch_capacity) {
                    auto it = std::max_element(r.gt_pixel_counts.begin(), r.gt_pixel_counts.end());
                    if (*it <= 1) break;
                    --*it;
                    --sum;
                }
                if (sum > cfg.patch_capacity) {
                    // More present classes than pixels: drop the surplus classes.
                    for (std::size_t c = C; c-- > 0 && sum > cfg.patch_capacity;) {
                        if (r.gt_pixel_counts[c] > 0) {
                            r.gt_pixel_counts[c] = 0;
                            present[c] = 0;
                            --sum;
                        }
                    }
                }
            }
        }

        double level;
        if (padding) {
            level = 0.1 * unit(rng);
        } else {
            double r_max = 0.0;
            for (std::size_t c = 0; c < C; ++c) {
                if (present[c]) r_max = std::max(r_max, rarity[c]);
            }
            level = std::clamp(0.1 + 0.6 * r_max + cfg.bald_sigma * gauss(rng), 0.0, 1.0);
        }
        const double mean = as_float(level * 0.5 * ln_c);
        const double max = as_float(std::min(ln_c, mean * (1.2 + 0.8 * unit(rng))));
        const double min = as_float(mean * 0.5 * unit(rng));
        r.features = {std::max(max, mean), std::min(min, mean), mean};
        for (std::size_t c = 0; c < C; ++c) {
            const bool flipped = bernoulli(cfg.flip_probability);
            r.features.push_back((present[c] != 0) != flipped ? 1.0 : 0.0);
        }
        if (cfg.entropy_column) {
            const double e = padding ? ln_c * (0.85 + 0.15 * unit(rng)) : mean + (0.05 + 0.35 * unit(rng)) * ln_c;
            r.entropy_mean = as_float(std::min(e, ln_c));
            if (*r.entropy_mean > ln_c) r.entropy_mean = static_cast<double>(std::nextafter(static_cast<float>(ln_c), 0.0f));
        }
        records.push_back(std::move(r));
    }
    return records;
}

io::PoolData generate_pool(const SynthConfig& cfg) {
    io::PoolData pool;
    pool.records = generate_records(cfg);
    pool.header = io::make_header(static_cast<std::uint16_t>(cfg.n_classes), cfg.patch_capacity, pool.records);
    return pool;
}

void write_pool(const SynthConfig& cfg, const std::filesystem::path& path) {
    const auto pool = generate_pool(cfg);
    io::write_pool_file(path, pool.header, pool.records);
}

std::vector<double> empirical_prevalences(std::span<const PatchRecord> records, std::size_t n_classes) {
    std::vector<double> freq(n_classes, 0.0);
    for (const auto& r : records) {
        for (std::size_t c = 0; c < n_classes; ++c) freq[c] += r.gt_pixel_counts[c] > 0 ? 1.0 : 0.0;
    }
    for (auto& f : freq) f /= records.empty() ? 1.0 : static_cast<double>(records.size());
    return freq;
}

double IouModel::class_iou(double pixels, std::size_t cls) const {
    if (pixels <= 0.0) return 0.0;
    const double v = k.at(cls) * std::max(0.0, std::log10(pixels) - std::log10(h_min));
    return std::min(v, saturation);
}

double IouModel::class_iou(const HistogramState& h, std::size_t cls) const {
    return class_iou(static_cast<double>(h.pixel_counts.at(cls)), cls);
}

IouModel make_iou_model(std::size_t n_classes, std::uint64_t seed, double k_max, double h_min) {
    Rng rng(seed);
    std::uniform_real_distribution<double> dist(0.0, k_max);
    IouModel m;
    m.h_min = h_min;
    m.k.resize(n_classes);
    for (auto& k : m.k) k = dist(rng);
    return m;
}

IouModel equal_iou_model(std::size_t n_classes, double k, double h_min) {
    IouModel m;
    m.k.assign(n_classes, k);
    m.h_min = h_min;
    return m;
}

double simulated_mean_iou(const HistogramState& h, const IouModel& model) {
    if (model.k.size() != h.pixel_counts.size()) throw ValidationError("IoU model class count mismatch");
    double sum = 0.0;
    for (std::size_t c = 0; c < model.k.size(); ++c) sum += model.class_iou(h, c);
    return sum / static_cast<double>(model.k.size());
}

double delta_iou_reward(const HistogramState& before, const HistogramState& after, std::size_t target,
                        const IouModel& model) {
    if (before.pixel_counts.size() != after.pixel_counts.size()) throw ValidationError("histogram size mismatch");
    for (std::size_t c = 0; c < before.pixel_counts.size(); ++c) {
        if (after.pixel_counts[c] < before.pixel_counts[c]) throw ValidationError("histogram decreased");
    }
    if (target >= after.pixel_counts.size()) throw ValidationError("target class out of range");
    return model.class_iou(after, target) - model.class_iou(before, target);
}

std::vector<double> power_law_distribution(std::size_t n_classes, double imbalance) {
    std::vector<double> p(n_classes);
    for (std::size_t c = 0; c < n_classes; ++c) p[c] = std::pow(static_cast<double>(c + 1), -imbalance);
    const double total = std::accumulate(p.begin(), p.end(), 0.0);
    for (auto& v : p) v /= total;
    return p;
}

ThoughtCurves thought_experiment(const IouModel& model, std::span<const double> distribution, std::size_t steps,
                                 double pixels_per_step) {
    const std::size_t C = distribution.size();
    if (C == 0 || model.k.size() != C) throw ValidationError("distribution and IoU model disagree on class count");
    for (std::size_t c = 1; c < C; ++c) {
        if (model.k[c] != model.k[0]) throw ValidationError("thought experiment needs equal K");
    }
    std::vector<double> h_random(C, 0.0), h_uniform(C, 0.0);
    ThoughtCurves out;
    auto mean_iou = [&](const std::vector<double>& h) {
        double s = 0.0;
        for (std::size_t c = 0; c < C; ++c) s += model.class_iou(h[c], c);
        return s / static_cast<double>(C);
    };
    for (std::size_t step = 0; step < steps; ++step) {
        for (std::size_t c = 0; c < C; ++c) {
            h_random[c] += pixels_per_step * distribution[c];
            h_uniform[c] += pixels_per_step / static_cast<double>(C);
        }
        out.random.push_back(mean_iou(h_random));
        out.uniform.push_back(mean_iou(h_uniform));
    }
    return out;
}

}  // namespace misical::synth
