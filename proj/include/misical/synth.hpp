#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <vector>

#include "misical/patch.hpp"
#include "misical/pool.hpp"
#include "misical/pool_io.hpp"

namespace misical::synth {

/// If class `given` is present, class `then` is redrawn present with `probability`.
struct CoOccurrence {
    std::size_t given = 0;
    std::size_t then = 0;
    double probability = 0.0;
};

struct SynthConfig {
    std::size_t n_patches = 100000;
    std::size_t n_classes = 16;
    /// Class c has base prevalence max_prevalence * (c + 1)^-imbalance.
    double imbalance = 1.0;
    double max_prevalence = 0.5;
    std::vector<CoOccurrence> cooccurrence;
    /// Per-bit probability that a predicted presence bit disagrees with the ground truth.
    double flip_probability = 0.1;
    /// Gaussian noise on the BALD level.
    double bald_sigma = 0.1;
    bool entropy_column = true;
    /// Fraction of all-padding patches: no ground truth, high entropy, low BALD.
    double padding_fraction = 0.0;
    std::uint32_t patch_capacity = 64 * 64;
    std::uint64_t seed = 1;

    /// Throws ConfigError naming the offending field.
    void validate() const;
};

/// 16 classes, power-law prevalences with class 9 at 5%, and co-occurrence links into class 9's patches.
SynthConfig default_config();

/// Base prevalence per class before co-occurrence adjustments.
std::vector<double> base_prevalences(const SynthConfig& cfg);

std::vector<PatchRecord> generate_records(const SynthConfig& cfg);
io::PoolData generate_pool(const SynthConfig& cfg);
void write_pool(const SynthConfig& cfg, const std::filesystem::path& path);

/// Fraction of records containing each class.
std::vector<double> empirical_prevalences(std::span<const PatchRecord> records, std::size_t n_classes);

/// Class IoU ~ K_c * max(0, log10 h_c - log10 h_min), optionally capped at saturation.
struct IouModel {
    std::vector<double> k;
    double h_min = 1e4;
    double saturation = std::numeric_limits<double>::infinity();

    double class_iou(const HistogramState& h, std::size_t cls) const;
    double class_iou(double pixels, std::size_t cls) const;
};

/// K_c drawn uniform in [0, k_max] from seed.
IouModel make_iou_model(std::size_t n_classes, std::uint64_t seed, double k_max = 0.25, double h_min = 1e4);
IouModel equal_iou_model(std::size_t n_classes, double k, double h_min = 1e4);

double simulated_mean_iou(const HistogramState& h, const IouModel& model);

/// Simulated target-class IoU change between two histograms. Throws if h_after < h_before anywhere.
double delta_iou_reward(const HistogramState& before, const HistogramState& after, std::size_t target,
                        const IouModel& model);

/// Normalized p_c proportional to (c + 1)^-imbalance.
std::vector<double> power_law_distribution(std::size_t n_classes, double imbalance);

struct ThoughtCurves {
    std::vector<double> random;   ///< classes acquired in proportion to the distribution
    std::vector<double> uniform;  ///< classes acquired evenly
};

/// Expected simulated mean IoU after each step when acquiring pixels_per_step pixels per step.
ThoughtCurves thought_experiment(const IouModel& model, std::span<const double> distribution, std::size_t steps,
                                 double pixels_per_step);

}  // namespace misical::synth
