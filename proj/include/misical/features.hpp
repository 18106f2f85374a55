#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace misical {

/// Absolute tolerance on the sum of a probability vector.
inline constexpr double kProbSumTolerance = 1e-5;

/// Monte Carlo class-probability volume for one patch: T passes, K pixels, C classes.
/// Stored row-major as [t][k][c].
class ProbMap {
public:
    ProbMap(std::size_t passes, std::size_t pixels, std::size_t classes);
    ProbMap(std::size_t passes, std::size_t pixels, std::size_t classes, std::vector<double> values);

    std::size_t passes() const noexcept { return passes_; }
    std::size_t pixels() const noexcept { return pixels_; }
    std::size_t classes() const noexcept { return classes_; }

    double& at(std::size_t t, std::size_t k, std::size_t c) { return values_[index(t, k, c)]; }
    double at(std::size_t t, std::size_t k, std::size_t c) const { return values_[index(t, k, c)]; }

    /// Probability vector of pixel k on pass t.
    std::span<const double> row(std::size_t t, std::size_t k) const {
        return {values_.data() + index(t, k, 0), classes_};
    }

    std::span<const double> values() const noexcept { return values_; }

    /// Throws ValidationError unless shape and normalization invariants hold.
    void validate() const;

private:
    std::size_t index(std::size_t t, std::size_t k, std::size_t c) const noexcept {
        return (t * pixels_ + k) * classes_ + c;
    }

    std::size_t passes_;
    std::size_t pixels_;
    std::size_t classes_;
    std::vector<double> values_;
};

/// Patch-level pooling of per-pixel BALD values, in nats.
struct BaldSummary {
    double max = 0.0;
    double min = 0.0;
    double mean = 0.0;

    bool operator==(const BaldSummary&) const = default;
};

/// One bit per class: 1 iff the prediction assigns at least one pixel to the class.
using ClassPresence = std::vector<std::uint8_t>;

/// Concatenation (max, min, mean, presence bits...). Length 3 + C.
using ActionFeatures = std::vector<double>;

inline constexpr std::size_t kBaldFeatureCount = 3;
inline constexpr std::size_t kBaldMaxIndex = 0;
inline constexpr std::size_t kBaldMinIndex = 1;
inline constexpr std::size_t kBaldMeanIndex = 2;

/// -sum p ln p with 0 ln 0 = 0. Throws ValidationError on negative or non-normalized input.
double shannon_entropy(std::span<const double> p);

/// MC-BALD for one pixel from T sampled probability rows (row-major T x C).
/// H(mean_t p^t) - mean_t H(p^t), clamped at 0.
double mc_bald_pixel(std::span<const double> samples, std::size_t passes, std::size_t classes);

BaldSummary bald_summary(const ProbMap& map);

/// Argmax of the pass-averaged probabilities per pixel; ties go to the lowest class index.
ClassPresence class_presence(const ProbMap& map);

ActionFeatures concat_features(const BaldSummary& bald, const ClassPresence& presence);

/// Extracts features in one call; the composition of the three functions above.
ActionFeatures extract_features(const ProbMap& map);

}  // namespace misical
