#include "misical/features.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "misical/errors.hpp"

namespace misical {

namespace {

void check_distribution(std::span<const double> p) {
    double sum = 0.0;
    for (double v : p) {
        if (!(v >= 0.0)) {
            throw ValidationError("probability entry is negative or NaN: " + std::to_string(v));
        }
        sum += v;
    }
    if (std::abs(sum - 1.0) > kProbSumTolerance) {
        throw ValidationError("probability vector sums to " + std::to_string(sum) + ", expected 1");
    }
}

double entropy_unchecked(std::span<const double> p) {
    double h = 0.0;
    for (double v : p) {
        if (v > 0.0) h -= v * std::log(v);
    }
    return h;
}

}  // namespace

ProbMap::ProbMap(std::size_t passes, std::size_t pixels, std::size_t classes)
    : ProbMap(passes, pixels, classes, std::vector<double>(passes * pixels * classes, 0.0)) {}

ProbMap::ProbMap(std::size_t passes, std::size_t pixels, std::size_t classes, std::vector<double> values)
    : passes_(passes), pixels_(pixels), classes_(classes), values_(std::move(values)) {
    if (values_.size() != passes_ * pixels_ * classes_) {
        throw ValidationError("ProbMap value count does not match T x K x C");
    }
}

void ProbMap::validate() const {
    if (passes_ < 1) throw ValidationError("ProbMap needs at least one pass");
    if (pixels_ < 1) throw ValidationError("ProbMap needs at least one pixel");
    if (classes_ < 2) throw ValidationError("ProbMap needs at least two classes");
    for (std::size_t t = 0; t < passes_; ++t) {
        for (std::size_t k = 0; k < pixels_; ++k) check_distribution(row(t, k));
    }
}

double shannon_entropy(std::span<const double> p) {
    check_distribution(p);
    return entropy_unchecked(p);
}

double mc_bald_pixel(std::span<const double> samples, std::size_t passes, std::size_t classes) {
    if (passes == 0) throw ValidationError("mc_bald_pixel needs at least one sample");
    if (classes == 0 || samples.size() != passes * classes) {
        throw ValidationError("mc_bald_pixel sample matrix has the wrong size");
    }
    std::vector<double> mean(classes, 0.0);
    double expected_entropy = 0.0;
    for (std::size_t t = 0; t < passes; ++t) {
        auto row = samples.subspan(t * classes, classes);
        check_distribution(row);
        expected_entropy += entropy_unchecked(row);
        for (std::size_t c = 0; c < classes; ++c) mean[c] += row[c];
    }
    const double inv_t = 1.0 / static_cast<double>(passes);
    for (double& m : mean) m *= inv_t;
    expected_entropy *= inv_t;
    return std::max(0.0, entropy_unchecked(mean) - expected_entropy);
}

BaldSummary bald_summary(const ProbMap& map) {
    map.validate();
    const std::size_t T = map.passes();
    const std::size_t C = map.classes();
    std::vector<double> pixel(T * C);
    BaldSummary out{0.0, 0.0, 0.0};
    double sum = 0.0;
    for (std::size_t k = 0; k < map.pixels(); ++k) {
        for (std::size_t t = 0; t < T; ++t) {
            auto r = map.row(t, k);
            std::copy(r.begin(), r.end(), pixel.begin() + static_cast<std::ptrdiff_t>(t * C));
        }
        const double b = mc_bald_pixel(pixel, T, C);
        if (k == 0) {
            out.max = out.min = b;
        } else {
            out.max = std::max(out.max, b);
            out.min = std::min(out.min, b);
        }
        sum += b;
    }
    out.mean = sum / static_cast<double>(map.pixels());
    // Rounding in the running sum can push the mean a hair outside [min, max].
    out.mean = std::clamp(out.mean, out.min, out.max);
    return out;
}

ClassPresence class_presence(const ProbMap& map) {
    map.validate();
    const std::size_t C = map.classes();
    ClassPresence bits(C, 0);
    std::vector<double> mean(C);
    for (std::size_t k = 0; k < map.pixels(); ++k) {
        std::fill(mean.begin(), mean.end(), 0.0);
        for (std::size_t t = 0; t < map.passes(); ++t) {
            auto r = map.row(t, k);
            for (std::size_t c = 0; c < C; ++c) mean[c] += r[c];
        }
        std::size_t best = 0;
        for (std::size_t c = 1; c < C; ++c) {
            if (mean[c] > mean[best]) best = c;
        }
        bits[best] = 1;
    }
    return bits;
}

ActionFeatures concat_features(const BaldSummary& bald, const ClassPresence& presence) {
    ActionFeatures f;
    f.reserve(kBaldFeatureCount + presence.size());
    f.push_back(bald.max);
    f.push_back(bald.min);
    f.push_back(bald.mean);
    for (auto bit : presence) f.push_back(bit ? 1.0 : 0.0);
    return f;
}

ActionFeatures extract_features(const ProbMap& map) {
    return concat_features(bald_summary(map), class_presence(map));
}

}  // namespace misical
