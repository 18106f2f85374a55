#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "misical/features.hpp"

namespace misical {

/// One candidate action: fixed features plus the ground truth revealed on labelling.
struct PatchRecord {
    std::uint64_t id = 0;
    ActionFeatures features;                     ///< (bald max, min, mean, presence bits...)
    std::vector<std::uint32_t> gt_pixel_counts;  ///< ground-truth pixels per class
    std::optional<double> entropy_mean;          ///< only when the pool carries the entropy column

    std::size_t n_classes() const noexcept { return gt_pixel_counts.size(); }
    double bald_max() const { return features[kBaldMaxIndex]; }
    double bald_min() const { return features[kBaldMinIndex]; }
    double bald_mean() const { return features[kBaldMeanIndex]; }
    std::span<const double> presence() const {
        return std::span<const double>(features).subspan(kBaldFeatureCount);
    }
    bool contains(std::size_t cls) const { return gt_pixel_counts.at(cls) > 0; }

    bool operator==(const PatchRecord&) const = default;
};

}  // namespace misical
