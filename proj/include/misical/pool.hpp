#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "misical/patch.hpp"

namespace misical {

using Rng = std::mt19937_64;

enum class Partition : std::uint8_t { unlabelled, labelled };

/// Cumulative ground-truth pixels per class over the labelled set.
struct HistogramState {
    std::vector<std::uint64_t> pixel_counts;

    explicit HistogramState(std::size_t n_classes = 0) : pixel_counts(n_classes, 0) {}
    void add(std::span<const std::uint32_t> counts);
    bool operator==(const HistogramState&) const = default;
};

struct BudgetConfig {
    double initial_fraction = 0.025;
    double total_fraction = 0.05;
    /// When set, the initial labelled set has exactly this many records instead of a fraction.
    std::optional<std::size_t> initial_count;
    std::uint64_t seed = 0;
};

/// Records partitioned into labelled / unlabelled under a patch-count budget.
/// Candidates and selections refer to records by index into records().
class Pool {
public:
    Pool(std::vector<PatchRecord> records, std::size_t n_classes, std::uint32_t patch_capacity,
         const BudgetConfig& budget);

    const std::vector<PatchRecord>& records() const noexcept { return records_; }
    const PatchRecord& record(std::size_t index) const { return records_.at(index); }
    std::size_t size() const noexcept { return records_.size(); }
    std::size_t n_classes() const noexcept { return n_classes_; }
    std::uint32_t patch_capacity() const noexcept { return patch_capacity_; }

    /// Index of the record with this id; nullopt if unknown.
    std::optional<std::size_t> index_of(std::uint64_t id) const;

    Partition partition(std::size_t index) const { return partition_.at(index); }
    bool is_labelled(std::size_t index) const { return partition(index) == Partition::labelled; }

    std::size_t labelled_count() const noexcept { return records_.size() - unlabelled_.size(); }
    std::size_t unlabelled_count() const noexcept { return unlabelled_.size(); }
    std::size_t budget_limit() const noexcept { return budget_limit_; }
    std::size_t budget_remaining() const noexcept;
    bool budget_exhausted() const noexcept { return budget_remaining() == 0; }

    /// Indices of the initial labelled set, in the order they were drawn.
    const std::vector<std::size_t>& initial_indices() const noexcept { return initial_; }
    /// Indices of every labelled record, in labelling order (initial set first).
    const std::vector<std::size_t>& labelled_indices() const noexcept { return labelled_order_; }

    const HistogramState& histogram() const noexcept { return histogram_; }

    /// Moves one record to the labelled set. Throws InvariantError on relabelling or budget overrun.
    void label(std::size_t index);
    void label_id(std::uint64_t id);

    /// Uniform sample without replacement of min(m, |unlabelled|) unlabelled indices.
    std::vector<std::size_t> sample_candidates(std::size_t m, Rng& rng) const;

    /// Full rescan of the labelled set; equals histogram() when the state is consistent.
    HistogramState recompute_histogram() const;

private:
    std::vector<PatchRecord> records_;
    std::size_t n_classes_;
    std::uint32_t patch_capacity_;
    std::size_t budget_limit_ = 0;
    std::vector<Partition> partition_;
    std::vector<std::size_t> unlabelled_;
    std::vector<std::size_t> position_;  // index -> slot in unlabelled_
    std::vector<std::size_t> initial_;
    std::vector<std::size_t> labelled_order_;
    HistogramState histogram_;
};

/// 1 if the patch holds at least one ground-truth pixel of target, else 0.
double reward_categorical(const PatchRecord& patch, std::size_t target);

/// Shannon entropy (nats) of the normalized histogram. Throws ValidationError on an empty histogram.
double histogram_entropy(const HistogramState& h);

/// Floyd's algorithm: m distinct values from [0, n), in draw order.
std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t m, Rng& rng);

}  // namespace misical
