#include "misical/pool.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_set>

#include "misical/errors.hpp"

namespace misical {

namespace {
constexpr std::size_t kNoSlot = static_cast<std::size_t>(-1);
}

void HistogramState::add(std::span<const std::uint32_t> counts) {
    if (counts.size() != pixel_counts.size()) throw ValidationError("histogram class count mismatch");
    for (std::size_t c = 0; c < counts.size(); ++c) pixel_counts[c] += counts[c];
}

std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t m, Rng& rng) {
    m = std::min(m, n);
    std::vector<std::size_t> out;
    out.reserve(m);
    std::unordered_set<std::size_t> seen;
    seen.reserve(m * 2);
    for (std::size_t j = n - m; j < n; ++j) {
        const std::size_t t = std::uniform_int_distribution<std::size_t>(0, j)(rng);
        const std::size_t pick = seen.contains(t) ? j : t;
        seen.insert(pick);
        out.push_back(pick);
    }
    return out;
}

Pool::Pool(std::vector<PatchRecord> records, std::size_t n_classes, std::uint32_t patch_capacity,
           const BudgetConfig& budget)
    : records_(std::move(records)), n_classes_(n_classes), patch_capacity_(patch_capacity), histogram_(n_classes) {
    if (records_.empty()) throw ConfigError("pool has no records");
    const double init = budget.initial_fraction;
    const double total = budget.total_fraction;
    if (!(total > 0.0 && total <= 1.0)) throw ConfigError("budget fraction must lie in (0, 1]");
    if (!budget.initial_count && !(init > 0.0 && init <= 1.0)) {
        throw ConfigError("initial fraction must lie in (0, 1]");
    }
    const std::size_t N = records_.size();
    budget_limit_ = static_cast<std::size_t>(std::floor(total * static_cast<double>(N)));
    const std::size_t n_init =
        budget.initial_count ? *budget.initial_count : static_cast<std::size_t>(std::floor(init * static_cast<double>(N)));
    if (n_init > budget_limit_) throw ConfigError("initial labelled set exceeds the total budget");

    for (const auto& r : records_) {
        if (r.gt_pixel_counts.size() != n_classes_ || r.features.size() != kBaldFeatureCount + n_classes_) {
            throw ValidationError("record " + std::to_string(r.id) + " does not match the pool class count");
        }
    }
    partition_.assign(N, Partition::unlabelled);
    unlabelled_.resize(N);
    position_.resize(N);
    for (std::size_t i = 0; i < N; ++i) unlabelled_[i] = position_[i] = i;

    Rng rng(budget.seed);
    initial_ = sample_without_replacement(N, n_init, rng);
    for (auto idx : initial_) label(idx);
}

std::optional<std::size_t> Pool::index_of(std::uint64_t id) const {
    auto it = std::lower_bound(records_.begin(), records_.end(), id,
                               [](const PatchRecord& r, std::uint64_t v) { return r.id < v; });
    if (it != records_.end() && it->id == id) return static_cast<std::size_t>(it - records_.begin());
    // Records are normally sorted by id; fall back to a scan if they are not.
    for (std::size_t i = 0; i < records_.size(); ++i) {
        if (records_[i].id == id) return i;
    }
    return std::nullopt;
}

std::size_t Pool::budget_remaining() const noexcept {
    const std::size_t used = labelled_count();
    return used >= budget_limit_ ? 0 : budget_limit_ - used;
}

void Pool::label(std::size_t index) {
    if (index >= records_.size()) throw ValidationError("record index out of range");
    if (partition_[index] == Partition::labelled) {
        throw InvariantError("record " + std::to_string(records_[index].id) + " is already labelled");
    }
    if (budget_exhausted()) throw InvariantError("annotation budget exhausted");
    const std::size_t slot = position_[index];
    const std::size_t last = unlabelled_.back();
    unlabelled_[slot] = last;
    position_[last] = slot;
    unlabelled_.pop_back();
    position_[index] = kNoSlot;
    partition_[index] = Partition::labelled;
    labelled_order_.push_back(index);
    histogram_.add(records_[index].gt_pixel_counts);
}

void Pool::label_id(std::uint64_t id) {
    auto idx = index_of(id);
    if (!idx) throw ValidationError("unknown patch id " + std::to_string(id));
    label(*idx);
}

std::vector<std::size_t> Pool::sample_candidates(std::size_t m, Rng& rng) const {
    if (m == 0) throw ValidationError("candidate count must be at least 1");
    auto slots = sample_without_replacement(unlabelled_.size(), m, rng);
    for (auto& s : slots) s = unlabelled_[s];
    return slots;
}

HistogramState Pool::recompute_histogram() const {
    HistogramState h(n_classes_);
    for (std::size_t i = 0; i < records_.size(); ++i) {
        if (partition_[i] == Partition::labelled) h.add(records_[i].gt_pixel_counts);
    }
    return h;
}

double reward_categorical(const PatchRecord& patch, std::size_t target) {
    if (target >= patch.gt_pixel_counts.size()) {
        throw ValidationError("target class " + std::to_string(target) + " out of range");
    }
    return patch.gt_pixel_counts[target] >= 1 ? 1.0 : 0.0;
}

double histogram_entropy(const HistogramState& h) {
    long double total = 0.0L;
    for (auto c : h.pixel_counts) total += static_cast<long double>(c);
    if (total <= 0.0L) throw ValidationError("histogram is empty");
    double entropy = 0.0;
    for (auto c : h.pixel_counts) {
        if (c == 0) continue;
        const double p = static_cast<double>(static_cast<long double>(c) / total);
        entropy -= p * std::log(p);
    }
    return entropy;
}

}  // namespace misical
