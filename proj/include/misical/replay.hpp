#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "misical/features.hpp"

namespace misical {

/// Feature vectors of one candidate subset, stored column-major (one candidate per column).
struct FeatureBlock {
    std::size_t dim = 0;
    std::vector<double> values;

    std::size_t count() const noexcept { return dim == 0 ? 0 : values.size() / dim; }
    std::span<const double> column(std::size_t i) const { return {values.data() + i * dim, dim}; }
    void append(std::span<const double> f) { values.insert(values.end(), f.begin(), f.end()); }
};

using FeatureBlockPtr = std::shared_ptr<const FeatureBlock>;

struct Experience {
    ActionFeatures action_features;
    double reward_n = 0.0;
    /// Candidate subset of the following selection event; null means no bootstrap (terminal).
    FeatureBlockPtr next_candidates;
    std::uint64_t insertion_index = 0;
};

/// Binary sum tree over a power-of-two number of leaves. Internal nodes hold child sums.
class SumTree {
public:
    explicit SumTree(std::size_t min_leaves);

    std::size_t leaves() const noexcept { return leaves_; }
    double total() const noexcept { return sum_[1]; }
    double value(std::size_t leaf) const { return sum_[leaves_ + leaf]; }
    double max_value() const noexcept { return max_[1]; }

    void set(std::size_t leaf, double v);

    /// Leaf whose cumulative interval contains u, for u in [0, total()).
    std::size_t find(double u) const;

    /// True iff every internal node matches its children within rel_tol.
    bool consistent(double rel_tol = 1e-9) const;

private:
    std::size_t leaves_;
    std::vector<double> sum_;
    std::vector<double> max_;
};

struct ReplaySample {
    std::vector<std::size_t> leaf_ids;
    std::vector<double> probabilities;
    std::vector<double> is_weights;
};

/// Proportional prioritized replay with ring overwrite.
class PrioritizedReplay {
public:
    PrioritizedReplay(std::size_t capacity, double eta, double p_min = 1e-3);

    std::size_t capacity() const noexcept { return capacity_; }
    std::size_t size() const noexcept { return items_.size(); }
    bool empty() const noexcept { return items_.empty(); }
    double eta() const noexcept { return eta_; }
    double p_min() const noexcept { return p_min_; }

    /// Stores with priority max(current max priority, p_min); evicts the oldest entry when full.
    std::size_t push(Experience e);

    /// Stratified proportional draw of batch leaves; weights are (N P(i))^-zeta scaled by their max.
    ReplaySample sample(std::size_t batch, double zeta, std::mt19937_64& rng) const;

    /// Sets priority |td| + p_min for each leaf.
    void update_priorities(std::span<const std::size_t> leaf_ids, std::span<const double> td_errors);

    const Experience& at(std::size_t leaf) const;
    double priority(std::size_t leaf) const;
    /// Analytic P(i) = p_i^eta / sum_k p_k^eta.
    double probability(std::size_t leaf) const;
    const SumTree& tree() const noexcept { return tree_; }

private:
    double scaled(double p) const;

    std::size_t capacity_;
    double eta_;
    double p_min_;
    SumTree tree_;
    SumTree raw_;
    std::vector<Experience> items_;
    std::size_t next_slot_ = 0;
    std::uint64_t inserted_ = 0;
};

/// Max-normalized importance weights (1/(N P(i)))^zeta.
std::vector<double> importance_weights(std::span<const double> probabilities, std::size_t n, double zeta);

/// Sliding window producing n-step discounted rewards sum_{i<n} gamma^i R_{t+i}.
template <typename Payload>
class NStepAccumulator {
public:
    struct Emitted {
        Payload payload;
        double reward_n;
    };

    NStepAccumulator(std::size_t n, double gamma);

    std::size_t n() const noexcept { return n_; }
    double gamma() const noexcept { return gamma_; }
    std::size_t pending() const noexcept { return window_.size(); }

    /// Emits the oldest entry once n rewards are in the window.
    std::optional<Emitted> push(double reward, Payload payload);

    /// Emits every remaining entry with its shortened sum, oldest first.
    std::vector<Emitted> flush();

private:
    Emitted emit_front();

    std::size_t n_;
    double gamma_;
    std::deque<std::pair<double, Payload>> window_;
};

struct ZetaSchedule {
    double start = 0.4;
    std::size_t total_steps = 1;
};

/// Linear from start to 1 over total_steps, then 1.
double anneal_zeta(std::size_t step, const ZetaSchedule& schedule);

// ---- template implementation ----

template <typename Payload>
NStepAccumulator<Payload>::NStepAccumulator(std::size_t n, double gamma) : n_(n), gamma_(gamma) {
    if (n_ == 0) n_ = 1;
}

template <typename Payload>
typename NStepAccumulator<Payload>::Emitted NStepAccumulator<Payload>::emit_front() {
    double sum = 0.0;
    double discount = 1.0;
    for (const auto& entry : window_) {
        sum += discount * entry.first;
        discount *= gamma_;
    }
    Emitted out{std::move(window_.front().second), sum};
    window_.pop_front();
    return out;
}

template <typename Payload>
std::optional<typename NStepAccumulator<Payload>::Emitted> NStepAccumulator<Payload>::push(double reward,
                                                                                           Payload payload) {
    window_.emplace_back(reward, std::move(payload));
    if (window_.size() < n_) return std::nullopt;
    return emit_front();
}

template <typename Payload>
std::vector<typename NStepAccumulator<Payload>::Emitted> NStepAccumulator<Payload>::flush() {
    std::vector<Emitted> out;
    while (!window_.empty()) out.push_back(emit_front());
    return out;
}

}  // namespace misical
