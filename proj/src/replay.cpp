#include "misical/replay.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <string>

#include "misical/errors.hpp"

namespace misical {

SumTree::SumTree(std::size_t min_leaves) : leaves_(std::bit_ceil(std::max<std::size_t>(min_leaves, 1))) {
    sum_.assign(2 * leaves_, 0.0);
    max_.assign(2 * leaves_, 0.0);
}

void SumTree::set(std::size_t leaf, double v) {
    if (leaf >= leaves_) throw ValidationError("sum tree leaf out of range");
    std::size_t node = leaves_ + leaf;
    sum_[node] = v;
    max_[node] = v;
    for (node /= 2; node >= 1; node /= 2) {
        sum_[node] = sum_[2 * node] + sum_[2 * node + 1];
        max_[node] = std::max(max_[2 * node], max_[2 * node + 1]);
    }
}

std::size_t SumTree::find(double u) const {
    std::size_t node = 1;
    while (node < leaves_) {
        const std::size_t left = 2 * node;
        if (u < sum_[left] || sum_[left + 1] <= 0.0) {
            node = left;
        } else {
            u -= sum_[left];
            node = left + 1;
        }
    }
    std::size_t leaf = node - leaves_;
    // Rounding can land on an empty leaf at the right edge; walk back to the last populated one.
    while (leaf > 0 && sum_[leaves_ + leaf] <= 0.0) --leaf;
    return leaf;
}

bool SumTree::consistent(double rel_tol) const {
    for (std::size_t node = leaves_ - 1; node >= 1; --node) {
        const double expect = sum_[2 * node] + sum_[2 * node + 1];
        if (std::abs(sum_[node] - expect) > rel_tol * std::max(std::abs(expect), 1e-300)) return false;
    }
    return true;
}

PrioritizedReplay::PrioritizedReplay(std::size_t capacity, double eta, double p_min)
    : capacity_(capacity), eta_(eta), p_min_(p_min), tree_(capacity), raw_(capacity) {
    if (capacity_ == 0) throw ConfigError("replay capacity must be at least 1");
    if (!(eta_ >= 0.0) || !std::isfinite(eta_)) throw ConfigError("PER exponent eta must be >= 0");
    if (!(p_min_ > 0.0)) throw ConfigError("PER priority floor must be > 0");
    items_.reserve(std::min<std::size_t>(capacity_, 1u << 16));
}

double PrioritizedReplay::scaled(double p) const { return eta_ == 0.0 ? 1.0 : std::pow(p, eta_); }

std::size_t PrioritizedReplay::push(Experience e) {
    const double p = std::max(raw_.max_value(), p_min_);
    e.insertion_index = inserted_++;
    const std::size_t slot = next_slot_;
    if (items_.size() < capacity_) {
        items_.push_back(std::move(e));
    } else {
        items_[slot] = std::move(e);
    }
    // Clear the evicted priority first so it cannot keep the running max alive.
    raw_.set(slot, 0.0);
    raw_.set(slot, p);
    tree_.set(slot, scaled(p));
    next_slot_ = (next_slot_ + 1) % capacity_;
    return slot;
}

ReplaySample PrioritizedReplay::sample(std::size_t batch, double zeta, std::mt19937_64& rng) const {
    if (!(zeta >= 0.0 && zeta <= 1.0)) throw ConfigError("importance exponent zeta must lie in [0, 1]");
    if (items_.empty()) throw ValidationError("cannot sample from an empty replay buffer");
    if (batch == 0) throw ValidationError("batch size must be at least 1");
    ReplaySample out;
    out.leaf_ids.reserve(batch);
    out.probabilities.reserve(batch);
    const double total = tree_.total();
    const double segment = total / static_cast<double>(batch);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (std::size_t i = 0; i < batch; ++i) {
        double u = (static_cast<double>(i) + unit(rng)) * segment;
        u = std::min(u, std::nextafter(total, 0.0));
        const std::size_t leaf = std::min(tree_.find(u), items_.size() - 1);
        out.leaf_ids.push_back(leaf);
        out.probabilities.push_back(tree_.value(leaf) / total);
    }
    out.is_weights = importance_weights(out.probabilities, items_.size(), zeta);
    return out;
}

void PrioritizedReplay::update_priorities(std::span<const std::size_t> leaf_ids, std::span<const double> td_errors) {
    if (leaf_ids.size() != td_errors.size()) throw ValidationError("leaf/td-error count mismatch");
    for (std::size_t i = 0; i < leaf_ids.size(); ++i) {
        if (leaf_ids[i] >= items_.size()) {
            throw ValidationError("invalid replay leaf id " + std::to_string(leaf_ids[i]));
        }
    }
    for (std::size_t i = 0; i < leaf_ids.size(); ++i) {
        const double p = std::abs(td_errors[i]) + p_min_;
        raw_.set(leaf_ids[i], p);
        tree_.set(leaf_ids[i], scaled(p));
    }
}

const Experience& PrioritizedReplay::at(std::size_t leaf) const {
    if (leaf >= items_.size()) throw ValidationError("invalid replay leaf id " + std::to_string(leaf));
    return items_[leaf];
}

double PrioritizedReplay::priority(std::size_t leaf) const {
    at(leaf);
    return raw_.value(leaf);
}

double PrioritizedReplay::probability(std::size_t leaf) const {
    at(leaf);
    return tree_.value(leaf) / tree_.total();
}

std::vector<double> importance_weights(std::span<const double> probabilities, std::size_t n, double zeta) {
    std::vector<double> w(probabilities.size());
    double max_w = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        w[i] = std::pow(1.0 / (static_cast<double>(n) * probabilities[i]), zeta);
        max_w = std::max(max_w, w[i]);
    }
    for (auto& v : w) v /= max_w;
    return w;
}

double anneal_zeta(std::size_t step, const ZetaSchedule& schedule) {
    if (schedule.total_steps == 0 || step >= schedule.total_steps) return 1.0;
    const double frac = static_cast<double>(step) / static_cast<double>(schedule.total_steps);
    return std::min(1.0, schedule.start + (1.0 - schedule.start) * frac);
}

}  // namespace misical
