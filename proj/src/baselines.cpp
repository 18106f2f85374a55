#include "misical/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "misical/errors.hpp"

namespace misical {

std::string_view to_string(PolicyKind kind) {
    switch (kind) {
        case PolicyKind::random: return "random";
        case PolicyKind::entropy: return "entropy";
        case PolicyKind::bald: return "bald";
        case PolicyKind::coreset: return "coreset";
        case PolicyKind::misical: return "misical";
    }
    return "unknown";
}

PolicyKind parse_policy(std::string_view name) {
    for (auto kind : {PolicyKind::random, PolicyKind::entropy, PolicyKind::bald, PolicyKind::coreset,
                      PolicyKind::misical}) {
        if (name == to_string(kind)) return kind;
    }
    throw ConfigError("unknown policy '" + std::string(name) + "' (expected random, entropy, bald, coreset or misical)");
}

std::vector<std::size_t> rank_by_score(std::span<const double> scores, std::span<const std::uint64_t> ids,
                                       std::size_t k) {
    if (scores.size() != ids.size()) throw ValidationError("scores and ids differ in length");
    for (double s : scores) {
        if (!std::isfinite(s)) throw NumericalError("non-finite acquisition score");
    }
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    k = std::min(k, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::size_t a, std::size_t b) {
                          if (scores[a] != scores[b]) return scores[a] > scores[b];
                          return ids[a] < ids[b];
                      });
    order.resize(k);
    return order;
}

std::vector<std::size_t> rank_random(std::size_t n_candidates, std::size_t k, Rng& rng) {
    return sample_without_replacement(n_candidates, std::min(k, n_candidates), rng);
}

namespace {

std::vector<std::uint64_t> ids_of(std::span<const PatchRecord* const> candidates) {
    std::vector<std::uint64_t> ids;
    ids.reserve(candidates.size());
    for (const auto* r : candidates) ids.push_back(r->id);
    return ids;
}

}  // namespace

std::vector<std::size_t> rank_bald(std::span<const PatchRecord* const> candidates, std::size_t k) {
    std::vector<double> scores;
    scores.reserve(candidates.size());
    for (const auto* r : candidates) scores.push_back(r->bald_mean());
    return rank_by_score(scores, ids_of(candidates), k);
}

std::vector<std::size_t> rank_entropy(std::span<const PatchRecord* const> candidates, std::size_t k) {
    std::vector<double> scores;
    scores.reserve(candidates.size());
    for (const auto* r : candidates) {
        if (!r->entropy_mean) {
            throw ConfigError("entropy policy needs the entropy column (pool header flag bit 0) but patch " +
                              std::to_string(r->id) + " has none");
        }
        scores.push_back(*r->entropy_mean);
    }
    return rank_by_score(scores, ids_of(candidates), k);
}

namespace {

double squared_distance(std::span<const double> a, std::span<const double> b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double diff = a[i] - b[i];
        d += diff * diff;
    }
    return d;
}

std::vector<double> nearest_labelled(const FeatureBlock& points, const FeatureBlock& labelled) {
    std::vector<double> nearest(points.count(), std::numeric_limits<double>::infinity());
    if (labelled.count() > 0 && labelled.dim != points.dim) {
        throw ValidationError("candidate and labelled feature vectors differ in length");
    }
    for (std::size_t i = 0; i < points.count(); ++i) {
        const auto p = points.column(i);
        for (std::size_t j = 0; j < labelled.count(); ++j) {
            nearest[i] = std::min(nearest[i], squared_distance(p, labelled.column(j)));
        }
    }
    return nearest;
}

}  // namespace

std::vector<std::size_t> coreset_greedy(const FeatureBlock& candidates, std::span<const std::uint64_t> ids,
                                        const FeatureBlock& labelled, std::size_t k) {
    const std::size_t n = candidates.count();
    if (ids.size() != n) throw ValidationError("candidate ids and features differ in length");
    k = std::min(k, n);
    auto nearest = nearest_labelled(candidates, labelled);
    std::vector<bool> taken(n, false);
    std::vector<std::size_t> picks;
    picks.reserve(k);
    while (picks.size() < k) {
        std::size_t best = n;
        for (std::size_t i = 0; i < n; ++i) {
            if (taken[i]) continue;
            if (best == n || nearest[i] > nearest[best] || (nearest[i] == nearest[best] && ids[i] < ids[best])) {
                best = i;
            }
        }
        taken[best] = true;
        picks.push_back(best);
        const auto centre = candidates.column(best);
        for (std::size_t i = 0; i < n; ++i) {
            if (!taken[i]) nearest[i] = std::min(nearest[i], squared_distance(candidates.column(i), centre));
        }
    }
    return picks;
}

double cover_radius(const FeatureBlock& points, std::span<const std::size_t> centers, const FeatureBlock& labelled) {
    auto nearest = nearest_labelled(points, labelled);
    double worst = 0.0;
    for (std::size_t i = 0; i < points.count(); ++i) {
        double d = nearest[i];
        for (std::size_t c : centers) d = std::min(d, squared_distance(points.column(i), points.column(c)));
        worst = std::max(worst, d);
    }
    return std::sqrt(worst);
}

}  // namespace misical
