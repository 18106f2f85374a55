#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "misical/pool.hpp"
#include "misical/replay.hpp"

namespace misical {

enum class PolicyKind : std::uint8_t { random, entropy, bald, coreset, misical };

std::string_view to_string(PolicyKind kind);
/// Accepts the lower-case names; throws ConfigError otherwise.
PolicyKind parse_policy(std::string_view name);

/// Positions of the k highest scores, descending, ties broken by the lower id.
/// Throws NumericalError on a non-finite score.
std::vector<std::size_t> rank_by_score(std::span<const double> scores, std::span<const std::uint64_t> ids,
                                       std::size_t k);

/// Uniform k-subset of candidate positions.
std::vector<std::size_t> rank_random(std::size_t n_candidates, std::size_t k, Rng& rng);

std::vector<std::size_t> rank_bald(std::span<const PatchRecord* const> candidates, std::size_t k);

/// Throws ConfigError when a candidate lacks the entropy column.
std::vector<std::size_t> rank_entropy(std::span<const PatchRecord* const> candidates, std::size_t k);

/// k-center greedy over Euclidean distance. `labelled` holds one feature vector per column.
/// Returns candidate positions in pick order.
std::vector<std::size_t> coreset_greedy(const FeatureBlock& candidates, std::span<const std::uint64_t> ids,
                                        const FeatureBlock& labelled, std::size_t k);

/// Largest distance from any point to its nearest center; the k-center objective.
double cover_radius(const FeatureBlock& points, std::span<const std::size_t> centers, const FeatureBlock& labelled);

}  // namespace misical
