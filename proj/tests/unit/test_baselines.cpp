#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "misical/baselines.hpp"
#include "misical/errors.hpp"
#include "support.hpp"

using namespace misical;

namespace {

FeatureBlock points(const std::vector<std::vector<double>>& cols, std::size_t dim) {
    FeatureBlock b;
    b.dim = dim;
    for (const auto& c : cols) b.append(c);
    return b;
}

std::vector<std::uint64_t> iota_ids(std::size_t n) {
    std::vector<std::uint64_t> ids(n);
    for (std::size_t i = 0; i < n; ++i) ids[i] = i;
    return ids;
}

// Exhaustive optimum of the k-center objective over candidate subsets.
double best_radius(const FeatureBlock& pts, const FeatureBlock& labelled, std::size_t k) {
    const std::size_t n = pts.count();
    double best = std::numeric_limits<double>::infinity();
    std::vector<bool> mask(n, false);
    std::fill(mask.begin(), mask.begin() + static_cast<std::ptrdiff_t>(k), true);
    do {
        std::vector<std::size_t> centers;
        for (std::size_t i = 0; i < n; ++i) {
            if (mask[i]) centers.push_back(i);
        }
        best = std::min(best, cover_radius(pts, centers, labelled));
    } while (std::prev_permutation(mask.begin(), mask.end()));
    return best;
}

}  // namespace

TEST_CASE("policy names round-trip") {
    for (auto k : {PolicyKind::random, PolicyKind::entropy, PolicyKind::bald, PolicyKind::coreset, PolicyKind::misical}) {
        CHECK(parse_policy(to_string(k)) == k);
    }
    CHECK_THROWS_AS(parse_policy("greedy"), ConfigError);
}

TEST_CASE("random ranking: full set, seeded, uniform within 2%") {
    Rng rng(1);
    auto all = rank_random(7, 7, rng);
    std::sort(all.begin(), all.end());
    CHECK(all == std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6});

    Rng a(9), b(9);
    CHECK(rank_random(100, 10, a) == rank_random(100, 10, b));

    std::vector<double> counts(10, 0.0);
    for (int t = 0; t < 100000; ++t) {
        for (auto i : rank_random(10, 3, rng)) counts[i] += 1.0;
    }
    for (double c : counts) CHECK(c / 100000.0 == doctest::Approx(0.3).epsilon(0.02));
}

TEST_CASE("rank_by_score: descending with ties to the lower id") {
    const std::vector<double> s{0.5, 0.9, 0.5, 0.1, 0.9};
    const std::vector<std::uint64_t> ids{40, 30, 20, 10, 50};
    CHECK(rank_by_score(s, ids, 5) == std::vector<std::size_t>{1, 4, 2, 0, 3});
    const std::vector<double> flat(6, 1.0);
    const std::vector<std::uint64_t> ids2{6, 2, 9, 1, 4, 3};
    CHECK(rank_by_score(flat, ids2, 3) == std::vector<std::size_t>{3, 1, 5});
    const std::vector<double> bad{1.0, std::nan("")};
    CHECK_THROWS_AS(rank_by_score(bad, std::vector<std::uint64_t>{1, 2}, 1), NumericalError);
}

TEST_CASE("BALD and entropy ranking match a brute-force sort on 10^4 candidates") {
    Rng rng(4);
    std::vector<PatchRecord> records;
    for (std::uint64_t i = 0; i < 10000; ++i) {
        records.push_back(testing::random_record(i * 3 + 1, 8, true, 4096, rng));
        // coarse values force plenty of ties
        records.back().features[kBaldMeanIndex] = std::round(records.back().features[kBaldMeanIndex] * 20) / 20;
        *records.back().entropy_mean = std::round(*records.back().entropy_mean * 20) / 20;
    }
    std::shuffle(records.begin(), records.end(), rng);
    std::vector<const PatchRecord*> cands;
    for (const auto& r : records) cands.push_back(&r);

    auto oracle = [&](auto score) {
        std::vector<std::size_t> order(cands.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return std::make_pair(-score(*cands[a]), cands[a]->id) < std::make_pair(-score(*cands[b]), cands[b]->id);
        });
        order.resize(500);
        return order;
    };
    CHECK(rank_bald(cands, 500) == oracle([](const PatchRecord& r) { return r.bald_mean(); }));
    CHECK(rank_entropy(cands, 500) == oracle([](const PatchRecord& r) { return *r.entropy_mean; }));
}

TEST_CASE("entropy ranking without the entropy column is a config error naming the flag") {
    Rng rng(5);
    auto r = testing::random_record(1, 4, false, 4096, rng);
    std::vector<const PatchRecord*> cands{&r};
    CHECK_THROWS_WITH_AS(rank_entropy(cands, 1), doctest::Contains("flag"), ConfigError);
}

TEST_CASE("uniform-prediction patches outrank confident ones under entropy") {
    Rng rng(6);
    auto sure = testing::random_record(1, 4, true, 4096, rng);
    auto unsure = testing::random_record(2, 4, true, 4096, rng);
    sure.entropy_mean = 0.0;
    unsure.entropy_mean = std::log(4.0);
    std::vector<const PatchRecord*> cands{&sure, &unsure};
    CHECK(rank_entropy(cands, 1) == std::vector<std::size_t>{1});
}

TEST_CASE("coreset: farthest point from the labelled origin") {
    const auto labelled = points({{0.0}}, 1);
    const auto cands = points({{1.0}, {2.0}, {3.0}}, 1);
    CHECK(coreset_greedy(cands, iota_ids(3), labelled, 1) == std::vector<std::size_t>{2});
    // k = all: farthest-first order
    CHECK(coreset_greedy(cands, iota_ids(3), labelled, 3) == std::vector<std::size_t>{2, 0, 1});
}

TEST_CASE("coreset with no labelled set starts from the lowest id") {
    const auto cands = points({{5.0}, {0.0}, {1.0}}, 1);
    const std::vector<std::uint64_t> ids{9, 3, 7};
    FeatureBlock empty;
    CHECK(coreset_greedy(cands, ids, empty, 2) == std::vector<std::size_t>{1, 0});
}

TEST_CASE("property: greedy cover radius is within twice the optimum") {
    Rng rng(7);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int trial = 0; trial < 150; ++trial) {
        const std::size_t n = 4 + rng() % 9;  // 4..12
        const std::size_t k = 1 + rng() % 3;
        std::vector<std::vector<double>> pts, lab;
        for (std::size_t i = 0; i < n; ++i) pts.push_back({unit(rng), unit(rng), unit(rng)});
        const std::size_t nl = rng() % 3;
        for (std::size_t i = 0; i < nl; ++i) lab.push_back({unit(rng), unit(rng), unit(rng)});
        const auto P = points(pts, 3);
        FeatureBlock L;
        L.dim = 3;
        for (const auto& l : lab) L.append(l);
        const auto picks = coreset_greedy(P, iota_ids(n), L, k);
        REQUIRE(picks.size() == k);
        REQUIRE(cover_radius(P, picks, L) <= 2.0 * best_radius(P, L, k) + 1e-12);
    }
}
