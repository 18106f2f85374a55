#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "misical/agent.hpp"
#include "misical/errors.hpp"
#include "misical/harness/stats.hpp"
#include "misical/synth.hpp"
#include "support.hpp"

using namespace misical;

namespace {

AgentConfig small_agent() {
    AgentConfig c;
    c.candidates = 200;
    c.k = 20;
    c.batch = 32;
    c.buffer = 2000;
    c.hidden = {16, 8};
    c.pretrain_epochs = 1;
    return c;
}

ExploreOptions options_for(const AgentConfig& c, PolicyKind policy, std::size_t target) {
    ExploreOptions o;
    o.policy = policy;
    o.candidates = c.candidates;
    o.k = c.k;
    o.target_class = target;
    o.epsilon = c.epsilon;
    return o;
}

std::vector<PatchRecord> synth_records(std::size_t n, std::uint64_t seed = 1) {
    auto cfg = synth::default_config();
    cfg.n_patches = n;
    cfg.seed = seed;
    return synth::generate_records(cfg);
}

Pool make_pool(std::vector<PatchRecord> records, std::uint64_t seed, double total = 0.05) {
    BudgetConfig b;
    b.initial_fraction = total / 2;
    b.total_fraction = total;
    b.seed = seed;
    return Pool(std::move(records), 16, 4096, b);
}

}  // namespace

TEST_CASE("epsilon schedule examples") {
    CHECK(epsilon_at(EpsilonSchedule::constant(0.05), 0) == 0.05);
    CHECK(epsilon_at(EpsilonSchedule::constant(0.05), 12345) == 0.05);
    const auto lin = EpsilonSchedule::linear(1.0, 0.1, 500);
    CHECK(epsilon_at(lin, 0) == 1.0);
    CHECK(epsilon_at(lin, 250) == doctest::Approx(0.55).epsilon(1e-12));
    CHECK(epsilon_at(lin, 500) == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(epsilon_at(lin, 5000) == doctest::Approx(0.1).epsilon(1e-12));
    CHECK_THROWS_AS(EpsilonSchedule::constant(1.5).validate(), ConfigError);
}

TEST_CASE("agent config validation") {
    auto c = AgentConfig{};
    CHECK_NOTHROW(c.validate());
    c.k = c.candidates + 1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = AgentConfig{};
    c.gamma = 1.1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("select_topk with epsilon 1 is uniform over candidates") {
    Rng rng(11);
    const std::size_t dims[] = {3, 4, 1};
    QNetwork net(dims, rng);
    FeatureBlock block;
    block.dim = 3;
    std::vector<std::uint64_t> ids;
    for (std::uint64_t i = 0; i < 10; ++i) {
        block.append(std::vector<double>{double(i), 0.5 * double(i), 1.0});
        ids.push_back(i);
    }
    std::vector<double> counts(10, 0.0);
    const int trials = 100000;
    for (int t = 0; t < trials; ++t) counts[select_topk(net, block, ids, 1, 1.0, rng)[0]] += 1.0;
    double chi2 = 0.0;
    for (double c : counts) chi2 += (c - trials / 10.0) * (c - trials / 10.0) / (trials / 10.0);
    // 9 degrees of freedom, 0.999 quantile
    CHECK(chi2 < 27.88);
}

TEST_CASE("select_topk with epsilon 0 returns the greedy top-k, distinct") {
    Rng rng(12);
    const std::size_t dims[] = {4, 8, 1};
    for (int trial = 0; trial < 50; ++trial) {
        QNetwork net(dims, rng);
        FeatureBlock block;
        block.dim = 4;
        std::vector<std::uint64_t> ids;
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        const std::size_t n = 5 + rng() % 40;
        for (std::size_t i = 0; i < n; ++i) {
            block.append(std::vector<double>{u(rng), u(rng), u(rng), u(rng)});
            ids.push_back(1000 - i);
        }
        const auto q = net.forward_block(block);
        const std::size_t k = 1 + rng() % n;
        const auto picks = select_topk(net, block, ids, k, 0.0, rng);
        std::vector<std::size_t> order(n);
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        std::sort(order.begin(), order.end(), [&](auto a, auto b) {
            return q[a] != q[b] ? q[a] > q[b] : ids[a] < ids[b];
        });
        order.resize(k);
        REQUIRE(picks == order);

        const auto noisy = select_topk(net, block, ids, k, 0.5, rng);
        REQUIRE(std::set<std::size_t>(noisy.begin(), noisy.end()).size() == k);
    }
}

TEST_CASE("zero pretraining epochs leave the weights untouched") {
    auto c = small_agent();
    c.pretrain_epochs = 0;
    Rng rng(3);
    Agent agent(c, 19, rng);
    const auto before = agent.local().parameters();
    auto pool = make_pool(synth_records(4000), 3);
    const auto epochs = pretrain(agent, pool, options_for(c, PolicyKind::misical, 9), rng);
    CHECK(epochs.empty());
    CHECK(agent.local().parameters() == before);
    CHECK(agent.replay().size() == 0);
}

TEST_CASE("exploration invariants hold for every policy") {
    const auto records = synth_records(6000);
    for (auto policy : {PolicyKind::random, PolicyKind::entropy, PolicyKind::bald, PolicyKind::coreset,
                        PolicyKind::misical}) {
        CAPTURE(to_string(policy));
        auto c = small_agent();
        Rng rng(5);
        auto pool = make_pool(records, 5);
        std::optional<Agent> agent;
        if (policy == PolicyKind::misical) agent.emplace(c, 19, rng);
        const auto opts = options_for(c, policy, 9);
        const std::size_t planned = planned_events(pool, c.k);
        const auto log = explore(pool, opts, agent ? &*agent : nullptr, rng);

        CHECK(log.events.size() == planned);
        CHECK(pool.budget_exhausted());
        std::set<std::uint64_t> seen;
        for (auto i : pool.initial_indices()) seen.insert(pool.record(i).id);
        double running = 0.0;
        std::size_t hits = 0, labelled = log.initial_labelled;
        for (const auto& ev : log.events) {
            REQUIRE(ev.chosen_ids.size() == std::min(c.k, pool.budget_limit() - labelled));
            labelled += ev.chosen_ids.size();
            REQUIRE(ev.labelled_count == labelled);
            for (auto id : ev.chosen_ids) {
                REQUIRE(seen.insert(id).second);
                hits += reward_categorical(pool.record(*pool.index_of(id)), 9) > 0.0;
            }
            for (double r : ev.rewards) running += r;
            REQUIRE(ev.cumulative_reward == running);
            REQUIRE(ev.target_patches == hits);
        }
        // categorical reward counts target-containing acquisitions exactly
        CHECK(log.events.back().cumulative_reward == double(log.events.back().target_patches));
        CHECK(pool.recompute_histogram().pixel_counts == pool.histogram().pixel_counts);
    }
}

TEST_CASE("min(k, remaining) distinct ids when the pool is nearly empty") {
    auto c = small_agent();
    c.k = 7;
    c.candidates = 7;
    BudgetConfig b;
    b.initial_count = 3;
    b.total_fraction = 1.0;
    b.seed = 2;
    Pool pool(testing::toy_records(20, 4, 1, {2, 5}), 4, 4096, b);
    Rng rng(2);
    const auto log = explore(pool, options_for(c, PolicyKind::bald, 1), nullptr, rng);
    REQUIRE(log.events.size() == 3);
    CHECK(log.events[0].chosen_ids.size() == 7);
    CHECK(log.events[1].chosen_ids.size() == 7);
    CHECK(log.events[2].chosen_ids.size() == 3);
    CHECK(pool.unlabelled_count() == 0);
}

TEST_CASE("absent target class: zero reward, the run still terminates") {
    auto c = small_agent();
    BudgetConfig b;
    b.initial_fraction = 0.1;
    b.total_fraction = 0.5;
    Pool pool(testing::toy_records(400, 4, 2, {}), 4, 4096, b);
    Rng rng(4);
    Agent agent(c, 7, rng);
    const auto opts = options_for(c, PolicyKind::misical, 2);
    const auto epochs = pretrain(agent, pool, opts, rng);
    REQUIRE(epochs.size() == 1);
    CHECK(epochs[0].target_total == 0);
    const auto planned = planned_events(pool, c.k);
    const auto log = explore(pool, opts, &agent, rng);
    CHECK(log.events.size() == planned);
    CHECK(log.events.back().cumulative_reward == 0.0);
    CHECK(pool.budget_exhausted());
}

TEST_CASE("pretraining reads the pool without labelling anything") {
    auto c = small_agent();
    c.pretrain_epochs = 2;
    Rng rng(6);
    Agent agent(c, 19, rng);
    auto pool = make_pool(synth_records(8000), 6);
    const auto labelled = pool.labelled_count();
    const auto epochs = pretrain(agent, pool, options_for(c, PolicyKind::misical, 9), rng);
    CHECK(pool.labelled_count() == labelled);
    REQUIRE(epochs.size() == 2);
    for (const auto& e : epochs) {
        CHECK(e.events == pretrain_events_per_epoch(pool.initial_indices().size(), c.k));
        // every initial patch is drawn once per epoch, so the epoch always ends saturated
        CHECK(e.log.back().target_patches == e.target_total);
        CHECK(e.events_to_saturation.has_value());
    }
    CHECK(agent.training_steps() == epochs[0].events + epochs[1].events);
}

TEST_CASE("a fully random agent matches the random baseline within 2 sigma over 10 seeds") {
    const auto records = synth_records(10000);
    std::vector<double> agent_yield, random_yield;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        auto c = small_agent();
        c.epsilon = EpsilonSchedule::constant(1.0);
        {
            Rng rng(seed * 7919);
            auto pool = make_pool(records, seed);
            Agent agent(c, 19, rng);
            agent_yield.push_back(
                double(explore(pool, options_for(c, PolicyKind::misical, 9), &agent, rng).events.back().target_patches));
        }
        {
            Rng rng(seed * 104729);
            auto pool = make_pool(records, seed);
            random_yield.push_back(
                double(explore(pool, options_for(c, PolicyKind::random, 9), nullptr, rng).events.back().target_patches));
        }
    }
    const double se = std::sqrt((std::pow(harness::sample_std(agent_yield), 2) +
                                 std::pow(harness::sample_std(random_yield), 2)) / 10.0);
    CHECK(std::abs(harness::mean(agent_yield) - harness::mean(random_yield)) <= 2.0 * se);
}

TEST_CASE("misical needs an agent and baselines must not get one") {
    auto c = small_agent();
    auto pool = make_pool(synth_records(2000), 1);
    Rng rng(1);
    CHECK_THROWS_AS(explore(pool, options_for(c, PolicyKind::misical, 9), nullptr, rng), ConfigError);
    Agent agent(c, 19, rng);
    CHECK_THROWS_AS(explore(pool, options_for(c, PolicyKind::random, 9), &agent, rng), ConfigError);
}

TEST_CASE("delta-IoU reward requires an IoU model") {
    auto c = small_agent();
    auto pool = make_pool(synth_records(2000), 1);
    Rng rng(1);
    auto opts = options_for(c, PolicyKind::random, 9);
    opts.reward = RewardKind::delta_iou;
    CHECK_THROWS_AS(explore(pool, opts, nullptr, rng), ConfigError);
    const auto model = synth::make_iou_model(16, 7);
    opts.iou = &model;
    const auto log = explore(pool, opts, nullptr, rng);
    for (const auto& ev : log.events) REQUIRE(ev.mean_iou.has_value());
}
