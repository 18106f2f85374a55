#include "misical/agent.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "misical/errors.hpp"

namespace misical {

EpsilonSchedule EpsilonSchedule::constant(double v) {
    EpsilonSchedule s;
    s.kind = Kind::constant;
    s.value = v;
    return s;
}

EpsilonSchedule EpsilonSchedule::linear(double start, double end, std::size_t steps) {
    EpsilonSchedule s;
    s.kind = Kind::linear;
    s.start = start;
    s.end = end;
    s.steps = steps;
    return s;
}

void EpsilonSchedule::validate() const {
    auto unit = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (kind == Kind::constant && !unit(value)) throw ConfigError("epsilon.value must lie in [0, 1]");
    if (kind == Kind::linear && !(unit(start) && unit(end))) {
        throw ConfigError("epsilon.start and epsilon.end must lie in [0, 1]");
    }
}

double epsilon_at(const EpsilonSchedule& schedule, std::size_t step) {
    if (schedule.kind == EpsilonSchedule::Kind::constant) return schedule.value;
    if (schedule.steps == 0) return schedule.end;
    const double frac = std::min(static_cast<double>(step) / static_cast<double>(schedule.steps), 1.0);
    return std::clamp(schedule.start + (schedule.end - schedule.start) * frac, 0.0, 1.0);
}

void AgentConfig::validate() const {
    if (candidates == 0) throw ConfigError("agent.candidates must be at least 1");
    if (k == 0) throw ConfigError("agent.k must be at least 1");
    if (k > candidates) throw ConfigError("agent.k must not exceed agent.candidates");
    if (batch == 0) throw ConfigError("agent.batch must be at least 1");
    if (buffer == 0) throw ConfigError("agent.buffer must be at least 1");
    if (n_step == 0) throw ConfigError("agent.n_step must be at least 1");
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("agent.gamma must lie in [0, 1]");
    if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("agent.beta must lie in [0, 1]");
    if (!(eta >= 0.0)) throw ConfigError("agent.eta must be >= 0");
    if (!(zeta_start >= 0.0 && zeta_start <= 1.0)) throw ConfigError("agent.zeta_start must lie in [0, 1]");
    if (!(p_min > 0.0)) throw ConfigError("agent.p_min must be > 0");
    if (!(optimizer.learning_rate > 0.0)) throw ConfigError("agent.learning_rate must be > 0");
    if (!(optimizer.rho >= 0.0 && optimizer.rho < 1.0)) throw ConfigError("agent.rho must lie in [0, 1)");
    if (!(optimizer.epsilon > 0.0)) throw ConfigError("agent.rms_epsilon must be > 0");
    if (!(optimizer.weight_decay >= 0.0)) throw ConfigError("agent.weight_decay must be >= 0");
    for (auto h : hidden) {
        if (h == 0) throw ConfigError("agent.hidden sizes must be positive");
    }
    if (!(pretrain_epsilon >= 0.0 && pretrain_epsilon <= 1.0)) {
        throw ConfigError("agent.pretrain_epsilon must lie in [0, 1]");
    }
    epsilon.validate();
}

namespace {

std::vector<std::size_t> network_dims(const AgentConfig& config, std::size_t feature_dim) {
    std::vector<std::size_t> dims{feature_dim};
    dims.insert(dims.end(), config.hidden.begin(), config.hidden.end());
    dims.push_back(1);
    return dims;
}

}  // namespace

Agent::Agent(const AgentConfig& config, std::size_t feature_dim, Rng& rng)
    : config_(config),
      local_(network_dims(config, feature_dim), rng),
      target_(local_),
      optimizer_(local_, config.optimizer),
      replay_(config.buffer, config.eta, config.p_min),
      window_(config.n_step, config.gamma),
      zeta_{config.zeta_start, 1} {
    config_.validate();
}

void Agent::store(NStepAccumulator<Pending>::Emitted emitted) {
    replay_.push(Experience{std::move(emitted.payload.features), emitted.reward_n, std::move(emitted.payload.next), 0});
}

void Agent::observe(std::span<const double> features, double reward, FeatureBlockPtr next) {
    auto emitted = window_.push(reward, Pending{ActionFeatures(features.begin(), features.end()), std::move(next)});
    if (emitted) store(std::move(*emitted));
}

void Agent::end_episode() {
    for (auto& emitted : window_.flush()) {
        // A window cut short by the episode end has no state n steps ahead to bootstrap from.
        emitted.payload.next.reset();
        store(std::move(emitted));
    }
}

std::optional<double> Agent::train(Rng& rng) {
    if (replay_.empty()) return std::nullopt;
    const double zeta = anneal_zeta(steps_, zeta_);
    const auto sample = replay_.sample(config_.batch, zeta, rng);
    std::vector<TrainingExample> batch;
    batch.reserve(sample.leaf_ids.size());
    for (auto leaf : sample.leaf_ids) {
        const auto& e = replay_.at(leaf);
        batch.push_back({e.action_features, e.reward_n, e.next_candidates.get()});
    }
    const double discount = std::pow(config_.gamma, static_cast<double>(config_.n_step));
    auto result = train_batch(local_, target_, optimizer_, batch, discount, sample.is_weights, config_.grad_clip);
    replay_.update_priorities(sample.leaf_ids, result.td_errors);
    soft_update(target_, local_, config_.beta);
    ++steps_;
    return result.loss;
}

FeatureBlock make_block(const Pool& pool, std::span<const std::size_t> indices) {
    FeatureBlock block;
    block.dim = kBaldFeatureCount + pool.n_classes();
    block.values.reserve(block.dim * indices.size());
    for (auto i : indices) block.append(pool.record(i).features);
    return block;
}

std::vector<std::size_t> select_topk(const QNetwork& net, const FeatureBlock& candidates,
                                     std::span<const std::uint64_t> ids, std::size_t k, double epsilon, Rng& rng) {
    const std::size_t n = candidates.count();
    if (ids.size() != n) throw ValidationError("candidate ids and features differ in length");
    if (k > n) throw ValidationError("k exceeds the number of candidates");
    const Eigen::RowVectorXd q = net.forward_block(candidates);
    std::vector<double> scores(q.data(), q.data() + q.size());
    const auto order = rank_by_score(scores, ids, n);

    // remaining holds unchosen positions; slot[i] is the position of candidate i inside it.
    std::vector<std::size_t> remaining(n), slot(n);
    std::iota(remaining.begin(), remaining.end(), std::size_t{0});
    std::iota(slot.begin(), slot.end(), std::size_t{0});
    std::vector<bool> chosen(n, false);
    auto take = [&](std::size_t pos) {
        chosen[pos] = true;
        const std::size_t s = slot[pos];
        remaining[s] = remaining.back();
        slot[remaining[s]] = s;
        remaining.pop_back();
    };

    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<std::size_t> picks;
    picks.reserve(k);
    std::size_t cursor = 0;
    for (std::size_t s = 0; s < k; ++s) {
        std::size_t pos;
        if (unit(rng) < epsilon) {
            pos = remaining[std::uniform_int_distribution<std::size_t>(0, remaining.size() - 1)(rng)];
        } else {
            while (chosen[order[cursor]]) ++cursor;
            pos = order[cursor];
        }
        take(pos);
        picks.push_back(pos);
    }
    return picks;
}

namespace {

using Clock = std::chrono::steady_clock;

double safe_entropy(const HistogramState& h) {
    for (auto c : h.pixel_counts) {
        if (c > 0) return histogram_entropy(h);
    }
    return 0.0;
}

struct EventOutcome {
    std::vector<double> rewards;
    std::size_t target_hits = 0;
};

/// Rewards for the records just acquired; the delta-IoU reward is shared by the whole batch.
EventOutcome score_event(const Pool& pool, std::span<const std::size_t> acquired, const ExploreOptions& opt,
                         const HistogramState& before, const HistogramState& after) {
    EventOutcome out;
    for (auto i : acquired) out.target_hits += reward_categorical(pool.record(i), opt.target_class) > 0.0 ? 1 : 0;
    if (opt.reward == RewardKind::categorical) {
        for (auto i : acquired) out.rewards.push_back(reward_categorical(pool.record(i), opt.target_class));
    } else {
        const double shared = synth::delta_iou_reward(before, after, opt.target_class, *opt.iou);
        out.rewards.assign(acquired.size(), shared);
    }
    return out;
}

std::vector<std::size_t> choose(const ExploreOptions& opt, const Agent* agent, const Pool& pool,
                                std::span<const std::size_t> cands, const FeatureBlock& block,
                                const FeatureBlock* labelled, std::size_t k, double epsilon, Rng& rng) {
    std::vector<std::uint64_t> ids;
    std::vector<const PatchRecord*> records;
    ids.reserve(cands.size());
    records.reserve(cands.size());
    for (auto i : cands) {
        records.push_back(&pool.record(i));
        ids.push_back(records.back()->id);
    }
    switch (opt.policy) {
        case PolicyKind::misical: return select_topk(agent->local(), block, ids, k, epsilon, rng);
        case PolicyKind::random: return rank_random(cands.size(), k, rng);
        case PolicyKind::bald: return rank_bald(records, k);
        case PolicyKind::entropy: return rank_entropy(records, k);
        case PolicyKind::coreset: return coreset_greedy(block, ids, *labelled, k);
    }
    throw InvariantError("unhandled policy");
}

void check_options(const ExploreOptions& opt, const Pool& pool, const Agent* agent) {
    if (opt.k == 0 || opt.candidates == 0) throw ConfigError("k and candidates must be at least 1");
    if (opt.k > opt.candidates) throw ConfigError("k must not exceed the candidate subset size");
    if (opt.target_class >= pool.n_classes()) {
        throw ConfigError("target_class " + std::to_string(opt.target_class) + " outside [0, " +
                          std::to_string(pool.n_classes()) + ")");
    }
    if ((opt.policy == PolicyKind::misical) != (agent != nullptr)) {
        throw ConfigError("an agent is required by, and only by, the misical policy");
    }
    if (opt.reward == RewardKind::delta_iou && opt.iou == nullptr) {
        throw ConfigError("the delta_iou reward needs an IoU model");
    }
    if (opt.iou && opt.iou->k.size() != pool.n_classes()) throw ConfigError("IoU model class count mismatch");
    opt.epsilon.validate();
}

}  // namespace

std::size_t planned_events(const Pool& pool, std::size_t k) {
    const std::size_t acquirable = std::min(pool.budget_remaining(), pool.unlabelled_count());
    return k == 0 ? 0 : (acquirable + k - 1) / k;
}

RunLog explore(Pool& pool, const ExploreOptions& options, Agent* agent, Rng& rng) {
    check_options(options, pool, agent);
    EpsilonSchedule schedule = options.epsilon;
    if (schedule.kind == EpsilonSchedule::Kind::linear && schedule.steps == 0) {
        schedule.steps = planned_events(pool, options.k);
    }

    RunLog log;
    log.initial_labelled = pool.labelled_count();
    std::optional<FeatureBlock> labelled;
    if (options.policy == PolicyKind::coreset) labelled = make_block(pool, pool.labelled_indices());

    auto draw = [&]() -> std::vector<std::size_t> {
        if (pool.budget_exhausted() || pool.unlabelled_count() == 0) return {};
        return pool.sample_candidates(options.candidates, rng);
    };
    auto block_of = [&](const std::vector<std::size_t>& cands) -> FeatureBlockPtr {
        if (cands.empty()) return nullptr;
        return std::make_shared<const FeatureBlock>(make_block(pool, cands));
    };

    std::vector<std::size_t> cands = draw();
    FeatureBlockPtr block = block_of(cands);
    double cumulative = 0.0;
    std::size_t hits = 0;
    const bool learns = options.policy == PolicyKind::misical;
    while (!cands.empty()) {
        const auto t0 = Clock::now();
        SelectionEvent ev;
        ev.event = log.events.size() + 1;
        const std::size_t k = std::min({options.k, pool.budget_remaining(), cands.size()});
        const double eps = learns ? epsilon_at(schedule, ev.event - 1) : std::numeric_limits<double>::quiet_NaN();
        ev.epsilon = eps;

        const auto picks = choose(options, agent, pool, cands, *block, labelled ? &*labelled : nullptr, k, eps, rng);
        const HistogramState before = pool.histogram();
        std::vector<std::size_t> acquired;
        acquired.reserve(picks.size());
        for (auto p : picks) {
            const std::size_t index = cands[p];
            if (pool.is_labelled(index)) throw InvariantError("candidate was already labelled");
            pool.label(index);
            acquired.push_back(index);
            ev.chosen_ids.push_back(pool.record(index).id);
            if (labelled) labelled->append(pool.record(index).features);
        }
        auto outcome = score_event(pool, acquired, options, before, pool.histogram());

        std::vector<std::size_t> next = draw();
        FeatureBlockPtr next_block = block_of(next);
        if (learns) {
            for (std::size_t j = 0; j < acquired.size(); ++j) {
                agent->observe(pool.record(acquired[j]).features, outcome.rewards[j], next_block);
            }
            if (!next_block) agent->end_episode();
            ev.loss = agent->train(rng);
        }

        for (double r : outcome.rewards) cumulative += r;
        hits += outcome.target_hits;
        ev.rewards = std::move(outcome.rewards);
        ev.cumulative_reward = cumulative;
        ev.target_patches = hits;
        ev.labelled_count = pool.labelled_count();
        ev.histogram_entropy = safe_entropy(pool.histogram());
        if (options.iou) ev.mean_iou = synth::simulated_mean_iou(pool.histogram(), *options.iou);
        ev.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
        log.events.push_back(std::move(ev));

        cands = std::move(next);
        block = std::move(next_block);
    }
    return log;
}

std::size_t pretrain_events_per_epoch(std::size_t initial, std::size_t k) {
    return k == 0 ? 0 : (initial + k - 1) / k;
}

std::vector<PretrainEpoch> pretrain(Agent& agent, const Pool& pool, const ExploreOptions& options, Rng& rng) {
    check_options(options, pool, &agent);
    const auto& initial = pool.initial_indices();
    if (initial.empty() && agent.config().pretrain_epochs > 0) {
        throw ConfigError("pretraining needs a non-empty initial labelled set");
    }
    std::size_t target_total = 0;
    for (auto i : initial) target_total += reward_categorical(pool.record(i), options.target_class) > 0.0 ? 1 : 0;

    std::vector<PretrainEpoch> epochs;
    for (std::size_t e = 1; e <= agent.config().pretrain_epochs; ++e) {
        PretrainEpoch epoch;
        epoch.epoch = e;
        epoch.target_total = target_total;
        std::vector<std::size_t> scratch = initial;
        HistogramState hist(pool.n_classes());
        std::size_t labelled = 0;

        auto draw = [&]() -> std::vector<std::size_t> {
            if (scratch.empty()) return {};
            auto picks = sample_without_replacement(scratch.size(), std::min(options.candidates, scratch.size()), rng);
            for (auto& p : picks) p = scratch[p];
            return picks;
        };
        auto block_of = [&](const std::vector<std::size_t>& cands) -> FeatureBlockPtr {
            if (cands.empty()) return nullptr;
            return std::make_shared<const FeatureBlock>(make_block(pool, cands));
        };

        std::vector<std::size_t> cands = draw();
        FeatureBlockPtr block = block_of(cands);
        double cumulative = 0.0;
        std::size_t hits = 0;
        while (!cands.empty()) {
            const auto t0 = Clock::now();
            SelectionEvent ev;
            ev.event = epoch.log.size() + 1;
            ev.epsilon = agent.config().pretrain_epsilon;
            const std::size_t k = std::min(options.k, cands.size());
            const auto picks = choose(options, &agent, pool, cands, *block, nullptr, k, ev.epsilon, rng);

            const HistogramState before = hist;
            std::vector<std::size_t> acquired;
            for (auto p : picks) {
                acquired.push_back(cands[p]);
                hist.add(pool.record(cands[p]).gt_pixel_counts);
                ev.chosen_ids.push_back(pool.record(cands[p]).id);
            }
            std::erase_if(scratch, [&](std::size_t i) {
                return std::find(acquired.begin(), acquired.end(), i) != acquired.end();
            });
            labelled += acquired.size();
            auto outcome = score_event(pool, acquired, options, before, hist);

            std::vector<std::size_t> next = draw();
            FeatureBlockPtr next_block = block_of(next);
            for (std::size_t j = 0; j < acquired.size(); ++j) {
                agent.observe(pool.record(acquired[j]).features, outcome.rewards[j], next_block);
            }
            if (!next_block) agent.end_episode();
            ev.loss = agent.train(rng);

            for (double r : outcome.rewards) cumulative += r;
            hits += outcome.target_hits;
            ev.rewards = std::move(outcome.rewards);
            ev.cumulative_reward = cumulative;
            ev.target_patches = hits;
            ev.labelled_count = labelled;
            ev.histogram_entropy = safe_entropy(hist);
            if (options.iou) ev.mean_iou = synth::simulated_mean_iou(hist, *options.iou);
            ev.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
            if (!epoch.events_to_saturation && hits == target_total) epoch.events_to_saturation = ev.event;
            epoch.log.push_back(std::move(ev));

            cands = std::move(next);
            block = std::move(next_block);
        }
        epoch.events = epoch.log.size();
        epochs.push_back(std::move(epoch));
    }
    return epochs;
}

}  // namespace misical
