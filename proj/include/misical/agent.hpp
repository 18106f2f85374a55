#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "misical/baselines.hpp"
#include "misical/pool.hpp"
#include "misical/qnetwork.hpp"
#include "misical/replay.hpp"
#include "misical/synth.hpp"

namespace misical {

struct EpsilonSchedule {
    enum class Kind : std::uint8_t { constant, linear };
    Kind kind = Kind::constant;
    double value = 0.05;
    double start = 1.0;
    double end = 0.1;
    /// Linear horizon in selection events; 0 means "the length of the run", resolved by explore().
    std::size_t steps = 0;

    static EpsilonSchedule constant(double v);
    static EpsilonSchedule linear(double start, double end, std::size_t steps);
    void validate() const;
};

double epsilon_at(const EpsilonSchedule& schedule, std::size_t step);

enum class RewardKind : std::uint8_t { categorical, delta_iou };

struct AgentConfig {
    std::size_t candidates = 2000;
    std::size_t k = 100;
    std::size_t batch = 256;
    std::size_t buffer = 100000;
    std::size_t n_step = 3;
    double gamma = 0.0;
    double beta = 0.002;
    double eta = 0.6;
    double zeta_start = 0.4;
    double p_min = 1e-3;
    double grad_clip = 0.01;
    RmsPropConfig optimizer;
    std::vector<std::size_t> hidden{128, 64};
    EpsilonSchedule epsilon = EpsilonSchedule::constant(0.05);
    double pretrain_epsilon = 0.05;
    std::size_t pretrain_epochs = 4;

    void validate() const;
};

/// Local and target networks, optimizer, prioritized buffer and the n-step window.
class Agent {
public:
    struct Pending {
        ActionFeatures features;
        FeatureBlockPtr next;
    };

    Agent(const AgentConfig& config, std::size_t feature_dim, Rng& rng);

    const AgentConfig& config() const noexcept { return config_; }
    const QNetwork& local() const noexcept { return local_; }
    const QNetwork& target() const noexcept { return target_; }
    QNetwork& local() noexcept { return local_; }
    const PrioritizedReplay& replay() const noexcept { return replay_; }
    std::size_t training_steps() const noexcept { return steps_; }

    /// Number of training steps over which zeta anneals to 1.
    void set_zeta_horizon(std::size_t steps) { zeta_.total_steps = std::max<std::size_t>(steps, 1); }

    /// Feeds one acquisition into the n-step window; next == null marks no bootstrap.
    void observe(std::span<const double> features, double reward, FeatureBlockPtr next);
    /// Closes the current episode: the window drains with shortened sums.
    void end_episode();

    /// One prioritized batch, RMSProp step, priority refresh and soft update. nullopt if the buffer is empty.
    std::optional<double> train(Rng& rng);

private:
    void store(NStepAccumulator<Pending>::Emitted emitted);

    AgentConfig config_;
    QNetwork local_;
    QNetwork target_;
    RmsProp optimizer_;
    PrioritizedReplay replay_;
    NStepAccumulator<Pending> window_;
    ZetaSchedule zeta_;
    std::size_t steps_ = 0;
};

/// Candidate features gathered into one block, in the order of indices.
FeatureBlock make_block(const Pool& pool, std::span<const std::size_t> indices);

/// epsilon-greedy per slot over candidate positions: with probability epsilon a uniformly random
/// remaining candidate, else the highest remaining Q (ties to the lower id). Returns k distinct positions.
std::vector<std::size_t> select_topk(const QNetwork& net, const FeatureBlock& candidates,
                                     std::span<const std::uint64_t> ids, std::size_t k, double epsilon, Rng& rng);

struct SelectionEvent {
    std::size_t event = 0;  ///< 1-based
    double epsilon = 0.0;   ///< NaN for policies without exploration noise
    std::vector<std::uint64_t> chosen_ids;
    std::vector<double> rewards;
    double cumulative_reward = 0.0;
    std::size_t target_patches = 0;  ///< cumulative acquisitions containing the target class
    std::size_t labelled_count = 0;
    double histogram_entropy = 0.0;
    std::optional<double> loss;
    std::optional<double> mean_iou;
    double wall_ms = 0.0;
};

struct RunLog {
    std::size_t initial_labelled = 0;
    std::vector<SelectionEvent> events;
};

struct ExploreOptions {
    PolicyKind policy = PolicyKind::misical;
    std::size_t candidates = 2000;
    std::size_t k = 100;
    std::size_t target_class = 0;
    RewardKind reward = RewardKind::categorical;
    EpsilonSchedule epsilon = EpsilonSchedule::constant(0.05);
    /// Enables the mean-IoU column; required by the delta-IoU reward.
    const synth::IouModel* iou = nullptr;
};

/// Selection events on the real pool until the budget or the unlabelled set runs out.
/// agent must be non-null exactly when policy is misical.
RunLog explore(Pool& pool, const ExploreOptions& options, Agent* agent, Rng& rng);

/// Number of exploration events explore() will run from the pool's current state.
std::size_t planned_events(const Pool& pool, std::size_t k);

struct PretrainEpoch {
    std::size_t epoch = 0;          ///< 1-based
    std::size_t target_total = 0;   ///< target-containing patches in the initial set
    std::size_t events = 0;
    std::optional<std::size_t> events_to_saturation;  ///< first event whose cumulative hits equal target_total
    std::vector<SelectionEvent> log;
};

/// Scratch epochs over the initial labelled set. The real pool is only read.
std::vector<PretrainEpoch> pretrain(Agent& agent, const Pool& pool, const ExploreOptions& options, Rng& rng);

/// Events pretrain() will run per epoch for an initial set of this size.
std::size_t pretrain_events_per_epoch(std::size_t initial, std::size_t k);

}  // namespace misical
