#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "misical/replay.hpp"

namespace misical {

/// Feedforward action-value approximator: rectified hidden layers, linear scalar output.
class QNetwork {
public:
    struct Layer {
        Eigen::MatrixXd weight;  // out x in
        Eigen::VectorXd bias;    // out
    };

    /// Same shape as the network's layers; holds d loss / d parameter.
    using Gradients = std::vector<Layer>;

    /// dims = {input, hidden..., 1}. Weights uniform in +-sqrt(6/(fan_in+fan_out)), biases 0.
    QNetwork(std::span<const std::size_t> dims, std::mt19937_64& rng);

    /// All parameters zero.
    static QNetwork zeros(std::span<const std::size_t> dims);

    std::size_t input_dim() const noexcept { return static_cast<std::size_t>(layers_.front().weight.cols()); }
    std::vector<std::size_t> dims() const;
    const std::vector<Layer>& layers() const noexcept { return layers_; }
    std::vector<Layer>& layers() noexcept { return layers_; }
    bool same_topology(const QNetwork& other) const;

    double forward(std::span<const double> features) const;
    /// One Q-value per column of inputs (dim x batch).
    Eigen::RowVectorXd forward_batch(const Eigen::Ref<const Eigen::MatrixXd>& inputs) const;
    Eigen::RowVectorXd forward_block(const FeatureBlock& block) const;

    /// loss = mean_b weight_b (target_b - Q(x_b))^2; gradients overwritten with d loss / d theta.
    double loss_and_gradient(const Eigen::Ref<const Eigen::MatrixXd>& inputs, std::span<const double> targets,
                             std::span<const double> weights, Gradients& gradients) const;

    Gradients zero_gradients() const;

    std::size_t parameter_count() const;
    /// Flattened as layer by layer, weights row-major then biases.
    std::vector<double> parameters() const;
    void set_parameters(std::span<const double> values);

    /// Checkpoint: "MSQN" | version u16 | n_layers u16 | (out u32, in u32) per layer
    ///             | weights f64 row-major per layer | biases f64 per layer. Little-endian.
    void save(std::ostream& out) const;
    static QNetwork load(std::istream& in);
    void save_file(const std::filesystem::path& path) const;
    static QNetwork load_file(const std::filesystem::path& path);

private:
    explicit QNetwork(std::vector<Layer> layers) : layers_(std::move(layers)) {}
    static void check_dims(std::span<const std::size_t> dims);

    std::vector<Layer> layers_;
};

struct RmsPropConfig {
    double learning_rate = 1e-3;
    double rho = 0.99;
    double epsilon = 1e-8;
    double weight_decay = 1e-4;
};

/// RMSProp without momentum; weight decay enters the gradient as an L2 term before clipping.
class RmsProp {
public:
    RmsProp(const QNetwork& net, RmsPropConfig config);

    const RmsPropConfig& config() const noexcept { return config_; }
    const QNetwork::Gradients& accumulators() const noexcept { return square_avg_; }

    /// grad_clip <= 0 disables clipping.
    void step(QNetwork& net, QNetwork::Gradients gradients, double grad_clip);

private:
    RmsPropConfig config_;
    QNetwork::Gradients square_avg_;
};

/// reward_n + gamma * next_q_max; the bootstrap is skipped entirely when gamma == 0.
double td_target(double reward_n, double gamma, double next_q_max);

/// Double-Q bootstrap value: the target network's Q for the local network's argmax candidate.
/// Ties resolve to the lower candidate index.
double double_q_value(const QNetwork& local, const QNetwork& target, const FeatureBlock& next_candidates);

struct TrainingExample {
    std::span<const double> features;
    double reward_n = 0.0;
    const FeatureBlock* next_candidates = nullptr;  ///< null: no bootstrap
};

struct TrainResult {
    double loss = 0.0;
    std::vector<double> td_errors;  ///< |TD error| per example, for priority updates
};

/// One DDQN step on the local network. Throws NumericalError if the loss is not finite.
TrainResult train_batch(QNetwork& local, const QNetwork& target, RmsProp& optimizer,
                        std::span<const TrainingExample> batch, double gamma, std::span<const double> is_weights,
                        double grad_clip);

/// target <- (1 - beta) target + beta local, elementwise.
void soft_update(QNetwork& target, const QNetwork& local, double beta);

}  // namespace misical
