#include "misical/qnetwork.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <unordered_map>

#include "misical/errors.hpp"

namespace misical {

namespace {

template <typename T>
void put_le(std::ostream& out, T v, int width) {
    char buf[8];
    const auto u = static_cast<std::uint64_t>(v);
    for (int i = 0; i < width; ++i) buf[i] = static_cast<char>((u >> (8 * i)) & 0xff);
    out.write(buf, width);
}

std::uint64_t get_le(std::istream& in, int width) {
    unsigned char buf[8];
    in.read(reinterpret_cast<char*>(buf), width);
    if (in.gcount() != width) throw ValidationError("checkpoint is truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
}

constexpr std::uint16_t kCheckpointVersion = 1;

}  // namespace

void QNetwork::check_dims(std::span<const std::size_t> dims) {
    if (dims.size() < 2) throw ValidationError("network needs at least an input and an output layer");
    if (dims.back() != 1) throw ValidationError("network output dimension must be 1");
    for (auto d : dims) {
        if (d == 0) throw ValidationError("layer widths must be positive");
    }
}

QNetwork::QNetwork(std::span<const std::size_t> dims, std::mt19937_64& rng) {
    check_dims(dims);
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        const auto in = static_cast<Eigen::Index>(dims[l]);
        const auto out = static_cast<Eigen::Index>(dims[l + 1]);
        const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
        std::uniform_real_distribution<double> dist(-limit, limit);
        Layer layer{Eigen::MatrixXd(out, in), Eigen::VectorXd::Zero(out)};
        for (Eigen::Index r = 0; r < out; ++r) {
            for (Eigen::Index c = 0; c < in; ++c) layer.weight(r, c) = dist(rng);
        }
        layers_.push_back(std::move(layer));
    }
}

QNetwork QNetwork::zeros(std::span<const std::size_t> dims) {
    check_dims(dims);
    std::vector<Layer> layers;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        const auto in = static_cast<Eigen::Index>(dims[l]);
        const auto out = static_cast<Eigen::Index>(dims[l + 1]);
        layers.push_back({Eigen::MatrixXd::Zero(out, in), Eigen::VectorXd::Zero(out)});
    }
    return QNetwork(std::move(layers));
}

std::vector<std::size_t> QNetwork::dims() const {
    std::vector<std::size_t> d{input_dim()};
    for (const auto& l : layers_) d.push_back(static_cast<std::size_t>(l.weight.rows()));
    return d;
}

bool QNetwork::same_topology(const QNetwork& other) const { return dims() == other.dims(); }

Eigen::RowVectorXd QNetwork::forward_batch(const Eigen::Ref<const Eigen::MatrixXd>& inputs) const {
    if (static_cast<std::size_t>(inputs.rows()) != input_dim()) {
        throw ValidationError("feature length " + std::to_string(inputs.rows()) + " does not match network input " +
                              std::to_string(input_dim()));
    }
    Eigen::MatrixXd a = inputs;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        Eigen::MatrixXd z = layers_[l].weight * a;
        z.colwise() += layers_[l].bias;
        if (l + 1 < layers_.size()) z = z.cwiseMax(0.0);
        a = std::move(z);
    }
    return a.row(0);
}

double QNetwork::forward(std::span<const double> features) const {
    Eigen::Map<const Eigen::VectorXd> x(features.data(), static_cast<Eigen::Index>(features.size()));
    return forward_batch(x)(0);
}

Eigen::RowVectorXd QNetwork::forward_block(const FeatureBlock& block) const {
    Eigen::Map<const Eigen::MatrixXd> x(block.values.data(), static_cast<Eigen::Index>(block.dim),
                                        static_cast<Eigen::Index>(block.count()));
    return forward_batch(x);
}

QNetwork::Gradients QNetwork::zero_gradients() const {
    Gradients g;
    for (const auto& l : layers_) {
        g.push_back({Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()), Eigen::VectorXd::Zero(l.bias.size())});
    }
    return g;
}

double QNetwork::loss_and_gradient(const Eigen::Ref<const Eigen::MatrixXd>& inputs, std::span<const double> targets,
                                   std::span<const double> weights, Gradients& gradients) const {
    const auto batch = inputs.cols();
    if (static_cast<std::size_t>(inputs.rows()) != input_dim()) throw ValidationError("feature length mismatch");
    if (targets.size() != static_cast<std::size_t>(batch) || weights.size() != static_cast<std::size_t>(batch)) {
        throw ValidationError("targets/weights must have one entry per input column");
    }
    if (batch == 0) throw ValidationError("batch must not be empty");

    // Forward, keeping every activation.
    std::vector<Eigen::MatrixXd> acts;
    acts.reserve(layers_.size() + 1);
    acts.emplace_back(inputs);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        Eigen::MatrixXd z = layers_[l].weight * acts.back();
        z.colwise() += layers_[l].bias;
        if (l + 1 < layers_.size()) z = z.cwiseMax(0.0);
        acts.push_back(std::move(z));
    }
    const auto& q = acts.back();

    double loss = 0.0;
    Eigen::MatrixXd delta(1, batch);
    const double inv_b = 1.0 / static_cast<double>(batch);
    for (Eigen::Index b = 0; b < batch; ++b) {
        const double err = targets[static_cast<std::size_t>(b)] - q(0, b);
        const double w = weights[static_cast<std::size_t>(b)];
        loss += w * err * err;
        delta(0, b) = -2.0 * w * err * inv_b;
    }
    loss *= inv_b;

    gradients.resize(layers_.size());
    for (std::size_t l = layers_.size(); l-- > 0;) {
        gradients[l].weight.noalias() = delta * acts[l].transpose();
        gradients[l].bias = delta.rowwise().sum();
        if (l > 0) {
            Eigen::MatrixXd back = layers_[l].weight.transpose() * delta;
            // acts[l] is the rectified output of layer l-1; its derivative is 1 where positive.
            delta = back.cwiseProduct((acts[l].array() > 0.0).cast<double>().matrix());
        }
    }
    return loss;
}

std::size_t QNetwork::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
}

std::vector<double> QNetwork::parameters() const {
    std::vector<double> out;
    out.reserve(parameter_count());
    for (const auto& l : layers_) {
        for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
            for (Eigen::Index c = 0; c < l.weight.cols(); ++c) out.push_back(l.weight(r, c));
        }
        for (Eigen::Index r = 0; r < l.bias.size(); ++r) out.push_back(l.bias(r));
    }
    return out;
}

void QNetwork::set_parameters(std::span<const double> values) {
    if (values.size() != parameter_count()) throw ValidationError("parameter count mismatch");
    std::size_t i = 0;
    for (auto& l : layers_) {
        for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
            for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = values[i++];
        }
        for (Eigen::Index r = 0; r < l.bias.size(); ++r) l.bias(r) = values[i++];
    }
}

void QNetwork::save(std::ostream& out) const {
    out.write("MSQN", 4);
    put_le(out, kCheckpointVersion, 2);
    put_le(out, layers_.size(), 2);
    for (const auto& l : layers_) {
        put_le(out, l.weight.rows(), 4);
        put_le(out, l.weight.cols(), 4);
    }
    for (const auto& l : layers_) {
        for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
            for (Eigen::Index c = 0; c < l.weight.cols(); ++c) put_le(out, std::bit_cast<std::uint64_t>(l.weight(r, c)), 8);
        }
    }
    for (const auto& l : layers_) {
        for (Eigen::Index r = 0; r < l.bias.size(); ++r) put_le(out, std::bit_cast<std::uint64_t>(l.bias(r)), 8);
    }
    if (!out) throw ValidationError("checkpoint write failed");
}

QNetwork QNetwork::load(std::istream& in) {
    char magic[4];
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, "MSQN", 4) != 0) throw ValidationError("checkpoint has bad magic");
    if (get_le(in, 2) != kCheckpointVersion) throw ValidationError("unsupported checkpoint version");
    const auto n_layers = get_le(in, 2);
    std::vector<Layer> layers;
    for (std::uint64_t l = 0; l < n_layers; ++l) {
        const auto rows = static_cast<Eigen::Index>(get_le(in, 4));
        const auto cols = static_cast<Eigen::Index>(get_le(in, 4));
        layers.push_back({Eigen::MatrixXd(rows, cols), Eigen::VectorXd(rows)});
    }
    for (auto& l : layers) {
        for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
            for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = std::bit_cast<double>(get_le(in, 8));
        }
    }
    for (auto& l : layers) {
        for (Eigen::Index r = 0; r < l.bias.size(); ++r) l.bias(r) = std::bit_cast<double>(get_le(in, 8));
    }
    QNetwork net(std::move(layers));
    check_dims(net.dims());
    return net;
}

void QNetwork::save_file(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot open " + path.string());
    save(out);
}

QNetwork QNetwork::load_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open " + path.string());
    return load(in);
}

RmsProp::RmsProp(const QNetwork& net, RmsPropConfig config)
    : config_(config), square_avg_(net.zero_gradients()) {
    if (!(config_.learning_rate > 0.0)) throw ConfigError("learning rate must be > 0");
    if (!(config_.rho >= 0.0 && config_.rho < 1.0)) throw ConfigError("RMSProp decay must lie in [0, 1)");
    if (!(config_.weight_decay >= 0.0)) throw ConfigError("weight decay must be >= 0");
}

void RmsProp::step(QNetwork& net, QNetwork::Gradients gradients, double grad_clip) {
    auto& layers = net.layers();
    if (gradients.size() != layers.size()) throw ValidationError("gradient/network layer mismatch");
    const double lr = config_.learning_rate;
    const double rho = config_.rho;
    const double eps = config_.epsilon;
    const double wd = config_.weight_decay;
    auto update = [&](auto& param, auto& grad, auto& avg) {
        if (wd > 0.0) grad += wd * param;
        if (grad_clip > 0.0) grad = grad.cwiseMax(-grad_clip).cwiseMin(grad_clip);
        avg = rho * avg + (1.0 - rho) * grad.cwiseProduct(grad);
        param.array() -= lr * grad.array() / (avg.array().sqrt() + eps);
    };
    for (std::size_t l = 0; l < layers.size(); ++l) {
        update(layers[l].weight, gradients[l].weight, square_avg_[l].weight);
        update(layers[l].bias, gradients[l].bias, square_avg_[l].bias);
    }
}

double td_target(double reward_n, double gamma, double next_q_max) {
    if (gamma == 0.0) return reward_n;
    return reward_n + gamma * next_q_max;
}

double double_q_value(const QNetwork& local, const QNetwork& target, const FeatureBlock& next_candidates) {
    if (next_candidates.count() == 0) return 0.0;
    const Eigen::RowVectorXd q = local.forward_block(next_candidates);
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < q.size(); ++i) {
        if (q(i) > q(best)) best = i;
    }
    return target.forward(next_candidates.column(static_cast<std::size_t>(best)));
}

TrainResult train_batch(QNetwork& local, const QNetwork& target, RmsProp& optimizer,
                        std::span<const TrainingExample> batch, double gamma, std::span<const double> is_weights,
                        double grad_clip) {
    if (batch.empty()) throw ValidationError("training batch must not be empty");
    if (is_weights.size() != batch.size()) throw ValidationError("one importance weight per example required");
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("discount gamma must lie in [0, 1]");

    const std::size_t dim = local.input_dim();
    Eigen::MatrixXd inputs(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(batch.size()));
    std::vector<double> targets(batch.size());
    std::unordered_map<const FeatureBlock*, double> bootstrap;
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const auto& ex = batch[b];
        if (ex.features.size() != dim) throw ValidationError("feature length mismatch in training batch");
        for (std::size_t i = 0; i < dim; ++i) inputs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(b)) = ex.features[i];
        double next_q = 0.0;
        if (gamma != 0.0 && ex.next_candidates != nullptr) {
            auto it = bootstrap.find(ex.next_candidates);
            if (it == bootstrap.end()) {
                it = bootstrap.emplace(ex.next_candidates, double_q_value(local, target, *ex.next_candidates)).first;
            }
            next_q = it->second;
        }
        targets[b] = td_target(ex.reward_n, gamma, next_q);
    }

    QNetwork::Gradients grads;
    const double loss = local.loss_and_gradient(inputs, targets, is_weights, grads);
    const Eigen::RowVectorXd q = local.forward_batch(inputs);
    if (!std::isfinite(loss)) {
        std::ostringstream dump;
        dump << "non-finite DQN loss (" << loss << "); first examples (q, target, weight):";
        for (std::size_t b = 0; b < std::min<std::size_t>(batch.size(), 8); ++b) {
            dump << " (" << q(static_cast<Eigen::Index>(b)) << ", " << targets[b] << ", " << is_weights[b] << ")";
        }
        throw NumericalError(dump.str());
    }
    TrainResult result;
    result.loss = loss;
    result.td_errors.resize(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) {
        result.td_errors[b] = std::abs(targets[b] - q(static_cast<Eigen::Index>(b)));
    }
    optimizer.step(local, std::move(grads), grad_clip);
    return result;
}

void soft_update(QNetwork& target, const QNetwork& local, double beta) {
    if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("soft update rate beta must lie in [0, 1]");
    if (!target.same_topology(local)) throw ValidationError("soft update between different topologies");
    auto& tl = target.layers();
    const auto& ll = local.layers();
    for (std::size_t l = 0; l < tl.size(); ++l) {
        tl[l].weight = (1.0 - beta) * tl[l].weight + beta * ll[l].weight;
        tl[l].bias = (1.0 - beta) * tl[l].bias + beta * ll[l].bias;
    }
}

}  // namespace misical
