#include <doctest.h>

#include <cmath>
#include <sstream>

#include "misical/errors.hpp"
#include "misical/qnetwork.hpp"
#include "support.hpp"

using namespace misical;

namespace {

const std::vector<std::size_t> kSmall{2, 1, 1};

/// Q(x) = relu(a . x) with unit output weight.
QNetwork relu_probe(double a0, double a1) {
    auto net = QNetwork::zeros(kSmall);
    net.layers()[0].weight << a0, a1;
    net.layers()[1].weight << 1.0;
    return net;
}

FeatureBlock block_of(const std::vector<std::vector<double>>& cols) {
    FeatureBlock b;
    b.dim = cols.front().size();
    for (const auto& c : cols) b.append(c);
    return b;
}

}  // namespace

TEST_CASE("Glorot-uniform initialization with zero biases") {
    Rng rng(1);
    const std::vector<std::size_t> dims{19, 128, 64, 1};
    QNetwork net(dims, rng);
    CHECK(net.dims() == dims);
    CHECK(net.parameter_count() == 19 * 128 + 128 + 128 * 64 + 64 + 64 + 1);
    for (const auto& layer : net.layers()) {
        const double limit = std::sqrt(6.0 / static_cast<double>(layer.weight.rows() + layer.weight.cols()));
        CHECK(layer.weight.cwiseAbs().maxCoeff() <= limit);
        CHECK(layer.bias.isZero());
    }
    // Uniform(-L, L) has variance L^2 / 3.
    const auto& big = net.layers()[1].weight;
    const double limit = std::sqrt(6.0 / (128.0 + 64.0));
    const double var = big.array().square().mean();
    CHECK(var == doctest::Approx(limit * limit / 3.0).epsilon(0.05));
}

TEST_CASE("forward pass evaluated by hand") {
    auto net = QNetwork::zeros(std::vector<std::size_t>{2, 2, 1});
    net.layers()[0].weight << 1.0, -1.0, 0.5, 2.0;
    net.layers()[0].bias << 0.0, -1.0;
    net.layers()[1].weight << 3.0, -1.0;
    net.layers()[1].bias << 0.25;
    // x = (1, 2): hidden = relu(1 - 2, 0.5 + 4 - 1) = (0, 3.5); q = 0 - 3.5 + 0.25
    const std::vector<double> x{1.0, 2.0};
    CHECK(net.forward(x) == doctest::Approx(-3.25));
}

TEST_CASE("parameter flattening is layer by layer, weights row-major, then biases") {
    auto net = QNetwork::zeros(std::vector<std::size_t>{2, 2, 1});
    net.layers()[0].weight << 1, 2, 3, 4;
    net.layers()[0].bias << 5, 6;
    net.layers()[1].weight << 7, 8;
    net.layers()[1].bias << 9;
    CHECK(net.parameters() == std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9});
    auto copy = QNetwork::zeros(std::vector<std::size_t>{2, 2, 1});
    copy.set_parameters(net.parameters());
    CHECK(copy.parameters() == net.parameters());
}

TEST_CASE("property: analytic gradients match central differences") {
    Rng rng(42);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int trial = 0; trial < 25; ++trial) {
        const std::vector<std::size_t> dims{1 + rng() % 6, 1 + rng() % 6, 1 + rng() % 4, 1};
        QNetwork net(dims, rng);
        auto theta = net.parameters();
        for (auto& v : theta) v = 0.5 * gauss(rng);
        net.set_parameters(theta);
        const std::size_t b = 1 + rng() % 5;
        Eigen::MatrixXd x = Eigen::MatrixXd::NullaryExpr(dims[0], b, [&] { return gauss(rng); });
        std::vector<double> t(b), w(b);
        for (std::size_t i = 0; i < b; ++i) {
            t[i] = gauss(rng);
            w[i] = 0.2 + std::fabs(gauss(rng));
        }
        auto grads = net.zero_gradients();
        net.loss_and_gradient(x, t, w, grads);
        QNetwork flat = net;
        flat.layers() = grads;
        const auto analytic = flat.parameters();
        auto scratch = net.zero_gradients();
        for (std::size_t p = 0; p < theta.size(); ++p) {
            auto probe = theta;
            probe[p] += 1e-6;
            net.set_parameters(probe);
            const double up = net.loss_and_gradient(x, t, w, scratch);
            probe[p] -= 2e-6;
            net.set_parameters(probe);
            const double down = net.loss_and_gradient(x, t, w, scratch);
            const double numeric = (up - down) / 2e-6;
            const double scale = std::max({std::fabs(numeric), std::fabs(analytic[p]), 1e-4});
            REQUIRE(std::fabs(numeric - analytic[p]) / scale < 1e-4);
        }
        net.set_parameters(theta);
    }
}

TEST_CASE("loss is the importance-weighted mean squared TD error") {
    auto net = relu_probe(1.0, 0.0);
    Eigen::MatrixXd x(2, 2);
    x << 2.0, 1.0, 0.0, 0.0;  // Q = 2 and 1
    const std::vector<double> t{3.0, 0.0};
    const std::vector<double> w{0.5, 1.0};
    auto g = net.zero_gradients();
    // (0.5 * 1 + 1 * 1) / 2
    CHECK(net.loss_and_gradient(x, t, w, g) == doctest::Approx(0.75));
}

TEST_CASE("RMSProp step matches the update written out by hand") {
    RmsPropConfig cfg{0.01, 0.9, 1e-8, 0.1};
    auto net = QNetwork::zeros(std::vector<std::size_t>{1, 1, 1});
    net.layers()[0].weight << 2.0;
    RmsProp opt(net, cfg);
    auto grads = net.zero_gradients();
    grads[0].weight << 0.3;
    grads[1].bias << -0.5;

    double w = 2.0, avg_w = 0.0, b = 0.0, avg_b = 0.0;
    for (int step = 0; step < 3; ++step) {
        opt.step(net, grads, 0.0);
        const double gw = 0.3 + 0.1 * w;
        avg_w = 0.9 * avg_w + 0.1 * gw * gw;
        w -= 0.01 * gw / (std::sqrt(avg_w) + 1e-8);
        const double gb = -0.5 + 0.1 * b;
        avg_b = 0.9 * avg_b + 0.1 * gb * gb;
        b -= 0.01 * gb / (std::sqrt(avg_b) + 1e-8);
        CHECK(net.layers()[0].weight(0, 0) == doctest::Approx(w).epsilon(1e-13));
        CHECK(net.layers()[1].bias(0) == doctest::Approx(b).epsilon(1e-13));
    }
}

TEST_CASE("gradient clipping applies per component after weight decay") {
    RmsPropConfig cfg{0.01, 0.0, 0.0, 1.0};
    auto net = QNetwork::zeros(std::vector<std::size_t>{2, 1, 1});
    net.layers()[0].weight << 0.5, -0.5;
    RmsProp opt(net, cfg);
    auto grads = net.zero_gradients();
    grads[0].weight << 0.004, -0.001;  // decayed: 0.504, -0.501 -> clipped to +-0.01
    opt.step(net, grads, 0.01);
    // rho = 0: avg = g^2, so each step is lr * sign(g)
    CHECK(net.layers()[0].weight(0, 0) == doctest::Approx(0.49));
    CHECK(net.layers()[0].weight(0, 1) == doctest::Approx(-0.49));
    CHECK(opt.accumulators()[0].weight(0, 0) == doctest::Approx(1e-4));
}

TEST_CASE("TD target skips the bootstrap when gamma is 0") {
    CHECK(td_target(1.0, 0.0, std::nan("")) == 1.0);
    CHECK(td_target(1.0, 0.5, 4.0) == 3.0);
}

TEST_CASE("double-Q value: local picks, target evaluates, ties to the lower index") {
    const auto local = relu_probe(1.0, 0.0);   // scores x0
    const auto target = relu_probe(0.0, 1.0);  // scores x1
    const auto cands = block_of({{3.0, 1.0}, {5.0, 2.0}, {5.0, 7.0}, {-1.0, 100.0}});
    CHECK(double_q_value(local, target, cands) == 2.0);
}

TEST_CASE("soft update blends and contracts") {
    Rng rng(3);
    const std::vector<std::size_t> dims{3, 4, 1};
    QNetwork local(dims, rng), target(dims, rng);
    const auto t0 = target.parameters();
    const auto l = local.parameters();
    auto copy = target;
    soft_update(copy, local, 0.0);
    CHECK(copy.parameters() == t0);
    soft_update(copy, local, 1.0);
    CHECK(copy.parameters() == l);
    for (int k = 1; k <= 200; ++k) soft_update(target, local, 0.02);
    const auto t = target.parameters();
    for (std::size_t i = 0; i < t.size(); ++i) {
        CHECK(t[i] - l[i] == doctest::Approx(std::pow(0.98, 200) * (t0[i] - l[i])).epsilon(1e-9).scale(1e-12));
    }
    CHECK_THROWS_AS(soft_update(target, local, 1.5), ConfigError);
}

TEST_CASE("checkpoint round trip and rejection of foreign bytes") {
    Rng rng(4);
    QNetwork net(std::vector<std::size_t>{5, 7, 3, 1}, rng);
    std::stringstream buf;
    net.save(buf);
    const auto back = QNetwork::load(buf);
    CHECK(back.dims() == net.dims());
    CHECK(back.parameters() == net.parameters());
    // magic + version + layer count + 3 * (out, in) + doubles
    CHECK(buf.str().size() == 4 + 2 + 2 + 3 * 8 + 8 * net.parameter_count());

    std::stringstream junk("XXXXsomething");
    CHECK_THROWS(QNetwork::load(junk));

    testing::TempDir dir("ckpt");
    net.save_file(dir.path() / "q.bin");
    CHECK(QNetwork::load_file(dir.path() / "q.bin").parameters() == net.parameters());
}

TEST_CASE("training reduces the loss on a fixed regression batch") {
    Rng rng(5);
    const std::vector<std::size_t> dims{4, 16, 8, 1};
    QNetwork local(dims, rng);
    QNetwork target = local;
    RmsProp opt(local, RmsPropConfig{});
    std::vector<std::vector<double>> xs;
    std::vector<TrainingExample> batch;
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int i = 0; i < 32; ++i) xs.push_back({gauss(rng), gauss(rng), gauss(rng), gauss(rng)});
    for (const auto& x : xs) batch.push_back({x, x[0] > 0 ? 1.0 : 0.0, nullptr});
    const std::vector<double> w(32, 1.0);
    const double first = train_batch(local, target, opt, batch, 0.0, w, 0.0).loss;
    double last = first;
    for (int s = 0; s < 300; ++s) last = train_batch(local, target, opt, batch, 0.0, w, 0.0).loss;
    CHECK(last < 0.5 * first);
}

TEST_CASE("TD errors are measured before the update and NaN rewards raise") {
    auto local = relu_probe(1.0, 0.0);
    auto target = local;
    RmsProp opt(local, RmsPropConfig{});
    const std::vector<double> x{2.0, 0.0};
    const auto next = block_of({{1.0, 3.0}});
    std::vector<TrainingExample> batch{{x, 0.5, &next}};
    const std::vector<double> w{1.0};
    // target = 0.5 + 0.5 * Q_target(1, 3) = 1.0; Q = 2 -> |td| = 1
    const auto r = train_batch(local, target, opt, batch, 0.5, w, 0.0);
    CHECK(r.td_errors[0] == doctest::Approx(1.0));
    CHECK(r.loss == doctest::Approx(1.0));
    std::vector<TrainingExample> bad{{x, std::nan(""), nullptr}};
    CHECK_THROWS_AS(train_batch(local, target, opt, bad, 0.0, w, 0.0), NumericalError);
}
