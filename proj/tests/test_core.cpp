#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "relex/batch.hpp"
#include "relex/isomorphism.hpp"
#include "relex/network.hpp"
#include "relex/train.hpp"

#include "test_util.hpp"

#include <cmath>

using namespace relex;

namespace {

Network one_neuron_net() {
    // widths [1,1,1], W1=[1], b1=0, W2=[1], b2=0
    return Network({1, 1, 1}, {MatrixXd::Ones(1, 1), MatrixXd::Ones(1, 1)},
                   {VectorXd::Zero(1), VectorXd::Zero(1)});
}

VectorXd vec1(double x) {
    VectorXd v(1);
    v << x;
    return v;
}

VectorXd vec2(double x, double y) {
    VectorXd v(2);
    v << x, y;
    return v;
}

}  // namespace

TEST_CASE("forward: relu kills negative preactivation, identity on active side") {
    const Network net = one_neuron_net();
    CHECK(net.forward(vec1(-2.0))[0] == doctest::Approx(0.0));
    CHECK(net.forward(vec1(3.0))[0] == doctest::Approx(3.0));
}

TEST_CASE("forward: output layer is affine, no relu") {
    Network net({1, 1, 1}, {MatrixXd::Ones(1, 1), MatrixXd::Ones(1, 1)},
                {VectorXd::Zero(1), VectorXd::Constant(1, -5.0)});
    CHECK(net.forward(vec1(3.0))[0] == doctest::Approx(-2.0));
}

TEST_CASE("forward agrees with an independent recursion") {
    const Network net = Network::he_init({2, 5, 5, 1}, 0);
    CHECK(std::abs(net.forward(vec2(0, 0))[0] - testutil::naive_forward(net, vec2(0, 0))[0]) <
          1e-12);
    Rng rng(7);
    for (int i = 0; i < 50; ++i) {
        const VectorXd x = 3.0 * random_unit(rng, 2);
        const VectorXd a = net.forward(x);
        const VectorXd b = testutil::naive_forward(net, x);
        CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("forward rejects wrong input shape") {
    const Network net = one_neuron_net();
    CHECK_THROWS_AS((void)net.forward(vec2(1, 2)), ShapeError);
}

TEST_CASE("preactivation values and addressing") {
    const Network net = one_neuron_net();
    CHECK(net.preactivation({1, 0}, vec1(3.0)) == doctest::Approx(3.0));
    CHECK(net.preactivation({1, 0}, vec1(0.0)) == doctest::Approx(0.0));
    CHECK_THROWS_AS((void)net.preactivation({2, 0}, vec1(1.0)), AddressError);
    CHECK_THROWS_AS((void)net.preactivation({1, 5}, vec1(1.0)), AddressError);

    const Network fig = Network::he_init({2, 5, 5, 1}, 0);
    const double got = fig.preactivation({2, 0}, vec2(1, 1));
    const double want = testutil::naive_preactivation(fig, {2, 0}, vec2(1, 1));
    CHECK(std::abs(got - want) < 1e-12);
}

TEST_CASE("activation pattern bits") {
    const Network net = one_neuron_net();
    CHECK(net.activation_pattern(vec1(3.0)) == std::vector<uint8_t>{1});
    CHECK(net.activation_pattern(vec1(-3.0)) == std::vector<uint8_t>{0});
}

TEST_CASE("same region implies same pattern (dense-sampling oracle)") {
    const Network net = Network::he_init({2, 5, 5, 1}, 0);
    Rng rng(11);
    int confirmed = 0;
    for (int trial = 0; trial < 200 && confirmed < 10; ++trial) {
        const VectorXd a = random_in_ball(rng, 2, 3.0);
        const VectorXd b = a + random_in_ball(rng, 2, 0.3);
        const Segment seg{a, b};
        if (!testutil::true_crossings_on_segment(net, seg, 2000).empty()) continue;
        ++confirmed;
        CHECK(net.activation_pattern(a) == net.activation_pattern(b));
    }
    CHECK(confirmed >= 5);
}

TEST_CASE("piecewise linearity: zero second difference within a region") {
    const Network net = Network::he_init({2, 5, 5, 1}, 0);
    Rng rng(13);
    int confirmed = 0;
    for (int trial = 0; trial < 200 && confirmed < 10; ++trial) {
        const VectorXd a = random_in_ball(rng, 2, 3.0);
        const VectorXd d = 0.2 * random_unit(rng, 2);
        const Segment seg{a, a + 2.0 * d};
        if (!testutil::true_crossings_on_segment(net, seg, 2000).empty()) continue;
        ++confirmed;
        const VectorXd second =
            net.forward(a) - 2.0 * net.forward(a + d) + net.forward(a + 2.0 * d);
        CHECK(second.cwiseAbs().maxCoeff() < 1e-9);
    }
    CHECK(confirmed >= 5);
}

TEST_CASE("he_init: paper shape, determinism, and moments") {
    const Network net = Network::he_init({10, 10, 10, 10, 10, 2}, 42);
    CHECK(net.depth() == 4);
    CHECK(net.to_json_line() == Network::he_init({10, 10, 10, 10, 10, 2}, 42).to_json_line());
    CHECK(net.to_json_line() != Network::he_init({10, 10, 10, 10, 10, 2}, 43).to_json_line());

    double sum = 0.0, sumsq = 0.0;
    long n = 0;
    for (uint64_t s = 0; s < 10000; ++s) {
        const Network draw = Network::he_init({10, 5, 2}, 100000 + s);
        const MatrixXd& w = draw.weight(1);
        sum += w.sum();
        sumsq += w.array().square().sum();
        n += w.size();
    }
    const double mean = sum / n;
    const double var = sumsq / n - mean * mean;
    CHECK(std::abs(var - 0.2) < 0.05 * 0.2);  // 2 / n_in = 0.2

    // biases have unit variance
    double bsum = 0.0, bsumsq = 0.0;
    long bn = 0;
    for (uint64_t s = 0; s < 10000; ++s) {
        const Network draw = Network::he_init({10, 5, 2}, 200000 + s);
        bsum += draw.bias(1).sum();
        bsumsq += draw.bias(1).array().square().sum();
        bn += draw.bias(1).size();
    }
    const double bvar = bsumsq / bn - (bsum / bn) * (bsum / bn);
    CHECK(std::abs(bvar - 1.0) < 0.05);

    CHECK_THROWS_AS((void)Network::he_init({}, 0), ConfigError);
    CHECK_THROWS_AS((void)Network::he_init({10, 2}, 0), ConfigError);
}

TEST_CASE("serialization round-trips bitwise") {
    Rng rng(5);
    for (int i = 0; i < 20; ++i) {
        const int n1 = 1 + static_cast<int>(rng() % 6);
        const int n2 = 1 + static_cast<int>(rng() % 6);
        const Network net = Network::he_init({3, n1, n2, 2}, rng());
        const std::string line = net.to_json_line();
        CHECK(Network::from_json_line(line).to_json_line() == line);
    }
    CHECK_THROWS_AS((void)Network::from_json_line("{not json"), ConfigError);
    CHECK_THROWS_AS((void)Network::from_json_line("{\"version\":2}"), ConfigError);
}

TEST_CASE("scaling isomorphism preserves the function") {
    const Network net = Network::he_init({4, 6, 5, 3}, 3);
    SUBCASE("c = 1 is the identity") {
        CHECK(net.scaled({1, 2}, 1.0).to_json_line() == net.to_json_line());
    }
    SUBCASE("forward agreement at 1000 points") {
        const Network s = net.scaled({2, 3}, 3.0);
        Rng rng(17);
        for (int i = 0; i < 1000; ++i) {
            const VectorXd x = random_in_ball(rng, 4, 10.0);
            const VectorXd a = net.forward(x);
            const VectorXd b = s.forward(x);
            CHECK((a - b).norm() < 1e-9 * (1.0 + a.norm()));
        }
    }
    SUBCASE("composing c then 1/c restores the weights") {
        const Network back = net.scaled({1, 0}, 7.0).scaled({1, 0}, 1.0 / 7.0);
        for (int k = 1; k <= 3; ++k) {
            CHECK((back.weight(k) - net.weight(k)).cwiseAbs().maxCoeff() < 1e-12);
            CHECK((back.bias(k) - net.bias(k)).cwiseAbs().maxCoeff() < 1e-12);
        }
    }
    SUBCASE("non-positive scaling is rejected") {
        CHECK_THROWS_AS((void)net.scaled({1, 0}, 0.0), DomainError);
        CHECK_THROWS_AS((void)net.scaled({1, 0}, -2.0), DomainError);
    }
}

TEST_CASE("permutation isomorphism preserves the function") {
    const Network net = Network::he_init({4, 6, 5, 3}, 9);
    SUBCASE("identity permutation") {
        CHECK(net.permuted(1, {0, 1, 2, 3, 4, 5}).to_json_line() == net.to_json_line());
    }
    SUBCASE("random permutation agrees at 1000 points") {
        const std::vector<int> sigma{3, 0, 5, 1, 4, 2};
        const Network p = net.permuted(1, sigma);
        Rng rng(19);
        for (int i = 0; i < 1000; ++i) {
            const VectorXd x = random_in_ball(rng, 4, 10.0);
            CHECK((net.forward(x) - p.forward(x)).cwiseAbs().maxCoeff() < 1e-12 * 100);
        }
    }
    SUBCASE("sigma then sigma inverse restores the network") {
        const std::vector<int> sigma{3, 0, 5, 1, 4, 2};
        std::vector<int> inv(6);
        for (int i = 0; i < 6; ++i) inv[static_cast<size_t>(sigma[static_cast<size_t>(i)])] = i;
        CHECK(net.permuted(1, sigma).permuted(1, inv).to_json_line() == net.to_json_line());
    }
    SUBCASE("non-permutations are rejected") {
        CHECK_THROWS_AS((void)net.permuted(1, {0, 0, 1, 2, 3, 4}), DomainError);
        CHECK_THROWS_AS((void)net.permuted(1, {0, 1}), DomainError);
    }
}

TEST_CASE("batch kernels: OpenMP and serial paths are bitwise identical") {
    const Network net = Network::he_init({10, 20, 20, 2}, 21);
    Rng rng(23);
    MatrixXd pts(10, 503);
    for (int c = 0; c < pts.cols(); ++c) pts.col(c) = random_in_ball(rng, 10, 10.0);
    const MatrixXd a = forward_batch(net, pts);
    const MatrixXd b = forward_batch_serial(net, pts);
    CHECK(a == b);
    const MatrixXd ha = hidden_preact_batch(net, pts);
    const MatrixXd hb = hidden_preact_batch_serial(net, pts);
    CHECK(ha == hb);
    // and both agree with the scalar path
    for (int c = 0; c < 10; ++c)
        CHECK((a.col(c) - net.forward(pts.col(c))).cwiseAbs().maxCoeff() == 0.0);
}

// ---------------------------------------------------------------------------
// isomorphism module

TEST_CASE("canonicalize is invariant under scaling and permutation") {
    const Network net = Network::he_init({4, 6, 5, 3}, 31);
    const Network c0 = canonicalize(net).net;
    const Network c1 = canonicalize(net.scaled({1, 2}, 7.0)).net;
    const Network c2 = canonicalize(net.permuted(2, {4, 2, 0, 1, 3})).net;
    for (int k = 1; k <= 3; ++k) {
        CHECK((c0.weight(k) - c1.weight(k)).cwiseAbs().maxCoeff() < 1e-12);
        CHECK((c0.weight(k) - c2.weight(k)).cwiseAbs().maxCoeff() < 1e-12);
        CHECK((c0.bias(k) - c1.bias(k)).cwiseAbs().maxCoeff() < 1e-12);
    }
    Rng rng(37);
    for (int i = 0; i < 1000; ++i) {
        const VectorXd x = random_in_ball(rng, 4, 10.0);
        const VectorXd a = net.forward(x);
        CHECK((a - c0.forward(x)).norm() < 1e-9 * (1.0 + a.norm()));
    }
}

TEST_CASE("canonicalize flags zero-weight neurons") {
    Network net({2, 2, 1}, {MatrixXd::Zero(2, 2), MatrixXd::Ones(2, 1)},
                {VectorXd::Ones(2), VectorXd::Zero(1)});
    net.mutable_weight(1)(0, 0) = 1.0;  // neuron 0 fine, neuron 1 all-zero
    const CanonicalizeResult res = canonicalize(net);
    REQUIRE(res.flagged.size() == 1);
    CHECK(res.flagged[0] == NeuronId{1, 1});
}

TEST_CASE("solve_assignment finds the exact matching") {
    MatrixXd cost(3, 3);
    cost << 1, 10, 10, 10, 10, 1, 10, 1, 10;
    const auto m = solve_assignment(cost);
    CHECK(m == std::vector<int>{0, 2, 1});
}

TEST_CASE("align: exact estimate reports errors at the guard floor") {
    const Network net = Network::he_init({6, 8, 4, 2}, 41);
    const AlignmentReport rep = align_networks(net, net);
    for (const auto& l : rep.layers) {
        CHECK(l.matched == net.width(l.layer));
        CHECK(l.log_weight_error <= -30.0);
        CHECK(l.log_bias_error <= -30.0);
    }
    CHECK(rep.functional_max == 0.0);
}

TEST_CASE("align is isomorphism-invariant") {
    const Network truth = Network::he_init({6, 8, 4, 2}, 43);
    Network est = truth.scaled({1, 3}, 2.5).permuted(1, {7, 2, 4, 0, 1, 6, 3, 5});
    // flip one neuron's sign: not an isomorphism of the net, but align matches
    // signs inside the cost, so the report must not change
    est.mutable_weight(1).col(2) *= -1.0;
    est.mutable_bias(1)[2] *= -1.0;
    const AlignmentReport rep = align_networks(est, truth);
    CHECK(rep.layers[0].matched == 8);
    CHECK(rep.layers[0].log_weight_error <= -28.0);
    CHECK(rep.layers[0].log_bias_error <= -28.0);
}

TEST_CASE("align: noise moves the error by the expected amount") {
    const Network truth = canonicalize(Network::he_init({10, 10, 2}, 47)).net;
    MatrixXd est_w = truth.weight(1);
    VectorXd est_b = truth.bias(1);
    Rng rng(49);
    std::normal_distribution<double> noise(0.0, 1e-4);
    for (int i = 0; i < est_w.rows(); ++i)
        for (int j = 0; j < est_w.cols(); ++j) est_w(i, j) += noise(rng);
    const LayerAlignment la = align_layer_params(1, est_w, est_b, truth.weight(1), truth.bias(1));
    const double expected = std::log(1e-4 * std::sqrt(10.0));  // ln(sigma * sqrt(n_in))
    CHECK(la.log_weight_error == doctest::Approx(expected).epsilon(0.2));
}

TEST_CASE("align under width mismatch reports unmatched counts") {
    const Network truth = Network::he_init({5, 6, 2}, 53);
    const Network small = Network::he_init({5, 4, 2}, 53);
    const LayerAlignment la =
        align_layer_params(1, small.weight(1), small.bias(1), truth.weight(1), truth.bias(1));
    CHECK(la.matched == 4);
    CHECK(la.unmatched_estimate == 0);
    CHECK(la.unmatched_truth == 2);
}

TEST_CASE("align symmetry: swapped arguments give inverse matchings and equal errors") {
    const Network a = Network::he_init({5, 6, 2}, 59);
    const Network b = a.permuted(1, {5, 3, 1, 0, 2, 4}).scaled({1, 1}, 3.0);
    const LayerAlignment ab = align_layer_params(1, a.weight(1), a.bias(1), b.weight(1), b.bias(1));
    const LayerAlignment ba = align_layer_params(1, b.weight(1), b.bias(1), a.weight(1), a.bias(1));
    for (int i = 0; i < 6; ++i) CHECK(ba.match[static_cast<size_t>(ab.match[static_cast<size_t>(i)])] == i);
    CHECK(ab.log_weight_error == doctest::Approx(ba.log_weight_error).epsilon(1e-6));
}

TEST_CASE("functional_distance basics") {
    const Network net = Network::he_init({4, 5, 3}, 61);
    const BallSampler sampler{99, 10.0};
    CHECK(functional_distance(net, net, sampler, 500).max_abs == 0.0);
    CHECK(functional_distance(net, net.scaled({1, 1}, 4.0), sampler, 1000).max_abs < 1e-9);
    Network bumped = net;
    bumped.mutable_weight(1)(0, 0) += 0.1;
    CHECK(functional_distance(net, bumped, sampler, 1000).max_abs > 0.0);
}

// ---------------------------------------------------------------------------
// training

TEST_CASE("train_memorization reaches the memorization threshold") {
    const Network init = Network::he_init({10, 20, 20, 2}, 71);
    TrainConfig cfg;
    cfg.seed = 5;
    const TrainResult res = train_memorization(init, cfg);
    CHECK(res.accuracy >= 0.95);
    CHECK(std::isfinite(res.final_loss));
}

TEST_CASE("train_memorization: zero epochs returns the init unchanged") {
    const Network init = Network::he_init({10, 8, 2}, 73);
    TrainConfig cfg;
    cfg.epochs = 0;
    cfg.seed = 1;
    CHECK(train_memorization(init, cfg).net.to_json_line() == init.to_json_line());
}

TEST_CASE("train_memorization is deterministic in the seed") {
    const Network init = Network::he_init({10, 8, 2}, 79);
    TrainConfig cfg;
    cfg.epochs = 40;
    cfg.seed = 3;
    const std::string a = train_memorization(init, cfg).net.to_json_line();
    const std::string b = train_memorization(init, cfg).net.to_json_line();
    CHECK(a == b);
}

TEST_CASE("train_memorization flags divergence") {
    const Network init = Network::he_init({10, 8, 2}, 83);
    TrainConfig cfg;
    cfg.epochs = 50;
    cfg.learning_rate = 1e15;
    cfg.seed = 2;
    CHECK_THROWS_AS((void)train_memorization(init, cfg), TrainingError);
}
