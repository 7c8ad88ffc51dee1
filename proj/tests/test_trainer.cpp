#include <catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "mgd/data.hpp"
#include "mgd/trainer.hpp"

using namespace mgd;

namespace {

// One weight, no bias, C(w) = (w - 3)^2 via MSE on x=1, target 3.
Batch quadratic_batch() {
    return {{Tensor({1, 1, 1}, {1.0}), -1, {3.0}}};
}

NetworkModel scalar_net(double w0) {
    NetworkModel net = build_mlp({1, 1}, 0, /*has_bias=*/false);
    net.mutable_params()[0] = w0;
    return net;
}

}  // namespace

TEST_CASE("optimizer update rules match hand-computed steps") {
    SECTION("vanilla") {
        std::vector<double> w = {1.0, -2.0};
        sgd_update(w, {0.5, -1.0}, 0.1);
        CHECK(w[0] == Catch::Approx(0.95));
        CHECK(w[1] == Catch::Approx(-1.9));
    }
    SECTION("momentum accumulates velocity") {
        std::vector<double> w = {0.0};
        OptimizerState st(1);
        momentum_update(w, {1.0}, st, 0.1, 0.9);
        CHECK(w[0] == Catch::Approx(-0.1));          // v = 1
        momentum_update(w, {1.0}, st, 0.1, 0.9);
        CHECK(w[0] == Catch::Approx(-0.1 - 0.19));   // v = 1.9
        CHECK(st.velocity[0] == Catch::Approx(1.9));
    }
    SECTION("adam without bias correction, first step") {
        // m = (1-b1) g, v = (1-b2) g^2; step = eta m / (sqrt(v) + eps)
        std::vector<double> w = {0.0};
        OptimizerState st(1);
        const double g = 2.0, eta = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;
        adam_update(w, {g}, st, eta, b1, b2, eps, false);
        double m = (1 - b1) * g, v = (1 - b2) * g * g;
        CHECK(w[0] == Catch::Approx(-eta * m / (std::sqrt(v) + eps)).epsilon(1e-12));
    }
    SECTION("adam with bias correction, first step equals eta*sign(g) nearly") {
        std::vector<double> w = {0.0};
        OptimizerState st(1);
        adam_update(w, {2.0}, st, 0.01, 0.9, 0.999, 1e-8, true);
        // corrected m-hat = g, v-hat = g^2, so the step is eta * g/(|g|+eps)
        CHECK(w[0] == Catch::Approx(-0.01).epsilon(1e-6));
    }
    SECTION("dimension mismatches throw") {
        std::vector<double> w = {0.0};
        OptimizerState st(2);
        CHECK_THROWS_AS(sgd_update(w, {1.0, 2.0}, 0.1), std::invalid_argument);
        CHECK_THROWS_AS(momentum_update(w, {1.0}, st, 0.1, 0.9), std::invalid_argument);
        CHECK_THROWS_AS(adam_update(w, {1.0}, st, 0.1, 0.9, 0.999, 1e-8), std::invalid_argument);
    }
}

TEST_CASE("config validation") {
    MgdConfig cfg;
    cfg.eta = 0.01;
    CHECK_NOTHROW(cfg.validate());
    MgdConfig bad = cfg;
    bad.delta = 0.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.tau_theta = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.eta = -1.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.batch_size = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.warmup = -1;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("mgd_train converges on the scalar quadratic") {
    NetworkModel net = scalar_net(0.0);
    MgdConfig cfg;
    cfg.mode = PerturbMode::Weight;
    cfg.delta = 0.2;
    cfg.tau_theta = 1;
    cfg.eta = 0.05;
    cfg.batch_size = 1;
    cfg.seed = 11;
    cfg.max_iterations = 2000;
    cfg.eval_every = 100;
    cfg.residual = Residual::MeanSquaredError;
    TrainTrace tr = mgd_train(net, quadratic_batch(), nullptr, cfg);
    CHECK_FALSE(tr.diverged);
    CHECK(tr.iterations == 2000);
    CHECK(tr.updates == 2000);
    CHECK(std::abs(net.params()[0] - 3.0) < 0.3);
}

TEST_CASE("updates count is floor(iterations / tau_theta)") {
    for (long tau : {1L, 3L, 7L}) {
        NetworkModel net = scalar_net(0.0);
        MgdConfig cfg;
        cfg.delta = 0.2;
        cfg.tau_theta = tau;
        cfg.eta = 0.02;
        cfg.batch_size = 1;
        cfg.seed = 4;
        cfg.max_iterations = 50;
        cfg.eval_every = 10;
        cfg.residual = Residual::MeanSquaredError;
        TrainTrace tr = mgd_train(net, quadratic_batch(), nullptr, cfg);
        CHECK(tr.updates == 50 / tau);
        for (const TraceRow& r : tr.rows) CHECK(r.updates == r.iteration / tau);
    }
}

TEST_CASE("warmup freezes the parameters") {
    NetworkModel net = scalar_net(1.0);
    MgdConfig cfg;
    cfg.delta = 0.2;
    cfg.eta = 0.1;
    cfg.batch_size = 1;
    cfg.seed = 2;
    cfg.max_iterations = 20;
    cfg.warmup = 20;
    cfg.eval_every = 5;
    cfg.residual = Residual::MeanSquaredError;
    mgd_train(net, quadratic_batch(), nullptr, cfg);
    CHECK(net.params()[0] == 1.0);
}

TEST_CASE("runs are reproducible per seed") {
    auto run = [](std::uint64_t seed) {
        NetworkModel net = scalar_net(0.5);
        MgdConfig cfg;
        cfg.delta = 0.2;
        cfg.eta = 0.05;
        cfg.batch_size = 1;
        cfg.seed = seed;
        cfg.max_iterations = 200;
        cfg.eval_every = 50;
        cfg.residual = Residual::MeanSquaredError;
        mgd_train(net, quadratic_batch(), nullptr, cfg);
        return net.params()[0];
    };
    CHECK(run(9) == run(9));
    CHECK(run(9) != run(10));
}

TEST_CASE("divergence is flagged, not thrown") {
    NetworkModel net = scalar_net(1.0);
    MgdConfig cfg;
    cfg.delta = 0.2;
    cfg.eta = 1e300;  // first update overflows the cost
    cfg.batch_size = 1;
    cfg.seed = 1;
    cfg.max_iterations = 200;
    cfg.eval_every = 50;
    cfg.residual = Residual::MeanSquaredError;
    TrainTrace tr;
    CHECK_NOTHROW(tr = mgd_train(net, quadratic_batch(), nullptr, cfg));
    CHECK(tr.diverged);
    CHECK(tr.iterations < 200);
}

TEST_CASE("backprop_train solves the quadratic quickly") {
    NetworkModel net = scalar_net(0.0);
    MgdConfig cfg;
    cfg.eta = 0.1;
    cfg.batch_size = 1;
    cfg.seed = 3;
    cfg.max_iterations = 100;
    cfg.eval_every = 20;
    cfg.residual = Residual::MeanSquaredError;
    TrainTrace tr = backprop_train(net, quadratic_batch(), nullptr, cfg);
    CHECK_FALSE(tr.diverged);
    // gradient flow w <- w - 0.1 * 2(w-3) converges geometrically
    CHECK(std::abs(net.params()[0] - 3.0) < 1e-6);
}

TEST_CASE("target accuracy stops the run and records the passage point") {
    Dataset ds = make_synthetic_dataset(2, 30, 77);
    std::vector<std::size_t> idx(ds.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Batch train = dataset_batch(ds, idx);
    NetworkModel net = build_mlp({784, 8, 2}, 5);
    MgdConfig cfg;
    cfg.eta = 0.05;
    cfg.batch_size = 10;
    cfg.seed = 6;
    cfg.max_iterations = 400;
    cfg.eval_every = 10;
    cfg.target_accuracy = 0.9;
    TrainTrace tr = backprop_train(net, train, &train, cfg);
    REQUIRE(tr.reached_target);
    CHECK(tr.target_iteration > 0);
    CHECK(tr.target_iteration == tr.iterations);
    CHECK(tr.rows.back().test_accuracy >= 0.9);
}

TEST_CASE("node-mode training reduces the cost on a small MLP task") {
    Dataset ds = make_synthetic_dataset(2, 20, 123);
    std::vector<std::size_t> idx(ds.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Batch train = dataset_batch(ds, idx);
    NetworkModel net = build_mlp({784, 8, 2}, 9);
    double before = batch_cost(net, train);
    MgdConfig cfg;
    cfg.mode = PerturbMode::Node;
    cfg.delta = 1e-2;
    cfg.eta = 0.05;
    cfg.batch_size = 10;
    cfg.seed = 15;
    cfg.max_iterations = 600;
    cfg.eval_every = 100;
    TrainTrace tr = mgd_train(net, train, nullptr, cfg);
    CHECK_FALSE(tr.diverged);
    CHECK(batch_cost(net, train) < before);
}

TEST_CASE("trace CSV format") {
    TrainTrace tr;
    tr.rows.push_back({10, 10, 0.5, 0.25});
    std::ostringstream os;
    tr.to_csv(os);
    CHECK(os.str() == "iteration,updates,train_cost,test_accuracy\n10,10,0.5,0.25\n");
}

TEST_CASE("empty dataset is rejected") {
    NetworkModel net = scalar_net(0.0);
    MgdConfig cfg;
    cfg.eta = 0.1;
    CHECK_THROWS_AS(mgd_train(net, Batch{}, nullptr, cfg), std::invalid_argument);
    CHECK_THROWS_AS(backprop_train(net, Batch{}, nullptr, cfg), std::invalid_argument);
}
