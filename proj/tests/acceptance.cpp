// Acceptance gate: one criterion per invocation (argv[1] = 1..11), one
// PASS/FAIL line on stdout, exit 0 on pass.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "mgd/mgd.hpp"

namespace fs = std::filesystem;
using namespace mgd;

namespace {

int g_workers = std::min(4u, std::max(1u, std::thread::hardware_concurrency()));

bool report(int criterion, bool pass, const std::string& detail) {
    std::printf("criterion %d: %s — %s\n", criterion, pass ? "PASS" : "FAIL", detail.c_str());
    return pass;
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

// ---------------------------------------------------------------- 1 & 2

MomentReport linear_moment_report() {
    LinearTask task = make_linear_task_random(16, 101);
    return verify_moments(task.gradient, 8, 1e-3, 100000, 20240816);
}

bool criterion1() {
    MomentReport rep = linear_moment_report();
    double worst = 0.0;
    for (double z : rep.mean_z) worst = std::max(worst, std::abs(z));
    return report(1, worst <= 4.0,
                  "K=16 tau=8 1e5 trials, max |mean z-score| = " + fmt(worst) + " (limit 4)");
}

bool criterion2() {
    MomentReport rep = linear_moment_report();
    double worst_z = 0.0;
    for (const auto& row : rep.cov_z)
        for (double z : row) worst_z = std::max(worst_z, std::abs(z));
    bool mc_ok = worst_z <= 4.0;

    // Exhaustive enumeration: exact to machine precision for K<=4, tau<=2.
    double worst_exact = 0.0;
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (std::size_t k = 1; k <= 4; ++k)
        for (long tau = 1; tau <= 2; ++tau) {
            std::vector<double> g(k);
            for (double& v : g) v = u(rng);
            ExactMoments ex = enumerate_moments(g, tau, 0.017);
            auto pred = bernoulli_covariance(g, tau);
            for (std::size_t m = 0; m < k; ++m) {
                worst_exact = std::max(worst_exact, std::abs(ex.mean[m] - g[m]));
                for (std::size_t n = 0; n < k; ++n)
                    worst_exact = std::max(worst_exact, std::abs(ex.cov[m][n] - pred[m][n]));
            }
        }
    bool exact_ok = worst_exact <= 1e-12;
    return report(2, mc_ok && exact_ok,
                  "max |cov z-score| = " + fmt(worst_z) + " (limit 4), enumeration max err = " +
                      fmt(worst_exact) + " (limit 1e-12)");
}

// ------------------------------------------------------------------ 3

bool criterion3() {
    const long grid[3] = {1, 8, 64};
    const double delta = 1e-3;
    const long trials = 40000;
    double worst_rel = 0.0;
    std::string worst_cell;
    for (long k : grid)
        for (long tau : grid) {
            LinearTask task = make_linear_task_random(static_cast<std::size_t>(k),
                                                      300 + static_cast<std::uint64_t>(k * 100 + tau));
            double n2 = dot(task.gradient, task.gradient);
            PerturbationStream stream({PerturbMode::Weight, static_cast<std::size_t>(k)}, delta,
                                      400 + static_cast<std::uint64_t>(k * 100 + tau));
            GradientAccumulator acc(static_cast<std::size_t>(k), delta);
            double sum_norm2 = 0.0;
            for (long r = 0; r < trials; ++r) {
                acc.reset();
                for (long t = 0; t < tau; ++t) {
                    PerturbationVector theta = stream.sample();
                    acc.accumulate(task.cost(theta.values), theta);
                }
                std::vector<double> g = acc.finalize();
                sum_norm2 += dot(g, g);
            }
            double ratio = sum_norm2 / static_cast<double>(trials) / n2;
            double pred = norm_bias_factor(k, tau);
            double rel = std::abs(ratio - pred) / pred;
            if (rel > worst_rel) {
                worst_rel = rel;
                worst_cell = "K=" + std::to_string(k) + " tau=" + std::to_string(tau);
            }
        }
    return report(3, worst_rel <= 0.05,
                  "norm-bias grid {1,8,64}^2, worst relative error " + fmt(worst_rel) + " at " +
                      worst_cell + " (limit 0.05)");
}

// ------------------------------------------------------------------ 4

bool criterion4() {
    LinearTask task = make_linear_task_random(16, 55);
    const double delta = 1e-3;
    PerturbationStream stream({PerturbMode::Weight, 16}, delta, 66);
    long downhill = 0;
    const long trials = 10000;
    for (long r = 0; r < trials; ++r) {
        GradientAccumulator acc(16, delta);
        PerturbationVector theta = stream.sample();
        acc.accumulate(task.cost(theta.values), theta);
        if (dot(acc.finalize(), task.gradient) >= 0.0) ++downhill;
    }
    return report(4, downhill == trials,
                  "G.grad >= 0 in " + std::to_string(downhill) + "/" + std::to_string(trials) +
                      " single-step trials");
}

// ------------------------------------------------------------------ 5

// Central differences are only a valid oracle where the +/-h evaluations
// stay on the same linear piece; mask coordinates whose step flips a ReLU
// sign or a maxpool argmax.
std::vector<bool> fd_valid_mask(NetworkModel& net, const Batch& b, double h) {
    auto pattern = [&]() {
        std::vector<int> pat;
        for (const Sample& s : b) {
            NetworkModel::BackpropTrace tr = net.forward_traced(s.input);
            for (int l = 0; l < net.layer_count(); ++l) {
                if (net.layer(l).activation == Activation::ReLU)
                    for (double v : tr.preactivations[static_cast<std::size_t>(l)].values)
                        pat.push_back(v > 0.0 ? 1 : 0);
                for (int a : tr.pool_argmax[static_cast<std::size_t>(l)]) pat.push_back(a);
            }
        }
        return pat;
    };
    std::vector<int> base = pattern();
    std::vector<bool> mask(net.param_count(), true);
    std::vector<double>& p = net.mutable_params();
    for (std::size_t i = 0; i < p.size(); ++i) {
        double orig = p[i];
        p[i] = orig + h;
        bool ok = pattern() == base;
        if (ok) {
            p[i] = orig - h;
            ok = pattern() == base;
        }
        p[i] = orig;
        mask[i] = ok;
    }
    return mask;
}

bool criterion5() {
    // The relative tolerance is meaningful only where the FD noise floor
    // eps*|C|/(2h) ~ 2e-12 is small against |gradient|; below 1e-6 the
    // comparison switches to an absolute bound that still catches any
    // real backprop defect.
    double worst_rel = 0.0, worst_abs = 0.0;
    std::size_t masked_total = 0, coords_total = 0;
    std::mt19937_64 rng(2718);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<int> lab(0, 9);
    for (int trial = 0; trial < 20; ++trial) {
        NetworkModel net = build_network(1, 10, 500 + static_cast<std::uint64_t>(trial));
        Batch batch;
        for (int t = 0; t < 2; ++t) {
            Tensor x({28, 28, 1});
            for (double& v : x.values) v = u(rng);
            batch.push_back({x, lab(rng), {}});
        }
        std::vector<double> bp = backprop_gradient(net, batch);
        std::vector<double> fd = finite_difference_gradient(net, batch, 1e-4);
        std::vector<bool> valid = fd_valid_mask(net, batch, 1e-4);
        for (std::size_t i = 0; i < bp.size(); ++i) {
            ++coords_total;
            if (!valid[i]) {
                ++masked_total;  // FD crosses a kink: oracle invalid there
                continue;
            }
            if (std::abs(bp[i]) > 1e-6)
                worst_rel = std::max(worst_rel, std::abs(fd[i] - bp[i]) / std::abs(bp[i]));
            else
                worst_abs = std::max(worst_abs, std::abs(fd[i] - bp[i]));
        }
    }
    bool coverage_ok = masked_total * 20 < coords_total;  // < 5% masked
    bool ok = worst_rel < 1e-5 && worst_abs < 1e-9 && coverage_ok;
    return report(5, ok,
                  "backprop vs central differences on 20 networks, max relative error " +
                      fmt(worst_rel) + " (limit 1e-5), max absolute error below 1e-6 scale " +
                      fmt(worst_abs) + " (limit 1e-9), " + std::to_string(masked_total) + "/" +
                      std::to_string(coords_total) + " coordinates masked as kink-crossing");
}

// -------------------------------------------------------------- 6 & 7

struct FirstPassage {
    long iterations = 0;
    bool censored = false;
};

FirstPassage angle_first_passage(int d, int classes, PerturbMode mode, std::uint64_t seed,
                                 long max_iter, const Dataset& data) {
    NetworkModel net = build_network(d, classes, seed);
    Dataset sub = subset_classes(data, classes);
    Dataset shuffled = shuffle_dataset(sub, detail::mix_seed(seed, 2));
    Batch batch = dataset_batch(shuffled, {0});
    std::vector<double> grad = backprop_gradient(net, batch);

    PerturbationStream stream(bind_sites(net, mode), 1e-3, detail::mix_seed(seed, 3));
    GradientAccumulator acc(net, mode, 1e-3);
    std::vector<ActivationCache> caches(batch.size());
    std::vector<double> base_costs(batch.size()), d_costs(batch.size());
    for (std::size_t t = 0; t < batch.size(); ++t) {
        Tensor y = net.forward(batch[t].input, nullptr,
                               mode == PerturbMode::Node ? &caches[t] : nullptr);
        base_costs[t] = residual_cost(y, batch[t], Residual::CrossEntropy);
    }

    for (long n = 1; n <= max_iter; ++n) {
        PerturbationVector theta = stream.sample();
        for (std::size_t t = 0; t < batch.size(); ++t)
            d_costs[t] = residual_cost(net.forward(batch[t].input, &theta), batch[t],
                                       Residual::CrossEntropy) -
                         base_costs[t];
        if (mode == PerturbMode::Weight) {
            double dc = 0.0;
            for (double v : d_costs) dc += v;
            acc.accumulate(dc / static_cast<double>(batch.size()), theta);
        } else {
            acc.accumulate(std::span<const double>(d_costs.data(), d_costs.size()), theta,
                           std::span<const ActivationCache>(caches.data(), caches.size()));
        }
        if (cosine_alignment(acc.finalize(), grad) >= 0.95) return {n, false};
    }
    return {max_iter, true};
}

double median_first_passage(int d, int classes, PerturbMode mode, long max_iter,
                            const Dataset& data, long replicates, long* censored = nullptr,
                            detail::Quartiles* quart = nullptr) {
    std::vector<double> fp(static_cast<std::size_t>(replicates));
    std::vector<int> cens(static_cast<std::size_t>(replicates), 0);
    detail::parallel_cells(fp.size(), g_workers, [&](std::size_t r) {
        FirstPassage p = angle_first_passage(
            d, classes, mode,
            detail::mix_seed(9000 + static_cast<std::uint64_t>(d) * 13 + (mode == PerturbMode::Node ? 7 : 0) +
                                 static_cast<std::uint64_t>(classes) * 31,
                             r),
            max_iter, data);
        fp[r] = static_cast<double>(p.iterations);
        cens[r] = p.censored ? 1 : 0;
    });
    if (censored) *censored = std::count(cens.begin(), cens.end(), 1);
    detail::Quartiles q = detail::quartiles(fp);
    if (quart) *quart = q;
    return q.median;
}

bool criterion6() {
    Dataset data = make_synthetic_dataset(10, 20, 606);
    const long reps = 10;
    double w1 = median_first_passage(1, 10, PerturbMode::Weight, 80000, data, reps);
    double w2 = median_first_passage(2, 10, PerturbMode::Weight, 250000, data, reps);
    // Node cells are capped just above the weight-mode medians: a censored
    // node replicate records a value strictly greater than the weight median,
    // so it can never help the node median land below it, and a replicate
    // that would cross later than the cap could not have helped either.
    long cap1 = static_cast<long>(std::ceil(w1)) + 1;
    long cap2 = static_cast<long>(std::ceil(w2)) + 1;
    long cens1 = 0, cens2 = 0;
    double n1 = median_first_passage(1, 10, PerturbMode::Node, cap1, data, reps, &cens1);
    double n2 = median_first_passage(2, 10, PerturbMode::Node, cap2, data, reps, &cens2);

    NetworkModel net1 = build_network(1, 10), net2 = build_network(2, 10);
    double r = static_cast<double>(net2.param_count()) / static_cast<double>(net1.param_count());
    double ratio = w2 / w1;
    bool scaling_ok = ratio >= 0.5 * r && ratio <= 2.0 * r;
    bool node_faster = n1 < w1 && n2 < w2;
    return report(6, scaling_ok && node_faster,
                  "weight medians d1=" + fmt(w1) + " d2=" + fmt(w2) + " (ratio " + fmt(ratio) +
                      ", N_W ratio " + fmt(r) + ", band [" + fmt(0.5 * r) + "," + fmt(2.0 * r) +
                      "]); node medians d1=" + fmt(n1) + " (" + std::to_string(cens1) +
                      "/10 censored) d2=" + fmt(n2) + " (" + std::to_string(cens2) +
                      "/10 censored)" +
                      (node_faster ? "" : " — node mode NOT below weight mode"));
}

bool criterion7() {
    Dataset data = make_synthetic_dataset(10, 20, 707);
    const long reps = 10;
    detail::Quartiles q2, q10;
    median_first_passage(1, 2, PerturbMode::Weight, 60000, data, reps, nullptr, &q2);
    median_first_passage(1, 10, PerturbMode::Weight, 60000, data, reps, nullptr, &q10);
    bool overlap = q2.q1 <= q10.q3 && q10.q1 <= q2.q3;
    return report(7, overlap,
                  "first-passage IQRs at d=1: 2-class [" + fmt(q2.q1) + "," + fmt(q2.q3) +
                      "], 10-class [" + fmt(q10.q1) + "," + fmt(q10.q3) + "]" +
                      (overlap ? " overlap" : " disjoint"));
}

// ------------------------------------------------------------------ 8

bool criterion8() {
    // A train set that is tiny relative to the parameter count lets the
    // perturbative estimator memorize it (train cost ~1e-7) without learning
    // features that generalize; 500 per class keeps the task representative.
    Dataset train_ds = subset_classes(make_synthetic_dataset(10, 500, 808), 2);
    Dataset test_ds = subset_classes(make_synthetic_dataset(10, 30, 809), 2);
    Batch train, test;
    for (std::size_t i = 0; i < train_ds.size(); ++i) train.push_back(dataset_sample(train_ds, i));
    for (std::size_t i = 0; i < test_ds.size(); ++i) test.push_back(dataset_sample(test_ds, i));

    MgdConfig base;
    base.tau_theta = 1;
    base.delta = 1e-3;
    base.batch_size = 10;
    base.eval_every = 50;
    base.residual = Residual::CrossEntropy;

    // Preliminary backprop run: find the plateau iteration, then size the
    // shared budget so backprop is flat well before the end.
    long plateau = 0;
    {
        NetworkModel net = build_network(1, 2, 88);
        MgdConfig mc = base;
        mc.eta = 0.03;
        mc.seed = 1;
        mc.max_iterations = 1500;
        TrainTrace tr = backprop_train(net, train, &test, mc);
        double best = 0.0;
        for (const TraceRow& r : tr.rows) best = std::max(best, r.test_accuracy);
        plateau = tr.rows.back().iteration;
        for (const TraceRow& r : tr.rows)
            if (r.test_accuracy >= best - 0.005) {
                plateau = r.iteration;
                break;
            }
    }
    // Floor well past the backprop plateau so the shared budget is not
    // trivially small for the slower perturbative learner.
    long budget = std::max<long>(10 * plateau, 40000);

    auto best_accuracy = [&](const std::string& method, const std::vector<double>& etas) {
        std::vector<double> accs(etas.size());
        detail::parallel_cells(etas.size(), g_workers, [&](std::size_t ei) {
            NetworkModel net = build_network(1, 2, 880 + ei);
            MgdConfig mc = base;
            mc.eta = etas[ei];
            mc.seed = detail::mix_seed(8080, ei + (method == "backprop" ? 100 : 0));
            mc.max_iterations = budget;
            mc.eval_every = std::max<long>(budget / 20, 50);
            TrainTrace tr;
            if (method == "backprop") {
                tr = backprop_train(net, train, &test, mc);
            } else {
                mc.mode = PerturbMode::Weight;
                tr = mgd_train(net, train, &test, mc);
            }
            double best = 0.0;
            for (const TraceRow& r : tr.rows) best = std::max(best, r.test_accuracy);
            accs[ei] = tr.diverged ? 0.0 : best;
        });
        return *std::max_element(accs.begin(), accs.end());
    };

    double bp = best_accuracy("backprop", {0.003, 0.01, 0.03, 0.1, 0.3});
    double mgd = best_accuracy("mgd", {0.0003, 0.001, 0.003, 0.01, 0.03});
    bool ok = mgd >= bp - 0.02;
    return report(8, ok,
                  "budget " + std::to_string(budget) + " iterations (plateau " +
                      std::to_string(plateau) + "): backprop best accuracy " + fmt(bp) +
                      ", MGD weight-mode best accuracy " + fmt(mgd) + " (2pp tolerance)");
}

// ------------------------------------------------------------------ 9

struct TargetStats {
    double median_updates = 0.0;
    double median_iterations = 0.0;
};

// Scalar quadratic C(w) = (w - 3)^2, single perturbation site.
TargetStats quadratic_to_target(long tau, double eta, double delta, long seeds) {
    std::vector<double> ups, its;
    for (long s = 0; s < seeds; ++s) {
        double w = 0.0;
        PerturbationStream stream({PerturbMode::Weight, 1}, delta,
                                  detail::mix_seed(9900 + static_cast<std::uint64_t>(tau), s));
        GradientAccumulator acc(1, delta);
        long iters = 20000, updates = 20000 / tau;
        double baseline = (w - 3.0) * (w - 3.0);
        for (long n = 1; n <= 20000; ++n) {
            if ((n - 1) % tau == 0) baseline = (w - 3.0) * (w - 3.0);
            PerturbationVector theta = stream.sample();
            double wp = w + theta.values[0];
            acc.accumulate((wp - 3.0) * (wp - 3.0) - baseline, theta);
            if (n % tau == 0) {
                w -= eta * acc.finalize()[0];
                acc.reset();
                if ((w - 3.0) * (w - 3.0) <= 0.04) {
                    iters = n;
                    updates = n / tau;
                    break;
                }
            }
        }
        ups.push_back(static_cast<double>(updates));
        its.push_back(static_cast<double>(iters));
    }
    return {detail::quartiles(ups).median, detail::quartiles(its).median};
}

TargetStats mlp_to_target(long tau, const std::vector<double>& etas, const Batch& train,
                          const Batch& test, long seeds) {
    // best eta by median updates over the seeds
    TargetStats best;
    best.median_updates = 1e18;
    for (double eta : etas) {
        std::vector<double> ups(static_cast<std::size_t>(seeds)),
            its(static_cast<std::size_t>(seeds));
        detail::parallel_cells(static_cast<std::size_t>(seeds), g_workers, [&](std::size_t s) {
            NetworkModel net = build_mlp({784, 8, 2}, detail::mix_seed(4400, s));
            MgdConfig mc;
            mc.mode = PerturbMode::Weight;
            mc.delta = 1e-3;
            mc.tau_theta = tau;
            mc.eta = eta;
            mc.batch_size = 10;
            mc.seed = detail::mix_seed(4500 + static_cast<std::uint64_t>(tau * 17), s);
            mc.max_iterations = 40000;
            mc.eval_every = tau;
            mc.target_accuracy = 0.8;
            TrainTrace tr = mgd_train(net, train, &test, mc);
            ups[s] = static_cast<double>(tr.reached_target ? tr.target_updates
                                                           : mc.max_iterations / tau);
            its[s] = static_cast<double>(tr.reached_target ? tr.target_iteration
                                                           : mc.max_iterations);
        });
        double med = detail::quartiles(ups).median;
        if (med < best.median_updates) {
            best.median_updates = med;
            best.median_iterations = detail::quartiles(its).median;
        }
    }
    return best;
}

// Averaging earns its keep through the step size: a longer window gives a
// cleaner estimate, which tolerates a larger eta, which reaches the target in
// fewer updates.  Pick the best eta per tau, exactly as the MLP leg does.
TargetStats quadratic_best_eta(long tau, long seeds) {
    TargetStats best;
    best.median_updates = 1e18;
    for (double eta : {0.02, 0.05, 0.1, 0.2, 0.45}) {
        TargetStats st = quadratic_to_target(tau, eta, 2.0, seeds);
        if (st.median_updates < best.median_updates ||
            (st.median_updates == best.median_updates &&
             st.median_iterations < best.median_iterations))
            best = st;
    }
    return best;
}

bool criterion9() {
    const long seeds = 5;
    TargetStats q1 = quadratic_best_eta(1, seeds);
    TargetStats q10 = quadratic_best_eta(10, seeds);
    TargetStats q100 = quadratic_best_eta(100, seeds);
    bool quad_updates_ok =
        q1.median_updates >= q10.median_updates && q10.median_updates >= q100.median_updates;
    bool quad_iters_ok = q1.median_iterations <= q10.median_iterations &&
                         q1.median_iterations <= q100.median_iterations;

    Dataset train_ds = subset_classes(make_synthetic_dataset(10, 60, 909), 2);
    Dataset test_ds = subset_classes(make_synthetic_dataset(10, 30, 910), 2);
    Batch train, test;
    for (std::size_t i = 0; i < train_ds.size(); ++i) train.push_back(dataset_sample(train_ds, i));
    for (std::size_t i = 0; i < test_ds.size(); ++i) test.push_back(dataset_sample(test_ds, i));
    std::vector<double> etas = {0.002, 0.01, 0.05};
    TargetStats m1 = mlp_to_target(1, etas, train, test, seeds);
    TargetStats m10 = mlp_to_target(10, etas, train, test, seeds);
    TargetStats m100 = mlp_to_target(100, etas, train, test, seeds);
    bool mlp_updates_ok =
        m1.median_updates >= m10.median_updates && m10.median_updates >= m100.median_updates;
    bool mlp_iters_ok = m1.median_iterations <= m10.median_iterations &&
                        m1.median_iterations <= m100.median_iterations;

    bool ok = quad_updates_ok && quad_iters_ok && mlp_updates_ok && mlp_iters_ok;
    return report(
        9, ok,
        "quadratic updates {" + fmt(q1.median_updates) + "," + fmt(q10.median_updates) + "," +
            fmt(q100.median_updates) + "} iters {" + fmt(q1.median_iterations) + "," +
            fmt(q10.median_iterations) + "," + fmt(q100.median_iterations) + "}; 2-class updates {" +
            fmt(m1.median_updates) + "," + fmt(m10.median_updates) + "," +
            fmt(m100.median_updates) + "} iters {" + fmt(m1.median_iterations) + "," +
            fmt(m10.median_iterations) + "," + fmt(m100.median_iterations) + "}");
}

// ----------------------------------------------------------------- 10

bool criterion10() {
    Dataset train_ds = subset_classes(make_synthetic_dataset(10, 60, 1010), 2);
    Dataset test_ds = subset_classes(make_synthetic_dataset(10, 30, 1011), 2);
    Batch train, test;
    for (std::size_t i = 0; i < train_ds.size(); ++i) train.push_back(dataset_sample(train_ds, i));
    for (std::size_t i = 0; i < test_ds.size(); ++i) test.push_back(dataset_sample(test_ds, i));
    const long seeds = 5;

    auto best_updates = [&](OptimizerKind kind, const std::vector<double>& etas) {
        double best = 1e18;
        for (double eta : etas) {
            std::vector<double> ups(static_cast<std::size_t>(seeds));
            detail::parallel_cells(static_cast<std::size_t>(seeds), g_workers, [&](std::size_t s) {
                NetworkModel net = build_mlp({784, 8, 2}, detail::mix_seed(5500, s));
                MgdConfig mc;
                mc.mode = PerturbMode::Weight;
                mc.delta = 1e-3;
                mc.tau_theta = 1000;
                mc.warmup = 1000;
                mc.eta = eta;
                mc.batch_size = 10;
                mc.optimizer.kind = kind;
                mc.seed = detail::mix_seed(5600 + (kind == OptimizerKind::Adam ? 1 : 0), s);
                mc.max_iterations = 40000;
                mc.eval_every = 1000;
                mc.target_accuracy = 0.9;
                TrainTrace tr = mgd_train(net, train, &test, mc);
                ups[s] = static_cast<double>(tr.reached_target ? tr.target_updates
                                                               : mc.max_iterations / 1000);
            });
            best = std::min(best, detail::quartiles(ups).median);
        }
        return best;
    };

    double vanilla = best_updates(OptimizerKind::Vanilla, {0.02, 0.05, 0.1, 0.3, 0.8});
    double adam = best_updates(OptimizerKind::Adam, {0.002, 0.01, 0.05, 0.15, 0.4});
    bool ok = adam <= vanilla;
    return report(10, ok,
                  "tau_theta=1000, warmup=1000: best-eta median updates-to-target adam " +
                      fmt(adam) + " vs vanilla " + fmt(vanilla));
}

// ----------------------------------------------------------------- 11

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

bool dirs_identical(const fs::path& a, const fs::path& b, std::string& why) {
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(a)) names.push_back(e.path().filename().string());
    std::sort(names.begin(), names.end());
    for (const std::string& n : names) {
        if (!fs::exists(b / n)) {
            why = n + " missing in rerun";
            return false;
        }
        if (slurp(a / n) != slurp(b / n)) {
            why = n + " differs between reruns";
            return false;
        }
    }
    return !names.empty();
}

bool criterion11() {
    fs::path root = fs::temp_directory_path() / "mgd_acceptance_11";
    fs::remove_all(root);

    auto run_all = [&](const std::string& tag) {
        ExperimentContext ctx;
        ctx.seed = 77;
        ctx.workers = 2;
        ctx.cfg = FlatConfig::parse_string("k_list = 2,4\ntau_list = 1,2\ntrials = 2000\n");
        ctx.out_dir = (root / (tag + "_moments")).string();
        run_moments(ctx);

        ExperimentContext actx;
        actx.seed = 78;
        actx.workers = 2;
        actx.cfg = FlatConfig::parse_string(
            "d_list = 1\nmode_list = weight\nclass_list = 2\nreplicates = 2\n"
            "max_iterations = 30\nrecord_every = 10\nbatch_size = 2\n"
            "synthetic_classes = 2\nsynthetic_per_class = 4\n");
        actx.out_dir = (root / (tag + "_angle")).string();
        run_angle_experiment(actx);

        ExperimentContext tctx;
        tctx.seed = 79;
        tctx.workers = 2;
        tctx.cfg = FlatConfig::parse_string(
            "tau_list = 1,2\neta_list = 0.05\nreplicates = 2\nclasses = 2\nmlp_hidden = 4\n"
            "max_iterations = 30\neval_every = 10\nsynthetic_classes = 2\n"
            "synthetic_per_class = 4\nsynthetic_test_per_class = 2\n");
        tctx.out_dir = (root / (tag + "_tau")).string();
        run_tau_scan(tctx);
    };

    run_all("a");
    run_all("b");
    std::string why;
    bool ok = true;
    for (const std::string& exp : {std::string("moments"), std::string("angle"), std::string("tau")})
        ok = ok && dirs_identical(root / ("a_" + exp), root / ("b_" + exp), why);
    fs::remove_all(root);
    return report(11, ok, ok ? "moments/angle/tau-scan reruns byte-identical" : why);
}

}  // namespace

int main(int argc, char** argv) {
    if (argc != 2) {
        std::fprintf(stderr, "usage: %s <criterion 1-11>\n", argv[0]);
        return 2;
    }
    int c = std::atoi(argv[1]);
    bool ok = false;
    switch (c) {
        case 1: ok = criterion1(); break;
        case 2: ok = criterion2(); break;
        case 3: ok = criterion3(); break;
        case 4: ok = criterion4(); break;
        case 5: ok = criterion5(); break;
        case 6: ok = criterion6(); break;
        case 7: ok = criterion7(); break;
        case 8: ok = criterion8(); break;
        case 9: ok = criterion9(); break;
        case 10: ok = criterion10(); break;
        case 11: ok = criterion11(); break;
        default:
            std::fprintf(stderr, "usage: %s <criterion 1-11>\n", argv[0]);
            return 2;
    }
    return ok ? 0 : 1;
}
