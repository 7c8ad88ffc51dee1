#ifndef MGD_TRAINER_HPP
#define MGD_TRAINER_HPP

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ostream>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "mgd/estimator.hpp"
#include "mgd/network.hpp"
#include "mgd/perturb.hpp"

namespace mgd {

enum class OptimizerKind { Vanilla, Momentum, Adam };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::Vanilla;
    double momentum_beta = 0.9;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps_adam = 1e-8;
    // The printed Adam rule has no bias correction; that form is the
    // default, the corrected variant sits behind this flag.
    bool bias_correction = false;
};

struct MgdConfig {
    PerturbMode mode = PerturbMode::Weight;
    double delta = 1e-3;
    long tau_theta = 1;
    double eta = 1e-2;
    Normalization normalization = Normalization::Unbiased;
    OptimizerConfig optimizer;
    int batch_size = 10;
    long warmup = 0;  // iterations with eta forced to 0
    std::uint64_t seed = 0;
    long max_iterations = 1000;
    long eval_every = 100;
    Residual residual = Residual::CrossEntropy;
    double target_accuracy = -1.0;  // stop early once reached, if >= 0

    void validate() const {
        if (!(delta > 0.0)) throw std::invalid_argument("config: delta must be > 0");
        if (tau_theta < 1) throw std::invalid_argument("config: tau_theta must be >= 1");
        if (!(eta > 0.0)) throw std::invalid_argument("config: eta must be > 0");
        if (batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
        if (warmup < 0) throw std::invalid_argument("config: warmup must be >= 0");
        if (max_iterations < 1) throw std::invalid_argument("config: max_iterations must be >= 1");
        if (eval_every < 1) throw std::invalid_argument("config: eval_every must be >= 1");
    }
};

struct OptimizerState {
    std::vector<double> m, v;        // Adam moments
    std::vector<double> velocity;    // momentum
    long t = 0;

    explicit OptimizerState(std::size_t n = 0)
        : m(n, 0.0), v(n, 0.0), velocity(n, 0.0) {}
};

inline void sgd_update(std::vector<double>& w, const std::vector<double>& g, double eta) {
    if (w.size() != g.size()) throw std::invalid_argument("sgd_update: dimension mismatch");
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= eta * g[i];
}

inline void momentum_update(std::vector<double>& w, const std::vector<double>& g,
                            OptimizerState& st, double eta, double beta) {
    if (w.size() != g.size() || st.velocity.size() != w.size())
        throw std::invalid_argument("momentum_update: dimension mismatch");
    for (std::size_t i = 0; i < w.size(); ++i) {
        st.velocity[i] = beta * st.velocity[i] + g[i];
        w[i] -= eta * st.velocity[i];
    }
    ++st.t;
}

inline void adam_update(std::vector<double>& w, const std::vector<double>& g, OptimizerState& st,
                        double eta, double beta1, double beta2, double eps_adam,
                        bool bias_correction = false) {
    if (w.size() != g.size() || st.m.size() != w.size())
        throw std::invalid_argument("adam_update: dimension mismatch");
    ++st.t;
    for (std::size_t i = 0; i < w.size(); ++i) {
        st.m[i] = beta1 * st.m[i] + (1.0 - beta1) * g[i];
        st.v[i] = beta2 * st.v[i] + (1.0 - beta2) * g[i] * g[i];
        double m = st.m[i], v = st.v[i];
        if (bias_correction) {
            m /= 1.0 - std::pow(beta1, static_cast<double>(st.t));
            v /= 1.0 - std::pow(beta2, static_cast<double>(st.t));
        }
        w[i] -= eta * m / (std::sqrt(v) + eps_adam);
    }
}

inline void apply_update(std::vector<double>& w, const std::vector<double>& g,
                         const OptimizerConfig& opt, OptimizerState& st, double eta) {
    switch (opt.kind) {
        case OptimizerKind::Vanilla:
            sgd_update(w, g, eta);
            break;
        case OptimizerKind::Momentum:
            momentum_update(w, g, st, eta, opt.momentum_beta);
            break;
        case OptimizerKind::Adam:
            adam_update(w, g, st, eta, opt.beta1, opt.beta2, opt.eps_adam, opt.bias_correction);
            break;
    }
}

struct TraceRow {
    long iteration = 0;
    long updates = 0;
    double train_cost = 0.0;
    double test_accuracy = -1.0;
};

struct TrainTrace {
    std::vector<TraceRow> rows;
    long iterations = 0;
    long updates = 0;
    bool diverged = false;
    bool reached_target = false;
    long target_iteration = -1;  // first eval iteration at/above target
    long target_updates = -1;

    void to_csv(std::ostream& os) const {
        os << "iteration,updates,train_cost,test_accuracy\n";
        char buf[128];
        for (const TraceRow& r : rows) {
            std::snprintf(buf, sizeof(buf), "%ld,%ld,%.17g,%.17g\n", r.iteration, r.updates,
                          r.train_cost, r.test_accuracy);
            os << buf;
        }
    }
};

inline double batch_accuracy(const NetworkModel& net, const Batch& batch) {
    if (batch.empty()) throw std::invalid_argument("batch_accuracy: empty batch");
    std::size_t correct = 0;
    for (const Sample& s : batch) {
        Tensor y = net.forward(s.input);
        std::size_t am = static_cast<std::size_t>(
            std::max_element(y.values.begin(), y.values.end()) - y.values.begin());
        if (static_cast<int>(am) == s.label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(batch.size());
}

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

struct TraceRecorder {
    const MgdConfig& cfg;
    const Batch* test;
    TrainTrace& trace;
    bool stop = false;

    void maybe_record(const NetworkModel& net, long n, double train_cost) {
        if (n % cfg.eval_every != 0 && n != cfg.max_iterations) return;
        TraceRow row;
        row.iteration = n;
        row.updates = n / cfg.tau_theta;
        row.train_cost = train_cost;
        if (test) row.test_accuracy = batch_accuracy(net, *test);
        trace.rows.push_back(row);
        if (cfg.target_accuracy >= 0.0 && test && !trace.reached_target &&
            row.test_accuracy >= cfg.target_accuracy) {
            trace.reached_target = true;
            trace.target_iteration = row.iteration;
            trace.target_updates = row.updates;
            stop = true;
        }
    }
};

}  // namespace detail

/// The MGD training loop. One iteration is one perturbation plus one cost
/// evaluation; parameters change once per tau_theta iterations. The
/// minibatch and the baseline cost are refreshed together at each window
/// boundary so that dC isolates the perturbation effect.
inline TrainTrace mgd_train(NetworkModel& net, const Batch& data, const Batch* test,
                            const MgdConfig& cfg) {
    cfg.validate();
    if (data.empty()) throw std::invalid_argument("mgd_train: empty dataset");
    std::mt19937_64 batch_rng(detail::mix_seed(cfg.seed, 0));
    PerturbationStream stream(bind_sites(net, cfg.mode), cfg.delta,
                              detail::mix_seed(cfg.seed, 1));
    GradientAccumulator acc(net, cfg.mode, cfg.delta, cfg.normalization);
    OptimizerState state(net.param_count());
    std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);

    TrainTrace trace;
    detail::TraceRecorder rec{cfg, test, trace};
    Batch minibatch;
    std::vector<ActivationCache> caches;
    std::vector<double> base_costs;
    std::vector<double> d_costs(static_cast<std::size_t>(cfg.batch_size));
    double baseline = 0.0;

    for (long n = 1; n <= cfg.max_iterations; ++n) {
        if ((n - 1) % cfg.tau_theta == 0) {
            minibatch.clear();
            for (int i = 0; i < cfg.batch_size; ++i) minibatch.push_back(data[pick(batch_rng)]);
            caches.assign(minibatch.size(), ActivationCache{});
            base_costs.resize(minibatch.size());
            baseline = 0.0;
            for (std::size_t t = 0; t < minibatch.size(); ++t) {
                Tensor y = net.forward(minibatch[t].input, nullptr,
                                       cfg.mode == PerturbMode::Node ? &caches[t] : nullptr);
                base_costs[t] = residual_cost(y, minibatch[t], cfg.residual);
                baseline += base_costs[t];
            }
            baseline /= static_cast<double>(minibatch.size());
            if (!std::isfinite(baseline)) {
                trace.diverged = true;
                break;
            }
        }

        PerturbationVector theta = stream.sample();
        double perturbed_cost = 0.0;
        for (std::size_t t = 0; t < minibatch.size(); ++t) {
            double c = residual_cost(net.forward(minibatch[t].input, &theta), minibatch[t],
                                     cfg.residual);
            d_costs[t] = c - base_costs[t];
            perturbed_cost += c;
        }
        perturbed_cost /= static_cast<double>(minibatch.size());
        if (!std::isfinite(perturbed_cost)) {
            trace.diverged = true;
            break;
        }
        if (cfg.mode == PerturbMode::Weight) {
            acc.accumulate(perturbed_cost - baseline, theta);
        } else {
            acc.accumulate(std::span<const double>(d_costs.data(), minibatch.size()), theta,
                           std::span<const ActivationCache>(caches.data(), caches.size()));
        }

        if (n % cfg.tau_theta == 0) {
            std::vector<double> g = acc.finalize();
            double eta = n <= cfg.warmup ? 0.0 : cfg.eta;
            apply_update(net.mutable_params(), g, cfg.optimizer, state, eta);
            acc.reset();
            ++trace.updates;
        }

        trace.iterations = n;
        rec.maybe_record(net, n, baseline);
        if (rec.stop) break;
    }
    return trace;
}

/// Identical loop skeleton, but each tau_theta boundary applies the true
/// backpropagation gradient of the current minibatch.
inline TrainTrace backprop_train(NetworkModel& net, const Batch& data, const Batch* test,
                                 const MgdConfig& cfg) {
    cfg.validate();
    if (data.empty()) throw std::invalid_argument("backprop_train: empty dataset");
    std::mt19937_64 batch_rng(detail::mix_seed(cfg.seed, 0));
    OptimizerState state(net.param_count());
    std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);

    TrainTrace trace;
    detail::TraceRecorder rec{cfg, test, trace};
    Batch minibatch;
    double cost = 0.0;

    for (long n = 1; n <= cfg.max_iterations; ++n) {
        if ((n - 1) % cfg.tau_theta == 0) {
            minibatch.clear();
            for (int i = 0; i < cfg.batch_size; ++i) minibatch.push_back(data[pick(batch_rng)]);
            cost = batch_cost(net, minibatch, cfg.residual);
            if (!std::isfinite(cost)) {
                trace.diverged = true;
                break;
            }
        }
        if (n % cfg.tau_theta == 0) {
            std::vector<double> g = backprop_gradient(net, minibatch, cfg.residual);
            double eta = n <= cfg.warmup ? 0.0 : cfg.eta;
            apply_update(net.mutable_params(), g, cfg.optimizer, state, eta);
            ++trace.updates;
        }
        trace.iterations = n;
        rec.maybe_record(net, n, cost);
        if (rec.stop) break;
    }
    return trace;
}

}  // namespace mgd

#endif
