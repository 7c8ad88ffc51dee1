#ifndef MGD_EXPERIMENT_HPP
#define MGD_EXPERIMENT_HPP

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "mgd/config.hpp"
#include "mgd/data.hpp"
#include "mgd/estimator.hpp"
#include "mgd/network.hpp"
#include "mgd/trainer.hpp"

namespace mgd {

/// Shared state for one experiment invocation. `cfg` already includes any
/// CLI overrides, so its hash identifies the run exactly.
struct ExperimentContext {
    FlatConfig cfg;
    std::string out_dir;
    std::uint64_t seed = 0;
    int workers = 1;
};

namespace detail {

inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::ofstream open_csv(const ExperimentContext& ctx, const std::string& name) {
    std::filesystem::create_directories(ctx.out_dir);
    std::string path = ctx.out_dir + "/" + name;
    std::ofstream os(path, std::ios::binary);  // binary: byte-identical reruns
    if (!os) throw std::runtime_error("cannot open output file " + path);
    return os;
}

/// Run fn(0..n-1) across a small worker pool; rethrows the first failure.
inline void parallel_cells(std::size_t n, int workers,
                           const std::function<void(std::size_t)>& fn) {
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::mutex err_mutex;
    std::exception_ptr err;
    auto worker = [&] {
        for (;;) {
            std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mutex);
                if (!err) err = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> threads;
    int count = std::min<int>(workers, static_cast<int>(n));
    threads.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
    if (err) std::rethrow_exception(err);
}

struct Quartiles {
    double q1 = 0.0, median = 0.0, q3 = 0.0;
};

inline Quartiles quartiles(std::vector<double> v) {
    if (v.empty()) throw std::invalid_argument("quartiles: empty sample");
    std::sort(v.begin(), v.end());
    auto at = [&](double q) {
        double pos = q * static_cast<double>(v.size() - 1);
        std::size_t lo = static_cast<std::size_t>(pos);
        std::size_t hi = std::min(lo + 1, v.size() - 1);
        double frac = pos - static_cast<double>(lo);
        return v[lo] * (1.0 - frac) + v[hi] * frac;
    };
    return {at(0.25), at(0.5), at(0.75)};
}

inline PerturbMode parse_mode(const std::string& s) {
    if (s == "weight") return PerturbMode::Weight;
    if (s == "node") return PerturbMode::Node;
    throw std::runtime_error("unknown perturbation mode '" + s + "'");
}

inline Residual parse_residual(const FlatConfig& cfg) {
    std::string s = cfg.get_string("residual", "ce");
    if (s == "ce" || s == "cross_entropy") return Residual::CrossEntropy;
    if (s == "mse") return Residual::MeanSquaredError;
    throw std::runtime_error("unknown residual '" + s + "'");
}

inline Dataset load_split(const ExperimentContext& ctx, bool train) {
    const FlatConfig& cfg = ctx.cfg;
    std::string img_key = train ? "train_images" : "test_images";
    std::string lab_key = train ? "train_labels" : "test_labels";
    if (cfg.has(img_key) || cfg.has(lab_key)) {
        if (!cfg.has(img_key) || !cfg.has(lab_key))
            throw std::runtime_error("both " + img_key + " and " + lab_key + " must be set");
        return load_idx(cfg.get_string(img_key, ""), cfg.get_string(lab_key, ""));
    }
    int classes = static_cast<int>(cfg.get_long("synthetic_classes", 10));
    long per_class = cfg.get_long(train ? "synthetic_per_class" : "synthetic_test_per_class",
                                  train ? 200 : 100);
    double noise = cfg.get_double("synthetic_noise", 0.08);
    return make_synthetic_dataset(classes, static_cast<int>(per_class),
                                  detail::mix_seed(ctx.seed, train ? 0xDA7A : 0x7E57), noise);
}

/// Network for the tau/adam scans: `network = mlp` (default) or `conv`.
inline NetworkModel build_scan_network(const FlatConfig& cfg, int classes, std::uint64_t seed) {
    std::string kind = cfg.get_string("network", "mlp");
    if (kind == "conv")
        return build_network(static_cast<int>(cfg.get_long("d", 1)), classes, seed);
    if (kind == "mlp") {
        std::vector<int> sizes{28 * 28};
        for (long h : cfg.get_long_list("mlp_hidden", "16")) sizes.push_back(static_cast<int>(h));
        sizes.push_back(classes);
        return build_mlp(sizes, seed);
    }
    throw std::runtime_error("unknown network kind '" + kind + "'");
}

inline MgdConfig base_train_config(const ExperimentContext& ctx) {
    MgdConfig mc;
    mc.delta = ctx.cfg.get_double("delta", 1e-3);
    mc.tau_theta = ctx.cfg.get_long("tau_theta", 1);
    mc.batch_size = static_cast<int>(ctx.cfg.get_long("batch_size", 10));
    mc.warmup = ctx.cfg.get_long("warmup", 0);
    mc.max_iterations = ctx.cfg.get_long("max_iterations", 20000);
    mc.eval_every = ctx.cfg.get_long("eval_every", 200);
    mc.residual = parse_residual(ctx.cfg);
    mc.target_accuracy = ctx.cfg.get_double("target_accuracy", 0.8);
    std::string norm = ctx.cfg.get_string("normalization", "unbiased");
    if (norm == "unbiased") mc.normalization = Normalization::Unbiased;
    else if (norm == "gamma") mc.normalization = Normalization::GammaScaled;
    else if (norm == "raw") mc.normalization = Normalization::RawSum;
    else throw std::runtime_error("unknown normalization '" + norm + "'");
    return mc;
}

}  // namespace detail

/// Gradient-estimation-time experiment: freeze a random network, compute
/// the true gradient once, accumulate G, and record the first iteration
/// where cos(alpha) crosses the threshold.
inline void run_angle_experiment(const ExperimentContext& ctx) {
    const FlatConfig& cfg = ctx.cfg;
    const std::string hash = cfg.hash_hex();
    std::vector<long> d_list = cfg.get_long_list("d_list", "1,2");
    std::vector<std::string> modes = cfg.get_string_list("mode_list", "weight,node");
    std::vector<long> class_list = cfg.get_long_list("class_list", "10");
    long replicates = cfg.get_long("replicates", 10);
    long max_iterations = cfg.get_long("max_iterations", 100000);
    long record_every = cfg.get_long("record_every", 500);
    double threshold = cfg.get_double("cos_threshold", 0.95);
    double delta = cfg.get_double("delta", 1e-3);
    int batch_size = static_cast<int>(cfg.get_long("batch_size", 10));
    Residual residual = detail::parse_residual(cfg);

    Dataset full = detail::load_split(ctx, true);

    struct Cell {
        long d, classes, replicate;
        std::string mode;
    };
    std::vector<Cell> cells;
    for (long d : d_list)
        for (const std::string& m : modes)
            for (long c : class_list)
                for (long r = 0; r < replicates; ++r) cells.push_back({d, c, r, m});

    struct CellResult {
        std::vector<std::pair<long, double>> curve;
        long first_passage = -1;
        bool censored = true;
    };
    std::vector<CellResult> results(cells.size());

    detail::parallel_cells(cells.size(), ctx.workers, [&](std::size_t ci) {
        const Cell& cell = cells[ci];
        std::uint64_t cell_seed = detail::mix_seed(ctx.seed, 1000 + ci);
        NetworkModel net = build_network(static_cast<int>(cell.d),
                                         static_cast<int>(cell.classes), cell_seed);
        Dataset sub = subset_classes(full, static_cast<int>(cell.classes));
        Dataset shuffled = shuffle_dataset(sub, detail::mix_seed(cell_seed, 2));
        std::vector<std::size_t> idx;
        for (int i = 0; i < batch_size && static_cast<std::size_t>(i) < shuffled.size(); ++i)
            idx.push_back(static_cast<std::size_t>(i));
        Batch batch = dataset_batch(shuffled, idx);

        std::vector<double> grad = backprop_gradient(net, batch, residual);
        PerturbMode mode = detail::parse_mode(cell.mode);
        PerturbationStream stream(bind_sites(net, mode), delta, detail::mix_seed(cell_seed, 3));
        GradientAccumulator acc(net, mode, delta);

        std::vector<ActivationCache> caches(batch.size());
        std::vector<double> base_costs(batch.size());
        for (std::size_t t = 0; t < batch.size(); ++t) {
            Tensor y = net.forward(batch[t].input, nullptr,
                                   mode == PerturbMode::Node ? &caches[t] : nullptr);
            base_costs[t] = residual_cost(y, batch[t], residual);
        }

        CellResult res;
        std::vector<double> d_costs(batch.size());
        for (long n = 1; n <= max_iterations; ++n) {
            PerturbationVector theta = stream.sample();
            for (std::size_t t = 0; t < batch.size(); ++t)
                d_costs[t] = residual_cost(net.forward(batch[t].input, &theta), batch[t],
                                           residual) - base_costs[t];
            if (mode == PerturbMode::Weight) {
                double dc = 0.0;
                for (double v : d_costs) dc += v;
                acc.accumulate(dc / static_cast<double>(batch.size()), theta);
            } else {
                acc.accumulate(std::span<const double>(d_costs.data(), d_costs.size()), theta,
                               std::span<const ActivationCache>(caches.data(), caches.size()));
            }
            double cosa = cosine_alignment(acc.finalize(), grad);
            if (n % record_every == 0 || n == max_iterations)
                res.curve.emplace_back(n, cosa);
            if (cosa >= threshold) {
                res.first_passage = n;
                res.censored = false;
                res.curve.emplace_back(n, cosa);
                break;
            }
        }
        if (res.censored) res.first_passage = max_iterations;  // sentinel
        results[ci] = res;
    });

    // Per-(d, mode, classes) detail files.
    for (long d : d_list)
        for (const std::string& m : modes)
            for (long c : class_list) {
                std::ostringstream name;
                name << "angle_d" << d << "_" << m << "_c" << c << ".csv";
                auto os = detail::open_csv(ctx, name.str());
                os << "seed,config_hash,d,mode,classes,replicate,iteration,cos_alpha\n";
                for (std::size_t ci = 0; ci < cells.size(); ++ci) {
                    const Cell& cell = cells[ci];
                    if (cell.d != d || cell.mode != m || cell.classes != c) continue;
                    for (const auto& [it, cosa] : results[ci].curve)
                        os << ctx.seed << "," << hash << "," << d << "," << m << "," << c << ","
                           << cell.replicate << "," << it << "," << detail::fmt_double(cosa)
                           << "\n";
                }
            }

    {
        auto os = detail::open_csv(ctx, "angle_first_passage.csv");
        os << "seed,config_hash,d,mode,classes,replicate,first_passage,censored\n";
        for (std::size_t ci = 0; ci < cells.size(); ++ci) {
            const Cell& cell = cells[ci];
            os << ctx.seed << "," << hash << "," << cell.d << "," << cell.mode << ","
               << cell.classes << "," << cell.replicate << "," << results[ci].first_passage << ","
               << (results[ci].censored ? 1 : 0) << "\n";
        }
    }
    {
        auto os = detail::open_csv(ctx, "angle_summary.csv");
        os << "seed,config_hash,d,mode,classes,replicates,q1,median,q3,censored_count\n";
        for (long d : d_list)
            for (const std::string& m : modes)
                for (long c : class_list) {
                    std::vector<double> fp;
                    long censored = 0;
                    for (std::size_t ci = 0; ci < cells.size(); ++ci) {
                        const Cell& cell = cells[ci];
                        if (cell.d != d || cell.mode != m || cell.classes != c) continue;
                        fp.push_back(static_cast<double>(results[ci].first_passage));
                        if (results[ci].censored) ++censored;
                    }
                    detail::Quartiles q = detail::quartiles(fp);
                    os << ctx.seed << "," << hash << "," << d << "," << m << "," << c << ","
                       << fp.size() << "," << detail::fmt_double(q.q1) << ","
                       << detail::fmt_double(q.median) << "," << detail::fmt_double(q.q3) << ","
                       << censored << "\n";
                }
    }
}

namespace detail {

struct TrainRun {
    TrainTrace trace;
    double final_accuracy = -1.0;
};

inline TrainRun run_one_training(const ExperimentContext& ctx, const std::string& mode,
                                 NetworkModel& net, const Batch& train, const Batch& test,
                                 MgdConfig mc) {
    TrainRun run;
    if (mode == "backprop") {
        run.trace = backprop_train(net, train, &test, mc);
    } else {
        mc.mode = parse_mode(mode == "mgd-weight" ? "weight"
                             : mode == "mgd-node" ? "node"
                                                  : mode);
        run.trace = mgd_train(net, train, &test, mc);
    }
    if (!run.trace.rows.empty()) run.final_accuracy = run.trace.rows.back().test_accuracy;
    return run;
}

/// Smaller is better; diverged and censored runs sort last.
inline double run_score(const TrainRun& r, long max_iterations) {
    if (r.trace.diverged) return 1e18;
    if (r.trace.reached_target) return static_cast<double>(r.trace.target_iteration);
    return static_cast<double>(2 * max_iterations) + (1.0 - r.final_accuracy) * 1e6;
}

}  // namespace detail

/// Training-time experiment over (d, classes, mode, eta, replicate) cells.
inline void run_training_experiment(const ExperimentContext& ctx) {
    const FlatConfig& cfg = ctx.cfg;
    const std::string hash = cfg.hash_hex();
    std::vector<long> d_list = cfg.get_long_list("d_list", "1");
    std::vector<long> class_list = cfg.get_long_list("class_list", "2");
    std::vector<std::string> modes =
        cfg.get_string_list("mode_list", "mgd-weight,mgd-node,backprop");
    std::vector<double> eta_list = cfg.get_double_list("eta_list", "0.003,0.01,0.03,0.1,0.3");
    long replicates = cfg.get_long("replicates", 1);

    Dataset train_full = detail::load_split(ctx, true);
    Dataset test_full = detail::load_split(ctx, false);

    struct Cell {
        long d, classes, replicate;
        std::string mode;
        double eta;
    };
    std::vector<Cell> cells;
    for (long d : d_list)
        for (long c : class_list)
            for (const std::string& m : modes)
                for (double eta : eta_list)
                    for (long r = 0; r < replicates; ++r) cells.push_back({d, c, r, m, eta});

    std::vector<detail::TrainRun> results(cells.size());
    MgdConfig base = detail::base_train_config(ctx);

    detail::parallel_cells(cells.size(), ctx.workers, [&](std::size_t ci) {
        const Cell& cell = cells[ci];
        std::uint64_t cell_seed = detail::mix_seed(ctx.seed, 2000 + ci);
        NetworkModel net = build_network(static_cast<int>(cell.d),
                                         static_cast<int>(cell.classes), cell_seed);
        Dataset train_sub = subset_classes(train_full, static_cast<int>(cell.classes));
        Dataset test_sub = subset_classes(test_full, static_cast<int>(cell.classes));
        Batch train;
        for (std::size_t i = 0; i < train_sub.size(); ++i) train.push_back(dataset_sample(train_sub, i));
        Batch test;
        for (std::size_t i = 0; i < test_sub.size(); ++i) test.push_back(dataset_sample(test_sub, i));
        MgdConfig mc = base;
        mc.eta = cell.eta;
        mc.seed = cell_seed;
        results[ci] = detail::run_one_training(ctx, cell.mode, net, train, test, mc);
    });

    for (long d : d_list)
        for (const std::string& m : modes)
            for (long c : class_list) {
                std::ostringstream name;
                name << "train_d" << d << "_" << m << "_c" << c << ".csv";
                auto os = detail::open_csv(ctx, name.str());
                os << "seed,config_hash,d,mode,classes,eta,replicate,iteration,updates,"
                      "train_cost,test_accuracy\n";
                for (std::size_t ci = 0; ci < cells.size(); ++ci) {
                    const Cell& cell = cells[ci];
                    if (cell.d != d || cell.mode != m || cell.classes != c) continue;
                    for (const TraceRow& r : results[ci].trace.rows)
                        os << ctx.seed << "," << hash << "," << d << "," << m << "," << c << ","
                           << detail::fmt_double(cell.eta) << "," << cell.replicate << ","
                           << r.iteration << "," << r.updates << ","
                           << detail::fmt_double(r.train_cost) << ","
                           << detail::fmt_double(r.test_accuracy) << "\n";
                }
            }

    auto os = detail::open_csv(ctx, "train_summary.csv");
    os << "seed,config_hash,d,mode,classes,eta,replicate,final_accuracy,target_iteration,"
          "target_updates,censored,diverged,best\n";
    for (long d : d_list)
        for (const std::string& m : modes)
            for (long c : class_list) {
                // best eta per (d, mode, classes) by median score over replicates
                double best_eta = eta_list.front();
                double best_score = 1e300;
                for (double eta : eta_list) {
                    std::vector<double> scores;
                    for (std::size_t ci = 0; ci < cells.size(); ++ci) {
                        const Cell& cell = cells[ci];
                        if (cell.d == d && cell.mode == m && cell.classes == c &&
                            cell.eta == eta)
                            scores.push_back(
                                detail::run_score(results[ci], base.max_iterations));
                    }
                    double med = detail::quartiles(scores).median;
                    if (med < best_score) {
                        best_score = med;
                        best_eta = eta;
                    }
                }
                for (std::size_t ci = 0; ci < cells.size(); ++ci) {
                    const Cell& cell = cells[ci];
                    if (cell.d != d || cell.mode != m || cell.classes != c) continue;
                    const detail::TrainRun& r = results[ci];
                    os << ctx.seed << "," << hash << "," << d << "," << m << "," << c << ","
                       << detail::fmt_double(cell.eta) << "," << cell.replicate << ","
                       << detail::fmt_double(r.final_accuracy) << ","
                       << (r.trace.reached_target ? r.trace.target_iteration
                                                  : base.max_iterations)
                       << ","
                       << (r.trace.reached_target ? r.trace.target_updates
                                                  : base.max_iterations / base.tau_theta)
                       << "," << (r.trace.reached_target ? 0 : 1) << ","
                       << (r.trace.diverged ? 1 : 0) << "," << (cell.eta == best_eta ? 1 : 0)
                       << "\n";
                }
            }
}

/// Weight-update economy scan over tau_theta.
inline void run_tau_scan(const ExperimentContext& ctx) {
    const FlatConfig& cfg = ctx.cfg;
    const std::string hash = cfg.hash_hex();
    std::vector<long> tau_list = cfg.get_long_list("tau_list", "1,10,100");
    std::vector<double> eta_list = cfg.get_double_list("eta_list", "0.01,0.03,0.1");
    long replicates = cfg.get_long("replicates", 5);
    int classes = static_cast<int>(cfg.get_long("classes", 2));
    std::string mode = cfg.get_string("mode", "weight");

    Dataset train_full = subset_classes(detail::load_split(ctx, true), classes);
    Dataset test_full = subset_classes(detail::load_split(ctx, false), classes);
    Batch train, test;
    for (std::size_t i = 0; i < train_full.size(); ++i) train.push_back(dataset_sample(train_full, i));
    for (std::size_t i = 0; i < test_full.size(); ++i) test.push_back(dataset_sample(test_full, i));

    struct Cell {
        long tau, replicate;
        double eta;
    };
    std::vector<Cell> cells;
    for (long tau : tau_list)
        for (double eta : eta_list)
            for (long r = 0; r < replicates; ++r) cells.push_back({tau, r, eta});
    std::vector<detail::TrainRun> results(cells.size());
    MgdConfig base = detail::base_train_config(ctx);

    detail::parallel_cells(cells.size(), ctx.workers, [&](std::size_t ci) {
        const Cell& cell = cells[ci];
        std::uint64_t cell_seed = detail::mix_seed(ctx.seed, 3000 + ci);
        NetworkModel net = detail::build_scan_network(cfg, classes, cell_seed);
        MgdConfig mc = base;
        mc.mode = detail::parse_mode(mode);
        mc.tau_theta = cell.tau;
        mc.eta = cell.eta;
        mc.seed = cell_seed;
        results[ci] = detail::run_one_training(ctx, mode, net, train, test, mc);
    });

    {
        auto os = detail::open_csv(ctx, "tau_scan.csv");
        os << "seed,config_hash,tau_theta,eta,replicate,target_iteration,target_updates,"
              "censored,diverged,final_accuracy\n";
        for (std::size_t ci = 0; ci < cells.size(); ++ci) {
            const Cell& cell = cells[ci];
            const detail::TrainRun& r = results[ci];
            os << ctx.seed << "," << hash << "," << cell.tau << ","
               << detail::fmt_double(cell.eta) << "," << cell.replicate << ","
               << (r.trace.reached_target ? r.trace.target_iteration : base.max_iterations) << ","
               << (r.trace.reached_target ? r.trace.target_updates
                                          : base.max_iterations / cell.tau)
               << "," << (r.trace.reached_target ? 0 : 1) << "," << (r.trace.diverged ? 1 : 0)
               << "," << detail::fmt_double(r.final_accuracy) << "\n";
        }
    }
    auto os = detail::open_csv(ctx, "tau_scan_summary.csv");
    os << "seed,config_hash,tau_theta,best_eta,median_updates,median_iterations,"
          "censored_count\n";
    for (long tau : tau_list) {
        double best_eta = eta_list.front();
        double best_updates = 1e300;
        double best_iters = 0.0;
        long best_censored = 0;
        for (double eta : eta_list) {
            std::vector<double> ups, its;
            long censored = 0;
            for (std::size_t ci = 0; ci < cells.size(); ++ci) {
                const Cell& cell = cells[ci];
                if (cell.tau != tau || cell.eta != eta) continue;
                const detail::TrainRun& r = results[ci];
                if (r.trace.reached_target) {
                    ups.push_back(static_cast<double>(r.trace.target_updates));
                    its.push_back(static_cast<double>(r.trace.target_iteration));
                } else {
                    ups.push_back(static_cast<double>(base.max_iterations / tau));
                    its.push_back(static_cast<double>(base.max_iterations));
                    ++censored;
                }
            }
            double med = detail::quartiles(ups).median;
            if (med < best_updates) {
                best_updates = med;
                best_iters = detail::quartiles(its).median;
                best_eta = eta;
                best_censored = censored;
            }
        }
        os << ctx.seed << "," << hash << "," << tau << "," << detail::fmt_double(best_eta) << ","
           << detail::fmt_double(best_updates) << "," << detail::fmt_double(best_iters) << ","
           << best_censored << "\n";
    }
}

/// Optimizer comparison (vanilla vs Adam) at fixed tau_theta and warmup.
inline void run_adam_scan(const ExperimentContext& ctx) {
    const FlatConfig& cfg = ctx.cfg;
    const std::string hash = cfg.hash_hex();
    std::vector<std::string> optimizers = cfg.get_string_list("optimizers", "vanilla,adam");
    std::vector<double> eta_list = cfg.get_double_list("eta_list", "0.003,0.01,0.03,0.1");
    long replicates = cfg.get_long("replicates", 5);
    int classes = static_cast<int>(cfg.get_long("classes", 2));
    std::string mode = cfg.get_string("mode", "weight");

    Dataset train_full = subset_classes(detail::load_split(ctx, true), classes);
    Dataset test_full = subset_classes(detail::load_split(ctx, false), classes);
    Batch train, test;
    for (std::size_t i = 0; i < train_full.size(); ++i) train.push_back(dataset_sample(train_full, i));
    for (std::size_t i = 0; i < test_full.size(); ++i) test.push_back(dataset_sample(test_full, i));

    struct Cell {
        std::string optimizer;
        double eta;
        long replicate;
    };
    std::vector<Cell> cells;
    for (const std::string& o : optimizers)
        for (double eta : eta_list)
            for (long r = 0; r < replicates; ++r) cells.push_back({o, eta, r});
    std::vector<detail::TrainRun> results(cells.size());
    MgdConfig base = detail::base_train_config(ctx);
    if (!cfg.has("tau_theta")) base.tau_theta = 1000;
    if (!cfg.has("warmup")) base.warmup = 1000;

    detail::parallel_cells(cells.size(), ctx.workers, [&](std::size_t ci) {
        const Cell& cell = cells[ci];
        std::uint64_t cell_seed = detail::mix_seed(ctx.seed, 4000 + ci);
        NetworkModel net = detail::build_scan_network(cfg, classes, cell_seed);
        MgdConfig mc = base;
        mc.mode = detail::parse_mode(mode);
        mc.eta = cell.eta;
        mc.seed = cell_seed;
        if (cell.optimizer == "vanilla") mc.optimizer.kind = OptimizerKind::Vanilla;
        else if (cell.optimizer == "momentum") mc.optimizer.kind = OptimizerKind::Momentum;
        else if (cell.optimizer == "adam") mc.optimizer.kind = OptimizerKind::Adam;
        else throw std::runtime_error("unknown optimizer '" + cell.optimizer + "'");
        results[ci] = detail::run_one_training(ctx, mode, net, train, test, mc);
    });

    {
        auto os = detail::open_csv(ctx, "adam_scan.csv");
        os << "seed,config_hash,optimizer,eta,replicate,target_iteration,target_updates,"
              "censored,diverged,final_accuracy\n";
        for (std::size_t ci = 0; ci < cells.size(); ++ci) {
            const Cell& cell = cells[ci];
            const detail::TrainRun& r = results[ci];
            os << ctx.seed << "," << hash << "," << cell.optimizer << ","
               << detail::fmt_double(cell.eta) << "," << cell.replicate << ","
               << (r.trace.reached_target ? r.trace.target_iteration : base.max_iterations) << ","
               << (r.trace.reached_target ? r.trace.target_updates
                                          : base.max_iterations / base.tau_theta)
               << "," << (r.trace.reached_target ? 0 : 1) << "," << (r.trace.diverged ? 1 : 0)
               << "," << detail::fmt_double(r.final_accuracy) << "\n";
        }
    }
    auto os = detail::open_csv(ctx, "adam_scan_summary.csv");
    os << "seed,config_hash,optimizer,best_eta,median_updates,censored_count,diverged_count\n";
    for (const std::string& o : optimizers) {
        double best_eta = eta_list.front();
        double best_updates = 1e300;
        long best_censored = 0, best_diverged = 0;
        for (double eta : eta_list) {
            std::vector<double> ups;
            long censored = 0, diverged = 0;
            for (std::size_t ci = 0; ci < cells.size(); ++ci) {
                const Cell& cell = cells[ci];
                if (cell.optimizer != o || cell.eta != eta) continue;
                const detail::TrainRun& r = results[ci];
                if (r.trace.diverged) {
                    ++diverged;  // flagged, excluded from best-eta scoring
                    ups.push_back(1e15);
                    continue;
                }
                if (r.trace.reached_target)
                    ups.push_back(static_cast<double>(r.trace.target_updates));
                else {
                    ups.push_back(static_cast<double>(base.max_iterations / base.tau_theta));
                    ++censored;
                }
            }
            double med = detail::quartiles(ups).median;
            if (med < best_updates) {
                best_updates = med;
                best_eta = eta;
                best_censored = censored;
                best_diverged = diverged;
            }
        }
        os << ctx.seed << "," << hash << "," << o << "," << detail::fmt_double(best_eta) << ","
           << detail::fmt_double(best_updates) << "," << best_censored << "," << best_diverged
           << "\n";
    }
}

/// Moment-verification grids; thin wrapper over verify_moments plus the
/// exact small-instance enumeration.
inline void run_moments(const ExperimentContext& ctx) {
    const FlatConfig& cfg = ctx.cfg;
    const std::string hash = cfg.hash_hex();
    std::vector<long> k_list = cfg.get_long_list("k_list", "1,8,64");
    std::vector<long> tau_list = cfg.get_long_list("tau_list", "1,8,64");
    double delta = cfg.get_double("delta", 1e-3);
    long trials = cfg.get_long("trials", 100000);
    std::string grad_spec = cfg.get_string("gradient", "random");
    bool brute_force = cfg.get_bool("brute_force", true);

    struct Cell {
        long k, tau;
    };
    std::vector<Cell> cells;
    for (long k : k_list)
        for (long tau : tau_list) cells.push_back({k, tau});

    struct CellResult {
        MomentReport report;
        double norm_ratio_emp = 0.0, norm_ratio_pred = 0.0;
        double brute_err = -1.0;  // max abs deviation from closed form, if run
    };
    std::vector<CellResult> results(cells.size());

    detail::parallel_cells(cells.size(), ctx.workers, [&](std::size_t ci) {
        const Cell& cell = cells[ci];
        std::uint64_t cell_seed = detail::mix_seed(ctx.seed, 5000 + ci);
        LinearTask task =
            grad_spec == "zero" ? make_linear_task_zero(static_cast<std::size_t>(cell.k))
            : grad_spec == "basis" ? make_linear_task_basis(static_cast<std::size_t>(cell.k), 0)
                                   : make_linear_task_random(static_cast<std::size_t>(cell.k),
                                                             detail::mix_seed(cell_seed, 7));
        CellResult res;
        res.report = verify_moments(task.gradient, cell.tau, delta, trials, cell_seed);
        double gn2 = 0.0, en2 = 0.0;
        for (std::size_t m = 0; m < task.gradient.size(); ++m) {
            gn2 += task.gradient[m] * task.gradient[m];
            en2 += res.report.empirical_cov[m][m] +
                   res.report.empirical_mean[m] * res.report.empirical_mean[m];
        }
        res.norm_ratio_emp = gn2 > 0.0 ? en2 / gn2 : 0.0;
        res.norm_ratio_pred = norm_bias_factor(cell.k, cell.tau);
        if (brute_force && cell.k * cell.tau <= 16) {
            ExactMoments exact = enumerate_moments(task.gradient, cell.tau, delta);
            auto pred_cov = bernoulli_covariance(task.gradient, cell.tau);
            double err = 0.0;
            for (std::size_t m = 0; m < task.gradient.size(); ++m) {
                err = std::max(err, std::abs(exact.mean[m] - task.gradient[m]));
                for (std::size_t n = 0; n < task.gradient.size(); ++n)
                    err = std::max(err, std::abs(exact.cov[m][n] - pred_cov[m][n]));
            }
            res.brute_err = err;
        }
        results[ci] = res;
    });

    for (std::size_t ci = 0; ci < cells.size(); ++ci) {
        std::ostringstream name;
        name << "moments_K" << cells[ci].k << "_tau" << cells[ci].tau << ".csv";
        auto os = detail::open_csv(ctx, name.str());
        results[ci].report.to_csv(os);
    }
    auto os = detail::open_csv(ctx, "moments_summary.csv");
    os << "seed,config_hash,K,tau,trials,max_abs_mean_z,max_abs_cov_z,norm_ratio_empirical,"
          "norm_ratio_predicted,brute_force_max_err\n";
    for (std::size_t ci = 0; ci < cells.size(); ++ci) {
        const CellResult& r = results[ci];
        double mz = 0.0, cz = 0.0;
        for (double z : r.report.mean_z) mz = std::max(mz, std::abs(z));
        for (const auto& row : r.report.cov_z)
            for (double z : row) cz = std::max(cz, std::abs(z));
        os << ctx.seed << "," << hash << "," << cells[ci].k << "," << cells[ci].tau << ","
           << r.report.trials << "," << detail::fmt_double(mz) << "," << detail::fmt_double(cz)
           << "," << detail::fmt_double(r.norm_ratio_emp) << ","
           << detail::fmt_double(r.norm_ratio_pred) << "," << detail::fmt_double(r.brute_err)
           << "\n";
    }
}

}  // namespace mgd

#endif
