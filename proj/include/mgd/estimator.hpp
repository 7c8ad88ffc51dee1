#ifndef MGD_ESTIMATOR_HPP
#define MGD_ESTIMATOR_HPP

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ostream>
#include <span>
#include <stdexcept>
#include <vector>

#include "mgd/network.hpp"
#include "mgd/perturb.hpp"

namespace mgd {

/// How the accumulated sum is turned into a gradient estimate.
///  - Unbiased:    divide by steps * delta^2; expectation equals the true
///                 gradient (the form the moment formulas describe)
///  - GammaScaled: divide by Gamma = delta^2 sqrt(K) sqrt(1 + (K-1)/tau)
///  - RawSum:      no division; the scale folds into the learning rate
enum class Normalization { Unbiased, GammaScaled, RawSum };

inline double norm_bias_factor(long k, long tau) {
    if (k < 1 || tau < 1) throw std::invalid_argument("norm_bias_factor: K and tau must be >= 1");
    return 1.0 + static_cast<double>(k - 1) / static_cast<double>(tau);
}

inline double gamma_normalization(double delta, long k, long tau) {
    return delta * delta * std::sqrt(static_cast<double>(k)) *
           std::sqrt(norm_bias_factor(k, tau));
}

/// Running sum implementing the G estimator. In node mode the sum is held
/// over weight coordinates: each accumulate applies the one-layer chain
/// rule (node delta times cached layer input) before adding.
class GradientAccumulator {
  public:
    /// Weight-mode accumulator over `dim` coordinates; no network needed.
    GradientAccumulator(std::size_t dim, double delta,
                        Normalization norm = Normalization::Unbiased)
        : mode_(PerturbMode::Weight), dim_(dim), site_count_(dim), delta_(delta), norm_(norm),
          sum_(dim, 0.0) {
        if (dim < 1) throw std::invalid_argument("accumulator: empty dimension");
        if (!(delta > 0.0)) throw std::invalid_argument("accumulator: delta must be positive");
    }

    /// Accumulator bound to a network; mode picks weight or node sites.
    GradientAccumulator(const NetworkModel& net, PerturbMode mode, double delta,
                        Normalization norm = Normalization::Unbiased)
        : mode_(mode), net_(&net), dim_(net.param_count()),
          site_count_(bind_sites(net, mode).count), delta_(delta), norm_(norm),
          sum_(net.param_count(), 0.0) {
        if (!(delta > 0.0)) throw std::invalid_argument("accumulator: delta must be positive");
    }

    PerturbMode mode() const { return mode_; }
    long steps() const { return steps_; }
    std::size_t site_count() const { return site_count_; }
    double delta() const { return delta_; }
    Normalization normalization() const { return norm_; }

    void reset() {
        sum_.assign(sum_.size(), 0.0);
        steps_ = 0;
    }

    /// Weight mode: adds dC * theta_i to coordinate i.
    void accumulate(double d_cost, const PerturbationVector& theta) {
        if (mode_ != PerturbMode::Weight)
            throw std::invalid_argument("accumulate: node mode requires an activation cache");
        check_theta(theta);
        if (d_cost != 0.0)
            for (std::size_t i = 0; i < dim_; ++i) sum_[i] += d_cost * theta.values[i];
        ++steps_;
    }

    /// Node mode, single sample: adds dC * theta_k * x_j to the sum for
    /// weight w_kj and dC * theta_k to the sum for bias b_k.
    void accumulate(double d_cost, const PerturbationVector& theta,
                    const ActivationCache& cache) {
        accumulate(std::span<const double>(&d_cost, 1), theta,
                   std::span<const ActivationCache>(&cache, 1));
    }

    /// Node mode over a minibatch: per-sample cost changes with per-sample
    /// caches, averaged. Counts as one step.
    void accumulate(std::span<const double> d_costs, const PerturbationVector& theta,
                    std::span<const ActivationCache> caches) {
        if (mode_ != PerturbMode::Node)
            throw std::invalid_argument("accumulate: accumulator is in weight mode");
        if (!net_) throw std::logic_error("accumulate: no network bound");
        if (d_costs.size() != caches.size() || d_costs.empty())
            throw std::invalid_argument("accumulate: cost/cache count mismatch");
        check_theta(theta);
        const double inv_t = 1.0 / static_cast<double>(d_costs.size());
        for (std::size_t t = 0; t < d_costs.size(); ++t) {
            double dc = d_costs[t] * inv_t;
            if (dc == 0.0) continue;
            add_node_terms(dc, theta, caches[t]);
        }
        ++steps_;
    }

    /// Normalized gradient estimate over the weight coordinates.
    std::vector<double> finalize() const {
        if (steps_ < 1) throw std::invalid_argument("finalize: no steps accumulated");
        double scale = 1.0;
        switch (norm_) {
            case Normalization::Unbiased:
                scale = 1.0 / (static_cast<double>(steps_) * delta_ * delta_);
                break;
            case Normalization::GammaScaled:
                scale = 1.0 / gamma_normalization(delta_, static_cast<long>(site_count_), steps_);
                break;
            case Normalization::RawSum:
                break;
        }
        std::vector<double> g(sum_);
        for (double& v : g) v *= scale;
        return g;
    }

  private:
    void check_theta(const PerturbationVector& theta) const {
        if (theta.mode != mode_ || theta.values.size() != site_count_)
            throw std::invalid_argument("accumulate: perturbation site-set mismatch");
    }

    void add_node_terms(double dc, const PerturbationVector& theta, const ActivationCache& cache) {
        const NetworkModel& net = *net_;
        if (cache.inputs.size() != static_cast<std::size_t>(net.layer_count()))
            throw std::invalid_argument("accumulate: cache layer count mismatch");
        for (int l = 0; l < net.layer_count(); ++l) {
            const LayerSpec& spec = net.layer(l);
            if (spec.kind == LayerKind::MaxPool2x2) continue;
            const LayerLayout& lay = net.layer_layout(l);
            const auto& pr = net.index().layer_range(l);
            const Tensor& in = cache.inputs[static_cast<std::size_t>(l)];
            const double* th = theta.values.data() + lay.node_offset;
            double* gw = sum_.data() + pr.weight_offset;
            double* gb = sum_.data() + pr.bias_offset;
            if (spec.kind == LayerKind::Conv3x3) {
                const int H = lay.in_h, W = lay.in_w, Ci = lay.in_c, Co = lay.out_c;
                for (int y = 0; y < H; ++y)
                    for (int x = 0; x < W; ++x)
                        for (int co = 0; co < Co; ++co) {
                            double d = dc * th[(static_cast<std::size_t>(y) * W + x) * Co + co];
                            if (spec.has_bias) gb[co] += d;
                            for (int ky = 0; ky < 3; ++ky) {
                                int iy = y + ky - 1;
                                if (iy < 0 || iy >= H) continue;
                                for (int kx = 0; kx < 3; ++kx) {
                                    int ix = x + kx - 1;
                                    if (ix < 0 || ix >= W) continue;
                                    for (int ci = 0; ci < Ci; ++ci)
                                        gw[(static_cast<std::size_t>(co) * Ci + ci) * 9 +
                                           static_cast<std::size_t>(ky) * 3 + kx] +=
                                            d * in.values[(static_cast<std::size_t>(iy) * W + ix) * Ci + ci];
                                }
                            }
                        }
            } else {  // Dense
                const std::size_t In = in.size();
                for (int o = 0; o < lay.out_c; ++o) {
                    double d = dc * th[o];
                    if (spec.has_bias) gb[o] += d;
                    double* gwrow = gw + static_cast<std::size_t>(o) * In;
                    for (std::size_t i = 0; i < In; ++i) gwrow[i] += d * in.values[i];
                }
            }
        }
    }

    PerturbMode mode_;
    const NetworkModel* net_ = nullptr;
    std::size_t dim_;
    std::size_t site_count_;
    double delta_;
    Normalization norm_;
    std::vector<double> sum_;
    long steps_ = 0;
};

inline double cosine_alignment(const std::vector<double>& g, const std::vector<double>& grad) {
    double ng = norm(g), nd = norm(grad);
    if (ng == 0.0 || nd == 0.0)
        throw std::invalid_argument("cosine_alignment: zero-norm input");
    return dot(g, grad) / (ng * nd);
}

/// Empirical vs predicted first and second moments of G on a linear cost.
struct MomentReport {
    std::vector<double> empirical_mean;
    std::vector<double> predicted_mean;
    std::vector<double> mean_z;                    // per entry
    std::vector<std::vector<double>> empirical_cov;
    std::vector<std::vector<double>> predicted_cov;
    std::vector<std::vector<double>> cov_z;
    long trials = 0;

    /// Columns: entry id, empirical, predicted, z-score.
    void to_csv(std::ostream& os) const {
        os << "entry,empirical,predicted,zscore\n";
        char buf[128];
        const std::size_t k = empirical_mean.size();
        for (std::size_t m = 0; m < k; ++m) {
            std::snprintf(buf, sizeof(buf), "mean_%zu,%.17g,%.17g,%.17g\n", m, empirical_mean[m],
                          predicted_mean[m], mean_z[m]);
            os << buf;
        }
        for (std::size_t m = 0; m < k; ++m)
            for (std::size_t n = m; n < k; ++n) {
                std::snprintf(buf, sizeof(buf), "cov_%zu_%zu,%.17g,%.17g,%.17g\n", m, n,
                              empirical_cov[m][n], predicted_cov[m][n], cov_z[m][n]);
                os << buf;
            }
    }
};

/// Closed-form covariance of the Bernoulli-perturbation estimator (sigma = alpha = delta):
/// diagonal (1/tau) sum_{mu != m} g_mu^2, off-diagonal (1/tau) g_m g_n.
inline std::vector<std::vector<double>> bernoulli_covariance(const std::vector<double>& g,
                                                             long tau) {
    const std::size_t k = g.size();
    double sumsq = 0.0;
    for (double v : g) sumsq += v * v;
    std::vector<std::vector<double>> cov(k, std::vector<double>(k, 0.0));
    for (std::size_t m = 0; m < k; ++m)
        for (std::size_t n = 0; n < k; ++n)
            cov[m][n] = (m == n ? (sumsq - g[m] * g[m]) : g[m] * g[n]) /
                        static_cast<double>(tau);
    return cov;
}

/// Monte Carlo check of the estimator moments on an exactly linear cost
/// C(Theta) = g . Theta. Uses Unbiased normalization.
inline MomentReport verify_moments(const std::vector<double>& gradient, long tau, double delta,
                                   long trials, std::uint64_t seed) {
    if (tau < 1) throw std::invalid_argument("verify_moments: tau must be >= 1");
    if (trials < 1000) throw std::invalid_argument("verify_moments: need at least 1000 trials");
    const std::size_t k = gradient.size();
    SiteSet sites{PerturbMode::Weight, k};
    PerturbationStream stream(sites, delta, seed);
    GradientAccumulator acc(k, delta, Normalization::Unbiased);

    std::vector<double> sum(k, 0.0);
    std::vector<std::vector<double>> sum2(k, std::vector<double>(k, 0.0));
    std::vector<std::vector<double>> sum4(k, std::vector<double>(k, 0.0));
    for (long r = 0; r < trials; ++r) {
        acc.reset();
        for (long t = 0; t < tau; ++t) {
            PerturbationVector theta = stream.sample();
            acc.accumulate(dot(gradient, theta.values), theta);
        }
        std::vector<double> g = acc.finalize();
        for (std::size_t m = 0; m < k; ++m) {
            sum[m] += g[m];
            for (std::size_t n = m; n < k; ++n) {
                double p = g[m] * g[n];
                sum2[m][n] += p;
                sum4[m][n] += p * p;
            }
        }
    }

    MomentReport rep;
    rep.trials = trials;
    rep.predicted_mean = gradient;
    rep.predicted_cov = bernoulli_covariance(gradient, tau);
    rep.empirical_mean.resize(k);
    rep.mean_z.resize(k);
    rep.empirical_cov.assign(k, std::vector<double>(k, 0.0));
    rep.cov_z.assign(k, std::vector<double>(k, 0.0));
    const double nt = static_cast<double>(trials);
    for (std::size_t m = 0; m < k; ++m) {
        rep.empirical_mean[m] = sum[m] / nt;
        double se = std::sqrt(rep.predicted_cov[m][m] / nt);
        rep.mean_z[m] = se > 0.0 ? (rep.empirical_mean[m] - gradient[m]) / se : 0.0;
    }
    for (std::size_t m = 0; m < k; ++m)
        for (std::size_t n = m; n < k; ++n) {
            double mean_p = sum2[m][n] / nt;
            double cov = mean_p - rep.empirical_mean[m] * rep.empirical_mean[n];
            double var_p = sum4[m][n] / nt - mean_p * mean_p;
            double se = std::sqrt(std::max(var_p, 0.0) / nt);
            double z = se > 0.0 ? (cov - rep.predicted_cov[m][n]) / se : 0.0;
            rep.empirical_cov[m][n] = rep.empirical_cov[n][m] = cov;
            rep.cov_z[m][n] = rep.cov_z[n][m] = z;
        }
    return rep;
}

/// Exact moments of G by exhaustive enumeration of all 2^(K*tau)
/// equiprobable perturbation histories. Small instances only.
struct ExactMoments {
    std::vector<double> mean;
    std::vector<std::vector<double>> cov;
};

inline ExactMoments enumerate_moments(const std::vector<double>& gradient, long tau,
                                      double delta) {
    const std::size_t k = gradient.size();
    const long bits = static_cast<long>(k) * tau;
    if (bits > 24) throw std::invalid_argument("enumerate_moments: instance too large");
    const std::uint64_t histories = 1ull << bits;
    std::vector<double> mean(k, 0.0);
    std::vector<std::vector<double>> second(k, std::vector<double>(k, 0.0));
    std::vector<double> g(k);
    for (std::uint64_t h = 0; h < histories; ++h) {
        std::fill(g.begin(), g.end(), 0.0);
        for (long t = 0; t < tau; ++t) {
            double dc = 0.0;
            for (std::size_t m = 0; m < k; ++m) {
                double th = ((h >> (static_cast<std::size_t>(t) * k + m)) & 1u) ? delta : -delta;
                dc += gradient[m] * th;
            }
            for (std::size_t m = 0; m < k; ++m) {
                double th = ((h >> (static_cast<std::size_t>(t) * k + m)) & 1u) ? delta : -delta;
                g[m] += dc * th;
            }
        }
        double scale = 1.0 / (static_cast<double>(tau) * delta * delta);
        for (std::size_t m = 0; m < k; ++m) g[m] *= scale;
        for (std::size_t m = 0; m < k; ++m) {
            mean[m] += g[m];
            for (std::size_t n = 0; n < k; ++n) second[m][n] += g[m] * g[n];
        }
    }
    const double w = 1.0 / static_cast<double>(histories);
    ExactMoments out;
    out.mean.resize(k);
    out.cov.assign(k, std::vector<double>(k, 0.0));
    for (std::size_t m = 0; m < k; ++m) out.mean[m] = mean[m] * w;
    for (std::size_t m = 0; m < k; ++m)
        for (std::size_t n = 0; n < k; ++n)
            out.cov[m][n] = second[m][n] * w - out.mean[m] * out.mean[n];
    return out;
}

}  // namespace mgd

#endif
