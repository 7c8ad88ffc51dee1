#ifndef MGD_NETWORK_HPP
#define MGD_NETWORK_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "mgd/perturb.hpp"
#include "mgd/tensor.hpp"

namespace mgd {

enum class LayerKind { Conv3x3, MaxPool2x2, Dense };
enum class Activation { ReLU, Identity };

/// Conv3x3 is stride 1 with zero padding 1 ("same" spatial size).
/// MaxPool2x2 is stride 2 with floor division of the spatial dims.
struct LayerSpec {
    LayerKind kind = LayerKind::Dense;
    int in_size = 0;   // channels for conv, features for dense
    int out_size = 0;
    Activation activation = Activation::Identity;
    bool has_bias = true;
};

enum class ParamRole { Weight, Bias };

struct ParamLoc {
    int layer = 0;
    ParamRole role = ParamRole::Weight;
    std::size_t offset = 0;  // within-layer, within-role
};

/// Bijective map between flat parameter indices and (layer, role, offset).
/// The flat layout is fixed: layers in order, weights before biases.
class ParamIndex {
  public:
    struct Range {
        std::size_t weight_offset = 0, weight_count = 0;
        std::size_t bias_offset = 0, bias_count = 0;
    };

    void add_layer(std::size_t weight_count, std::size_t bias_count) {
        Range r;
        r.weight_offset = total_;
        r.weight_count = weight_count;
        r.bias_offset = total_ + weight_count;
        r.bias_count = bias_count;
        ranges_.push_back(r);
        total_ += weight_count + bias_count;
    }

    std::size_t total() const { return total_; }
    int layer_count() const { return static_cast<int>(ranges_.size()); }
    const Range& layer_range(int l) const { return ranges_.at(static_cast<std::size_t>(l)); }

    ParamLoc locate(std::size_t flat) const {
        if (flat >= total_) throw std::out_of_range("param index: flat index out of range");
        for (int l = 0; l < layer_count(); ++l) {
            const Range& r = ranges_[static_cast<std::size_t>(l)];
            if (flat < r.bias_offset)
                return {l, ParamRole::Weight, flat - r.weight_offset};
            if (flat < r.bias_offset + r.bias_count)
                return {l, ParamRole::Bias, flat - r.bias_offset};
        }
        throw std::logic_error("param index: unreachable");
    }

    std::size_t flat_of(int layer, ParamRole role, std::size_t offset) const {
        const Range& r = layer_range(layer);
        if (role == ParamRole::Weight) {
            if (offset >= r.weight_count) throw std::out_of_range("param index: weight offset");
            return r.weight_offset + offset;
        }
        if (offset >= r.bias_count) throw std::out_of_range("param index: bias offset");
        return r.bias_offset + offset;
    }

  private:
    std::vector<Range> ranges_;
    std::size_t total_ = 0;
};

/// Per-layer spatial bookkeeping plus the node-site layout used by node
/// perturbation. Node sites cover conv outputs (H*W*C), dense outputs,
/// and nothing for maxpool.
struct LayerLayout {
    int in_h = 1, in_w = 1, in_c = 0;
    int out_h = 1, out_w = 1, out_c = 0;
    std::size_t node_offset = 0, node_count = 0;
};

/// Inputs x^(l) fed to each layer, recorded on an unperturbed forward pass.
struct ActivationCache {
    std::vector<Tensor> inputs;
};

struct Sample {
    Tensor input;
    int label = -1;
    std::vector<double> target;  // empty: use one-hot(label)
};

using Batch = std::vector<Sample>;

enum class Residual { CrossEntropy, MeanSquaredError };

class NetworkModel {
  public:
    NetworkModel() = default;

    /// Builds the layer stack, computes the flat parameter and node-site
    /// layouts, and initializes weights uniform in
    /// +/- sqrt(6 / (fan_in + fan_out)), biases zero.
    NetworkModel(std::vector<LayerSpec> layers, int input_h, int input_w, int input_c,
                 std::uint64_t seed)
        : layers_(std::move(layers)), input_h_(input_h), input_w_(input_w), input_c_(input_c) {
        if (layers_.empty()) throw std::invalid_argument("network: no layers");
        int h = input_h, w = input_w, c = input_c;
        std::size_t node_total = 0;
        for (const LayerSpec& spec : layers_) {
            LayerLayout lay;
            lay.in_h = h;
            lay.in_w = w;
            lay.in_c = c;
            std::size_t wcount = 0, bcount = 0;
            switch (spec.kind) {
                case LayerKind::Conv3x3:
                    if (spec.in_size != c)
                        throw std::invalid_argument("network: conv in_channels mismatch");
                    lay.out_h = h;
                    lay.out_w = w;
                    lay.out_c = spec.out_size;
                    wcount = 9u * static_cast<std::size_t>(spec.in_size) *
                             static_cast<std::size_t>(spec.out_size);
                    bcount = spec.has_bias ? static_cast<std::size_t>(spec.out_size) : 0;
                    lay.node_count = static_cast<std::size_t>(lay.out_h) * lay.out_w * lay.out_c;
                    break;
                case LayerKind::MaxPool2x2:
                    lay.out_h = h / 2;
                    lay.out_w = w / 2;
                    lay.out_c = c;
                    if (lay.out_h < 1 || lay.out_w < 1)
                        throw std::invalid_argument("network: maxpool input too small");
                    lay.node_count = 0;
                    break;
                case LayerKind::Dense: {
                    std::size_t flat_in = static_cast<std::size_t>(h) * w * c;
                    if (static_cast<std::size_t>(spec.in_size) != flat_in)
                        throw std::invalid_argument("network: dense in_features mismatch");
                    lay.out_h = 1;
                    lay.out_w = 1;
                    lay.out_c = spec.out_size;
                    wcount = flat_in * static_cast<std::size_t>(spec.out_size);
                    bcount = spec.has_bias ? static_cast<std::size_t>(spec.out_size) : 0;
                    lay.node_count = static_cast<std::size_t>(spec.out_size);
                    break;
                }
            }
            lay.node_offset = node_total;
            node_total += lay.node_count;
            index_.add_layer(wcount, bcount);
            layout_.push_back(lay);
            h = lay.out_h;
            w = lay.out_w;
            c = lay.out_c;
        }
        node_count_ = node_total;
        params_.assign(index_.total(), 0.0);
        init_params(seed);
    }

    int layer_count() const { return static_cast<int>(layers_.size()); }
    const LayerSpec& layer(int l) const { return layers_.at(static_cast<std::size_t>(l)); }
    const LayerLayout& layer_layout(int l) const { return layout_.at(static_cast<std::size_t>(l)); }
    const ParamIndex& index() const { return index_; }

    std::size_t param_count() const { return params_.size(); }
    std::size_t node_count() const { return node_count_; }
    std::size_t layer_param_count(int l) const {
        const auto& r = index_.layer_range(l);
        return r.weight_count + r.bias_count;
    }
    std::size_t layer_node_count(int l) const { return layer_layout(l).node_count; }

    const std::vector<double>& params() const { return params_; }
    std::vector<double>& mutable_params() { return params_; }

    int input_h() const { return input_h_; }
    int input_w() const { return input_w_; }
    int input_c() const { return input_c_; }
    int output_size() const { return layout_.back().out_c; }

    /// Evaluates the network. Weight mode evaluates f(x; W + Theta); node
    /// mode adds theta_k to each pre-activation before the nonlinearity.
    /// The cache is populated only on unperturbed passes.
    Tensor forward(const Tensor& x, const PerturbationVector* pert = nullptr,
                   ActivationCache* cache = nullptr) const {
        check_input(x);
        check_perturbation(pert);
        const double* p = params_.data();
        std::vector<double> perturbed;
        if (pert && pert->mode == PerturbMode::Weight) {
            perturbed.resize(params_.size());
            for (std::size_t i = 0; i < params_.size(); ++i)
                perturbed[i] = params_[i] + pert->values[i];
            p = perturbed.data();
        }
        const bool node_pert = pert && pert->mode == PerturbMode::Node;
        if (cache && pert) cache = nullptr;
        if (cache) {
            cache->inputs.clear();
            cache->inputs.reserve(layers_.size());
        }
        Tensor cur = x;
        for (int l = 0; l < layer_count(); ++l) {
            if (cache) cache->inputs.push_back(cur);
            cur = eval_layer(l, cur, p, node_pert ? pert : nullptr, nullptr, nullptr);
        }
        return cur;
    }

    /// Like forward but returns every layer output; test instrumentation.
    std::vector<Tensor> forward_collect(const Tensor& x,
                                        const PerturbationVector* pert = nullptr) const {
        check_input(x);
        check_perturbation(pert);
        const double* p = params_.data();
        std::vector<double> perturbed;
        if (pert && pert->mode == PerturbMode::Weight) {
            perturbed.resize(params_.size());
            for (std::size_t i = 0; i < params_.size(); ++i)
                perturbed[i] = params_[i] + pert->values[i];
            p = perturbed.data();
        }
        const bool node_pert = pert && pert->mode == PerturbMode::Node;
        std::vector<Tensor> outs;
        Tensor cur = x;
        for (int l = 0; l < layer_count(); ++l) {
            cur = eval_layer(l, cur, p, node_pert ? pert : nullptr, nullptr, nullptr);
            outs.push_back(cur);
        }
        return outs;
    }

    /// Forward pass retaining everything backprop needs.
    struct BackpropTrace {
        std::vector<Tensor> inputs;          // input to each layer
        std::vector<Tensor> preactivations;  // conv/dense only (empty for pool)
        std::vector<std::vector<int>> pool_argmax;
        Tensor output;
    };

    BackpropTrace forward_traced(const Tensor& x) const {
        check_input(x);
        BackpropTrace tr;
        tr.inputs.reserve(layers_.size());
        tr.preactivations.resize(layers_.size());
        tr.pool_argmax.resize(layers_.size());
        Tensor cur = x;
        for (int l = 0; l < layer_count(); ++l) {
            tr.inputs.push_back(cur);
            cur = eval_layer(l, cur, params_.data(), nullptr, &tr.preactivations[static_cast<std::size_t>(l)],
                             &tr.pool_argmax[static_cast<std::size_t>(l)]);
        }
        tr.output = cur;
        return tr;
    }

    /// Backward pass from an output gradient; accumulates dC/dW into grad
    /// (length param_count). Returns nothing else.
    void backward(const BackpropTrace& tr, std::vector<double> out_grad,
                  std::vector<double>& grad) const {
        if (grad.size() != param_count()) throw std::invalid_argument("backward: grad size");
        for (int l = layer_count() - 1; l >= 0; --l) {
            out_grad = backward_layer(l, tr, out_grad, grad);
        }
    }

  private:
    void init_params(std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        for (int l = 0; l < layer_count(); ++l) {
            const LayerSpec& spec = layers_[static_cast<std::size_t>(l)];
            if (spec.kind == LayerKind::MaxPool2x2) continue;
            const auto& r = index_.layer_range(l);
            double fan_in, fan_out;
            if (spec.kind == LayerKind::Conv3x3) {
                fan_in = 9.0 * spec.in_size;
                fan_out = 9.0 * spec.out_size;
            } else {
                fan_in = spec.in_size;
                fan_out = spec.out_size;
            }
            double bound = std::sqrt(6.0 / (fan_in + fan_out));
            std::uniform_real_distribution<double> dist(-bound, bound);
            for (std::size_t i = 0; i < r.weight_count; ++i)
                params_[r.weight_offset + i] = dist(rng);
            // biases stay zero
        }
    }

    void check_input(const Tensor& x) const {
        std::size_t expect = static_cast<std::size_t>(input_h_) * input_w_ * input_c_;
        if (x.size() != expect) throw std::invalid_argument("forward: input shape mismatch");
        if (!x.all_finite()) throw std::invalid_argument("forward: non-finite input");
    }

    void check_perturbation(const PerturbationVector* pert) const {
        if (!pert) return;
        std::size_t expect =
            pert->mode == PerturbMode::Weight ? param_count() : node_count_;
        if (pert->values.size() != expect)
            throw std::invalid_argument("forward: perturbation site-set mismatch");
    }

    static double activate(Activation a, double v) {
        return (a == Activation::ReLU && v < 0.0) ? 0.0 : v;
    }

    Tensor eval_layer(int l, const Tensor& in, const double* p,
                      const PerturbationVector* node_pert, Tensor* pre_out,
                      std::vector<int>* argmax_out) const {
        const LayerSpec& spec = layers_[static_cast<std::size_t>(l)];
        const LayerLayout& lay = layout_[static_cast<std::size_t>(l)];
        const auto& pr = index_.layer_range(l);
        const double* w = p + pr.weight_offset;
        const double* b = p + pr.bias_offset;
        Tensor out({lay.out_h, lay.out_w, lay.out_c});

        if (spec.kind == LayerKind::Conv3x3) {
            const int H = lay.in_h, W = lay.in_w, Ci = lay.in_c, Co = lay.out_c;
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x)
                    for (int co = 0; co < Co; ++co) {
                        double acc = spec.has_bias ? b[co] : 0.0;
                        for (int ky = 0; ky < 3; ++ky) {
                            int iy = y + ky - 1;
                            if (iy < 0 || iy >= H) continue;
                            for (int kx = 0; kx < 3; ++kx) {
                                int ix = x + kx - 1;
                                if (ix < 0 || ix >= W) continue;
                                const double* wrow = w + ((static_cast<std::size_t>(co) * Ci) * 9);
                                const double* inrow = in.values.data() +
                                                     (static_cast<std::size_t>(iy) * W + ix) * Ci;
                                for (int ci = 0; ci < Ci; ++ci)
                                    acc += wrow[static_cast<std::size_t>(ci) * 9 + ky * 3 + kx] *
                                           inrow[ci];
                            }
                        }
                        std::size_t o = (static_cast<std::size_t>(y) * W + x) * Co + co;
                        if (node_pert) acc += node_pert->values[lay.node_offset + o];
                        if (pre_out) {
                            if (pre_out->values.empty()) *pre_out = Tensor({lay.out_h, lay.out_w, lay.out_c});
                            pre_out->values[o] = acc;
                        }
                        out.values[o] = activate(spec.activation, acc);
                    }
        } else if (spec.kind == LayerKind::MaxPool2x2) {
            const int W = lay.in_w, C = lay.in_c;
            if (argmax_out) argmax_out->assign(out.size(), 0);
            for (int y = 0; y < lay.out_h; ++y)
                for (int x = 0; x < lay.out_w; ++x)
                    for (int c = 0; c < C; ++c) {
                        double best = -1e300;
                        int best_idx = 0;
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx) {
                                int idx = ((2 * y + dy) * W + (2 * x + dx)) * C + c;
                                double v = in.values[static_cast<std::size_t>(idx)];
                                if (v > best) {
                                    best = v;
                                    best_idx = idx;
                                }
                            }
                        std::size_t o = (static_cast<std::size_t>(y) * lay.out_w + x) * C + c;
                        out.values[o] = best;
                        if (argmax_out) (*argmax_out)[o] = best_idx;
                    }
        } else {  // Dense
            const std::size_t In = in.size();
            const int Out = lay.out_c;
            for (int o = 0; o < Out; ++o) {
                double acc = spec.has_bias ? b[o] : 0.0;
                const double* wrow = w + static_cast<std::size_t>(o) * In;
                for (std::size_t i = 0; i < In; ++i) acc += wrow[i] * in.values[i];
                if (node_pert) acc += node_pert->values[lay.node_offset + static_cast<std::size_t>(o)];
                if (pre_out) {
                    if (pre_out->values.empty()) *pre_out = Tensor({1, 1, Out});
                    pre_out->values[static_cast<std::size_t>(o)] = acc;
                }
                out.values[static_cast<std::size_t>(o)] = activate(spec.activation, acc);
            }
        }
        return out;
    }

    std::vector<double> backward_layer(int l, const BackpropTrace& tr,
                                       const std::vector<double>& dout,
                                       std::vector<double>& grad) const {
        const LayerSpec& spec = layers_[static_cast<std::size_t>(l)];
        const LayerLayout& lay = layout_[static_cast<std::size_t>(l)];
        const auto& pr = index_.layer_range(l);
        const Tensor& in = tr.inputs[static_cast<std::size_t>(l)];
        std::vector<double> din(in.size(), 0.0);

        if (spec.kind == LayerKind::MaxPool2x2) {
            const auto& argmax = tr.pool_argmax[static_cast<std::size_t>(l)];
            for (std::size_t o = 0; o < dout.size(); ++o)
                din[static_cast<std::size_t>(argmax[o])] += dout[o];
            return din;
        }

        // Activation derivative from the stored pre-activation.
        const Tensor& pre = tr.preactivations[static_cast<std::size_t>(l)];
        std::vector<double> delta(dout.size());
        for (std::size_t o = 0; o < dout.size(); ++o) {
            double d = dout[o];
            if (spec.activation == Activation::ReLU && pre.values[o] <= 0.0) d = 0.0;
            delta[o] = d;
        }

        double* gw = grad.data() + pr.weight_offset;
        double* gb = grad.data() + pr.bias_offset;
        const double* w = params_.data() + pr.weight_offset;

        if (spec.kind == LayerKind::Conv3x3) {
            const int H = lay.in_h, W = lay.in_w, Ci = lay.in_c, Co = lay.out_c;
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x)
                    for (int co = 0; co < Co; ++co) {
                        double d = delta[(static_cast<std::size_t>(y) * W + x) * Co + co];
                        if (d == 0.0) continue;
                        if (spec.has_bias) gb[co] += d;
                        for (int ky = 0; ky < 3; ++ky) {
                            int iy = y + ky - 1;
                            if (iy < 0 || iy >= H) continue;
                            for (int kx = 0; kx < 3; ++kx) {
                                int ix = x + kx - 1;
                                if (ix < 0 || ix >= W) continue;
                                for (int ci = 0; ci < Ci; ++ci) {
                                    std::size_t widx = (static_cast<std::size_t>(co) * Ci + ci) * 9 +
                                                       static_cast<std::size_t>(ky) * 3 + kx;
                                    std::size_t iidx = (static_cast<std::size_t>(iy) * W + ix) * Ci + ci;
                                    gw[widx] += d * in.values[iidx];
                                    din[iidx] += d * w[widx];
                                }
                            }
                        }
                    }
        } else {  // Dense
            const std::size_t In = in.size();
            const int Out = lay.out_c;
            for (int o = 0; o < Out; ++o) {
                double d = delta[static_cast<std::size_t>(o)];
                if (spec.has_bias) gb[o] += d;
                const double* wrow = w + static_cast<std::size_t>(o) * In;
                double* gwrow = gw + static_cast<std::size_t>(o) * In;
                for (std::size_t i = 0; i < In; ++i) {
                    gwrow[i] += d * in.values[i];
                    din[i] += d * wrow[i];
                }
            }
        }
        return din;
    }

    std::vector<LayerSpec> layers_;
    std::vector<LayerLayout> layout_;
    ParamIndex index_;
    std::vector<double> params_;
    std::size_t node_count_ = 0;
    int input_h_ = 1, input_w_ = 1, input_c_ = 1;
};

/// The 12-row conv/pool/dense stack parameterized by depth multiplier d.
inline NetworkModel build_network(int d, int num_classes, std::uint64_t seed = 0) {
    if (d < 1) throw std::invalid_argument("build_network: d must be >= 1");
    if (num_classes < 2 || num_classes > 10)
        throw std::invalid_argument("build_network: num_classes must be in [2, 10]");
    std::vector<LayerSpec> layers = {
        {LayerKind::Conv3x3, 1, d, Activation::ReLU, true},
        {LayerKind::Conv3x3, d, d, Activation::ReLU, true},
        {LayerKind::MaxPool2x2, 0, 0, Activation::Identity, false},
        {LayerKind::Conv3x3, d, 2 * d, Activation::ReLU, true},
        {LayerKind::Conv3x3, 2 * d, 2 * d, Activation::ReLU, true},
        {LayerKind::MaxPool2x2, 0, 0, Activation::Identity, false},
        {LayerKind::Conv3x3, 2 * d, 4 * d, Activation::ReLU, true},
        {LayerKind::Conv3x3, 4 * d, 4 * d, Activation::ReLU, true},
        {LayerKind::MaxPool2x2, 0, 0, Activation::Identity, false},
        {LayerKind::Dense, 36 * d, 4 * d, Activation::ReLU, true},
        {LayerKind::Dense, 4 * d, 4 * d, Activation::ReLU, true},
        {LayerKind::Dense, 4 * d, num_classes, Activation::Identity, true},
    };
    return NetworkModel(std::move(layers), 28, 28, 1, seed);
}

/// Plain MLP for desk-scale tests: ReLU hidden layers, identity output.
inline NetworkModel build_mlp(const std::vector<int>& sizes, std::uint64_t seed = 0,
                              bool has_bias = true) {
    if (sizes.size() < 2) throw std::invalid_argument("build_mlp: need at least input and output");
    std::vector<LayerSpec> layers;
    for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
        Activation act = (i + 2 == sizes.size()) ? Activation::Identity : Activation::ReLU;
        layers.push_back({LayerKind::Dense, sizes[i], sizes[i + 1], act, has_bias});
    }
    return NetworkModel(std::move(layers), 1, 1, sizes.front(), seed);
}

inline std::vector<double> one_hot(int label, int n) {
    if (label < 0 || label >= n) throw std::invalid_argument("one_hot: label out of range");
    std::vector<double> t(static_cast<std::size_t>(n), 0.0);
    t[static_cast<std::size_t>(label)] = 1.0;
    return t;
}

inline std::vector<double> sample_target(const Sample& s, int out_size) {
    if (!s.target.empty()) {
        if (s.target.size() != static_cast<std::size_t>(out_size))
            throw std::invalid_argument("sample target size mismatch");
        return s.target;
    }
    return one_hot(s.label, out_size);
}

/// Residual for one sample.
inline double residual_cost(const Tensor& yhat, const Sample& s, Residual res) {
    if (res == Residual::MeanSquaredError) {
        std::vector<double> t = sample_target(s, static_cast<int>(yhat.size()));
        double c = 0.0;
        for (std::size_t i = 0; i < yhat.size(); ++i) {
            double e = yhat.values[i] - t[i];
            c += e * e;
        }
        return c;
    }
    // softmax cross-entropy against the integer label
    if (s.label < 0 || static_cast<std::size_t>(s.label) >= yhat.size())
        throw std::invalid_argument("cross-entropy: bad label");
    double mx = *std::max_element(yhat.values.begin(), yhat.values.end());
    double z = 0.0;
    for (double v : yhat.values) z += std::exp(v - mx);
    return std::log(z) - (yhat.values[static_cast<std::size_t>(s.label)] - mx);
}

/// dC/dyhat for one sample (not yet divided by batch size).
inline std::vector<double> residual_grad(const Tensor& yhat, const Sample& s, Residual res) {
    std::vector<double> g(yhat.size());
    if (res == Residual::MeanSquaredError) {
        std::vector<double> t = sample_target(s, static_cast<int>(yhat.size()));
        for (std::size_t i = 0; i < yhat.size(); ++i) g[i] = 2.0 * (yhat.values[i] - t[i]);
        return g;
    }
    double mx = *std::max_element(yhat.values.begin(), yhat.values.end());
    double z = 0.0;
    for (double v : yhat.values) z += std::exp(v - mx);
    for (std::size_t i = 0; i < yhat.size(); ++i) g[i] = std::exp(yhat.values[i] - mx) / z;
    g[static_cast<std::size_t>(s.label)] -= 1.0;
    return g;
}

/// Mean residual over a batch of network outputs.
inline double compute_cost(const std::vector<Tensor>& yhat_batch, const Batch& batch,
                           Residual res = Residual::CrossEntropy) {
    if (batch.empty()) throw std::invalid_argument("compute_cost: empty batch");
    if (yhat_batch.size() != batch.size())
        throw std::invalid_argument("compute_cost: batch size mismatch");
    double c = 0.0;
    for (std::size_t t = 0; t < batch.size(); ++t)
        c += residual_cost(yhat_batch[t], batch[t], res);
    return c / static_cast<double>(batch.size());
}

/// Forward + cost in one go, optionally perturbed.
inline double batch_cost(const NetworkModel& net, const Batch& batch,
                         Residual res = Residual::CrossEntropy,
                         const PerturbationVector* pert = nullptr) {
    if (batch.empty()) throw std::invalid_argument("batch_cost: empty batch");
    double c = 0.0;
    for (const Sample& s : batch) c += residual_cost(net.forward(s.input, pert), s, res);
    return c / static_cast<double>(batch.size());
}

/// Analytic reverse-mode gradient of compute_cost w.r.t. every parameter.
inline std::vector<double> backprop_gradient(const NetworkModel& net, const Batch& batch,
                                             Residual res = Residual::CrossEntropy) {
    if (batch.empty()) throw std::invalid_argument("backprop_gradient: empty batch");
    std::vector<double> grad(net.param_count(), 0.0);
    const double inv_t = 1.0 / static_cast<double>(batch.size());
    for (const Sample& s : batch) {
        NetworkModel::BackpropTrace tr = net.forward_traced(s.input);
        std::vector<double> og = residual_grad(tr.output, s, res);
        for (double& v : og) v *= inv_t;
        net.backward(tr, std::move(og), grad);
    }
    return grad;
}

/// Central-difference gradient; the independent oracle for backprop and G.
inline std::vector<double> finite_difference_gradient(NetworkModel& net, const Batch& batch,
                                                      double h,
                                                      Residual res = Residual::CrossEntropy) {
    if (!(h > 0.0)) throw std::invalid_argument("finite_difference_gradient: h must be positive");
    std::vector<double>& p = net.mutable_params();
    std::vector<double> grad(p.size(), 0.0);
    for (std::size_t i = 0; i < p.size(); ++i) {
        double orig = p[i];
        p[i] = orig + h;
        double cp = batch_cost(net, batch, res);
        p[i] = orig - h;
        double cm = batch_cost(net, batch, res);
        p[i] = orig;
        grad[i] = (cp - cm) / (2.0 * h);
    }
    return grad;
}

/// Binds the perturbation process to a network: weight mode covers every
/// parameter, node mode covers every pre-activation.
inline SiteSet bind_sites(const NetworkModel& net, PerturbMode mode) {
    SiteSet s;
    s.mode = mode;
    s.count = mode == PerturbMode::Weight ? net.param_count() : net.node_count();
    return s;
}

}  // namespace mgd

#endif
