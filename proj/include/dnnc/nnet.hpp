#pragma once

// Minimal feed-forward / 1-D convolutional network engine.
//
// Activations are stored one sample per column. A convolutional activation of
// `channels` x `length` is flattened channel-major: element (c, t) sits at row
// c * length + t, so Flatten is a no-op on the storage.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "dnnc/error.hpp"
#include "dnnc/random.hpp"

namespace dnnc::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Activation { linear, relu };
enum class Mode { inference, training };

struct Shape {
    int channels = 1;
    int length = 1;
    int size() const { return channels * length; }
};

/// Per-layer state recorded by a training-mode forward pass.
struct LayerCache {
    Matrix input;
    Matrix pre;                  // pre-activation (dense / conv)
    Matrix im2col;               // stacked patches (conv)
    std::vector<int> argmax;     // winning row per output element (maxpool)
    Matrix xhat;                 // normalized input (batchnorm)
    Vector batch_mean, batch_var, inv_std;
    Matrix mask;                 // dropout multipliers
};

namespace detail {

inline void apply_activation(Activation act, const Matrix& pre, Matrix& out) {
    if (act == Activation::relu)
        out = pre.cwiseMax(0.0);
    else
        out = pre;
}

inline void activation_backward(Activation act, const Matrix& pre, Matrix& grad) {
    if (act == Activation::relu) grad = (pre.array() > 0.0).select(grad, 0.0);
}

inline void glorot_uniform(Matrix& w, double fan_in, double fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    for (Eigen::Index j = 0; j < w.cols(); ++j)
        for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = limit * (2.0 * uniform01(rng) - 1.0);
}

}  // namespace detail

/// Fully connected layer, W is (out_dim x in_dim).
struct Dense {
    int in_dim = 0;
    int out_dim = 0;
    Activation activation = Activation::linear;
    double l2 = 0.0;
    bool use_bias = true;
    Matrix weights;
    Vector biases;
    Matrix grad_weights;
    Vector grad_biases;

    Dense() = default;
    Dense(int in, int out, Activation act, double l2_coef = 0.0, bool bias = true)
        : in_dim(in), out_dim(out), activation(act), l2(l2_coef), use_bias(bias),
          weights(Matrix::Zero(out, in)), biases(Vector::Zero(out)),
          grad_weights(Matrix::Zero(out, in)), grad_biases(Vector::Zero(out)) {}

    int input_size() const { return in_dim; }
    Shape output_shape() const { return {out_dim, 1}; }

    void init(Rng& rng) {
        detail::glorot_uniform(weights, in_dim, out_dim, rng);
        biases.setZero();
    }

    void forward(const Matrix& in, Matrix& out, LayerCache* cache) const {
        Matrix pre = weights * in;
        if (use_bias) pre.colwise() += biases;
        detail::apply_activation(activation, pre, out);
        if (cache) {
            cache->input = in;
            cache->pre = std::move(pre);
        }
    }

    Matrix backward(Matrix grad, const LayerCache& cache) {
        detail::activation_backward(activation, cache.pre, grad);
        grad_weights.noalias() += grad * cache.input.transpose();
        if (use_bias) grad_biases += grad.rowwise().sum();
        return weights.transpose() * grad;
    }
};

/// Valid-padding 1-D convolution. Weights are (filters x in_channels*kernel);
/// column c*kernel + k multiplies input channel c at offset k.
struct Conv1D {
    int in_channels = 1;
    int in_length = 0;
    int filters = 0;
    int kernel = 0;
    Activation activation = Activation::relu;
    double l2 = 0.0;
    Matrix weights;
    Vector biases;
    Matrix grad_weights;
    Vector grad_biases;

    Conv1D() = default;
    Conv1D(int channels, int length, int n_filters, int kernel_width, Activation act, double l2_coef)
        : in_channels(channels), in_length(length), filters(n_filters), kernel(kernel_width),
          activation(act), l2(l2_coef) {
        if (kernel_width > length)
            throw ShapeError("conv1d: kernel width " + std::to_string(kernel_width) +
                             " exceeds input length " + std::to_string(length));
        weights = Matrix::Zero(filters, in_channels * kernel);
        biases = Vector::Zero(filters);
        grad_weights = Matrix::Zero(filters, in_channels * kernel);
        grad_biases = Vector::Zero(filters);
    }

    int out_length() const { return in_length - kernel + 1; }
    int input_size() const { return in_channels * in_length; }
    Shape output_shape() const { return {filters, out_length()}; }

    void init(Rng& rng) {
        detail::glorot_uniform(weights, double(in_channels) * kernel, double(filters) * kernel, rng);
        biases.setZero();
    }

    // Rows b*L_out + t hold the patch feeding output position t of sample b.
    Matrix patches(const Matrix& in) const {
        const int lo = out_length();
        const Eigen::Index batch = in.cols();
        Matrix cols(batch * lo, in_channels * kernel);
        for (Eigen::Index b = 0; b < batch; ++b) {
            Eigen::Map<const Matrix> x(in.col(b).data(), in_length, in_channels);
            for (int c = 0; c < in_channels; ++c)
                for (int k = 0; k < kernel; ++k)
                    cols.block(b * lo, c * kernel + k, lo, 1) = x.col(c).segment(k, lo);
        }
        return cols;
    }

    void forward(const Matrix& in, Matrix& out, LayerCache* cache) const {
        const int lo = out_length();
        const Eigen::Index batch = in.cols();
        Matrix cols = patches(in);
        Matrix z = cols * weights.transpose();  // (batch*lo) x filters
        z.rowwise() += biases.transpose();
        Matrix pre(filters * lo, batch);
        for (Eigen::Index b = 0; b < batch; ++b) {
            Eigen::Map<Matrix> dst(pre.col(b).data(), lo, filters);
            dst = z.middleRows(b * lo, lo);
        }
        detail::apply_activation(activation, pre, out);
        if (cache) {
            cache->pre = std::move(pre);
            cache->im2col = std::move(cols);
        }
    }

    Matrix backward(Matrix grad, const LayerCache& cache) {
        detail::activation_backward(activation, cache.pre, grad);
        const int lo = out_length();
        const Eigen::Index batch = grad.cols();
        Matrix dz(batch * lo, filters);
        for (Eigen::Index b = 0; b < batch; ++b) {
            Eigen::Map<const Matrix> src(grad.col(b).data(), lo, filters);
            dz.middleRows(b * lo, lo) = src;
        }
        grad_weights.noalias() += dz.transpose() * cache.im2col;
        grad_biases += dz.colwise().sum().transpose();
        Matrix dcols = dz * weights;  // (batch*lo) x (in_channels*kernel)
        Matrix dx = Matrix::Zero(in_channels * in_length, batch);
        for (Eigen::Index b = 0; b < batch; ++b) {
            Eigen::Map<Matrix> g(dx.col(b).data(), in_length, in_channels);
            for (int c = 0; c < in_channels; ++c)
                for (int k = 0; k < kernel; ++k)
                    g.col(c).segment(k, lo) += dcols.block(b * lo, c * kernel + k, lo, 1);
        }
        return dx;
    }
};

struct MaxPool1D {
    int channels = 1;
    int in_length = 0;
    int width = 2;
    int stride = 2;

    int out_length() const { return (in_length - width) / stride + 1; }
    int input_size() const { return channels * in_length; }
    Shape output_shape() const { return {channels, out_length()}; }

    void forward(const Matrix& in, Matrix& out, LayerCache* cache) const {
        const int lo = out_length();
        out.resize(channels * lo, in.cols());
        if (cache) cache->argmax.assign(static_cast<std::size_t>(out.size()), 0);
        for (Eigen::Index b = 0; b < in.cols(); ++b)
            for (int c = 0; c < channels; ++c)
                for (int t = 0; t < lo; ++t) {
                    int best = c * in_length + t * stride;
                    for (int w = 1; w < width; ++w) {
                        const int r = c * in_length + t * stride + w;
                        if (in(r, b) > in(best, b)) best = r;
                    }
                    out(c * lo + t, b) = in(best, b);
                    if (cache) cache->argmax[static_cast<std::size_t>(b * out.rows() + c * lo + t)] = best;
                }
        if (cache) cache->input = in;
    }

    Matrix backward(const Matrix& grad, const LayerCache& cache) const {
        Matrix dx = Matrix::Zero(channels * in_length, grad.cols());
        for (Eigen::Index b = 0; b < grad.cols(); ++b)
            for (Eigen::Index r = 0; r < grad.rows(); ++r)
                dx(cache.argmax[static_cast<std::size_t>(b * grad.rows() + r)], b) += grad(r, b);
        return dx;
    }
};

/// Batch normalization with statistics per channel, pooled over the batch and
/// the `length` positions of each channel.
struct BatchNorm {
    int channels = 1;
    int length = 1;
    double momentum = 0.99;
    double epsilon = 1e-5;
    Vector gamma, beta, running_mean, running_var;
    Vector grad_gamma, grad_beta;

    BatchNorm() = default;
    BatchNorm(int n_channels, int len)
        : channels(n_channels), length(len), gamma(Vector::Ones(n_channels)),
          beta(Vector::Zero(n_channels)), running_mean(Vector::Zero(n_channels)),
          running_var(Vector::Ones(n_channels)), grad_gamma(Vector::Zero(n_channels)),
          grad_beta(Vector::Zero(n_channels)) {}

    int input_size() const { return channels * length; }
    Shape output_shape() const { return {channels, length}; }

    void forward(const Matrix& in, Matrix& out, Mode mode, LayerCache* cache) const {
        out.resize(in.rows(), in.cols());
        const double count = static_cast<double>(in.cols()) * length;
        Vector mu(channels), var(channels), inv(channels);
        for (int c = 0; c < channels; ++c) {
            auto block = in.middleRows(c * length, length);
            if (mode == Mode::training) {
                mu(c) = block.sum() / count;
                var(c) = (block.array() - mu(c)).square().sum() / count;
            } else {
                mu(c) = running_mean(c);
                var(c) = running_var(c);
            }
            inv(c) = 1.0 / std::sqrt(var(c) + epsilon);
            out.middleRows(c * length, length) =
                (((block.array() - mu(c)) * inv(c)) * gamma(c) + beta(c)).matrix();
        }
        if (cache) {
            cache->xhat.resize(in.rows(), in.cols());
            for (int c = 0; c < channels; ++c)
                cache->xhat.middleRows(c * length, length) =
                    ((in.middleRows(c * length, length).array() - mu(c)) * inv(c)).matrix();
            cache->batch_mean = mu;
            cache->batch_var = var;
            cache->inv_std = inv;
        }
    }

    Matrix backward(const Matrix& grad, const LayerCache& cache) {
        Matrix dx(grad.rows(), grad.cols());
        const double count = static_cast<double>(grad.cols()) * length;
        for (int c = 0; c < channels; ++c) {
            auto g = grad.middleRows(c * length, length).array();
            auto xh = cache.xhat.middleRows(c * length, length).array();
            grad_gamma(c) += (g * xh).sum();
            grad_beta(c) += g.sum();
            const Eigen::ArrayXXd dxhat = g * gamma(c);
            const double sum_d = dxhat.sum();
            const double sum_dx = (dxhat * xh).sum();
            dx.middleRows(c * length, length) =
                ((cache.inv_std(c) / count) * (count * dxhat - sum_d - xh * sum_dx)).matrix();
        }
        return dx;
    }

    void update_running(const LayerCache& cache) {
        running_mean = momentum * running_mean + (1.0 - momentum) * cache.batch_mean;
        running_var = momentum * running_var + (1.0 - momentum) * cache.batch_var;
    }
};

/// Inverted dropout; identity at inference.
struct Dropout {
    int dim = 0;
    double rate = 0.0;

    int input_size() const { return dim; }
    Shape output_shape() const { return {dim, 1}; }

    void forward(const Matrix& in, Matrix& out, Mode mode, Rng* rng, LayerCache* cache) const {
        if (mode == Mode::inference || rate <= 0.0 || rng == nullptr) {
            out = in;
            if (cache) cache->mask = Matrix::Ones(in.rows(), in.cols());
            return;
        }
        Matrix mask(in.rows(), in.cols());
        const double keep = 1.0 - rate;
        for (Eigen::Index j = 0; j < mask.cols(); ++j)
            for (Eigen::Index i = 0; i < mask.rows(); ++i)
                mask(i, j) = uniform01(*rng) < keep ? 1.0 / keep : 0.0;
        out = in.cwiseProduct(mask);
        if (cache) cache->mask = std::move(mask);
    }

    Matrix backward(const Matrix& grad, const LayerCache& cache) const { return grad.cwiseProduct(cache.mask); }
};

struct Flatten {
    int dim = 0;
    int input_size() const { return dim; }
    Shape output_shape() const { return {dim, 1}; }
};

using Layer = std::variant<Dense, Conv1D, MaxPool1D, BatchNorm, Dropout, Flatten>;

inline int layer_input_size(const Layer& l) {
    return std::visit([](const auto& x) { return x.input_size(); }, l);
}
inline Shape layer_output_shape(const Layer& l) {
    return std::visit([](const auto& x) { return x.output_shape(); }, l);
}

struct Network {
    Shape input;
    std::vector<Layer> layers;

    /// Intercept of the output layer (beta_0); zero and frozen when fit_intercept is false.
    double output_intercept() const {
        const auto& out = std::get<Dense>(layers.back());
        return out.use_bias ? out.biases(0) : 0.0;
    }
    int output_size() const { return layer_output_shape(layers.back()).size(); }
    /// Width of the last hidden layer, i.e. the number of basis functions.
    int basis_size() const { return layer_input_size(layers.back()); }
};

/// Throws ShapeError / DomainError when the layer list is inconsistent.
inline void validate(const Network& net) {
    if (net.layers.empty()) throw ShapeError("network has no layers");
    int size = net.input.size();
    for (std::size_t k = 0; k < net.layers.size(); ++k) {
        const int expected = layer_input_size(net.layers[k]);
        if (expected != size)
            throw ShapeError("layer " + std::to_string(k) + " expects input size " +
                             std::to_string(expected) + " but receives " + std::to_string(size));
        if (const auto* d = std::get_if<Dropout>(&net.layers[k]); d && !(d->rate >= 0.0 && d->rate < 1.0))
            throw DomainError("dropout rate must lie in [0,1)");
        if (const auto* d = std::get_if<Dense>(&net.layers[k]); d && d->l2 < 0.0)
            throw DomainError("L2 coefficient must be nonnegative");
        if (const auto* c = std::get_if<Conv1D>(&net.layers[k]); c && c->l2 < 0.0)
            throw DomainError("L2 coefficient must be nonnegative");
        size = layer_output_shape(net.layers[k]).size();
    }
    const auto* out = std::get_if<Dense>(&net.layers.back());
    if (!out || out->activation != Activation::linear)
        throw ShapeError("final layer must be a dense layer with linear activation");
}

/// Activations recorded on the way through the network.
struct ForwardTrace {
    std::vector<LayerCache> caches;
    Matrix last_hidden;  // input of the output layer
};

/// Batched forward pass. `X` holds one sample per column. In training mode
/// dropout draws from `rng` and batchnorm uses batch statistics.
inline Matrix forward_batch(const Network& net, const Matrix& X, Mode mode = Mode::inference,
                            Rng* rng = nullptr, ForwardTrace* trace = nullptr) {
    if (X.rows() != net.input.size())
        throw ShapeError("input has " + std::to_string(X.rows()) + " features, network expects " +
                         std::to_string(net.input.size()));
    if (trace) trace->caches.assign(net.layers.size(), LayerCache{});
    Matrix cur = X, next;
    for (std::size_t k = 0; k < net.layers.size(); ++k) {
        LayerCache* cache = trace ? &trace->caches[k] : nullptr;
        if (trace && k + 1 == net.layers.size()) trace->last_hidden = cur;
        std::visit(
            [&](const auto& layer) {
                using T = std::decay_t<decltype(layer)>;
                if constexpr (std::is_same_v<T, Flatten>)
                    next = cur;
                else if constexpr (std::is_same_v<T, BatchNorm>)
                    layer.forward(cur, next, mode, cache);
                else if constexpr (std::is_same_v<T, Dropout>)
                    layer.forward(cur, next, mode, rng, cache);
                else
                    layer.forward(cur, next, cache);
            },
            net.layers[k]);
        std::swap(cur, next);
    }
    return cur;
}

/// Output layer vector for a single sample (inference mode).
inline Vector forward_vector(const Network& net, std::span<const double> x) {
    Eigen::Map<const Vector> col(x.data(), static_cast<Eigen::Index>(x.size()));
    return forward_batch(net, Matrix(col)).col(0);
}

/// Scalar prediction psi(x)' beta + beta_0 for a single sample (inference mode).
inline double forward(const Network& net, std::span<const double> x) {
    if (net.output_size() != 1) throw ShapeError("forward: network output is not scalar");
    return forward_vector(net, x)(0);
}

/// Predictions for the rows of X (n x p), evaluated in chunks.
inline Vector predict(const Network& net, const Matrix& X, Eigen::Index chunk = 512) {
    Vector out(X.rows());
    for (Eigen::Index start = 0; start < X.rows(); start += chunk) {
        const Eigen::Index len = std::min(chunk, X.rows() - start);
        out.segment(start, len) = forward_batch(net, X.middleRows(start, len).transpose()).row(0).transpose();
    }
    return out;
}

/// Basis matrix B (n x q): last-hidden-layer activations for each row of X.
inline Matrix extract_basis(const Network& net, const Matrix& X, Eigen::Index chunk = 512) {
    if (X.cols() != net.input.size())
        throw ShapeError("extract_basis: feature matrix has " + std::to_string(X.cols()) +
                         " columns, network expects " + std::to_string(net.input.size()));
    Matrix B(X.rows(), net.basis_size());
    for (Eigen::Index start = 0; start < X.rows(); start += chunk) {
        const Eigen::Index len = std::min(chunk, X.rows() - start);
        ForwardTrace trace;
        forward_batch(net, X.middleRows(start, len).transpose(), Mode::inference, nullptr, &trace);
        B.middleRows(start, len) = trace.last_hidden.transpose();
    }
    return B;
}

/// Backpropagates d(loss)/d(output), accumulating parameter gradients.
inline void backward(Network& net, const ForwardTrace& trace, Matrix grad) {
    for (std::size_t k = net.layers.size(); k-- > 0;) {
        const LayerCache& cache = trace.caches[k];
        std::visit(
            [&](auto& layer) {
                using T = std::decay_t<decltype(layer)>;
                if constexpr (!std::is_same_v<T, Flatten>) grad = layer.backward(grad, cache);
            },
            net.layers[k]);
    }
}

/// Mutable view of one parameter tensor and its gradient.
struct ParamView {
    double* value;
    double* grad;
    Eigen::Index size;
    double l2;
};

inline std::vector<ParamView> parameters(Network& net) {
    std::vector<ParamView> out;
    for (auto& layer : net.layers) {
        if (auto* d = std::get_if<Dense>(&layer)) {
            out.push_back({d->weights.data(), d->grad_weights.data(), d->weights.size(), d->l2});
            if (d->use_bias) out.push_back({d->biases.data(), d->grad_biases.data(), d->biases.size(), 0.0});
        } else if (auto* c = std::get_if<Conv1D>(&layer)) {
            out.push_back({c->weights.data(), c->grad_weights.data(), c->weights.size(), c->l2});
            out.push_back({c->biases.data(), c->grad_biases.data(), c->biases.size(), 0.0});
        } else if (auto* b = std::get_if<BatchNorm>(&layer)) {
            out.push_back({b->gamma.data(), b->grad_gamma.data(), b->gamma.size(), 0.0});
            out.push_back({b->beta.data(), b->grad_beta.data(), b->beta.size(), 0.0});
        }
    }
    return out;
}

inline void zero_grad(Network& net) {
    for (auto& p : parameters(net)) std::fill(p.grad, p.grad + p.size, 0.0);
}

inline double l2_penalty(Network& net) {
    double s = 0.0;
    for (const auto& p : parameters(net))
        if (p.l2 > 0.0)
            s += p.l2 * Eigen::Map<const Vector>(p.value, p.size).squaredNorm();
    return s;
}

/// Training-mode loss and gradient on one batch: mean squared error plus
/// sum_k l2_k * ||W_k||^2. Gradients are left in the layers.
inline double loss_and_gradient(Network& net, const Matrix& X, const Vector& z, Rng* rng,
                                ForwardTrace* trace_out = nullptr) {
    ForwardTrace local;
    ForwardTrace& trace = trace_out ? *trace_out : local;
    const Matrix out = forward_batch(net, X, Mode::training, rng, &trace);
    const Eigen::RowVectorXd resid = out.row(0) - z.transpose();
    const double n = static_cast<double>(z.size());
    zero_grad(net);
    backward(net, trace, Matrix(2.0 * resid / n));
    for (auto& p : parameters(net))
        if (p.l2 > 0.0)
            Eigen::Map<Vector>(p.grad, p.size) += 2.0 * p.l2 * Eigen::Map<const Vector>(p.value, p.size);
    return resid.squaredNorm() / n + l2_penalty(net);
}

struct TrainConfig {
    int epochs = 200;
    int batch_size = 0;  // 0: full batch
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    int patience = 10;
    int min_epochs = 50;  // patience cannot stop training before this epoch
    double validation_fraction = 0.1;
    std::uint64_t seed = 0;

    void validate() const {
        if (epochs < 1) throw DomainError("epochs must be at least 1");
        if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
            throw DomainError("validation fraction must lie in (0,1)");
        if (batch_size < 0) throw DomainError("batch size must be nonnegative");
        if (min_epochs < 0) throw DomainError("min_epochs must be nonnegative");
    }
};

struct TrainResult {
    Network net;
    int best_epoch = 0;  // 0 means the initial weights were kept
    double initial_validation_loss = 0.0;
    double best_validation_loss = 0.0;
    std::vector<double> train_loss;
    std::vector<double> validation_loss;
};

inline double mse(const Network& net, const Matrix& X_rows, const Vector& z) {
    return (predict(net, X_rows) - z).squaredNorm() / static_cast<double>(z.size());
}

/// Adam on penalized squared error with early stopping on a held-out split;
/// the weights with the lowest validation loss are returned.
inline TrainResult train(Network net, const Matrix& X, const Vector& z, const TrainConfig& cfg) {
    cfg.validate();
    validate(net);
    const Eigen::Index n = X.rows();
    if (n < 2) throw DomainError("train: need at least two observations");
    if (z.size() != n) throw ShapeError("train: response length does not match feature rows");
    if (!z.allFinite()) throw DomainError("train: responses must be finite");

    Rng rng = make_rng(cfg.seed, 0x7472616e);
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    shuffle_in_place(order, rng);
    const auto n_val = std::clamp<Eigen::Index>(
        static_cast<Eigen::Index>(std::llround(cfg.validation_fraction * double(n))), 1, n - 1);
    std::vector<Eigen::Index> val_idx(order.begin(), order.begin() + n_val);
    std::vector<Eigen::Index> train_idx(order.begin() + n_val, order.end());
    const Matrix X_val = X(val_idx, Eigen::all);
    const Vector z_val = z(val_idx);

    TrainResult result;
    result.initial_validation_loss = mse(net, X_val, z_val);
    result.best_validation_loss = result.initial_validation_loss;
    result.net = net;

    std::vector<ParamView> params = parameters(net);
    std::vector<Vector> m1, m2;
    for (const auto& p : params) {
        m1.emplace_back(Vector::Zero(p.size));
        m2.emplace_back(Vector::Zero(p.size));
    }
    const auto n_train = static_cast<Eigen::Index>(train_idx.size());
    const Eigen::Index batch = cfg.batch_size == 0 ? n_train : std::min<Eigen::Index>(cfg.batch_size, n_train);
    long step = 0;
    int since_best = 0;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        shuffle_in_place(train_idx, rng);
        double epoch_loss = 0.0;
        for (Eigen::Index start = 0; start < n_train; start += batch) {
            const Eigen::Index len = std::min(batch, n_train - start);
            std::vector<Eigen::Index> idx(train_idx.begin() + start, train_idx.begin() + start + len);
            const Matrix Xb = X(idx, Eigen::all).transpose();
            const Vector zb = z(idx);
            ForwardTrace trace;
            const double loss = loss_and_gradient(net, Xb, zb, &rng, &trace);
            if (!std::isfinite(loss))
                throw DivergenceError("training diverged: non-finite loss at epoch " + std::to_string(epoch), epoch);
            epoch_loss += loss * double(len);
            for (std::size_t k = 0; k < net.layers.size(); ++k)
                if (auto* bn = std::get_if<BatchNorm>(&net.layers[k])) bn->update_running(trace.caches[k]);
            ++step;
            const double c1 = 1.0 - std::pow(cfg.beta1, double(step));
            const double c2 = 1.0 - std::pow(cfg.beta2, double(step));
            for (std::size_t k = 0; k < params.size(); ++k) {
                Eigen::Map<Vector> w(params[k].value, params[k].size);
                Eigen::Map<const Vector> g(params[k].grad, params[k].size);
                m1[k] = cfg.beta1 * m1[k] + (1.0 - cfg.beta1) * g;
                m2[k] = cfg.beta2 * m2[k] + (1.0 - cfg.beta2) * g.cwiseAbs2();
                w.array() -= cfg.learning_rate * (m1[k].array() / c1) /
                             ((m2[k].array() / c2).sqrt() + cfg.epsilon);
            }
        }
        const double val = mse(net, X_val, z_val);
        result.train_loss.push_back(epoch_loss / double(n_train));
        result.validation_loss.push_back(val);
        if (!std::isfinite(val))
            throw DivergenceError("training diverged: non-finite validation loss at epoch " + std::to_string(epoch),
                                  epoch);
        if (val < result.best_validation_loss) {
            result.best_validation_loss = val;
            result.best_epoch = epoch;
            result.net = net;
            since_best = 0;
        } else if (++since_best >= cfg.patience && epoch >= cfg.min_epochs) {
            break;
        }
    }
    for (auto& p : parameters(result.net)) std::fill(p.grad, p.grad + p.size, 0.0);
    return result;
}

// ---------------------------------------------------------------------------
// Architectures

struct FfnOptions {
    std::vector<int> hidden{64, 64};
    double dropout = 0.5;
    bool fit_intercept = false;
};

/// Dense relu hidden layers, each followed by dropout, then a linear scalar output.
inline Network build_ffn(int p, std::uint64_t seed, const FfnOptions& opt = {}) {
    if (p <= 0) throw ShapeError("build_ffn: input dimension must be positive");
    Rng rng = make_rng(seed, 0x696e6974);
    Network net;
    net.input = {p, 1};
    int width = p;
    for (int h : opt.hidden) {
        if (h <= 0) throw ShapeError("build_ffn: hidden widths must be positive");
        Dense d(width, h, Activation::relu);
        d.init(rng);
        net.layers.emplace_back(std::move(d));
        if (opt.dropout > 0.0) net.layers.emplace_back(Dropout{h, opt.dropout});
        width = h;
    }
    Dense out(width, 1, Activation::linear, 0.0, opt.fit_intercept);
    out.init(rng);
    net.layers.emplace_back(std::move(out));
    validate(net);
    return net;
}

struct CnnOptions {
    int kernel1 = 31;
    int kernel2 = 10;
    int filters1 = 31;
    int filters2 = 7;
    int dense_width = 100;
    double l2 = 0.001;
    int pool_width = 2;
    bool fit_intercept = false;
};

/// conv1d -> batchnorm -> maxpool -> conv1d -> batchnorm -> flatten ->
/// dense relu -> batchnorm -> dense linear, for a univariate series of length T.
inline Network build_cnn(int T, std::uint64_t seed, const CnnOptions& opt = {}) {
    if (T <= 0 || opt.kernel1 <= 0 || opt.kernel2 <= 0 || opt.filters1 <= 0 || opt.filters2 <= 0 ||
        opt.dense_width <= 0)
        throw ShapeError("build_cnn: dimensions must be positive");
    if (T < opt.kernel1)
        throw ShapeError("build_cnn: series length " + std::to_string(T) + " shorter than kernel " +
                         std::to_string(opt.kernel1));
    Rng rng = make_rng(seed, 0x696e6974);
    Network net;
    net.input = {1, T};
    Conv1D c1(1, T, opt.filters1, opt.kernel1, Activation::relu, opt.l2);
    c1.init(rng);
    const int l1 = c1.out_length();
    net.layers.emplace_back(std::move(c1));
    net.layers.emplace_back(BatchNorm(opt.filters1, l1));
    MaxPool1D pool{opt.filters1, l1, opt.pool_width, opt.pool_width};
    const int l1p = pool.out_length();
    if (l1p < opt.kernel2)
        throw ShapeError("build_cnn: pooled length " + std::to_string(l1p) + " shorter than second kernel " +
                         std::to_string(opt.kernel2));
    net.layers.emplace_back(pool);
    Conv1D c2(opt.filters1, l1p, opt.filters2, opt.kernel2, Activation::relu, opt.l2);
    c2.init(rng);
    const int l2len = c2.out_length();
    net.layers.emplace_back(std::move(c2));
    net.layers.emplace_back(BatchNorm(opt.filters2, l2len));
    net.layers.emplace_back(Flatten{opt.filters2 * l2len});
    Dense hidden(opt.filters2 * l2len, opt.dense_width, Activation::relu);
    hidden.init(rng);
    net.layers.emplace_back(std::move(hidden));
    net.layers.emplace_back(BatchNorm(opt.dense_width, 1));
    Dense out(opt.dense_width, 1, Activation::linear, 0.0, opt.fit_intercept);
    out.init(rng);
    net.layers.emplace_back(std::move(out));
    validate(net);
    return net;
}

// ---------------------------------------------------------------------------
// JSON

namespace detail {

inline std::string activation_name(Activation a) { return a == Activation::relu ? "relu" : "linear"; }
inline Activation activation_from(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "linear") return Activation::linear;
    throw DataError("unknown activation '" + s + "'");
}

inline std::vector<double> to_vec(const Vector& v) { return {v.data(), v.data() + v.size()}; }
inline Vector from_vec(const nlohmann::json& j, Eigen::Index expected, const char* what) {
    auto v = j.get<std::vector<double>>();
    if (static_cast<Eigen::Index>(v.size()) != expected)
        throw DataError(std::string("network JSON: wrong length for ") + what);
    return Eigen::Map<Vector>(v.data(), expected);
}

}  // namespace detail

inline constexpr int kNetworkFormatVersion = 1;

inline nlohmann::json to_json(const Network& net) {
    using nlohmann::json;
    json layers = json::array();
    for (const auto& layer : net.layers) {
        json j;
        if (const auto* d = std::get_if<Dense>(&layer)) {
            std::vector<double> w;
            for (int r = 0; r < d->out_dim; ++r)
                for (int c = 0; c < d->in_dim; ++c) w.push_back(d->weights(r, c));
            j = {{"kind", "dense"}, {"in", d->in_dim}, {"out", d->out_dim},
                 {"activation", detail::activation_name(d->activation)}, {"l2", d->l2},
                 {"use_bias", d->use_bias}, {"weights", w}, {"biases", detail::to_vec(d->biases)}};
        } else if (const auto* c = std::get_if<Conv1D>(&layer)) {
            // filters x kernel x in_channels, row-major
            std::vector<double> w;
            for (int f = 0; f < c->filters; ++f)
                for (int k = 0; k < c->kernel; ++k)
                    for (int ch = 0; ch < c->in_channels; ++ch) w.push_back(c->weights(f, ch * c->kernel + k));
            j = {{"kind", "conv1d"}, {"in_channels", c->in_channels}, {"in_length", c->in_length},
                 {"filters", c->filters}, {"kernel", c->kernel},
                 {"activation", detail::activation_name(c->activation)}, {"l2", c->l2},
                 {"weights", w}, {"biases", detail::to_vec(c->biases)}};
        } else if (const auto* p = std::get_if<MaxPool1D>(&layer)) {
            j = {{"kind", "maxpool1d"}, {"channels", p->channels}, {"in_length", p->in_length},
                 {"width", p->width}, {"stride", p->stride}};
        } else if (const auto* b = std::get_if<BatchNorm>(&layer)) {
            j = {{"kind", "batchnorm"}, {"channels", b->channels}, {"length", b->length},
                 {"momentum", b->momentum}, {"epsilon", b->epsilon},
                 {"gamma", detail::to_vec(b->gamma)}, {"beta", detail::to_vec(b->beta)},
                 {"running_mean", detail::to_vec(b->running_mean)},
                 {"running_var", detail::to_vec(b->running_var)}};
        } else if (const auto* dr = std::get_if<Dropout>(&layer)) {
            j = {{"kind", "dropout"}, {"dim", dr->dim}, {"rate", dr->rate}};
        } else if (const auto* fl = std::get_if<Flatten>(&layer)) {
            j = {{"kind", "flatten"}, {"dim", fl->dim}};
        }
        layers.push_back(std::move(j));
    }
    return {{"format", "dnnc-network"},
            {"version", kNetworkFormatVersion},
            {"input", {{"channels", net.input.channels}, {"length", net.input.length}}},
            {"layers", std::move(layers)}};
}

inline Network network_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "dnnc-network") throw DataError("not a dnnc-network document");
    if (j.value("version", 0) != kNetworkFormatVersion) throw DataError("unsupported network format version");
    Network net;
    net.input = {j.at("input").at("channels").get<int>(), j.at("input").at("length").get<int>()};
    for (const auto& l : j.at("layers")) {
        const std::string kind = l.at("kind");
        if (kind == "dense") {
            Dense d(l.at("in"), l.at("out"), detail::activation_from(l.at("activation")), l.at("l2"),
                    l.at("use_bias"));
            auto w = l.at("weights").get<std::vector<double>>();
            if (static_cast<int>(w.size()) != d.in_dim * d.out_dim) throw DataError("network JSON: dense weights");
            for (int r = 0; r < d.out_dim; ++r)
                for (int c = 0; c < d.in_dim; ++c) d.weights(r, c) = w[static_cast<std::size_t>(r * d.in_dim + c)];
            d.biases = detail::from_vec(l.at("biases"), d.out_dim, "dense biases");
            net.layers.emplace_back(std::move(d));
        } else if (kind == "conv1d") {
            Conv1D c(l.at("in_channels"), l.at("in_length"), l.at("filters"), l.at("kernel"),
                     detail::activation_from(l.at("activation")), l.at("l2"));
            auto w = l.at("weights").get<std::vector<double>>();
            if (static_cast<int>(w.size()) != c.filters * c.kernel * c.in_channels)
                throw DataError("network JSON: conv weights");
            std::size_t idx = 0;
            for (int f = 0; f < c.filters; ++f)
                for (int k = 0; k < c.kernel; ++k)
                    for (int ch = 0; ch < c.in_channels; ++ch) c.weights(f, ch * c.kernel + k) = w[idx++];
            c.biases = detail::from_vec(l.at("biases"), c.filters, "conv biases");
            net.layers.emplace_back(std::move(c));
        } else if (kind == "maxpool1d") {
            net.layers.emplace_back(MaxPool1D{l.at("channels"), l.at("in_length"), l.at("width"), l.at("stride")});
        } else if (kind == "batchnorm") {
            BatchNorm b(l.at("channels"), l.at("length"));
            b.momentum = l.at("momentum");
            b.epsilon = l.at("epsilon");
            b.gamma = detail::from_vec(l.at("gamma"), b.channels, "gamma");
            b.beta = detail::from_vec(l.at("beta"), b.channels, "beta");
            b.running_mean = detail::from_vec(l.at("running_mean"), b.channels, "running_mean");
            b.running_var = detail::from_vec(l.at("running_var"), b.channels, "running_var");
            net.layers.emplace_back(std::move(b));
        } else if (kind == "dropout") {
            net.layers.emplace_back(Dropout{l.at("dim"), l.at("rate")});
        } else if (kind == "flatten") {
            net.layers.emplace_back(Flatten{l.at("dim")});
        } else {
            throw DataError("network JSON: unknown layer kind '" + kind + "'");
        }
    }
    validate(net);
    return net;
}

}  // namespace dnnc::nn
