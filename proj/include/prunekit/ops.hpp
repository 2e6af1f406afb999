#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "prunekit/kernels.hpp"
#include "prunekit/tensor.hpp"

namespace prunekit {

enum class Mode { train, eval };

template <typename T>
struct ConvParamsT {
    TensorT<T> kernel;  // R x S x Cin x Cout
    TensorT<T> bias;    // Cout
    int stride = 1;
    int padding = 0;

    void validate() const {
        if (kernel.rank() != 4) throw std::invalid_argument("conv kernel must be rank 4");
        if (bias.rank() != 1 || bias.dim(0) != kernel.dim(3)) {
            throw std::invalid_argument("conv bias length must equal kernel output channels");
        }
    }
};

template <typename T>
struct FcParamsT {
    TensorT<T> weight;  // F x K
    TensorT<T> bias;    // K

    void validate() const {
        if (weight.rank() != 2) throw std::invalid_argument("fc weight must be rank 2");
        if (bias.rank() != 1 || bias.dim(0) != weight.dim(1)) {
            throw std::invalid_argument("fc bias length must equal output features");
        }
    }
};

template <typename T>
struct BNParamsT {
    TensorT<T> gamma, beta, running_mean, running_var;  // all length C
    T epsilon = static_cast<T>(1e-5);
    T momentum = static_cast<T>(0.9);  // EMA: running = m*running + (1-m)*batch

    void validate() const {
        const int c = gamma.rank() == 1 ? gamma.dim(0) : -1;
        if (c <= 0 || beta.shape != gamma.shape || running_mean.shape != gamma.shape ||
            running_var.shape != gamma.shape) {
            throw std::invalid_argument("batchnorm vectors must be rank 1 and same length");
        }
        for (T v : running_var.data) {
            if (v < T(0)) throw std::invalid_argument("batchnorm running variance below 0");
        }
    }
    int channels() const { return gamma.dim(0); }
};

using ConvParams = ConvParamsT<float>;
using FcParams = FcParamsT<float>;
using BNParams = BNParamsT<float>;

namespace ops {

template <typename T>
struct ConvGradsT {
    TensorT<T> input, kernel, bias;
};

template <typename T>
struct BNStatsT {
    std::vector<T> mean, var;
};

template <typename T>
struct BNGradsT {
    TensorT<T> input, gamma, beta;
};

template <typename T>
struct FcGradsT {
    TensorT<T> input, weight, bias;
};

inline void check_rank_3_or_4(int rank, const char* what) {
    if (rank != 3 && rank != 4) {
        throw std::invalid_argument(std::string(what) + ": feature map must be rank 3 or 4");
    }
}

// Rank-3 maps are treated as a batch of one; batching itself lives at the graph level.
template <typename T>
kernels::ConvDims dims_for(const TensorT<T>& input, const ConvParamsT<T>& p) {
    check_rank_3_or_4(input.rank(), "conv2d");
    p.validate();
    const bool batched = input.rank() == 4;
    const int n = batched ? input.dim(0) : 1;
    const int h = input.dim(batched ? 1 : 0);
    const int w = input.dim(batched ? 2 : 1);
    const int cin = input.dim(batched ? 3 : 2);
    if (cin != p.kernel.dim(2)) {
        throw std::invalid_argument("conv2d: input channel count does not match kernel");
    }
    return kernels::conv_dims(n, h, w, cin, p.kernel.dim(0), p.kernel.dim(1), p.kernel.dim(3),
                              p.stride, p.padding);
}

template <typename T>
TensorT<T> conv2d_forward(const TensorT<T>& input, const ConvParamsT<T>& p) {
    const auto d = dims_for(input, p);
    TensorT<T> out(input.rank() == 4 ? std::vector<int>{d.n, d.ho, d.wo, d.cout}
                                     : std::vector<int>{d.ho, d.wo, d.cout});
    kernels::conv2d_forward(input.data.data(), p.kernel.data.data(), p.bias.data.data(), d,
                            out.data.data());
    return out;
}

template <typename T>
ConvGradsT<T> conv2d_backward(const TensorT<T>& input, const ConvParamsT<T>& p,
                              const TensorT<T>& grad_out) {
    const auto d = dims_for(input, p);
    const std::vector<int> expect = input.rank() == 4
                                        ? std::vector<int>{d.n, d.ho, d.wo, d.cout}
                                        : std::vector<int>{d.ho, d.wo, d.cout};
    if (grad_out.shape != expect) {
        throw std::invalid_argument("conv2d_backward: grad_out shape does not match forward output");
    }
    ConvGradsT<T> g;
    g.input = TensorT<T>(input.shape);
    g.kernel = TensorT<T>(p.kernel.shape);
    g.bias = TensorT<T>(p.bias.shape);
    kernels::conv2d_backward_input(p.kernel.data.data(), grad_out.data.data(), d,
                                   g.input.data.data());
    kernels::conv2d_backward_kernel(input.data.data(), grad_out.data.data(), d,
                                    g.kernel.data.data(), g.bias.data.data());
    return g;
}

template <typename T>
int channels_of(const TensorT<T>& input) {
    check_rank_3_or_4(input.rank(), "batchnorm");
    return input.dim(input.rank() - 1);
}

// Per-channel batch statistics (biased variance), double accumulation.
template <typename T>
BNStatsT<T> batch_statistics(const TensorT<T>& input) {
    const int c = channels_of(input);
    const long long per_channel = input.numel() / c;
    BNStatsT<T> st;
    st.mean.resize(static_cast<size_t>(c));
    st.var.resize(static_cast<size_t>(c));
#pragma omp parallel for
    for (int ch = 0; ch < c; ++ch) {
        double sum = 0.0;
        for (long long i = 0; i < per_channel; ++i) {
            sum += static_cast<double>(input.data[static_cast<size_t>(i) * c + ch]);
        }
        const double mean = sum / static_cast<double>(per_channel);
        double sq = 0.0;
        for (long long i = 0; i < per_channel; ++i) {
            const double dyn = static_cast<double>(input.data[static_cast<size_t>(i) * c + ch]) - mean;
            sq += dyn * dyn;
        }
        st.mean[static_cast<size_t>(ch)] = static_cast<T>(mean);
        st.var[static_cast<size_t>(ch)] = static_cast<T>(sq / static_cast<double>(per_channel));
    }
    return st;
}

// Train mode normalizes by batch statistics and (when update_running is given)
// folds them into the running estimates; eval mode normalizes by the running
// estimates. A stats_override wins over both and never touches running state —
// this is the scoring path's entry point.
template <typename T>
TensorT<T> batchnorm_forward(const TensorT<T>& input, const BNParamsT<T>& p, Mode mode,
                             const BNStatsT<T>* stats_override = nullptr,
                             BNStatsT<T>* used_stats = nullptr,
                             BNParamsT<T>* update_running = nullptr) {
    p.validate();
    const int c = channels_of(input);
    if (c != p.channels()) {
        throw std::invalid_argument("batchnorm: channel count does not match parameters");
    }

    BNStatsT<T> st;
    if (stats_override != nullptr) {
        st = *stats_override;
        if (static_cast<int>(st.mean.size()) != c || static_cast<int>(st.var.size()) != c) {
            throw std::invalid_argument("batchnorm: stats override length mismatch");
        }
    } else if (mode == Mode::train) {
        st = batch_statistics(input);
        if (update_running != nullptr) {
            const T m = p.momentum;
            for (int ch = 0; ch < c; ++ch) {
                update_running->running_mean.data[static_cast<size_t>(ch)] =
                    m * update_running->running_mean.data[static_cast<size_t>(ch)] +
                    (T(1) - m) * st.mean[static_cast<size_t>(ch)];
                update_running->running_var.data[static_cast<size_t>(ch)] =
                    m * update_running->running_var.data[static_cast<size_t>(ch)] +
                    (T(1) - m) * st.var[static_cast<size_t>(ch)];
            }
        }
    } else {
        st.mean.assign(p.running_mean.data.begin(), p.running_mean.data.end());
        st.var.assign(p.running_var.data.begin(), p.running_var.data.end());
    }
    for (T v : st.var) {
        if (v < T(0)) throw std::invalid_argument("batchnorm: variance below 0");
    }
    if (used_stats != nullptr) *used_stats = st;

    TensorT<T> out(input.shape);
    const long long per_channel = input.numel() / c;
#pragma omp parallel for
    for (int ch = 0; ch < c; ++ch) {
        const double inv = 1.0 / std::sqrt(static_cast<double>(st.var[static_cast<size_t>(ch)]) +
                                           static_cast<double>(p.epsilon));
        const double g = static_cast<double>(p.gamma.data[static_cast<size_t>(ch)]);
        const double b = static_cast<double>(p.beta.data[static_cast<size_t>(ch)]);
        const double mu = static_cast<double>(st.mean[static_cast<size_t>(ch)]);
        for (long long i = 0; i < per_channel; ++i) {
            const size_t idx = static_cast<size_t>(i) * c + ch;
            out.data[idx] =
                static_cast<T>((static_cast<double>(input.data[idx]) - mu) * inv * g + b);
        }
    }
    return out;
}

// Backward through train-mode normalization (batch statistics in `stats`).
template <typename T>
BNGradsT<T> batchnorm_backward(const TensorT<T>& input, const BNParamsT<T>& p,
                               const BNStatsT<T>& stats, const TensorT<T>& grad_out) {
    const int c = channels_of(input);
    if (grad_out.shape != input.shape) {
        throw std::invalid_argument("batchnorm_backward: grad_out shape mismatch");
    }
    BNGradsT<T> g;
    g.input = TensorT<T>(input.shape);
    g.gamma = TensorT<T>(p.gamma.shape);
    g.beta = TensorT<T>(p.beta.shape);
    const long long per_channel = input.numel() / c;
#pragma omp parallel for
    for (int ch = 0; ch < c; ++ch) {
        const double mu = static_cast<double>(stats.mean[static_cast<size_t>(ch)]);
        const double var = static_cast<double>(stats.var[static_cast<size_t>(ch)]);
        const double inv = 1.0 / std::sqrt(var + static_cast<double>(p.epsilon));
        const double gamma = static_cast<double>(p.gamma.data[static_cast<size_t>(ch)]);
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (long long i = 0; i < per_channel; ++i) {
            const size_t idx = static_cast<size_t>(i) * c + ch;
            const double dy = static_cast<double>(grad_out.data[idx]);
            const double xhat = (static_cast<double>(input.data[idx]) - mu) * inv;
            sum_dy += dy;
            sum_dy_xhat += dy * xhat;
        }
        g.beta.data[static_cast<size_t>(ch)] = static_cast<T>(sum_dy);
        g.gamma.data[static_cast<size_t>(ch)] = static_cast<T>(sum_dy_xhat);
        const double n = static_cast<double>(per_channel);
        for (long long i = 0; i < per_channel; ++i) {
            const size_t idx = static_cast<size_t>(i) * c + ch;
            const double dy = static_cast<double>(grad_out.data[idx]);
            const double xhat = (static_cast<double>(input.data[idx]) - mu) * inv;
            g.input.data[idx] = static_cast<T>(gamma * inv * (dy - sum_dy / n - xhat * sum_dy_xhat / n));
        }
    }
    return g;
}

// Backward when the statistics were constants w.r.t. the input (eval mode or
// an explicit override).
template <typename T>
BNGradsT<T> batchnorm_backward_fixed_stats(const TensorT<T>& input, const BNParamsT<T>& p,
                                           const BNStatsT<T>& stats, const TensorT<T>& grad_out) {
    const int c = channels_of(input);
    if (grad_out.shape != input.shape) {
        throw std::invalid_argument("batchnorm_backward: grad_out shape mismatch");
    }
    BNGradsT<T> g;
    g.input = TensorT<T>(input.shape);
    g.gamma = TensorT<T>(p.gamma.shape);
    g.beta = TensorT<T>(p.beta.shape);
    const long long per_channel = input.numel() / c;
#pragma omp parallel for
    for (int ch = 0; ch < c; ++ch) {
        const double mu = static_cast<double>(stats.mean[static_cast<size_t>(ch)]);
        const double inv = 1.0 / std::sqrt(static_cast<double>(stats.var[static_cast<size_t>(ch)]) +
                                           static_cast<double>(p.epsilon));
        const double gamma = static_cast<double>(p.gamma.data[static_cast<size_t>(ch)]);
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (long long i = 0; i < per_channel; ++i) {
            const size_t idx = static_cast<size_t>(i) * c + ch;
            const double dy = static_cast<double>(grad_out.data[idx]);
            const double xhat = (static_cast<double>(input.data[idx]) - mu) * inv;
            sum_dy += dy;
            sum_dy_xhat += dy * xhat;
            g.input.data[idx] = static_cast<T>(gamma * inv * dy);
        }
        g.beta.data[static_cast<size_t>(ch)] = static_cast<T>(sum_dy);
        g.gamma.data[static_cast<size_t>(ch)] = static_cast<T>(sum_dy_xhat);
    }
    return g;
}

template <typename T>
TensorT<T> relu_forward(const TensorT<T>& input) {
    TensorT<T> out(input.shape);
    const long long n = input.numel();
#pragma omp parallel for
    for (long long i = 0; i < n; ++i) {
        out.data[static_cast<size_t>(i)] = std::max(input.data[static_cast<size_t>(i)], T(0));
    }
    return out;
}

template <typename T>
TensorT<T> relu_backward(const TensorT<T>& input, const TensorT<T>& grad_out) {
    if (grad_out.shape != input.shape) {
        throw std::invalid_argument("relu_backward: grad_out shape mismatch");
    }
    TensorT<T> g(input.shape);
    const long long n = input.numel();
#pragma omp parallel for
    for (long long i = 0; i < n; ++i) {
        g.data[static_cast<size_t>(i)] =
            input.data[static_cast<size_t>(i)] > T(0) ? grad_out.data[static_cast<size_t>(i)] : T(0);
    }
    return g;
}

// Max pooling over k x k windows; ties go to the first element scanned. The
// argmax (flat index into the input) is kept for the backward pass.
template <typename T>
TensorT<T> maxpool2d_forward(const TensorT<T>& input, int k, int stride,
                             std::vector<long long>* argmax = nullptr) {
    check_rank_3_or_4(input.rank(), "maxpool2d");
    if (k < 1 || stride < 1) throw std::invalid_argument("maxpool2d: bad geometry");
    const bool batched = input.rank() == 4;
    const int n = batched ? input.dim(0) : 1;
    const int h = input.dim(batched ? 1 : 0);
    const int w = input.dim(batched ? 2 : 1);
    const int c = input.dim(batched ? 3 : 2);
    if (h < k || w < k) throw std::invalid_argument("maxpool2d: window larger than input");
    const int ho = (h - k) / stride + 1;
    const int wo = (w - k) / stride + 1;
    TensorT<T> out(batched ? std::vector<int>{n, ho, wo, c} : std::vector<int>{ho, wo, c});
    if (argmax != nullptr) argmax->assign(static_cast<size_t>(out.numel()), -1);
    const long long pixels = static_cast<long long>(n) * ho * wo;
#pragma omp parallel for
    for (long long px = 0; px < pixels; ++px) {
        const int ni = static_cast<int>(px / (ho * wo));
        const int rem = static_cast<int>(px % (ho * wo));
        const int yo = rem / wo;
        const int xo = rem % wo;
        for (int ch = 0; ch < c; ++ch) {
            T best = -std::numeric_limits<T>::infinity();
            long long best_idx = -1;
            for (int dy = 0; dy < k; ++dy) {
                for (int dx = 0; dx < k; ++dx) {
                    const int yi = yo * stride + dy;
                    const int xi = xo * stride + dx;
                    const size_t idx = ((static_cast<size_t>(ni) * h + yi) * w + xi) * c + ch;
                    if (input.data[idx] > best) {
                        best = input.data[idx];
                        best_idx = static_cast<long long>(idx);
                    }
                }
            }
            const size_t oidx = static_cast<size_t>(px) * c + ch;
            out.data[oidx] = best;
            if (argmax != nullptr) (*argmax)[oidx] = best_idx;
        }
    }
    return out;
}

template <typename T>
TensorT<T> maxpool2d_backward(const std::vector<int>& input_shape,
                              const std::vector<long long>& argmax, const TensorT<T>& grad_out) {
    TensorT<T> g(input_shape);
    if (argmax.size() != static_cast<size_t>(grad_out.numel())) {
        throw std::invalid_argument("maxpool2d_backward: argmax/grad size mismatch");
    }
    for (size_t i = 0; i < argmax.size(); ++i) {
        g.data[static_cast<size_t>(argmax[i])] += grad_out.data[i];
    }
    return g;
}

template <typename T>
TensorT<T> fc_forward(const TensorT<T>& input, const FcParamsT<T>& p) {
    p.validate();
    if (input.rank() != 2 || input.dim(1) != p.weight.dim(0)) {
        throw std::invalid_argument("fc_forward: input must be N x F matching weight");
    }
    TensorT<T> out({input.dim(0), p.weight.dim(1)});
    kernels::fc_forward(input.data.data(), p.weight.data.data(), p.bias.data.data(), input.dim(0),
                        p.weight.dim(0), p.weight.dim(1), out.data.data());
    return out;
}

template <typename T>
FcGradsT<T> fc_backward(const TensorT<T>& input, const FcParamsT<T>& p,
                        const TensorT<T>& grad_out) {
    p.validate();
    if (grad_out.rank() != 2 || grad_out.dim(0) != input.dim(0) ||
        grad_out.dim(1) != p.weight.dim(1)) {
        throw std::invalid_argument("fc_backward: grad_out shape mismatch");
    }
    FcGradsT<T> g;
    g.input = TensorT<T>(input.shape);
    g.weight = TensorT<T>(p.weight.shape);
    g.bias = TensorT<T>(p.bias.shape);
    kernels::fc_backward(input.data.data(), p.weight.data.data(), grad_out.data.data(),
                         input.dim(0), p.weight.dim(0), p.weight.dim(1), g.input.data.data(),
                         g.weight.data.data(), g.bias.data.data());
    return g;
}

template <typename T>
TensorT<T> flatten(const TensorT<T>& input) {
    check_rank_3_or_4(input.rank(), "flatten");
    if (input.rank() == 3) {
        return TensorT<T>({1, static_cast<int>(input.numel())}, input.data);
    }
    return TensorT<T>({input.dim(0), static_cast<int>(input.numel() / input.dim(0))}, input.data);
}

template <typename T>
struct XentResultT {
    double mean_loss = 0.0;
    std::vector<double> per_example;
    TensorT<T> grad_logits;  // gradient of the mean loss; empty unless requested
};

template <typename T>
XentResultT<T> softmax_xent(const TensorT<T>& logits, const std::vector<int>& labels,
                            bool want_grad = false) {
    if (logits.rank() != 2) throw std::invalid_argument("softmax_xent: logits must be N x K");
    const int n = logits.dim(0);
    const int k = logits.dim(1);
    if (static_cast<int>(labels.size()) != n) {
        throw std::invalid_argument("softmax_xent: label count mismatch");
    }
    for (int lab : labels) {
        if (lab < 0 || lab >= k) throw std::out_of_range("softmax_xent: label index out of range");
    }
    XentResultT<T> res;
    res.per_example.resize(static_cast<size_t>(n));
    if (want_grad) res.grad_logits = TensorT<T>(logits.shape);
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        const T* row = logits.data.data() + static_cast<size_t>(i) * k;
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < k; ++j) mx = std::max(mx, static_cast<double>(row[j]));
        double z = 0.0;
        for (int j = 0; j < k; ++j) z += std::exp(static_cast<double>(row[j]) - mx);
        const double logz = std::log(z) + mx;
        const double loss = logz - static_cast<double>(row[labels[static_cast<size_t>(i)]]);
        res.per_example[static_cast<size_t>(i)] = loss;
        total += loss;
        if (want_grad) {
            T* grow = res.grad_logits.data.data() + static_cast<size_t>(i) * k;
            for (int j = 0; j < k; ++j) {
                double p = std::exp(static_cast<double>(row[j]) - logz);
                if (j == labels[static_cast<size_t>(i)]) p -= 1.0;
                grow[j] = static_cast<T>(p / static_cast<double>(n));
            }
        }
    }
    res.mean_loss = total / static_cast<double>(n);
    return res;
}

// ||a - b||^2 / ||a||^2 over whole tensors, double accumulation.
template <typename T>
double normalized_squared_deviation(const TensorT<T>& base, const TensorT<T>& other,
                                    double* base_norm_sq = nullptr) {
    if (base.shape != other.shape) {
        throw std::invalid_argument("normalized_squared_deviation: shape mismatch");
    }
    double num = 0.0, den = 0.0;
    const long long n = base.numel();
    for (long long i = 0; i < n; ++i) {
        const double a = static_cast<double>(base.data[static_cast<size_t>(i)]);
        const double d = a - static_cast<double>(other.data[static_cast<size_t>(i)]);
        num += d * d;
        den += a * a;
    }
    if (base_norm_sq != nullptr) *base_norm_sq = den;
    return den > 0.0 ? num / den : 0.0;
}

}  // namespace ops
}  // namespace prunekit
