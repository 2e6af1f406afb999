#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace prunekit::kernels {

// Global switch between the OpenMP kernels and the serial references.
// Both produce bit-identical results: every output element is reduced in the
// same fixed (lexicographic) order, with double accumulators.
inline bool& parallel_flag() {
    static bool flag = true;
    return flag;
}
inline void set_parallel(bool on) { parallel_flag() = on; }
inline bool parallel_enabled() { return parallel_flag(); }

struct ConvDims {
    int n;       // batch
    int h, w;    // input spatial
    int cin;     // input channels
    int r, s;    // kernel spatial
    int cout;    // output channels
    int stride;
    int pad;
    int ho, wo;  // output spatial
};

inline ConvDims conv_dims(int n, int h, int w, int cin, int r, int s, int cout, int stride,
                          int pad) {
    if (stride < 1) throw std::invalid_argument("conv stride must be positive");
    if (pad < 0) throw std::invalid_argument("conv padding must be non-negative");
    ConvDims d{n, h, w, cin, r, s, cout, stride, pad, 0, 0};
    const int eh = h + 2 * pad - r;
    const int ew = w + 2 * pad - s;
    if (eh < 0 || ew < 0) {
        throw std::invalid_argument("conv kernel larger than padded input");
    }
    d.ho = eh / stride + 1;
    d.wo = ew / stride + 1;
    return d;
}

// ---------------------------------------------------------------------------
// conv2d forward: cross-correlation, out[n,ho,wo,co] = sum_{r,s,ci} in*k + b.
// Layout: in N*H*W*Cin, k R*S*Cin*Cout, out N*Ho*Wo*Cout.
// ---------------------------------------------------------------------------

template <typename T>
void conv2d_forward_serial(const T* in, const T* k, const T* bias, const ConvDims& d, T* out) {
    for (int n = 0; n < d.n; ++n) {
        for (int ho = 0; ho < d.ho; ++ho) {
            for (int wo = 0; wo < d.wo; ++wo) {
                for (int co = 0; co < d.cout; ++co) {
                    double acc = 0.0;
                    for (int r = 0; r < d.r; ++r) {
                        const int hi = ho * d.stride - d.pad + r;
                        if (hi < 0 || hi >= d.h) continue;
                        for (int s = 0; s < d.s; ++s) {
                            const int wi = wo * d.stride - d.pad + s;
                            if (wi < 0 || wi >= d.w) continue;
                            const T* in_px = in + ((static_cast<size_t>(n) * d.h + hi) * d.w + wi) * d.cin;
                            const T* k_px = k + (static_cast<size_t>(r) * d.s + s) * d.cin * d.cout;
                            for (int ci = 0; ci < d.cin; ++ci) {
                                acc += static_cast<double>(in_px[ci]) *
                                       static_cast<double>(k_px[static_cast<size_t>(ci) * d.cout + co]);
                            }
                        }
                    }
                    out[((static_cast<size_t>(n) * d.ho + ho) * d.wo + wo) * d.cout + co] =
                        static_cast<T>(acc + static_cast<double>(bias[co]));
                }
            }
        }
    }
}

template <typename T>
void conv2d_forward_omp(const T* in, const T* k, const T* bias, const ConvDims& d, T* out) {
    const long long pixels = static_cast<long long>(d.n) * d.ho * d.wo;
#pragma omp parallel
    {
        std::vector<double> acc(static_cast<size_t>(d.cout));
#pragma omp for
        for (long long px = 0; px < pixels; ++px) {
            const int n = static_cast<int>(px / (d.ho * d.wo));
            const int rem = static_cast<int>(px % (d.ho * d.wo));
            const int ho = rem / d.wo;
            const int wo = rem % d.wo;
            for (int co = 0; co < d.cout; ++co) acc[static_cast<size_t>(co)] = 0.0;
            for (int r = 0; r < d.r; ++r) {
                const int hi = ho * d.stride - d.pad + r;
                if (hi < 0 || hi >= d.h) continue;
                for (int s = 0; s < d.s; ++s) {
                    const int wi = wo * d.stride - d.pad + s;
                    if (wi < 0 || wi >= d.w) continue;
                    const T* in_px = in + ((static_cast<size_t>(n) * d.h + hi) * d.w + wi) * d.cin;
                    const T* k_px = k + (static_cast<size_t>(r) * d.s + s) * d.cin * d.cout;
                    for (int ci = 0; ci < d.cin; ++ci) {
                        const double a = static_cast<double>(in_px[ci]);
                        const T* k_row = k_px + static_cast<size_t>(ci) * d.cout;
                        for (int co = 0; co < d.cout; ++co) {
                            acc[static_cast<size_t>(co)] += a * static_cast<double>(k_row[co]);
                        }
                    }
                }
            }
            T* out_px = out + static_cast<size_t>(px) * d.cout;
            for (int co = 0; co < d.cout; ++co) {
                out_px[co] = static_cast<T>(acc[static_cast<size_t>(co)] + static_cast<double>(bias[co]));
            }
        }
    }
}

template <typename T>
void conv2d_forward(const T* in, const T* k, const T* bias, const ConvDims& d, T* out) {
    if (parallel_enabled()) {
        conv2d_forward_omp(in, k, bias, d, out);
    } else {
        conv2d_forward_serial(in, k, bias, d, out);
    }
}

// ---------------------------------------------------------------------------
// conv2d backward, input side: gin[n,hi,wi,ci] = sum_{r,s,co} gout*k.
// ---------------------------------------------------------------------------

template <typename T>
void conv2d_backward_input_serial(const T* k, const T* gout, const ConvDims& d, T* gin) {
    for (int n = 0; n < d.n; ++n) {
        for (int hi = 0; hi < d.h; ++hi) {
            for (int wi = 0; wi < d.w; ++wi) {
                for (int ci = 0; ci < d.cin; ++ci) {
                    double acc = 0.0;
                    for (int r = 0; r < d.r; ++r) {
                        const int hn = hi + d.pad - r;
                        if (hn < 0 || hn % d.stride != 0) continue;
                        const int ho = hn / d.stride;
                        if (ho >= d.ho) continue;
                        for (int s = 0; s < d.s; ++s) {
                            const int wn = wi + d.pad - s;
                            if (wn < 0 || wn % d.stride != 0) continue;
                            const int wo = wn / d.stride;
                            if (wo >= d.wo) continue;
                            const T* g_px =
                                gout + ((static_cast<size_t>(n) * d.ho + ho) * d.wo + wo) * d.cout;
                            const T* k_row = k + ((static_cast<size_t>(r) * d.s + s) * d.cin + ci) * d.cout;
                            for (int co = 0; co < d.cout; ++co) {
                                acc += static_cast<double>(g_px[co]) * static_cast<double>(k_row[co]);
                            }
                        }
                    }
                    gin[((static_cast<size_t>(n) * d.h + hi) * d.w + wi) * d.cin + ci] = static_cast<T>(acc);
                }
            }
        }
    }
}

template <typename T>
void conv2d_backward_input_omp(const T* k, const T* gout, const ConvDims& d, T* gin) {
    const long long pixels = static_cast<long long>(d.n) * d.h * d.w;
#pragma omp parallel
    {
        std::vector<double> acc(static_cast<size_t>(d.cin));
#pragma omp for
        for (long long px = 0; px < pixels; ++px) {
            const int n = static_cast<int>(px / (d.h * d.w));
            const int rem = static_cast<int>(px % (d.h * d.w));
            const int hi = rem / d.w;
            const int wi = rem % d.w;
            for (int ci = 0; ci < d.cin; ++ci) acc[static_cast<size_t>(ci)] = 0.0;
            for (int r = 0; r < d.r; ++r) {
                const int hn = hi + d.pad - r;
                if (hn < 0 || hn % d.stride != 0) continue;
                const int ho = hn / d.stride;
                if (ho >= d.ho) continue;
                for (int s = 0; s < d.s; ++s) {
                    const int wn = wi + d.pad - s;
                    if (wn < 0 || wn % d.stride != 0) continue;
                    const int wo = wn / d.stride;
                    if (wo >= d.wo) continue;
                    const T* g_px = gout + ((static_cast<size_t>(n) * d.ho + ho) * d.wo + wo) * d.cout;
                    const T* k_base = k + (static_cast<size_t>(r) * d.s + s) * d.cin * d.cout;
                    for (int ci = 0; ci < d.cin; ++ci) {
                        const T* k_row = k_base + static_cast<size_t>(ci) * d.cout;
                        double sum = acc[static_cast<size_t>(ci)];
                        for (int co = 0; co < d.cout; ++co) {
                            sum += static_cast<double>(g_px[co]) * static_cast<double>(k_row[co]);
                        }
                        acc[static_cast<size_t>(ci)] = sum;
                    }
                }
            }
            T* gin_px = gin + static_cast<size_t>(px) * d.cin;
            for (int ci = 0; ci < d.cin; ++ci) gin_px[ci] = static_cast<T>(acc[static_cast<size_t>(ci)]);
        }
    }
}

template <typename T>
void conv2d_backward_input(const T* k, const T* gout, const ConvDims& d, T* gin) {
    if (parallel_enabled()) {
        conv2d_backward_input_omp(k, gout, d, gin);
    } else {
        conv2d_backward_input_serial(k, gout, d, gin);
    }
}

// ---------------------------------------------------------------------------
// conv2d backward, parameter side: gk[r,s,ci,co] = sum_{n,ho,wo} in*gout,
// gbias[co] = sum gout.
// ---------------------------------------------------------------------------

template <typename T>
void conv2d_backward_kernel_serial(const T* in, const T* gout, const ConvDims& d, T* gk, T* gbias) {
    for (int r = 0; r < d.r; ++r) {
        for (int s = 0; s < d.s; ++s) {
            for (int ci = 0; ci < d.cin; ++ci) {
                for (int co = 0; co < d.cout; ++co) {
                    double acc = 0.0;
                    for (int n = 0; n < d.n; ++n) {
                        for (int ho = 0; ho < d.ho; ++ho) {
                            const int hi = ho * d.stride - d.pad + r;
                            if (hi < 0 || hi >= d.h) continue;
                            for (int wo = 0; wo < d.wo; ++wo) {
                                const int wi = wo * d.stride - d.pad + s;
                                if (wi < 0 || wi >= d.w) continue;
                                acc += static_cast<double>(
                                           in[((static_cast<size_t>(n) * d.h + hi) * d.w + wi) * d.cin + ci]) *
                                       static_cast<double>(
                                           gout[((static_cast<size_t>(n) * d.ho + ho) * d.wo + wo) * d.cout + co]);
                            }
                        }
                    }
                    gk[((static_cast<size_t>(r) * d.s + s) * d.cin + ci) * d.cout + co] = static_cast<T>(acc);
                }
            }
        }
    }
    for (int co = 0; co < d.cout; ++co) {
        double acc = 0.0;
        const long long outputs = static_cast<long long>(d.n) * d.ho * d.wo;
        for (long long px = 0; px < outputs; ++px) {
            acc += static_cast<double>(gout[static_cast<size_t>(px) * d.cout + co]);
        }
        gbias[co] = static_cast<T>(acc);
    }
}

template <typename T>
void conv2d_backward_kernel_omp(const T* in, const T* gout, const ConvDims& d, T* gk, T* gbias) {
    const long long taps = static_cast<long long>(d.r) * d.s * d.cin;
#pragma omp parallel
    {
        std::vector<double> acc(static_cast<size_t>(d.cout));
#pragma omp for nowait
        for (long long tap = 0; tap < taps; ++tap) {
            const int r = static_cast<int>(tap / (d.s * d.cin));
            const int rem = static_cast<int>(tap % (d.s * d.cin));
            const int s = rem / d.cin;
            const int ci = rem % d.cin;
            for (int co = 0; co < d.cout; ++co) acc[static_cast<size_t>(co)] = 0.0;
            for (int n = 0; n < d.n; ++n) {
                for (int ho = 0; ho < d.ho; ++ho) {
                    const int hi = ho * d.stride - d.pad + r;
                    if (hi < 0 || hi >= d.h) continue;
                    for (int wo = 0; wo < d.wo; ++wo) {
                        const int wi = wo * d.stride - d.pad + s;
                        if (wi < 0 || wi >= d.w) continue;
                        const double a = static_cast<double>(
                            in[((static_cast<size_t>(n) * d.h + hi) * d.w + wi) * d.cin + ci]);
                        const T* g_px = gout + ((static_cast<size_t>(n) * d.ho + ho) * d.wo + wo) * d.cout;
                        for (int co = 0; co < d.cout; ++co) {
                            acc[static_cast<size_t>(co)] += a * static_cast<double>(g_px[co]);
                        }
                    }
                }
            }
            T* gk_row = gk + static_cast<size_t>(tap) * d.cout;
            for (int co = 0; co < d.cout; ++co) gk_row[co] = static_cast<T>(acc[static_cast<size_t>(co)]);
        }
#pragma omp for
        for (int co = 0; co < d.cout; ++co) {
            double sum = 0.0;
            const long long outputs = static_cast<long long>(d.n) * d.ho * d.wo;
            for (long long px = 0; px < outputs; ++px) {
                sum += static_cast<double>(gout[static_cast<size_t>(px) * d.cout + co]);
            }
            gbias[co] = static_cast<T>(sum);
        }
    }
}

template <typename T>
void conv2d_backward_kernel(const T* in, const T* gout, const ConvDims& d, T* gk, T* gbias) {
    if (parallel_enabled()) {
        conv2d_backward_kernel_omp(in, gout, d, gk, gbias);
    } else {
        conv2d_backward_kernel_serial(in, gout, d, gk, gbias);
    }
}

// ---------------------------------------------------------------------------
// fully connected: out[n,k] = sum_f in[n,f]*w[f,k] + b[k]
// ---------------------------------------------------------------------------

template <typename T>
void fc_forward_serial(const T* in, const T* w, const T* b, int n, int f, int k, T* out) {
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < k; ++j) {
            double acc = 0.0;
            for (int x = 0; x < f; ++x) {
                acc += static_cast<double>(in[static_cast<size_t>(i) * f + x]) *
                       static_cast<double>(w[static_cast<size_t>(x) * k + j]);
            }
            out[static_cast<size_t>(i) * k + j] = static_cast<T>(acc + static_cast<double>(b[j]));
        }
    }
}

template <typename T>
void fc_forward_omp(const T* in, const T* w, const T* b, int n, int f, int k, T* out) {
#pragma omp parallel
    {
        std::vector<double> acc(static_cast<size_t>(k));
#pragma omp for
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < k; ++j) acc[static_cast<size_t>(j)] = 0.0;
            for (int x = 0; x < f; ++x) {
                const double a = static_cast<double>(in[static_cast<size_t>(i) * f + x]);
                const T* w_row = w + static_cast<size_t>(x) * k;
                for (int j = 0; j < k; ++j) acc[static_cast<size_t>(j)] += a * static_cast<double>(w_row[j]);
            }
            T* out_row = out + static_cast<size_t>(i) * k;
            for (int j = 0; j < k; ++j) {
                out_row[j] = static_cast<T>(acc[static_cast<size_t>(j)] + static_cast<double>(b[j]));
            }
        }
    }
}

template <typename T>
void fc_forward(const T* in, const T* w, const T* b, int n, int f, int k, T* out) {
    if (parallel_enabled()) {
        fc_forward_omp(in, w, b, n, f, k, out);
    } else {
        fc_forward_serial(in, w, b, n, f, k, out);
    }
}

template <typename T>
void fc_backward_serial(const T* in, const T* w, const T* gout, int n, int f, int k, T* gin,
                        T* gw, T* gb) {
    for (int i = 0; i < n; ++i) {
        for (int x = 0; x < f; ++x) {
            double acc = 0.0;
            const T* g_row = gout + static_cast<size_t>(i) * k;
            const T* w_row = w + static_cast<size_t>(x) * k;
            for (int j = 0; j < k; ++j) {
                acc += static_cast<double>(g_row[j]) * static_cast<double>(w_row[j]);
            }
            gin[static_cast<size_t>(i) * f + x] = static_cast<T>(acc);
        }
    }
    for (int x = 0; x < f; ++x) {
        for (int j = 0; j < k; ++j) {
            double acc = 0.0;
            for (int i = 0; i < n; ++i) {
                acc += static_cast<double>(in[static_cast<size_t>(i) * f + x]) *
                       static_cast<double>(gout[static_cast<size_t>(i) * k + j]);
            }
            gw[static_cast<size_t>(x) * k + j] = static_cast<T>(acc);
        }
    }
    for (int j = 0; j < k; ++j) {
        double acc = 0.0;
        for (int i = 0; i < n; ++i) acc += static_cast<double>(gout[static_cast<size_t>(i) * k + j]);
        gb[j] = static_cast<T>(acc);
    }
}

template <typename T>
void fc_backward_omp(const T* in, const T* w, const T* gout, int n, int f, int k, T* gin, T* gw,
                     T* gb) {
#pragma omp parallel
    {
#pragma omp for nowait
        for (int i = 0; i < n; ++i) {
            const T* g_row = gout + static_cast<size_t>(i) * k;
            for (int x = 0; x < f; ++x) {
                double acc = 0.0;
                const T* w_row = w + static_cast<size_t>(x) * k;
                for (int j = 0; j < k; ++j) {
                    acc += static_cast<double>(g_row[j]) * static_cast<double>(w_row[j]);
                }
                gin[static_cast<size_t>(i) * f + x] = static_cast<T>(acc);
            }
        }
        std::vector<double> acc(static_cast<size_t>(k));
#pragma omp for nowait
        for (int x = 0; x < f; ++x) {
            for (int j = 0; j < k; ++j) acc[static_cast<size_t>(j)] = 0.0;
            for (int i = 0; i < n; ++i) {
                const double a = static_cast<double>(in[static_cast<size_t>(i) * f + x]);
                const T* g_row = gout + static_cast<size_t>(i) * k;
                for (int j = 0; j < k; ++j) acc[static_cast<size_t>(j)] += a * static_cast<double>(g_row[j]);
            }
            T* gw_row = gw + static_cast<size_t>(x) * k;
            for (int j = 0; j < k; ++j) gw_row[j] = static_cast<T>(acc[static_cast<size_t>(j)]);
        }
#pragma omp for
        for (int j = 0; j < k; ++j) {
            double sum = 0.0;
            for (int i = 0; i < n; ++i) sum += static_cast<double>(gout[static_cast<size_t>(i) * k + j]);
            gb[j] = static_cast<T>(sum);
        }
    }
}

template <typename T>
void fc_backward(const T* in, const T* w, const T* gout, int n, int f, int k, T* gin, T* gw,
                 T* gb) {
    if (parallel_enabled()) {
        fc_backward_omp(in, w, gout, n, f, k, gin, gw, gb);
    } else {
        fc_backward_serial(in, w, gout, n, f, k, gin, gw, gb);
    }
}

}  // namespace prunekit::kernels
