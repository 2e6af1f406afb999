#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "prunekit/graph.hpp"

namespace testutil {

using prunekit::TensorD;
using prunekit::TensorT;

template <typename T>
void fill_uniform(TensorT<T>& t, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    for (auto& v : t.data) v = static_cast<T>(dist(rng));
}

template <typename T>
TensorT<T> random_tensor(std::vector<int> shape, std::mt19937_64& rng, double lo = -1.0,
                         double hi = 1.0) {
    TensorT<T> t(std::move(shape));
    fill_uniform(t, rng, lo, hi);
    return t;
}

// Central-difference gradient of a scalar function with respect to x.
template <typename Fn>
TensorD numeric_grad(TensorD& x, Fn&& loss, double h = 1e-4) {
    TensorD g(x.shape);
    for (size_t i = 0; i < x.data.size(); ++i) {
        const double keep = x.data[i];
        x.data[i] = keep + h;
        const double up = loss();
        x.data[i] = keep - h;
        const double down = loss();
        x.data[i] = keep;
        g.data[i] = (up - down) / (2.0 * h);
    }
    return g;
}

inline double max_rel_err(const TensorD& got, const TensorD& want) {
    double worst = 0.0;
    for (size_t i = 0; i < got.data.size(); ++i) {
        const double a = got.data[i], b = want.data[i];
        const double scale = std::max({1e-3, std::fabs(a), std::fabs(b)});
        worst = std::max(worst, std::fabs(a - b) / scale);
    }
    return worst;
}

// Plain chain: input -> (conv bn relu) x widths -> pool -> flatten -> fc.
inline prunekit::NetworkSpec make_chain_net(prunekit::Shape3 input, std::vector<int> widths,
                                            int classes, int pool = 2) {
    using prunekit::LayerKind;
    prunekit::NetworkSpec spec;
    spec.input_shape = input;
    spec.classes = classes;
    spec.layers.push_back({"input", LayerKind::input, 0, 0, 1, 0, {}, false});
    std::string tail = "input";
    for (size_t i = 0; i < widths.size(); ++i) {
        const std::string n = std::to_string(i + 1);
        spec.layers.push_back({"conv" + n, LayerKind::conv, widths[i], 3, 1, 1, {tail}, true});
        spec.layers.push_back({"bn" + n, LayerKind::bn, 0, 0, 1, 0, {"conv" + n}, false});
        spec.layers.push_back({"relu" + n, LayerKind::relu, 0, 0, 1, 0, {"bn" + n}, false});
        tail = "relu" + n;
    }
    spec.layers.push_back({"pool", LayerKind::maxpool, 0, pool, pool, 0, {tail}, false});
    spec.layers.push_back({"flat", LayerKind::flatten, 0, 0, 1, 0, {"pool"}, false});
    spec.layers.push_back({"fc", LayerKind::fc, classes, 0, 1, 0, {"flat"}, false});
    prunekit::validate(spec);
    return spec;
}

}  // namespace testutil
