#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "prunekit/ops.hpp"
#include "prunekit/tensor.hpp"

namespace prunekit {

enum class LayerKind { input, conv, bn, relu, maxpool, flatten, fc, add };

std::string layer_kind_name(LayerKind k);
LayerKind layer_kind_from_name(const std::string& name);

struct LayerSpec {
    std::string id;
    LayerKind kind = LayerKind::input;
    int width = 0;  // conv: output channels, fc: output features
    int ksize = 0;  // conv / maxpool window
    int stride = 1;
    int padding = 0;
    std::vector<std::string> predecessors;
    bool prunable = false;
};

struct Shape3 {
    int h = 0, w = 0, c = 0;
    bool operator==(const Shape3&) const = default;
};

// Output extents of one layer: spatial maps carry h/w/c, flat layers carry
// features in c with h = w = 0.
struct LayerShape {
    bool spatial = true;
    int h = 0, w = 0, c = 0;
    bool operator==(const LayerShape&) const = default;
};

struct NetworkSpec {
    std::vector<LayerSpec> layers;  // topological order
    Shape3 input_shape;
    int classes = 0;

    int index_of(const std::string& id) const;
    const LayerSpec& layer(const std::string& id) const;
    std::vector<std::string> conv_ids() const;
    std::vector<std::string> prunable_conv_ids() const;
};

template <typename T>
struct ModelParamsT {
    std::map<std::string, ConvParamsT<T>> conv;
    std::map<std::string, FcParamsT<T>> fc;
    std::map<std::string, BNParamsT<T>> bn;
};
using ModelParams = ModelParamsT<float>;

// Binary channel masks keyed by conv layer id; length = that conv's width.
using MaskMap = std::map<std::string, std::vector<std::uint8_t>>;

template <typename T>
struct GraphCacheT {
    std::map<std::string, TensorT<T>> out;  // post-mask outputs, keyed by layer id
    std::map<std::string, ops::BNStatsT<T>> bn_stats;
    std::map<std::string, bool> bn_stats_from_batch;
    std::map<std::string, std::vector<long long>> pool_argmax;
};
using GraphCache = GraphCacheT<float>;

template <typename T>
struct GraphGradsT {
    std::map<std::string, ops::ConvGradsT<T>> conv;
    std::map<std::string, ops::FcGradsT<T>> fc;
    std::map<std::string, ops::BNGradsT<T>> bn;
};
using GraphGrads = GraphGradsT<float>;

// Structural checks; throws std::invalid_argument describing the first
// violation. Also fills the per-layer output shapes.
std::map<std::string, LayerShape> validate_and_infer(const NetworkSpec& spec);
inline void validate(const NetworkSpec& spec) { (void)validate_and_infer(spec); }

// The conv whose output channels flow (through shape-preserving layers) into
// this layer's input; empty when the provider is the network input or an add.
std::optional<std::string> channel_provider(const NetworkSpec& spec, const std::string& id);

// Layer ids from just after `conv_id` up to and including the next conv or fc
// that consumes its channels. Throws if the consumer is not unique.
std::vector<std::string> successor_chain(const NetworkSpec& spec, const std::string& conv_id);

struct FlopsReport {
    long long conv_total = 0;
    long long fc_total = 0;
    std::map<std::string, long long> per_layer;
    long long total() const { return conv_total + fc_total; }
};

// Multiply-accumulate count for one example. Masked-off channels are treated
// as removed (they shrink both the owning conv and its consumer).
FlopsReport flops_of(const NetworkSpec& spec, const MaskMap* masks = nullptr);

NetworkSpec build_vgg_cifar(int classes = 10);
// Same stack with every conv width replaced (13 entries).
NetworkSpec build_vgg_cifar(const std::vector<int>& widths, int classes = 10);
NetworkSpec build_vgg_small(Shape3 input = {16, 16, 1}, int classes = 4);
NetworkSpec build_small_resnet(Shape3 input = {16, 16, 1}, int classes = 4);
// Same topology with the prunable (block-internal) conv widths replaced, one
// entry per residual block; tied widths stay put.
NetworkSpec build_small_resnet(const std::vector<int>& block_widths, Shape3 input = {16, 16, 1},
                               int classes = 4);

// Replace every conv width: `widths` follows topological conv order.
NetworkSpec set_conv_widths(const NetworkSpec& spec, const std::vector<int>& widths);
// Scale prunable conv widths by `ratio`, rounding half away from zero, floor 1.
NetworkSpec scale_widths(const NetworkSpec& spec, double ratio);

ModelParams init_params(const NetworkSpec& spec, std::uint64_t seed);

MaskMap full_masks(const NetworkSpec& spec);

// Drop masked-off channels from the parameter tensors and emit the narrowed
// spec; surviving weights are byte-identical to the originals.
struct ReconstructResult {
    NetworkSpec spec;
    ModelParams params;
};
ReconstructResult reconstruct(const NetworkSpec& spec, const ModelParams& params,
                              const MaskMap& masks);

std::string spec_to_json(const NetworkSpec& spec);
NetworkSpec spec_from_json(const std::string& text, bool run_validate = true);

namespace detail {

template <typename T>
void scale_channels(TensorT<T>& t, const std::vector<std::uint8_t>& mask) {
    const int c = t.dim(t.rank() - 1);
    if (static_cast<int>(mask.size()) != c) {
        throw std::invalid_argument("mask length does not match channel count");
    }
    const long long rows = t.numel() / c;
    for (long long i = 0; i < rows; ++i) {
        for (int ch = 0; ch < c; ++ch) {
            if (!mask[static_cast<size_t>(ch)]) t.data[static_cast<size_t>(i) * c + ch] = T(0);
        }
    }
}

// conv id -> id of the bn that re-applies its mask (the bn directly after it).
std::map<std::string, std::string> mask_reapply_points(const NetworkSpec& spec);

std::map<std::string, std::vector<std::string>> consumer_map(const NetworkSpec& spec);

// Every mask key must name a conv layer and match its width.
void validate_masks(const NetworkSpec& spec, const MaskMap& masks);

}  // namespace detail

// Forward pass over the whole graph. `masks` zeroes conv output channels and
// is re-applied after the bn that directly follows the masked conv, so a
// masked channel contributes exactly zero to every downstream layer.
//  - update_running: bn running stats are folded in train mode when given.
//  - stats_override: per-bn statistics replacing batch/running ones (never
//    updates running state).
template <typename T>
TensorT<T> graph_forward(const NetworkSpec& spec, const ModelParamsT<T>& params,
                         const TensorT<T>& input, Mode mode, const MaskMap* masks = nullptr,
                         GraphCacheT<T>* cache = nullptr,
                         ModelParamsT<T>* update_running = nullptr,
                         const std::map<std::string, ops::BNStatsT<T>>* stats_override = nullptr) {
    if (input.rank() != 4) throw std::invalid_argument("graph_forward: input must be N x H x W x C");
    if (input.dim(1) != spec.input_shape.h || input.dim(2) != spec.input_shape.w ||
        input.dim(3) != spec.input_shape.c) {
        throw std::invalid_argument("graph_forward: input extents do not match the network spec");
    }
    const auto reapply = detail::mask_reapply_points(spec);
    std::map<std::string, const std::vector<std::uint8_t>*> bn_mask;
    if (masks != nullptr) {
        detail::validate_masks(spec, *masks);
        for (const auto& [conv_id, bn_id] : reapply) {
            auto it = masks->find(conv_id);
            if (it != masks->end()) bn_mask[bn_id] = &it->second;
        }
    }

    std::map<std::string, TensorT<T>> local;
    auto& outs = cache != nullptr ? cache->out : local;
    outs.clear();
    if (cache != nullptr) {
        cache->bn_stats.clear();
        cache->bn_stats_from_batch.clear();
        cache->pool_argmax.clear();
    }

    const std::string* last_id = nullptr;
    for (const auto& l : spec.layers) {
        TensorT<T> out;
        switch (l.kind) {
            case LayerKind::input:
                out = input;
                break;
            case LayerKind::conv: {
                out = ops::conv2d_forward(outs.at(l.predecessors[0]), params.conv.at(l.id));
                if (masks != nullptr) {
                    auto it = masks->find(l.id);
                    if (it != masks->end()) detail::scale_channels(out, it->second);
                }
                break;
            }
            case LayerKind::bn: {
                const ops::BNStatsT<T>* ov = nullptr;
                if (stats_override != nullptr) {
                    auto it = stats_override->find(l.id);
                    if (it != stats_override->end()) ov = &it->second;
                }
                ops::BNStatsT<T> used;
                BNParamsT<T>* upd = nullptr;
                if (update_running != nullptr && mode == Mode::train && ov == nullptr) {
                    upd = &update_running->bn.at(l.id);
                }
                out = ops::batchnorm_forward(outs.at(l.predecessors[0]), params.bn.at(l.id), mode,
                                             ov, &used, upd);
                if (cache != nullptr) {
                    cache->bn_stats[l.id] = used;
                    cache->bn_stats_from_batch[l.id] = (ov == nullptr && mode == Mode::train);
                }
                auto bm = bn_mask.find(l.id);
                if (bm != bn_mask.end()) detail::scale_channels(out, *bm->second);
                break;
            }
            case LayerKind::relu:
                out = ops::relu_forward(outs.at(l.predecessors[0]));
                break;
            case LayerKind::maxpool: {
                std::vector<long long> argmax;
                out = ops::maxpool2d_forward(outs.at(l.predecessors[0]), l.ksize, l.stride,
                                             cache != nullptr ? &argmax : nullptr);
                if (cache != nullptr) cache->pool_argmax[l.id] = std::move(argmax);
                break;
            }
            case LayerKind::flatten:
                out = ops::flatten(outs.at(l.predecessors[0]));
                break;
            case LayerKind::fc:
                out = ops::fc_forward(outs.at(l.predecessors[0]), params.fc.at(l.id));
                break;
            case LayerKind::add: {
                const auto& a = outs.at(l.predecessors[0]);
                const auto& b = outs.at(l.predecessors[1]);
                if (a.shape != b.shape) throw std::invalid_argument("add: operand shape mismatch");
                out = a;
                const long long n = out.numel();
                for (long long i = 0; i < n; ++i) {
                    out.data[static_cast<size_t>(i)] += b.data[static_cast<size_t>(i)];
                }
                break;
            }
        }
        outs[l.id] = std::move(out);
        last_id = &l.id;
    }
    if (last_id == nullptr) throw std::invalid_argument("graph_forward: empty network");
    return outs.at(*last_id);
}

// Backward pass. `cache` must come from a graph_forward call with the same
// spec/params/masks/input. Returns parameter gradients; optionally captures
// the accumulated gradient w.r.t. named layer outputs (post-mask).
template <typename T>
GraphGradsT<T> graph_backward(const NetworkSpec& spec, const ModelParamsT<T>& params,
                              const MaskMap* masks, const GraphCacheT<T>& cache,
                              const TensorT<T>& grad_logits,
                              const std::vector<std::string>* capture_ids = nullptr,
                              std::map<std::string, TensorT<T>>* captured = nullptr) {
    const auto reapply = detail::mask_reapply_points(spec);
    std::map<std::string, const std::vector<std::uint8_t>*> bn_mask;
    if (masks != nullptr) {
        detail::validate_masks(spec, *masks);
        for (const auto& [conv_id, bn_id] : reapply) {
            auto it = masks->find(conv_id);
            if (it != masks->end()) bn_mask[bn_id] = &it->second;
        }
    }

    GraphGradsT<T> grads;
    std::map<std::string, TensorT<T>> dout;
    dout[spec.layers.back().id] = grad_logits;

    auto add_into = [](std::map<std::string, TensorT<T>>& m, const std::string& id,
                       TensorT<T>&& g) {
        auto it = m.find(id);
        if (it == m.end()) {
            m[id] = std::move(g);
            return;
        }
        const long long n = it->second.numel();
        for (long long i = 0; i < n; ++i) {
            it->second.data[static_cast<size_t>(i)] += g.data[static_cast<size_t>(i)];
        }
    };

    for (auto li = spec.layers.rbegin(); li != spec.layers.rend(); ++li) {
        const auto& l = *li;
        auto git = dout.find(l.id);
        if (git == dout.end()) continue;  // no downstream consumer contributed
        TensorT<T> g = std::move(git->second);
        dout.erase(git);
        if (capture_ids != nullptr && captured != nullptr) {
            for (const auto& want : *capture_ids) {
                if (want == l.id) (*captured)[l.id] = g;
            }
        }
        switch (l.kind) {
            case LayerKind::input:
                break;
            case LayerKind::conv: {
                if (masks != nullptr) {
                    auto it = masks->find(l.id);
                    if (it != masks->end()) detail::scale_channels(g, it->second);
                }
                auto cg = ops::conv2d_backward(cache.out.at(l.predecessors[0]),
                                               params.conv.at(l.id), g);
                add_into(dout, l.predecessors[0], std::move(cg.input));
                cg.input = TensorT<T>();
                grads.conv[l.id] = std::move(cg);
                break;
            }
            case LayerKind::bn: {
                auto bm = bn_mask.find(l.id);
                if (bm != bn_mask.end()) detail::scale_channels(g, *bm->second);
                const auto& in = cache.out.at(l.predecessors[0]);
                const auto& st = cache.bn_stats.at(l.id);
                ops::BNGradsT<T> bg;
                if (cache.bn_stats_from_batch.at(l.id)) {
                    bg = ops::batchnorm_backward(in, params.bn.at(l.id), st, g);
                } else {
                    bg = ops::batchnorm_backward_fixed_stats(in, params.bn.at(l.id), st, g);
                }
                add_into(dout, l.predecessors[0], std::move(bg.input));
                bg.input = TensorT<T>();
                grads.bn[l.id] = std::move(bg);
                break;
            }
            case LayerKind::relu:
                add_into(dout, l.predecessors[0],
                         ops::relu_backward(cache.out.at(l.predecessors[0]), g));
                break;
            case LayerKind::maxpool:
                add_into(dout, l.predecessors[0],
                         ops::maxpool2d_backward(cache.out.at(l.predecessors[0]).shape,
                                                 cache.pool_argmax.at(l.id), g));
                break;
            case LayerKind::flatten: {
                TensorT<T> gi(cache.out.at(l.predecessors[0]).shape, g.data);
                add_into(dout, l.predecessors[0], std::move(gi));
                break;
            }
            case LayerKind::fc: {
                auto fg = ops::fc_backward(cache.out.at(l.predecessors[0]), params.fc.at(l.id), g);
                add_into(dout, l.predecessors[0], std::move(fg.input));
                fg.input = TensorT<T>();
                grads.fc[l.id] = std::move(fg);
                break;
            }
            case LayerKind::add: {
                TensorT<T> g2 = g;
                add_into(dout, l.predecessors[0], std::move(g));
                add_into(dout, l.predecessors[1], std::move(g2));
                break;
            }
        }
    }
    return grads;
}

template <typename To, typename From>
TensorT<To> tensor_cast(const TensorT<From>& t) {
    TensorT<To> out(t.shape);
    for (size_t i = 0; i < t.data.size(); ++i) out.data[i] = static_cast<To>(t.data[i]);
    return out;
}

template <typename To, typename From>
ModelParamsT<To> params_cast(const ModelParamsT<From>& p) {
    ModelParamsT<To> out;
    for (const auto& [id, cp] : p.conv) {
        out.conv[id] = {tensor_cast<To>(cp.kernel), tensor_cast<To>(cp.bias), cp.stride,
                        cp.padding};
    }
    for (const auto& [id, fp] : p.fc) {
        out.fc[id] = {tensor_cast<To>(fp.weight), tensor_cast<To>(fp.bias)};
    }
    for (const auto& [id, bp] : p.bn) {
        BNParamsT<To> b;
        b.gamma = tensor_cast<To>(bp.gamma);
        b.beta = tensor_cast<To>(bp.beta);
        b.running_mean = tensor_cast<To>(bp.running_mean);
        b.running_var = tensor_cast<To>(bp.running_var);
        b.epsilon = static_cast<To>(bp.epsilon);
        b.momentum = static_cast<To>(bp.momentum);
        out.bn[id] = std::move(b);
    }
    return out;
}

}  // namespace prunekit
