#include "prunekit/graph.hpp"

#include <cmath>
#include <random>
#include <set>

#include "json.hpp"

namespace prunekit {

std::string layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::input: return "input";
        case LayerKind::conv: return "conv";
        case LayerKind::bn: return "bn";
        case LayerKind::relu: return "relu";
        case LayerKind::maxpool: return "maxpool";
        case LayerKind::flatten: return "flatten";
        case LayerKind::fc: return "fc";
        case LayerKind::add: return "add";
    }
    throw std::invalid_argument("unknown layer kind");
}

LayerKind layer_kind_from_name(const std::string& name) {
    if (name == "input") return LayerKind::input;
    if (name == "conv") return LayerKind::conv;
    if (name == "bn") return LayerKind::bn;
    if (name == "relu") return LayerKind::relu;
    if (name == "maxpool") return LayerKind::maxpool;
    if (name == "flatten") return LayerKind::flatten;
    if (name == "fc") return LayerKind::fc;
    if (name == "add") return LayerKind::add;
    throw std::invalid_argument("unknown layer kind: " + name);
}

int NetworkSpec::index_of(const std::string& id) const {
    for (size_t i = 0; i < layers.size(); ++i) {
        if (layers[i].id == id) return static_cast<int>(i);
    }
    throw std::out_of_range("no layer named " + id);
}

const LayerSpec& NetworkSpec::layer(const std::string& id) const {
    return layers[static_cast<size_t>(index_of(id))];
}

std::vector<std::string> NetworkSpec::conv_ids() const {
    std::vector<std::string> out;
    for (const auto& l : layers) {
        if (l.kind == LayerKind::conv) out.push_back(l.id);
    }
    return out;
}

std::vector<std::string> NetworkSpec::prunable_conv_ids() const {
    std::vector<std::string> out;
    for (const auto& l : layers) {
        if (l.kind == LayerKind::conv && l.prunable) out.push_back(l.id);
    }
    return out;
}

namespace detail {

std::map<std::string, std::vector<std::string>> consumer_map(const NetworkSpec& spec) {
    std::map<std::string, std::vector<std::string>> out;
    for (const auto& l : spec.layers) {
        for (const auto& p : l.predecessors) out[p].push_back(l.id);
    }
    return out;
}

std::map<std::string, std::string> mask_reapply_points(const NetworkSpec& spec) {
    std::map<std::string, std::string> out;
    for (const auto& l : spec.layers) {
        if (l.kind == LayerKind::bn) {
            const auto& pred = spec.layer(l.predecessors[0]);
            if (pred.kind == LayerKind::conv) out[pred.id] = l.id;
        }
    }
    return out;
}

void validate_masks(const NetworkSpec& spec, const MaskMap& masks) {
    for (const auto& [id, mask] : masks) {
        const auto& l = spec.layer(id);
        if (l.kind != LayerKind::conv) {
            throw std::invalid_argument(id + ": mask on non-conv layer");
        }
        if (static_cast<int>(mask.size()) != l.width) {
            throw std::invalid_argument(id + ": mask length does not match width");
        }
    }
}

}  // namespace detail

std::map<std::string, LayerShape> validate_and_infer(const NetworkSpec& spec) {
    if (spec.layers.empty()) throw std::invalid_argument("network has no layers");
    if (spec.input_shape.h <= 0 || spec.input_shape.w <= 0 || spec.input_shape.c <= 0) {
        throw std::invalid_argument("input shape extents must be positive");
    }
    if (spec.classes <= 0) throw std::invalid_argument("class count must be positive");

    std::set<std::string> seen;
    std::map<std::string, LayerShape> shapes;
    int inputs = 0;
    for (size_t i = 0; i < spec.layers.size(); ++i) {
        const auto& l = spec.layers[i];
        if (l.id.empty()) throw std::invalid_argument("layer id must be non-empty");
        if (!seen.insert(l.id).second) throw std::invalid_argument("duplicate layer id " + l.id);
        const size_t want_preds = l.kind == LayerKind::input ? 0 : l.kind == LayerKind::add ? 2 : 1;
        if (l.predecessors.size() != want_preds) {
            throw std::invalid_argument(l.id + ": expected " + std::to_string(want_preds) +
                                        " predecessors");
        }
        for (const auto& p : l.predecessors) {
            if (!seen.count(p)) {
                throw std::invalid_argument(l.id + ": predecessor " + p +
                                            " missing or out of topological order");
            }
        }
        if (l.prunable && l.kind != LayerKind::conv) {
            throw std::invalid_argument(l.id + ": only conv layers can be prunable");
        }

        LayerShape s;
        switch (l.kind) {
            case LayerKind::input:
                if (++inputs > 1) throw std::invalid_argument("more than one input layer");
                if (i != 0) throw std::invalid_argument("input layer must come first");
                s = {true, spec.input_shape.h, spec.input_shape.w, spec.input_shape.c};
                break;
            case LayerKind::conv: {
                const auto& in = shapes.at(l.predecessors[0]);
                if (!in.spatial) throw std::invalid_argument(l.id + ": conv input must be spatial");
                if (l.width <= 0 || l.ksize <= 0) {
                    throw std::invalid_argument(l.id + ": conv needs positive width and ksize");
                }
                const auto d = kernels::conv_dims(1, in.h, in.w, in.c, l.ksize, l.ksize, l.width,
                                                  l.stride, l.padding);
                s = {true, d.ho, d.wo, l.width};
                break;
            }
            case LayerKind::bn:
            case LayerKind::relu:
                s = shapes.at(l.predecessors[0]);
                if (l.kind == LayerKind::bn && !s.spatial) {
                    throw std::invalid_argument(l.id + ": bn input must be spatial");
                }
                break;
            case LayerKind::maxpool: {
                const auto& in = shapes.at(l.predecessors[0]);
                if (!in.spatial) throw std::invalid_argument(l.id + ": pool input must be spatial");
                if (l.ksize <= 0 || l.stride <= 0 || in.h < l.ksize || in.w < l.ksize) {
                    throw std::invalid_argument(l.id + ": pool window does not fit");
                }
                s = {true, (in.h - l.ksize) / l.stride + 1, (in.w - l.ksize) / l.stride + 1, in.c};
                break;
            }
            case LayerKind::flatten: {
                const auto& in = shapes.at(l.predecessors[0]);
                if (!in.spatial) throw std::invalid_argument(l.id + ": flatten input must be spatial");
                s = {false, 0, 0, in.h * in.w * in.c};
                break;
            }
            case LayerKind::fc: {
                const auto& in = shapes.at(l.predecessors[0]);
                if (in.spatial) throw std::invalid_argument(l.id + ": fc input must be flat");
                if (l.width <= 0) throw std::invalid_argument(l.id + ": fc needs positive width");
                s = {false, 0, 0, l.width};
                break;
            }
            case LayerKind::add: {
                const auto& a = shapes.at(l.predecessors[0]);
                const auto& b = shapes.at(l.predecessors[1]);
                if (!(a == b)) throw std::invalid_argument(l.id + ": add operands differ in shape");
                s = a;
                break;
            }
        }
        shapes[l.id] = s;
    }
    if (inputs != 1) throw std::invalid_argument("network needs exactly one input layer");
    const auto& last = spec.layers.back();
    if (last.kind != LayerKind::fc || last.width != spec.classes) {
        throw std::invalid_argument("final layer must be an fc producing one logit per class");
    }

    const auto consumers = detail::consumer_map(spec);
    for (size_t i = 0; i + 1 < spec.layers.size(); ++i) {
        if (!consumers.count(spec.layers[i].id)) {
            throw std::invalid_argument(spec.layers[i].id + ": dangling layer");
        }
    }

    // A prunable conv's channels must reach exactly one conv/fc consumer and
    // never an add, otherwise channel removal is not a local rewrite.
    for (const auto& l : spec.layers) {
        if (l.kind != LayerKind::conv || !l.prunable) continue;
        std::vector<std::string> frontier = {l.id};
        int consumers_hit = 0;
        while (!frontier.empty()) {
            const std::string cur = frontier.back();
            frontier.pop_back();
            auto it = consumers.find(cur);
            if (it == consumers.end()) {
                throw std::invalid_argument(l.id + ": prunable conv channels reach the output");
            }
            for (const auto& nxt : it->second) {
                switch (spec.layer(nxt).kind) {
                    case LayerKind::conv:
                    case LayerKind::fc:
                        ++consumers_hit;
                        break;
                    case LayerKind::add:
                        throw std::invalid_argument(l.id +
                                                    ": prunable conv must not feed a residual add");
                    case LayerKind::input:
                        throw std::invalid_argument("input cannot consume");
                    default:
                        frontier.push_back(nxt);
                }
            }
        }
        if (consumers_hit != 1) {
            throw std::invalid_argument(l.id + ": prunable conv needs exactly one consumer");
        }
    }
    return shapes;
}

std::optional<std::string> channel_provider(const NetworkSpec& spec, const std::string& id) {
    std::string cur = spec.layer(id).predecessors.at(0);
    while (true) {
        const auto& l = spec.layer(cur);
        switch (l.kind) {
            case LayerKind::conv:
                return cur;
            case LayerKind::bn:
            case LayerKind::relu:
            case LayerKind::maxpool:
            case LayerKind::flatten:
                cur = l.predecessors[0];
                break;
            default:
                return std::nullopt;  // network input or an add
        }
    }
}

std::vector<std::string> successor_chain(const NetworkSpec& spec, const std::string& conv_id) {
    const auto consumers = detail::consumer_map(spec);
    std::vector<std::string> chain;
    std::string cur = conv_id;
    while (true) {
        auto it = consumers.find(cur);
        if (it == consumers.end() || it->second.size() != 1) {
            throw std::invalid_argument(conv_id + ": consumer chain is not unique");
        }
        const std::string& nxt = it->second[0];
        chain.push_back(nxt);
        const LayerKind k = spec.layer(nxt).kind;
        if (k == LayerKind::conv || k == LayerKind::fc) return chain;
        if (k == LayerKind::add) {
            throw std::invalid_argument(conv_id + ": consumer chain hits a residual add");
        }
        cur = nxt;
    }
}

FlopsReport flops_of(const NetworkSpec& spec, const MaskMap* masks) {
    const auto shapes = validate_and_infer(spec);
    if (masks != nullptr) detail::validate_masks(spec, *masks);
    auto surviving = [&](const std::string& conv_id, int width) {
        if (masks == nullptr) return width;
        auto it = masks->find(conv_id);
        if (it == masks->end()) return width;
        int n = 0;
        for (auto v : it->second) n += v ? 1 : 0;
        return n;
    };
    // effective channel count flowing out of each layer
    std::map<std::string, int> eff;
    FlopsReport rep;
    for (const auto& l : spec.layers) {
        switch (l.kind) {
            case LayerKind::input:
                eff[l.id] = spec.input_shape.c;
                break;
            case LayerKind::conv: {
                const int cin = eff.at(l.predecessors[0]);
                const int cout = surviving(l.id, l.width);
                const auto& s = shapes.at(l.id);
                const long long macs = static_cast<long long>(s.h) * s.w * l.ksize * l.ksize *
                                       cin * cout;
                rep.per_layer[l.id] = macs;
                rep.conv_total += macs;
                eff[l.id] = cout;
                break;
            }
            case LayerKind::flatten: {
                const auto& in = shapes.at(l.predecessors[0]);
                eff[l.id] = in.h * in.w * eff.at(l.predecessors[0]);
                break;
            }
            case LayerKind::fc: {
                const long long macs =
                    static_cast<long long>(eff.at(l.predecessors[0])) * l.width;
                rep.per_layer[l.id] = macs;
                rep.fc_total += macs;
                eff[l.id] = l.width;
                break;
            }
            case LayerKind::add:
                eff[l.id] = eff.at(l.predecessors[0]);
                break;
            default:
                eff[l.id] = eff.at(l.predecessors[0]);
        }
    }
    return rep;
}

namespace {

struct Builder {
    NetworkSpec spec;
    std::string tail;
    int n_conv = 0, n_pool = 0, n_add = 0;

    explicit Builder(Shape3 input, int classes) {
        spec.input_shape = input;
        spec.classes = classes;
        spec.layers.push_back({"input", LayerKind::input, 0, 0, 1, 0, {}});
        tail = "input";
    }
    std::string conv_bn_relu(int width, int ksize, int stride, int padding, bool prunable) {
        const std::string n = std::to_string(++n_conv);
        spec.layers.push_back({"conv" + n, LayerKind::conv, width, ksize, stride, padding, {tail},
                               prunable});
        spec.layers.push_back({"bn" + n, LayerKind::bn, 0, 0, 1, 0, {"conv" + n}});
        spec.layers.push_back({"relu" + n, LayerKind::relu, 0, 0, 1, 0, {"bn" + n}});
        tail = "relu" + n;
        return "conv" + n;
    }
    // conv+bn without the relu (residual branches close with relu after add)
    std::string conv_bn(int width, int ksize, int stride, int padding, bool prunable,
                        const std::string& from) {
        const std::string n = std::to_string(++n_conv);
        spec.layers.push_back({"conv" + n, LayerKind::conv, width, ksize, stride, padding, {from},
                               prunable});
        spec.layers.push_back({"bn" + n, LayerKind::bn, 0, 0, 1, 0, {"conv" + n}});
        return "bn" + n;
    }
    void pool(int k, int stride) {
        const std::string n = std::to_string(++n_pool);
        spec.layers.push_back({"pool" + n, LayerKind::maxpool, 0, k, stride, 0, {tail}});
        tail = "pool" + n;
    }
    void head() {
        spec.layers.push_back({"flatten", LayerKind::flatten, 0, 0, 1, 0, {tail}});
        spec.layers.push_back({"fc", LayerKind::fc, spec.classes, 0, 1, 0, {"flatten"}});
        tail = "fc";
    }
};

}  // namespace

NetworkSpec build_vgg_cifar(int classes) {
    Builder b({32, 32, 3}, classes);
    const std::vector<std::vector<int>> blocks = {
        {64, 64}, {128, 128}, {256, 256, 256}, {512, 512, 512}, {512, 512, 512}};
    for (const auto& widths : blocks) {
        for (int w : widths) b.conv_bn_relu(w, 3, 1, 1, true);
        b.pool(2, 2);
    }
    b.head();
    validate(b.spec);
    return b.spec;
}

NetworkSpec build_vgg_small(Shape3 input, int classes) {
    Builder b(input, classes);
    const std::vector<std::vector<int>> blocks = {{8, 8}, {16, 16}, {24, 24}, {32, 32}};
    for (const auto& widths : blocks) {
        for (int w : widths) b.conv_bn_relu(w, 3, 1, 1, true);
        b.pool(2, 2);
    }
    b.head();
    validate(b.spec);
    return b.spec;
}

NetworkSpec build_small_resnet(Shape3 input, int classes) {
    Builder b(input, classes);
    b.conv_bn_relu(16, 3, 1, 1, false);  // stem
    int spatial = input.h;
    const int widths[3] = {16, 32, 64};
    for (int stage = 0; stage < 3; ++stage) {
        const int w = widths[stage];
        const int stride = stage == 0 ? 1 : 2;
        const std::string block_in = b.tail;
        b.conv_bn_relu(w, 3, stride, 1, true);
        const std::string main_out = b.conv_bn(w, 3, 1, 1, false, b.tail);
        std::string shortcut = block_in;
        if (stride != 1) shortcut = b.conv_bn(w, 1, stride, 0, false, block_in);
        const std::string n = std::to_string(++b.n_add);
        b.spec.layers.push_back({"add" + n, LayerKind::add, 0, 0, 1, 0, {main_out, shortcut}});
        b.spec.layers.push_back(
            {"relu_add" + n, LayerKind::relu, 0, 0, 1, 0, {"add" + n}});
        b.tail = "relu_add" + n;
        if (stride == 2) spatial = (spatial + 2 - 3) / 2 + 1;
    }
    b.pool(spatial, spatial);  // collapse to 1x1
    b.head();
    validate(b.spec);
    return b.spec;
}

NetworkSpec build_vgg_cifar(const std::vector<int>& widths, int classes) {
    return set_conv_widths(build_vgg_cifar(classes), widths);
}

NetworkSpec build_small_resnet(const std::vector<int>& block_widths, Shape3 input, int classes) {
    NetworkSpec out = build_small_resnet(input, classes);
    size_t k = 0;
    for (auto& l : out.layers) {
        if (l.kind != LayerKind::conv || !l.prunable) continue;
        if (k >= block_widths.size()) {
            throw std::invalid_argument("fewer widths than residual blocks");
        }
        if (block_widths[k] < 1) throw std::invalid_argument("conv width must be at least 1");
        l.width = block_widths[k++];
    }
    if (k != block_widths.size()) {
        throw std::invalid_argument("more widths than residual blocks");
    }
    validate(out);
    return out;
}

NetworkSpec set_conv_widths(const NetworkSpec& spec, const std::vector<int>& widths) {
    NetworkSpec out = spec;
    size_t k = 0;
    for (auto& l : out.layers) {
        if (l.kind != LayerKind::conv) continue;
        if (k >= widths.size()) throw std::invalid_argument("fewer widths than conv layers");
        if (widths[k] < 1) throw std::invalid_argument("conv width must be at least 1");
        l.width = widths[k++];
    }
    if (k != widths.size()) throw std::invalid_argument("more widths than conv layers");
    validate(out);
    return out;
}

NetworkSpec scale_widths(const NetworkSpec& spec, double ratio) {
    if (!(ratio > 0.0)) throw std::invalid_argument("width ratio must be positive");
    NetworkSpec out = spec;
    for (auto& l : out.layers) {
        if (l.kind == LayerKind::conv && l.prunable) {
            l.width = std::max(1, static_cast<int>(std::floor(l.width * ratio + 0.5)));
        }
    }
    validate(out);
    return out;
}

ModelParams init_params(const NetworkSpec& spec, std::uint64_t seed) {
    const auto shapes = validate_and_infer(spec);
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> normal(0.0f, 1.0f);
    ModelParams params;
    for (const auto& l : spec.layers) {
        switch (l.kind) {
            case LayerKind::conv: {
                const int cin = shapes.at(l.predecessors[0]).c;
                ConvParams p;
                p.kernel = Tensor({l.ksize, l.ksize, cin, l.width});
                p.bias = Tensor({l.width});
                p.stride = l.stride;
                p.padding = l.padding;
                const float std_dev = std::sqrt(2.0f / (l.ksize * l.ksize * cin));
                for (auto& v : p.kernel.data) v = normal(rng) * std_dev;
                params.conv[l.id] = std::move(p);
                break;
            }
            case LayerKind::fc: {
                const int fin = shapes.at(l.predecessors[0]).c;
                FcParams p;
                p.weight = Tensor({fin, l.width});
                p.bias = Tensor({l.width});
                const float std_dev = std::sqrt(2.0f / fin);
                for (auto& v : p.weight.data) v = normal(rng) * std_dev;
                params.fc[l.id] = std::move(p);
                break;
            }
            case LayerKind::bn: {
                const int c = shapes.at(l.id).c;
                BNParams p;
                p.gamma = Tensor({c}, std::vector<float>(static_cast<size_t>(c), 1.0f));
                p.beta = Tensor({c});
                p.running_mean = Tensor({c});
                p.running_var = Tensor({c}, std::vector<float>(static_cast<size_t>(c), 1.0f));
                params.bn[l.id] = std::move(p);
                break;
            }
            default:
                break;
        }
    }
    return params;
}

MaskMap full_masks(const NetworkSpec& spec) {
    MaskMap m;
    for (const auto& l : spec.layers) {
        if (l.kind == LayerKind::conv && l.prunable) {
            m[l.id].assign(static_cast<size_t>(l.width), 1);
        }
    }
    return m;
}

namespace {

std::vector<int> kept_indices(const std::vector<std::uint8_t>& mask) {
    std::vector<int> kept;
    for (size_t i = 0; i < mask.size(); ++i) {
        if (mask[i]) kept.push_back(static_cast<int>(i));
    }
    return kept;
}

Tensor slice_last_dim(const Tensor& t, const std::vector<int>& kept) {
    std::vector<int> shape = t.shape;
    const int c = shape.back();
    shape.back() = static_cast<int>(kept.size());
    Tensor out(shape);
    const long long rows = t.numel() / c;
    for (long long i = 0; i < rows; ++i) {
        for (size_t j = 0; j < kept.size(); ++j) {
            out.data[static_cast<size_t>(i) * kept.size() + j] =
                t.data[static_cast<size_t>(i) * c + kept[j]];
        }
    }
    return out;
}

Tensor slice_conv_cin(const Tensor& kernel, const std::vector<int>& kept) {
    // kernel is R x S x Cin x Cout
    Tensor out({kernel.dim(0), kernel.dim(1), static_cast<int>(kept.size()), kernel.dim(3)});
    for (int r = 0; r < kernel.dim(0); ++r) {
        for (int s = 0; s < kernel.dim(1); ++s) {
            for (size_t j = 0; j < kept.size(); ++j) {
                for (int co = 0; co < kernel.dim(3); ++co) {
                    out.at(r, s, static_cast<int>(j), co) = kernel.at(r, s, kept[j], co);
                }
            }
        }
    }
    return out;
}

}  // namespace

ReconstructResult reconstruct(const NetworkSpec& spec, const ModelParams& params,
                              const MaskMap& masks) {
    const auto shapes = validate_and_infer(spec);
    detail::validate_masks(spec, masks);
    for (const auto& [id, mask] : masks) {
        const auto& l = spec.layer(id);
        const auto kept = kept_indices(mask);
        if (kept.empty()) {
            throw std::invalid_argument(id + ": cannot reconstruct a layer with no channels left");
        }
        if (!l.prunable && static_cast<int>(kept.size()) != l.width) {
            throw std::invalid_argument(id + ": mask on unprunable layer");
        }
    }

    ReconstructResult res;
    res.spec = spec;
    res.params = params;
    for (auto& l : res.spec.layers) {
        switch (l.kind) {
            case LayerKind::conv: {
                auto& p = res.params.conv.at(l.id);
                // shrink own output channels
                auto mit = masks.find(l.id);
                if (mit != masks.end()) {
                    const auto kept = kept_indices(mit->second);
                    p.kernel = slice_last_dim(p.kernel, kept);
                    p.bias = slice_last_dim(p.bias, kept);
                    l.width = static_cast<int>(kept.size());
                }
                // shrink input channels to match a masked provider
                const auto provider = channel_provider(spec, l.id);
                if (provider) {
                    auto pit = masks.find(*provider);
                    if (pit != masks.end()) {
                        p.kernel = slice_conv_cin(p.kernel, kept_indices(pit->second));
                    }
                }
                break;
            }
            case LayerKind::bn: {
                const auto provider = channel_provider(spec, l.id);
                if (!provider) break;
                auto pit = masks.find(*provider);
                if (pit == masks.end()) break;
                const auto kept = kept_indices(pit->second);
                auto& p = res.params.bn.at(l.id);
                p.gamma = slice_last_dim(p.gamma, kept);
                p.beta = slice_last_dim(p.beta, kept);
                p.running_mean = slice_last_dim(p.running_mean, kept);
                p.running_var = slice_last_dim(p.running_var, kept);
                break;
            }
            case LayerKind::fc: {
                const auto& pred = spec.layer(l.predecessors[0]);
                if (pred.kind != LayerKind::flatten) break;
                const auto provider = channel_provider(spec, l.id);
                if (!provider) break;
                auto pit = masks.find(*provider);
                if (pit == masks.end()) break;
                const auto kept = kept_indices(pit->second);
                const auto& in = shapes.at(pred.predecessors[0]);
                auto& p = res.params.fc.at(l.id);
                // flat index (y*W + x)*C + c: keep rows whose channel survives
                Tensor w({in.h * in.w * static_cast<int>(kept.size()), p.weight.dim(1)});
                int row = 0;
                for (int px = 0; px < in.h * in.w; ++px) {
                    for (int c : kept) {
                        for (int k = 0; k < p.weight.dim(1); ++k) {
                            w.at(row, k) = p.weight.at(px * in.c + c, k);
                        }
                        ++row;
                    }
                }
                p.weight = std::move(w);
                break;
            }
            default:
                break;
        }
    }
    validate(res.spec);
    return res;
}

std::string spec_to_json(const NetworkSpec& spec) {
    nlohmann::ordered_json j;
    j["input_shape"] = {spec.input_shape.h, spec.input_shape.w, spec.input_shape.c};
    j["classes"] = spec.classes;
    j["layers"] = nlohmann::ordered_json::array();
    for (const auto& l : spec.layers) {
        nlohmann::ordered_json jl;
        jl["id"] = l.id;
        jl["kind"] = layer_kind_name(l.kind);
        jl["width"] = l.width;
        jl["ksize"] = l.ksize;
        jl["stride"] = l.stride;
        jl["padding"] = l.padding;
        jl["predecessors"] = l.predecessors;
        jl["prunable"] = l.prunable;
        j["layers"].push_back(jl);
    }
    return j.dump(2);
}

NetworkSpec spec_from_json(const std::string& text, bool run_validate) {
    const auto j = nlohmann::json::parse(text);
    NetworkSpec spec;
    const auto& in = j.at("input_shape");
    if (!in.is_array() || in.size() != 3) {
        throw std::invalid_argument("input_shape must be [h, w, c]");
    }
    spec.input_shape = {in[0].get<int>(), in[1].get<int>(), in[2].get<int>()};
    spec.classes = j.at("classes").get<int>();
    for (const auto& jl : j.at("layers")) {
        LayerSpec l;
        l.id = jl.at("id").get<std::string>();
        l.kind = layer_kind_from_name(jl.at("kind").get<std::string>());
        l.width = jl.value("width", 0);
        l.ksize = jl.value("ksize", 0);
        l.stride = jl.value("stride", 1);
        l.padding = jl.value("padding", 0);
        l.predecessors = jl.value("predecessors", std::vector<std::string>{});
        l.prunable = jl.value("prunable", false);
        spec.layers.push_back(std::move(l));
    }
    if (run_validate) validate(spec);
    return spec;
}

}  // namespace prunekit
