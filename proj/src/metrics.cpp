#include "prunekit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "prunekit/aofp.hpp"
#include "prunekit/ops.hpp"
#include "prunekit/trainer.hpp"

namespace prunekit::metrics {

namespace {

// Walk forward from the conv through its bn/relu tail: the post-activation map.
std::string chain_end(const NetworkSpec& spec, const std::string& layer) {
    const auto consumers = detail::consumer_map(spec);
    std::string cur = layer;
    while (true) {
        auto it = consumers.find(cur);
        if (it == consumers.end() || it->second.size() != 1) return cur;
        const auto& nxt = it->second[0];
        const LayerKind k = spec.layer(nxt).kind;
        if (k != LayerKind::bn && k != LayerKind::relu) return cur;
        cur = nxt;
    }
}

const LayerSpec& require_conv(const NetworkSpec& spec, const std::string& layer) {
    const auto& l = spec.layer(layer);
    if (l.kind != LayerKind::conv) throw std::invalid_argument(layer + " is not a conv layer");
    return l;
}

double total_loss(const NetworkSpec& spec, const ModelParams& params, const Dataset& data,
                  int batch_size, const MaskMap& masks) {
    double sum = 0.0;
    const long long n = data.size();
    for (long long start = 0; start < n; start += batch_size) {
        const long long stop = std::min(n, start + batch_size);
        std::vector<long long> idx(static_cast<size_t>(stop - start));
        std::iota(idx.begin(), idx.end(), start);
        auto [images, labels] = gather(data, idx);
        const Tensor logits = graph_forward(spec, params, images, Mode::eval, &masks);
        const auto xent = ops::softmax_xent(logits, labels, false);
        for (double l : xent.per_example) sum += l;
    }
    return sum;
}

std::vector<int> ascending_by_score(const std::map<int, double>& scores, bool invert = false) {
    std::vector<int> order;
    for (const auto& [j, s] : scores) order.push_back(j);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        const double sa = invert ? -scores.at(a) : scores.at(a);
        const double sb = invert ? -scores.at(b) : scores.at(b);
        if (sa != sb) return sa < sb;
        return a < b;
    });
    return order;
}

}  // namespace

LayerScores oracle_score(const NetworkSpec& spec, const ModelParams& params,
                         const std::string& layer, const Dataset& assessment, int batch_size,
                         const MaskMap* base) {
    const auto& l = require_conv(spec, layer);
    assessment.validate();
    MaskMap masks = base != nullptr ? *base : MaskMap{};
    auto& own = masks[layer];
    if (own.empty()) own.assign(static_cast<size_t>(l.width), 1);
    if (static_cast<int>(own.size()) != l.width) {
        throw std::invalid_argument(layer + ": base mask length mismatch");
    }

    const double base_loss = total_loss(spec, params, assessment, batch_size, masks);
    LayerScores res;
    for (int j = 0; j < l.width; ++j) {
        if (!own[static_cast<size_t>(j)]) continue;
        own[static_cast<size_t>(j)] = 0;
        const double masked_loss = total_loss(spec, params, assessment, batch_size, masks);
        own[static_cast<size_t>(j)] = 1;
        res.scores[j] = masked_loss - base_loss;
        ++res.masked_evals;
    }
    return res;
}

OracleOrder oracle_prune(const NetworkSpec& spec, const ModelParams& params,
                         const std::string& layer, int q, const Dataset& assessment, bool rescore,
                         int batch_size) {
    const auto& l = require_conv(spec, layer);
    if (q < 0 || q >= l.width) throw std::invalid_argument("q must be below the layer width");
    MaskMap masks;
    masks[layer].assign(static_cast<size_t>(l.width), 1);

    OracleOrder res;
    if (rescore) {
        for (int k = 0; k < q; ++k) {
            const auto scored = oracle_score(spec, params, layer, assessment, batch_size, &masks);
            res.masked_evals += scored.masked_evals;
            const auto order = ascending_by_score(scored.scores);
            const int pick = order.front();
            res.order.push_back(pick);
            masks[layer][static_cast<size_t>(pick)] = 0;
        }
    } else {
        const auto scored = oracle_score(spec, params, layer, assessment, batch_size, &masks);
        res.masked_evals = scored.masked_evals;
        const auto order = ascending_by_score(scored.scores);
        res.order.assign(order.begin(), order.begin() + q);
    }
    return res;
}

std::map<int, double> magnitude_score(const ModelParams& params, const std::string& layer) {
    auto it = params.conv.find(layer);
    if (it == params.conv.end()) throw std::invalid_argument(layer + " has no conv parameters");
    const Tensor& k = it->second.kernel;
    const int cout = k.dim(3);
    std::map<int, double> scores;
    for (int j = 0; j < cout; ++j) scores[j] = 0.0;
    const long long rows = k.numel() / cout;
    for (long long r = 0; r < rows; ++r) {
        for (int j = 0; j < cout; ++j) {
            scores[j] += std::abs(static_cast<double>(k.data[static_cast<size_t>(r) * cout + j]));
        }
    }
    return scores;
}

std::map<int, double> apoz_score(const NetworkSpec& spec, const ModelParams& params,
                                 const std::string& layer, const Dataset& assessment,
                                 int batch_size) {
    const auto& l = require_conv(spec, layer);
    const std::string end = chain_end(spec, layer);
    std::vector<long long> zeros(static_cast<size_t>(l.width), 0);
    long long cells = 0;
    const long long n = assessment.size();
    for (long long start = 0; start < n; start += batch_size) {
        const long long stop = std::min(n, start + batch_size);
        std::vector<long long> idx(static_cast<size_t>(stop - start));
        std::iota(idx.begin(), idx.end(), start);
        auto [images, labels] = gather(assessment, idx);
        GraphCache cache;
        graph_forward(spec, params, images, Mode::eval, nullptr, &cache);
        const Tensor& act = cache.out.at(end);
        const int c = act.dim(act.rank() - 1);
        if (c != l.width) throw std::logic_error("activation width mismatch");
        const long long rows = act.numel() / c;
        for (long long r = 0; r < rows; ++r) {
            for (int j = 0; j < c; ++j) {
                if (act.data[static_cast<size_t>(r) * c + j] <= 0.0f) ++zeros[static_cast<size_t>(j)];
            }
        }
        cells += rows;
    }
    std::map<int, double> scores;
    for (int j = 0; j < l.width; ++j) {
        scores[j] = static_cast<double>(zeros[static_cast<size_t>(j)]) / static_cast<double>(cells);
    }
    return scores;
}

std::map<int, double> taylor_score(const NetworkSpec& spec, const ModelParams& params,
                                   const std::string& layer, const Dataset& assessment,
                                   int batch_size) {
    const auto& l = require_conv(spec, layer);
    const std::string end = chain_end(spec, layer);
    std::vector<double> acc(static_cast<size_t>(l.width), 0.0);
    long long cells = 0;
    const long long n = assessment.size();
    const std::vector<std::string> capture_ids = {end};
    for (long long start = 0; start < n; start += batch_size) {
        const long long stop = std::min(n, start + batch_size);
        std::vector<long long> idx(static_cast<size_t>(stop - start));
        std::iota(idx.begin(), idx.end(), start);
        auto [images, labels] = gather(assessment, idx);
        GraphCache cache;
        const Tensor logits = graph_forward(spec, params, images, Mode::eval, nullptr, &cache);
        const auto xent = ops::softmax_xent(logits, labels, true);
        std::map<std::string, Tensor> captured;
        graph_backward(spec, params, nullptr, cache, xent.grad_logits, &capture_ids, &captured);
        const Tensor& act = cache.out.at(end);
        const Tensor& grad = captured.at(end);
        const int c = act.dim(act.rank() - 1);
        const long long rows = act.numel() / c;
        const double batch_n = static_cast<double>(labels.size());
        for (long long r = 0; r < rows; ++r) {
            for (int j = 0; j < c; ++j) {
                const size_t k = static_cast<size_t>(r) * c + j;
                // grad is of the batch-mean loss; scale back to per-example sums
                acc[static_cast<size_t>(j)] += batch_n * static_cast<double>(grad.data[k]) *
                                               static_cast<double>(act.data[k]);
            }
        }
        cells += rows;
    }
    std::map<int, double> scores;
    for (int j = 0; j < l.width; ++j) {
        scores[j] = std::abs(acc[static_cast<size_t>(j)] / static_cast<double>(cells));
    }
    return scores;
}

std::vector<int> index_order(int width) {
    std::vector<int> order(static_cast<size_t>(width));
    std::iota(order.begin(), order.end(), 0);
    return order;
}

std::string curve_method_name(CurveMethod m) {
    switch (m) {
        case CurveMethod::oracle: return "oracle";
        case CurveMethod::oracle_10x: return "oracle_10x";
        case CurveMethod::degraded: return "degraded";
        case CurveMethod::magnitude: return "magnitude";
        case CurveMethod::apoz: return "apoz";
        case CurveMethod::taylor: return "taylor";
        case CurveMethod::index: return "index";
        case CurveMethod::aofp_single_layer: return "aofp_single_layer";
    }
    throw std::invalid_argument("unknown curve method");
}

CurveMethod curve_method_from_name(const std::string& name) {
    for (CurveMethod m : all_curve_methods()) {
        if (curve_method_name(m) == name) return m;
    }
    throw std::invalid_argument("unknown curve method: " + name);
}

std::vector<CurveMethod> all_curve_methods() {
    return {CurveMethod::oracle,   CurveMethod::oracle_10x, CurveMethod::degraded,
            CurveMethod::magnitude, CurveMethod::apoz,       CurveMethod::taylor,
            CurveMethod::index,    CurveMethod::aofp_single_layer};
}

namespace {

// Binary Filter Search on a fixed model, scoring with the assessment-batch
// loss itself, threshold infinite so every refinement commits. The example
// budget is matched to the rescoring oracle's (c(c+1)/2 - 1 candidate passes
// of gamma examples each).
std::vector<int> aofp_single_layer_order(const NetworkSpec& spec, const ModelParams& params,
                                         const std::string& layer, const Dataset& assessment,
                                         int batch_size, std::uint64_t seed) {
    const auto& l = require_conv(spec, layer);
    const int c = l.width;
    const int batch = static_cast<int>(std::min<long long>(batch_size, assessment.size()));
    const long long oracle_examples =
        (static_cast<long long>(c) * (c + 1) / 2 - 1) * assessment.size();
    const long long total_batches = std::max<long long>(1, oracle_examples / batch);
    long long refine_count = 1;  // the final guarded attempt at width 1
    for (int w = c; w > 1; w = w - std::max(1, w / 2)) ++refine_count;
    const long long phi = std::max<long long>(1, total_batches / refine_count);

    LayerPruningState st = make_layer_state(spec, layer);
    BatchSampler sampler(assessment.size(), batch, seed);
    std::mt19937_64 rng(seed ^ 0x5bf0f3a9d2c1e857ULL);

    std::vector<int> order;
    const long long cap = 4 * refine_count * phi + 16;
    for (long long i = 0; i < cap && !st.finished; ++i) {
        const auto idx = sampler.next();
        auto [images, labels] = gather(assessment, idx);
        const auto h = sample_ablation(st.search_space, rng);
        st.scoring_mask = st.base_mask;
        for (int j : h) st.scoring_mask[static_cast<size_t>(j)] = 0;
        MaskMap masks;
        masks[layer] = st.scoring_mask;
        const Tensor logits = graph_forward(spec, params, images, Mode::eval, &masks);
        const auto xent = ops::softmax_xent(logits, labels, false);
        for (int j : h) st.records[j].push_back(xent.mean_loss);
        ++st.samples_this_step;

        if (st.estimates_ready(phi)) {
            const auto decision = refine_step(st, std::numeric_limits<double>::infinity());
            if (decision.kind == RefineKind::pruned) {
                order.insert(order.end(), decision.set.begin(), decision.set.end());
            }
        }
    }
    for (int j = 0; j < c; ++j) {
        if (st.base_mask[static_cast<size_t>(j)]) order.push_back(j);
    }
    if (static_cast<int>(order.size()) != c) {
        throw std::logic_error("binary filter search did not produce a total order");
    }
    return order;
}

}  // namespace

std::vector<int> method_order(const NetworkSpec& spec, const ModelParams& params,
                              const std::string& layer, CurveMethod method,
                              const Dataset& assessment, int batch_size, std::uint64_t seed) {
    const auto& l = require_conv(spec, layer);
    const int c = l.width;
    auto complete = [&](std::vector<int> order) {
        std::vector<std::uint8_t> seen(static_cast<size_t>(c), 0);
        for (int j : order) seen[static_cast<size_t>(j)] = 1;
        for (int j = 0; j < c; ++j) {
            if (!seen[static_cast<size_t>(j)]) order.push_back(j);
        }
        return order;
    };
    switch (method) {
        case CurveMethod::oracle:
        case CurveMethod::oracle_10x:
            return complete(
                oracle_prune(spec, params, layer, c - 1, assessment, true, batch_size).order);
        case CurveMethod::degraded:
            return complete(
                oracle_prune(spec, params, layer, c - 1, assessment, false, batch_size).order);
        case CurveMethod::magnitude:
            return ascending_by_score(magnitude_score(params, layer));
        case CurveMethod::apoz:
            return ascending_by_score(apoz_score(spec, params, layer, assessment, batch_size),
                                      /*invert=*/true);
        case CurveMethod::taylor:
            return ascending_by_score(taylor_score(spec, params, layer, assessment, batch_size));
        case CurveMethod::index:
            return index_order(c);
        case CurveMethod::aofp_single_layer:
            return aofp_single_layer_order(spec, params, layer, assessment, batch_size, seed);
    }
    throw std::invalid_argument("unknown curve method");
}

PruningCurve pruning_curve(const NetworkSpec& spec, const ModelParams& params,
                           const std::string& layer, CurveMethod method, const Dataset& train,
                           long long gamma, const Dataset& eval_set, std::uint64_t seed,
                           int batch_size) {
    if (gamma <= 0 || gamma > train.size()) {
        throw std::invalid_argument("assessment size must fit inside the training set");
    }
    const auto& l = require_conv(spec, layer);
    long long take = gamma;
    if (method == CurveMethod::oracle_10x) take = std::min<long long>(10 * gamma, train.size());
    std::vector<long long> perm(static_cast<size_t>(train.size()));
    std::iota(perm.begin(), perm.end(), 0LL);
    std::mt19937_64 rng(seed);
    std::shuffle(perm.begin(), perm.end(), rng);
    perm.resize(static_cast<size_t>(take));
    const Dataset assessment = subset(train, perm);

    const auto order = method_order(spec, params, layer, method, assessment, batch_size, seed);

    PruningCurve curve;
    curve.method = curve_method_name(method);
    curve.assessment_size = take;
    MaskMap masks;
    masks[layer].assign(static_cast<size_t>(l.width), 1);
    for (int k = 0; k <= l.width; ++k) {
        if (k > 0) masks[layer][static_cast<size_t>(order[static_cast<size_t>(k - 1)])] = 0;
        const EvalReport rep = evaluate(spec, params, eval_set, 256, &masks);
        curve.points.push_back({k, rep.top1});
    }
    return curve;
}

double curve_auc(const PruningCurve& curve) {
    if (curve.points.size() < 2) throw std::invalid_argument("curve needs at least two points");
    const double span = curve.points.back().filters_pruned - curve.points.front().filters_pruned;
    double area = 0.0;
    for (size_t i = 1; i < curve.points.size(); ++i) {
        const double dx = curve.points[i].filters_pruned - curve.points[i - 1].filters_pruned;
        area += 0.5 * (curve.points[i].top1 + curve.points[i - 1].top1) * dx;
    }
    return area / span;
}

std::string curves_to_csv(const std::vector<PruningCurve>& curves) {
    std::ostringstream os;
    os.precision(10);
    os << "method,filters_pruned,top1\n";
    for (const auto& c : curves) {
        for (const auto& p : c.points) {
            os << c.method << ',' << p.filters_pruned << ',' << p.top1 << '\n';
        }
    }
    return os.str();
}

}  // namespace prunekit::metrics
