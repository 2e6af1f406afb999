#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "prunekit/dataset.hpp"
#include "prunekit/graph.hpp"

namespace prunekit::metrics {

// Exact importance of each live filter of `layer`: the summed loss increase
// over the assessment set when that filter alone is masked. `masked_evals`
// counts candidate evaluations (one full assessment pass per candidate).
struct LayerScores {
    std::map<int, double> scores;
    long long masked_evals = 0;
};
LayerScores oracle_score(const NetworkSpec& spec, const ModelParams& params,
                         const std::string& layer, const Dataset& assessment, int batch_size = 64,
                         const MaskMap* base = nullptr);

// Greedy oracle order. rescore=true re-scores survivors after each removal
// (Sum_{k=0}^{q-1}(c-k) candidate evaluations); rescore=false scores once and
// prunes in that fixed ascending order.
struct OracleOrder {
    std::vector<int> order;
    long long masked_evals = 0;
};
OracleOrder oracle_prune(const NetworkSpec& spec, const ModelParams& params,
                         const std::string& layer, int q, const Dataset& assessment, bool rescore,
                         int batch_size = 64);

// L1 norm of each filter's kernel slice.
std::map<int, double> magnitude_score(const ModelParams& params, const std::string& layer);

// Fraction of zeros in each channel of the layer's post-activation map over
// the assessment set. Higher means less important.
std::map<int, double> apoz_score(const NetworkSpec& spec, const ModelParams& params,
                                 const std::string& layer, const Dataset& assessment,
                                 int batch_size = 64);

// |mean over examples and spatial positions of gradient x activation| at the
// layer's post-activation map.
std::map<int, double> taylor_score(const NetworkSpec& spec, const ModelParams& params,
                                   const std::string& layer, const Dataset& assessment,
                                   int batch_size = 64);

std::vector<int> index_order(int width);

enum class CurveMethod {
    oracle,
    oracle_10x,
    degraded,
    magnitude,
    apoz,
    taylor,
    index,
    aofp_single_layer
};
std::string curve_method_name(CurveMethod m);
CurveMethod curve_method_from_name(const std::string& name);
std::vector<CurveMethod> all_curve_methods();

struct CurvePoint {
    int filters_pruned = 0;
    double top1 = 0.0;
};
struct PruningCurve {
    std::string method;
    std::vector<CurvePoint> points;
    long long assessment_size = 0;
};

// Full pruning order of a layer under one method (least important first).
std::vector<int> method_order(const NetworkSpec& spec, const ModelParams& params,
                              const std::string& layer, CurveMethod method,
                              const Dataset& assessment, int batch_size, std::uint64_t seed);

// Mask filters one at a time in method order, evaluating after each point.
// The assessment subset is drawn from `train` (oracle_10x takes ten times
// gamma, capped at the training size); evaluation uses `eval_set` only.
PruningCurve pruning_curve(const NetworkSpec& spec, const ModelParams& params,
                           const std::string& layer, CurveMethod method, const Dataset& train,
                           long long gamma, const Dataset& eval_set, std::uint64_t seed,
                           int batch_size = 64);

// Trapezoidal area under the curve with filters_pruned normalized to [0, 1].
double curve_auc(const PruningCurve& curve);

std::string curves_to_csv(const std::vector<PruningCurve>& curves);

}  // namespace prunekit::metrics
