#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "prunekit/dataset.hpp"
#include "prunekit/graph.hpp"
#include "prunekit/trainer.hpp"

namespace prunekit {

struct AofpConfig {
    double theta = 0.01;           // max estimated damage acceptable for a commit
    long long phi = 2000;          // scoring batches collected per refinement step
    double flops_target = 0.4;     // fraction of baseline MACs to remove, in (0,1]
    enum class Mode { per_layer, global };
    Mode mode = Mode::global;
    std::uint64_t ablation_seed = 1;  // rng stream for ablation sampling only
    long long max_batches = 2000000;  // hard cap; hitting it flags the target unreached
    bool scoring_enabled = true;      // diagnostic toggle: base path alone, bit-identical
    long long trajectory_cadence = 200;  // batches between per-layer width snapshots
    bool stats_from_base = true;  // scoring-path bn uses base-path batch statistics

    void validate() const;
};

// Search state of one prunable conv: permanent base mask u, per-sample scoring
// mask v, the candidate search space, and the damage records of the current
// refinement step.
struct LayerPruningState {
    std::string layer;
    std::vector<std::uint8_t> base_mask;     // u
    std::vector<std::uint8_t> scoring_mask;  // v, derived from u per sample
    std::vector<int> search_space;           // ascending filter indices
    std::vector<int> picked_set;             // last refine's pick, damage-ascending
    std::map<int, std::vector<double>> records;
    long long samples_this_step = 0;
    bool finished = false;

    int width() const { return static_cast<int>(base_mask.size()); }
    int remaining() const;
    void reset_search();  // search space <- surviving filters, records cleared
    bool estimates_ready(long long phi) const;
};

LayerPruningState make_layer_state(const NetworkSpec& spec, const std::string& conv_id);

struct MoveRecord {
    std::string layer;
    std::vector<int> pruned;  // damage-ascending
    int granularity = 0;
    double max_damage = 0.0;
    long long step = 0;
};

struct PruneTrajectory {
    std::vector<MoveRecord> moves;
    std::string trajectory_csv;
    long long batches = 0;
    long long baseline_flops = 0;
    long long final_flops = 0;
    double achieved_reduction = 0.0;
    bool target_reached = false;
    MaskMap final_masks;
};

// Uniform random subset of size max(1, floor(|space|/2)).
std::vector<int> sample_ablation(const std::vector<int>& space, std::mt19937_64& rng);

// ||base - scored||^2 / ||base||^2 over the whole tensors.
double isolated_damage(const Tensor& base_out, const Tensor& scored_out);

enum class RefineKind { pruned, refined, layer_finished };
struct RefineDecision {
    RefineKind kind = RefineKind::layer_finished;
    std::vector<int> set;  // damage-ascending pick
    double p = 0.0;        // max estimated damage over the pick
};

// One binary-search decision: pick the least-damaging half; commit it when its
// worst estimate clears theta (refusing the commit that would empty the
// layer), otherwise narrow the search to the pick or finish at size one.
RefineDecision refine_step(LayerPruningState& st, double theta);

std::map<int, double> estimate_importance(const LayerPruningState& st);

// Replay route for scoring layer `conv_id`: every layer between the conv and
// the comparison point (its successor's post-bn/activation output, or the fc
// output), in execution order.
struct ReplayPlan {
    std::string conv_id;
    std::vector<std::string> chain;
    const std::string& end_id() const { return chain.back(); }
};
ReplayPlan make_replay_plan(const NetworkSpec& spec, const std::string& conv_id);

// Recompute the scoring path for one ablation H of layer `state.layer` on the
// cached base activations of a batch; returns the damage sample, or nullopt
// when the base output norm is below the zero guard. Appends the sample to the
// records of every member of H; params and cached base state stay untouched.
std::optional<double> scoring_pass(const NetworkSpec& spec, const ModelParamsT<float>& params,
                                   const MaskMap& masks, const GraphCache& cache,
                                   const ReplayPlan& plan, LayerPruningState& state,
                                   const std::vector<int>& ablation, bool stats_from_base = true);

struct AofpResult {
    NetworkSpec pruned_spec;
    ModelParams pruned_params;   // reconstructed, pre-finetune
    ModelParams masked_params;   // original-width params after the run
    MaskMap masks;
    PruneTrajectory trajectory;
};

AofpResult aofp_run(const NetworkSpec& spec, ModelParams params, const Dataset& train_set,
                    const AofpConfig& acfg, const TrainConfig& tcfg);

}  // namespace prunekit
