#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "prunekit/aofp.hpp"
#include "prunekit/dataset.hpp"
#include "prunekit/graph.hpp"
#include "prunekit/metrics.hpp"
#include "prunekit/trainer.hpp"

namespace prunekit {

struct DatasetDesc {
    std::string kind = "synthetic";  // synthetic | idx | cifar-bin
    std::string images, labels;      // idx paths
    std::vector<std::string> cifar_files;
    long long eval_count = 512;
    long long assessment_count = 256;  // gamma
    std::uint64_t split_seed = 11;
    SyntheticSpec synthetic;
};

struct RunConfig {
    std::string pipeline;  // train | prune | prune-baseline | redesign | flops | eval
    DatasetDesc data;
    std::string preset = "vgg-small";  // vgg16-cifar | vgg-small | resnet-small
    std::vector<int> widths;           // optional conv width override
    std::uint64_t seed = 0;            // parameter init seed
    std::string output_dir = "out";
    std::string checkpoint;  // model prefix to load instead of training from scratch

    TrainConfig train;
    TrainConfig finetune;
    TrainConfig aofp_train;  // base-path SGD while pruning
    AofpConfig aofp;

    std::string curve_layer;              // prune-baseline; default first prunable conv
    std::vector<std::string> curve_methods;  // default: all
    double redesign_scale = 1.5;
    double redesign_tolerance = 0.02;

    RunConfig();
};

RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json run_config_to_json(const RunConfig& cfg);

struct LoadedData {
    Dataset train, assessment, eval;
};
LoadedData load_dataset(const DatasetDesc& desc);

// `input` overrides the spatial input shape for the small presets (the CIFAR
// preset fixes its own); pass the loaded dataset's extents when there is one.
NetworkSpec build_preset(const RunConfig& cfg, int classes, const Shape3* input = nullptr);

// Largest absolute logit gap between the masked model and its reconstruction
// over the given inputs.
double mask_equivalence_gap(const NetworkSpec& spec, const ModelParams& params,
                            const MaskMap& masks, const NetworkSpec& rec_spec,
                            const ModelParams& rec_params, const Tensor& images);

// The effective output directory: the config value unless PRUNEKIT_OUTPUT_DIR
// is set in the environment.
std::string resolve_output_dir(const RunConfig& cfg);

int pipeline_train(const RunConfig& cfg);
int pipeline_prune(const RunConfig& cfg);
int pipeline_prune_baseline(const RunConfig& cfg);
int pipeline_redesign(const RunConfig& cfg);
int pipeline_flops(const RunConfig& cfg);
int pipeline_eval(const RunConfig& cfg);
int run_pipeline(const RunConfig& cfg);

}  // namespace prunekit
