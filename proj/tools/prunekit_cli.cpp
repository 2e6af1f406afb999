#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "prunekit/pipelines.hpp"

namespace {

struct Flags {
    std::string config;
    std::string preset, output_dir, checkpoint, mode, layer, dataset_kind, images, labels;
    std::vector<std::string> cifar_files, methods;
    std::vector<int> widths;
    std::uint64_t seed = 0, split_seed = 0, ablation_seed = 0, synthetic_seed = 0;
    long long steps = 0, finetune_steps = 0, phi = 0, max_batches = 0;
    long long gamma = 0, eval_count = 0, synthetic_count = 0;
    int batch_size = 0, synthetic_classes = 0;
    double lr = 0.0, weight_decay = 0.0, momentum = 0.0;
    double theta = 0.0, target = 0.0, scale = 0.0, tolerance = 0.0, synthetic_noise = 0.0;
    bool no_scoring = false;
};

struct Opts {
    CLI::Option *preset = nullptr, *output_dir = nullptr, *checkpoint = nullptr,
                *mode = nullptr, *layer = nullptr, *dataset_kind = nullptr, *images = nullptr,
                *labels = nullptr, *cifar_files = nullptr, *methods = nullptr, *widths = nullptr,
                *seed = nullptr, *split_seed = nullptr, *ablation_seed = nullptr,
                *synthetic_seed = nullptr, *steps = nullptr, *finetune_steps = nullptr,
                *phi = nullptr, *max_batches = nullptr, *gamma = nullptr, *eval_count = nullptr,
                *synthetic_count = nullptr, *batch_size = nullptr, *synthetic_classes = nullptr,
                *lr = nullptr, *weight_decay = nullptr, *momentum = nullptr, *theta = nullptr,
                *target = nullptr, *scale = nullptr, *tolerance = nullptr,
                *synthetic_noise = nullptr, *no_scoring = nullptr;
};

void add_common(CLI::App* sub, Flags& f, Opts& o, bool needs_data) {
    sub->add_option("--config", f.config, "run configuration JSON")
        ->check(CLI::ExistingFile);
    o.preset = sub->add_option("--preset", f.preset,
                               "vgg16-cifar | vgg-small | resnet-small");
    o.widths = sub->add_option("--widths", f.widths, "conv width override, topological order");
    o.seed = sub->add_option("--seed", f.seed, "parameter init seed");
    o.output_dir = sub->add_option("--output-dir", f.output_dir, "artifact directory");
    o.checkpoint = sub->add_option("--checkpoint", f.checkpoint, "model prefix to load");
    if (!needs_data) return;
    o.dataset_kind = sub->add_option("--dataset", f.dataset_kind,
                                     "synthetic | idx | cifar-bin");
    o.images = sub->add_option("--images", f.images, "IDX image file");
    o.labels = sub->add_option("--labels", f.labels, "IDX label file");
    o.cifar_files = sub->add_option("--cifar-file", f.cifar_files, "CIFAR-10 binary batch")
                        ->allow_extra_args(false);
    o.eval_count = sub->add_option("--eval-count", f.eval_count, "held-out eval examples");
    o.gamma = sub->add_option("--gamma", f.gamma, "assessment set size");
    o.split_seed = sub->add_option("--split-seed", f.split_seed, "dataset split seed");
    o.synthetic_count = sub->add_option("--synthetic-count", f.synthetic_count,
                                        "synthetic example count");
    o.synthetic_classes = sub->add_option("--synthetic-classes", f.synthetic_classes,
                                          "synthetic class count");
    o.synthetic_noise = sub->add_option("--synthetic-noise", f.synthetic_noise,
                                        "synthetic noise level");
    o.synthetic_seed = sub->add_option("--synthetic-seed", f.synthetic_seed,
                                       "synthetic generator seed");
}

void add_training(CLI::App* sub, Flags& f, Opts& o) {
    o.steps = sub->add_option("--steps", f.steps, "training steps");
    o.batch_size = sub->add_option("--batch-size", f.batch_size, "batch size");
    o.lr = sub->add_option("--lr", f.lr, "constant learning rate");
    o.weight_decay = sub->add_option("--weight-decay", f.weight_decay, "weight decay");
    o.momentum = sub->add_option("--momentum", f.momentum, "SGD momentum");
}

void add_aofp(CLI::App* sub, Flags& f, Opts& o) {
    o.theta = sub->add_option("--theta", f.theta, "damage threshold for commits");
    o.phi = sub->add_option("--phi", f.phi, "scoring batches per refinement");
    o.target = sub->add_option("--target-flops-drop", f.target,
                               "fraction of MACs to remove");
    o.mode = sub->add_option("--mode", f.mode, "global | per-layer");
    o.ablation_seed = sub->add_option("--ablation-seed", f.ablation_seed,
                                      "ablation sampling seed");
    o.max_batches = sub->add_option("--max-batches", f.max_batches, "hard batch cap");
    o.no_scoring = sub->add_flag("--no-scoring", f.no_scoring,
                                 "diagnostic: run the base path only");
    o.finetune_steps = sub->add_option("--finetune-steps", f.finetune_steps,
                                       "steps after reconstruction");
}

prunekit::RunConfig assemble(const std::string& pipeline, const Flags& f, const Opts& o) {
    prunekit::RunConfig cfg;
    if (!f.config.empty()) {
        std::ifstream in(f.config);
        if (!in) throw std::runtime_error("cannot open config file: " + f.config);
        cfg = prunekit::run_config_from_json(nlohmann::json::parse(in));
    }
    cfg.pipeline = pipeline;
    auto set = [](CLI::Option* opt) { return opt != nullptr && opt->count() > 0; };
    if (set(o.preset)) cfg.preset = f.preset;
    if (set(o.widths)) cfg.widths = f.widths;
    if (set(o.seed)) cfg.seed = f.seed;
    if (set(o.output_dir)) cfg.output_dir = f.output_dir;
    if (set(o.checkpoint)) cfg.checkpoint = f.checkpoint;
    if (set(o.dataset_kind)) cfg.data.kind = f.dataset_kind;
    if (set(o.images)) cfg.data.images = f.images;
    if (set(o.labels)) cfg.data.labels = f.labels;
    if (set(o.cifar_files)) cfg.data.cifar_files = f.cifar_files;
    if (set(o.eval_count)) cfg.data.eval_count = f.eval_count;
    if (set(o.gamma)) cfg.data.assessment_count = f.gamma;
    if (set(o.split_seed)) cfg.data.split_seed = f.split_seed;
    if (set(o.synthetic_count)) cfg.data.synthetic.count = f.synthetic_count;
    if (set(o.synthetic_classes)) cfg.data.synthetic.classes = f.synthetic_classes;
    if (set(o.synthetic_noise)) cfg.data.synthetic.noise = f.synthetic_noise;
    if (set(o.synthetic_seed)) cfg.data.synthetic.seed = f.synthetic_seed;
    if (set(o.steps)) cfg.train.max_steps = f.steps;
    if (set(o.batch_size)) {
        cfg.train.batch_size = f.batch_size;
        cfg.finetune.batch_size = f.batch_size;
        cfg.aofp_train.batch_size = f.batch_size;
    }
    if (set(o.lr)) cfg.train.lr_schedule = {{0, f.lr}};
    if (set(o.weight_decay)) cfg.train.weight_decay = f.weight_decay;
    if (set(o.momentum)) cfg.train.momentum = f.momentum;
    if (set(o.finetune_steps)) cfg.finetune.max_steps = f.finetune_steps;
    if (set(o.theta)) cfg.aofp.theta = f.theta;
    if (set(o.phi)) cfg.aofp.phi = f.phi;
    if (set(o.target)) cfg.aofp.flops_target = f.target;
    if (set(o.mode)) {
        if (f.mode == "global") {
            cfg.aofp.mode = prunekit::AofpConfig::Mode::global;
        } else if (f.mode == "per-layer") {
            cfg.aofp.mode = prunekit::AofpConfig::Mode::per_layer;
        } else {
            throw std::runtime_error("--mode must be 'global' or 'per-layer'");
        }
    }
    if (set(o.ablation_seed)) cfg.aofp.ablation_seed = f.ablation_seed;
    if (set(o.max_batches)) cfg.aofp.max_batches = f.max_batches;
    if (set(o.no_scoring)) cfg.aofp.scoring_enabled = !f.no_scoring;
    if (set(o.layer)) cfg.curve_layer = f.layer;
    if (set(o.methods)) cfg.curve_methods = f.methods;
    if (set(o.scale)) cfg.redesign_scale = f.scale;
    if (set(o.tolerance)) cfg.redesign_tolerance = f.tolerance;
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"filter pruning toolkit"};
    app.require_subcommand(1);

    Flags f;
    std::map<std::string, Opts> opts;

    CLI::App* train = app.add_subcommand("train", "train a preset and save a checkpoint");
    add_common(train, f, opts["train"], true);
    add_training(train, f, opts["train"]);

    CLI::App* prune = app.add_subcommand(
        "prune", "width search on a trained model, then reconstruct and finetune");
    add_common(prune, f, opts["prune"], true);
    add_training(prune, f, opts["prune"]);
    add_aofp(prune, f, opts["prune"]);

    CLI::App* baseline = app.add_subcommand(
        "prune-baseline", "single-layer pruning curves for the reference metrics");
    add_common(baseline, f, opts["prune-baseline"], true);
    add_training(baseline, f, opts["prune-baseline"]);
    opts["prune-baseline"].layer =
        baseline->add_option("--layer", f.layer, "conv layer to sweep (default: first prunable)");
    opts["prune-baseline"].methods = baseline->add_option(
        "--method", f.methods,
        "curve methods (default: all); repeatable");

    CLI::App* redesign = app.add_subcommand(
        "redesign", "widen a preset, train, then prune back to its original budget");
    add_common(redesign, f, opts["redesign"], true);
    add_training(redesign, f, opts["redesign"]);
    add_aofp(redesign, f, opts["redesign"]);
    opts["redesign"].scale = redesign->add_option("--scale", f.scale, "width scale factor");
    opts["redesign"].tolerance =
        redesign->add_option("--tolerance", f.tolerance, "allowed final FLOPs shortfall");

    CLI::App* flops = app.add_subcommand("flops", "MAC count of a preset");
    add_common(flops, f, opts["flops"], false);

    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on the eval split");
    add_common(eval, f, opts["eval"], true);

    CLI11_PARSE(app, argc, argv);

    const CLI::App* sub = app.get_subcommands().front();
    try {
        const prunekit::RunConfig cfg = assemble(sub->get_name(), f, opts.at(sub->get_name()));
        return prunekit::run_pipeline(cfg);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
