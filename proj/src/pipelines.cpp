#include "prunekit/pipelines.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <numeric>

#include "prunekit/checkpoint.hpp"

namespace prunekit {

RunConfig::RunConfig() {
    train.batch_size = 64;
    train.lr_schedule = {{0, 0.05}};
    train.momentum = 0.9;
    train.weight_decay = 1e-4;
    train.max_steps = 800;

    finetune = train;
    finetune.lr_schedule = {{0, 0.001}};
    finetune.weight_decay = 0.0;
    finetune.max_steps = 300;

    aofp_train = finetune;            // constant small rate while pruning
    aofp_train.max_steps = 1;         // batch budget comes from aofp.max_batches
}

namespace {

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base) {
    base.batch_size = j.value("batch_size", base.batch_size);
    base.momentum = j.value("momentum", base.momentum);
    base.weight_decay = j.value("weight_decay", base.weight_decay);
    base.max_steps = j.value("max_steps", base.max_steps);
    base.seed = j.value("seed", base.seed);
    base.log_path = j.value("log_path", base.log_path);
    if (j.contains("lr_schedule")) {
        base.lr_schedule.clear();
        for (const auto& e : j.at("lr_schedule")) {
            base.lr_schedule.emplace_back(e.at(0).get<long long>(), e.at(1).get<double>());
        }
    }
    return base;
}

nlohmann::json train_config_to_json(const TrainConfig& c) {
    nlohmann::json j;
    j["batch_size"] = c.batch_size;
    j["momentum"] = c.momentum;
    j["weight_decay"] = c.weight_decay;
    j["max_steps"] = c.max_steps;
    j["seed"] = c.seed;
    if (!c.log_path.empty()) j["log_path"] = c.log_path;
    j["lr_schedule"] = nlohmann::json::array();
    for (const auto& [step, lr] : c.lr_schedule) j["lr_schedule"].push_back({step, lr});
    return j;
}

}  // namespace

RunConfig run_config_from_json(const nlohmann::json& j) {
    RunConfig cfg;
    cfg.pipeline = j.value("pipeline", cfg.pipeline);
    cfg.preset = j.value("preset", cfg.preset);
    cfg.widths = j.value("widths", cfg.widths);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.output_dir = j.value("output_dir", cfg.output_dir);
    cfg.checkpoint = j.value("checkpoint", cfg.checkpoint);
    cfg.curve_layer = j.value("curve_layer", cfg.curve_layer);
    cfg.curve_methods = j.value("curve_methods", cfg.curve_methods);
    cfg.redesign_scale = j.value("redesign_scale", cfg.redesign_scale);
    cfg.redesign_tolerance = j.value("redesign_tolerance", cfg.redesign_tolerance);

    if (j.contains("dataset")) {
        const auto& d = j.at("dataset");
        cfg.data.kind = d.value("kind", cfg.data.kind);
        cfg.data.images = d.value("images", cfg.data.images);
        cfg.data.labels = d.value("labels", cfg.data.labels);
        cfg.data.cifar_files = d.value("cifar_files", cfg.data.cifar_files);
        cfg.data.eval_count = d.value("eval_count", cfg.data.eval_count);
        cfg.data.assessment_count = d.value("assessment_count", cfg.data.assessment_count);
        cfg.data.split_seed = d.value("split_seed", cfg.data.split_seed);
        if (d.contains("synthetic")) {
            const auto& s = d.at("synthetic");
            cfg.data.synthetic.count = s.value("count", cfg.data.synthetic.count);
            cfg.data.synthetic.h = s.value("h", cfg.data.synthetic.h);
            cfg.data.synthetic.w = s.value("w", cfg.data.synthetic.w);
            cfg.data.synthetic.c = s.value("c", cfg.data.synthetic.c);
            cfg.data.synthetic.classes = s.value("classes", cfg.data.synthetic.classes);
            cfg.data.synthetic.noise = s.value("noise", cfg.data.synthetic.noise);
            cfg.data.synthetic.seed = s.value("seed", cfg.data.synthetic.seed);
        }
    }
    if (j.contains("train")) cfg.train = train_config_from_json(j.at("train"), cfg.train);
    if (j.contains("finetune")) cfg.finetune = train_config_from_json(j.at("finetune"), cfg.finetune);
    if (j.contains("aofp_train")) {
        cfg.aofp_train = train_config_from_json(j.at("aofp_train"), cfg.aofp_train);
    }
    if (j.contains("aofp")) {
        const auto& a = j.at("aofp");
        cfg.aofp.theta = a.value("theta", cfg.aofp.theta);
        cfg.aofp.phi = a.value("phi", cfg.aofp.phi);
        cfg.aofp.flops_target = a.value("flops_target", cfg.aofp.flops_target);
        const std::string mode = a.value("mode", std::string("global"));
        if (mode == "global") {
            cfg.aofp.mode = AofpConfig::Mode::global;
        } else if (mode == "per-layer") {
            cfg.aofp.mode = AofpConfig::Mode::per_layer;
        } else {
            throw std::invalid_argument("aofp mode must be 'global' or 'per-layer'");
        }
        cfg.aofp.ablation_seed = a.value("ablation_seed", cfg.aofp.ablation_seed);
        cfg.aofp.max_batches = a.value("max_batches", cfg.aofp.max_batches);
        cfg.aofp.scoring_enabled = a.value("scoring_enabled", cfg.aofp.scoring_enabled);
        cfg.aofp.trajectory_cadence = a.value("trajectory_cadence", cfg.aofp.trajectory_cadence);
        cfg.aofp.stats_from_base = a.value("stats_from_base", cfg.aofp.stats_from_base);
    }
    return cfg;
}

nlohmann::json run_config_to_json(const RunConfig& cfg) {
    nlohmann::json j;
    j["pipeline"] = cfg.pipeline;
    j["preset"] = cfg.preset;
    if (!cfg.widths.empty()) j["widths"] = cfg.widths;
    j["seed"] = cfg.seed;
    j["output_dir"] = cfg.output_dir;
    if (!cfg.checkpoint.empty()) j["checkpoint"] = cfg.checkpoint;
    if (!cfg.curve_layer.empty()) j["curve_layer"] = cfg.curve_layer;
    if (!cfg.curve_methods.empty()) j["curve_methods"] = cfg.curve_methods;
    j["redesign_scale"] = cfg.redesign_scale;
    j["redesign_tolerance"] = cfg.redesign_tolerance;
    j["dataset"] = {{"kind", cfg.data.kind},
                    {"images", cfg.data.images},
                    {"labels", cfg.data.labels},
                    {"cifar_files", cfg.data.cifar_files},
                    {"eval_count", cfg.data.eval_count},
                    {"assessment_count", cfg.data.assessment_count},
                    {"split_seed", cfg.data.split_seed},
                    {"synthetic",
                     {{"count", cfg.data.synthetic.count},
                      {"h", cfg.data.synthetic.h},
                      {"w", cfg.data.synthetic.w},
                      {"c", cfg.data.synthetic.c},
                      {"classes", cfg.data.synthetic.classes},
                      {"noise", cfg.data.synthetic.noise},
                      {"seed", cfg.data.synthetic.seed}}}};
    j["train"] = train_config_to_json(cfg.train);
    j["finetune"] = train_config_to_json(cfg.finetune);
    j["aofp_train"] = train_config_to_json(cfg.aofp_train);
    j["aofp"] = {{"theta", cfg.aofp.theta},
                 {"phi", cfg.aofp.phi},
                 {"flops_target", cfg.aofp.flops_target},
                 {"mode", cfg.aofp.mode == AofpConfig::Mode::global ? "global" : "per-layer"},
                 {"ablation_seed", cfg.aofp.ablation_seed},
                 {"max_batches", cfg.aofp.max_batches},
                 {"scoring_enabled", cfg.aofp.scoring_enabled},
                 {"trajectory_cadence", cfg.aofp.trajectory_cadence},
                 {"stats_from_base", cfg.aofp.stats_from_base}};
    return j;
}

LoadedData load_dataset(const DatasetDesc& desc) {
    Dataset full;
    if (desc.kind == "synthetic") {
        full = make_synthetic(desc.synthetic);
    } else if (desc.kind == "idx") {
        full = load_idx(desc.images, desc.labels);
    } else if (desc.kind == "cifar-bin") {
        full = load_cifar10_bin(desc.cifar_files);
    } else {
        throw std::invalid_argument("unknown dataset kind: " + desc.kind);
    }
    const auto splits = make_splits(full.size(), desc.eval_count, desc.assessment_count,
                                    desc.split_seed);
    LoadedData out;
    out.train = subset(full, splits.train);
    out.assessment = subset(full, splits.assessment);
    out.eval = subset(full, splits.eval);
    return out;
}

NetworkSpec build_preset(const RunConfig& cfg, int classes, const Shape3* input) {
    const Shape3 shape = input != nullptr
                             ? *input
                             : Shape3{cfg.data.synthetic.h, cfg.data.synthetic.w,
                                      cfg.data.synthetic.c};
    NetworkSpec spec;
    if (cfg.preset == "vgg16-cifar") {
        spec = build_vgg_cifar(classes);
    } else if (cfg.preset == "vgg-small") {
        spec = build_vgg_small(shape, classes);
    } else if (cfg.preset == "resnet-small") {
        spec = build_small_resnet(shape, classes);
    } else {
        throw std::invalid_argument("unknown preset: " + cfg.preset);
    }
    if (!cfg.widths.empty()) spec = set_conv_widths(spec, cfg.widths);
    return spec;
}

double mask_equivalence_gap(const NetworkSpec& spec, const ModelParams& params,
                            const MaskMap& masks, const NetworkSpec& rec_spec,
                            const ModelParams& rec_params, const Tensor& images) {
    const Tensor a = graph_forward(spec, params, images, Mode::eval, &masks);
    const Tensor b = graph_forward(rec_spec, rec_params, images, Mode::eval);
    if (a.shape != b.shape) throw std::logic_error("logit shapes differ after reconstruction");
    double gap = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        gap = std::max(gap, std::abs(static_cast<double>(a.data[i]) -
                                     static_cast<double>(b.data[i])));
    }
    return gap;
}

std::string resolve_output_dir(const RunConfig& cfg) {
    const char* env = std::getenv("PRUNEKIT_OUTPUT_DIR");
    if (env != nullptr && env[0] != '\0') return env;
    return cfg.output_dir;
}

namespace {

std::string prepare_output_dir(const RunConfig& cfg) {
    const std::string dir = resolve_output_dir(cfg);
    std::filesystem::create_directories(dir);
    return dir;
}

nlohmann::json eval_to_json(const EvalReport& r) {
    return {{"top1", r.top1}, {"mean_loss", r.mean_loss}, {"count", r.count}};
}

nlohmann::json flops_to_json(const FlopsReport& f) {
    nlohmann::json per = nlohmann::json::object();
    for (const auto& [id, macs] : f.per_layer) per[id] = macs;
    return {{"conv_macs", f.conv_total},
            {"fc_macs", f.fc_total},
            {"total_macs", f.total()},
            {"per_layer", per}};
}

nlohmann::json moves_to_json(const std::vector<MoveRecord>& moves) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& m : moves) {
        arr.push_back({{"layer", m.layer},
                       {"pruned", m.pruned},
                       {"granularity", m.granularity},
                       {"max_damage", m.max_damage},
                       {"step", m.step}});
    }
    return arr;
}

Shape3 data_shape(const Dataset& d) {
    return {static_cast<int>(d.images.dim(1)), static_cast<int>(d.images.dim(2)),
            static_cast<int>(d.images.dim(3))};
}

nlohmann::json training_meta(const TrainConfig& tc) {
    return {{"step", tc.max_steps},
            {"sampler", {{"seed", tc.seed}, {"served", tc.max_steps}}}};
}

struct ObtainedModel {
    NetworkSpec spec;
    ModelParams params;
    nlohmann::json meta;
};

// Train from scratch unless a checkpoint prefix was given.
ObtainedModel obtain_model(const RunConfig& cfg, const LoadedData& data,
                           const std::string& out_dir) {
    if (!cfg.checkpoint.empty()) {
        auto loaded = load_model(cfg.checkpoint);
        return {std::move(loaded.spec), std::move(loaded.params), std::move(loaded.meta)};
    }
    const Shape3 shape = data_shape(data.train);
    NetworkSpec spec = build_preset(cfg, data.train.classes, &shape);
    TrainConfig tc = cfg.train;
    tc.seed = tc.seed == 0 ? cfg.seed : tc.seed;
    if (tc.log_path.empty()) tc.log_path = out_dir + "/train_log.csv";
    ModelParams params = train(spec, init_params(spec, cfg.seed), data.train, tc);
    return {std::move(spec), std::move(params), training_meta(tc)};
}

}  // namespace

int pipeline_train(const RunConfig& cfg) {
    const std::string out = prepare_output_dir(cfg);
    const auto data = load_dataset(cfg.data);
    auto [spec, params, meta] = obtain_model(cfg, data, out);
    const EvalReport rep = evaluate(spec, params, data.eval);
    save_model(out + "/model", spec, params, meta);
    nlohmann::json report = {{"pipeline", "train"},
                             {"eval", eval_to_json(rep)},
                             {"flops", flops_to_json(flops_of(spec))}};
    write_file_atomic(out + "/report.json", report.dump(2) + "\n");
    std::cout << "train: top1=" << rep.top1 << " mean_loss=" << rep.mean_loss << " model=" << out
              << "/model\n";
    return 0;
}

int pipeline_prune(const RunConfig& cfg) {
    const std::string out = prepare_output_dir(cfg);
    const auto data = load_dataset(cfg.data);
    auto [spec, params, meta] = obtain_model(cfg, data, out);
    const EvalReport baseline = evaluate(spec, params, data.eval);

    TrainConfig base_cfg = cfg.aofp_train;
    base_cfg.seed = base_cfg.seed == 0 ? cfg.seed + 1 : base_cfg.seed;
    auto result = aofp_run(spec, params, data.train, cfg.aofp, base_cfg);

    const EvalReport masked =
        evaluate(spec, result.masked_params, data.eval, 256, &result.masks);
    const EvalReport recon = evaluate(result.pruned_spec, result.pruned_params, data.eval);

    const long long probe = std::min<long long>(100, data.eval.size());
    std::vector<long long> idx(static_cast<size_t>(probe));
    std::iota(idx.begin(), idx.end(), 0LL);
    auto [images, labels] = gather(data.eval, idx);
    const double gap = mask_equivalence_gap(spec, result.masked_params, result.masks,
                                            result.pruned_spec, result.pruned_params, images);

    ModelParams tuned = finetune(result.pruned_spec, result.pruned_params, data.train,
                                 cfg.finetune);
    const EvalReport final_rep = evaluate(result.pruned_spec, tuned, data.eval);

    save_model(out + "/model_pruned", result.pruned_spec, tuned, training_meta(cfg.finetune));
    write_file_atomic(out + "/trajectory.csv", result.trajectory.trajectory_csv);
    write_file_atomic(out + "/moves.json", moves_to_json(result.trajectory.moves).dump(2) + "\n");
    nlohmann::json report = {
        {"pipeline", "prune"},
        {"baseline", eval_to_json(baseline)},
        {"masked", eval_to_json(masked)},
        {"reconstructed", eval_to_json(recon)},
        {"finetuned", eval_to_json(final_rep)},
        {"baseline_flops", result.trajectory.baseline_flops},
        {"final_flops", result.trajectory.final_flops},
        {"achieved_reduction", result.trajectory.achieved_reduction},
        {"target_reduction", cfg.aofp.flops_target},
        {"target_reached", result.trajectory.target_reached},
        {"batches", result.trajectory.batches},
        {"moves", result.trajectory.moves.size()},
        {"mask_equivalence_gap", gap}};
    write_file_atomic(out + "/report.json", report.dump(2) + "\n");
    std::cout << "prune: reduction=" << result.trajectory.achieved_reduction
              << " target_reached=" << (result.trajectory.target_reached ? "yes" : "no")
              << " baseline_top1=" << baseline.top1 << " finetuned_top1=" << final_rep.top1
              << " equivalence_gap=" << gap << "\n";
    if (!result.trajectory.target_reached) {
        std::cerr << "prune: FLOPs target not reached (achieved "
                  << result.trajectory.achieved_reduction << ")\n";
        return 1;
    }
    return 0;
}

int pipeline_prune_baseline(const RunConfig& cfg) {
    const std::string out = prepare_output_dir(cfg);
    const auto data = load_dataset(cfg.data);
    auto [spec, params, meta] = obtain_model(cfg, data, out);

    std::string layer = cfg.curve_layer;
    if (layer.empty()) {
        const auto ids = spec.prunable_conv_ids();
        if (ids.empty()) throw std::invalid_argument("network has no prunable conv layers");
        layer = ids.front();
    }
    std::vector<metrics::CurveMethod> methods;
    if (cfg.curve_methods.empty()) {
        methods = metrics::all_curve_methods();
    } else {
        for (const auto& name : cfg.curve_methods) {
            methods.push_back(metrics::curve_method_from_name(name));
        }
    }

    std::vector<metrics::PruningCurve> curves;
    nlohmann::json aucs = nlohmann::json::object();
    for (const auto m : methods) {
        curves.push_back(metrics::pruning_curve(spec, params, layer, m, data.train,
                                                cfg.data.assessment_count, data.eval, cfg.seed,
                                                cfg.train.batch_size));
        aucs[curves.back().method] = metrics::curve_auc(curves.back());
    }
    write_file_atomic(out + "/curves.csv", metrics::curves_to_csv(curves));
    nlohmann::json report = {{"pipeline", "prune-baseline"},
                             {"layer", layer},
                             {"gamma", cfg.data.assessment_count},
                             {"auc", aucs}};
    write_file_atomic(out + "/report.json", report.dump(2) + "\n");
    std::cout << "prune-baseline: layer=" << layer << " curves=" << curves.size() << " -> " << out
              << "/curves.csv\n";
    return 0;
}

int pipeline_redesign(const RunConfig& cfg) {
    const std::string out = prepare_output_dir(cfg);
    const auto data = load_dataset(cfg.data);

    const Shape3 shape = data_shape(data.train);
    const NetworkSpec orig_spec = build_preset(cfg, data.train.classes, &shape);
    const long long orig_flops = flops_of(orig_spec).total();

    TrainConfig tc = cfg.train;
    tc.seed = tc.seed == 0 ? cfg.seed : tc.seed;
    tc.log_path = out + "/train_log_baseline.csv";
    ModelParams base_params = train(orig_spec, init_params(orig_spec, cfg.seed), data.train, tc);
    const EvalReport baseline = evaluate(orig_spec, base_params, data.eval);

    const NetworkSpec scaled = scale_widths(orig_spec, cfg.redesign_scale);
    const long long scaled_flops = flops_of(scaled).total();
    TrainConfig tc2 = tc;
    tc2.log_path = out + "/train_log_scaled.csv";
    ModelParams scaled_params = train(scaled, init_params(scaled, cfg.seed), data.train, tc2);

    AofpConfig acfg = cfg.aofp;
    acfg.flops_target = 1.0 - static_cast<double>(orig_flops) / static_cast<double>(scaled_flops);
    TrainConfig base_cfg = cfg.aofp_train;
    base_cfg.seed = base_cfg.seed == 0 ? cfg.seed + 1 : base_cfg.seed;
    auto result = aofp_run(scaled, std::move(scaled_params), data.train, acfg, base_cfg);

    // Pull the FLOPs count back inside the band around the original budget by
    // restoring the highest-damage members of the most recent moves.
    MaskMap masks = result.masks;
    long long flops_now = flops_of(scaled, &masks).total();
    const double low_band = (1.0 - cfg.redesign_tolerance) * static_cast<double>(orig_flops);
    auto moves = result.trajectory.moves;
    while (static_cast<double>(flops_now) < low_band && !moves.empty()) {
        auto& last = moves.back();
        if (last.pruned.empty()) {
            moves.pop_back();
            continue;
        }
        const int restore = last.pruned.back();
        last.pruned.pop_back();
        masks.at(last.layer)[static_cast<size_t>(restore)] = 1;
        flops_now = flops_of(scaled, &masks).total();
    }
    auto rec = reconstruct(scaled, result.masked_params, masks);

    ModelParams tuned = finetune(rec.spec, rec.params, data.train, cfg.finetune);
    const EvalReport redesigned = evaluate(rec.spec, tuned, data.eval);

    save_model(out + "/model_redesigned", rec.spec, tuned, training_meta(cfg.finetune));
    write_file_atomic(out + "/trajectory.csv", result.trajectory.trajectory_csv);
    write_file_atomic(out + "/moves.json", moves_to_json(result.trajectory.moves).dump(2) + "\n");
    const double gap_pct =
        100.0 * (static_cast<double>(flops_now) - static_cast<double>(orig_flops)) /
        static_cast<double>(orig_flops);
    std::vector<int> final_widths;
    for (const auto& l : rec.spec.layers) {
        if (l.kind == LayerKind::conv) final_widths.push_back(l.width);
    }
    nlohmann::json report = {{"pipeline", "redesign"},
                             {"scale", cfg.redesign_scale},
                             {"original_flops", orig_flops},
                             {"scaled_flops", scaled_flops},
                             {"final_flops", flops_now},
                             {"flops_gap_pct", gap_pct},
                             {"baseline", eval_to_json(baseline)},
                             {"redesigned", eval_to_json(redesigned)},
                             {"final_widths", final_widths},
                             {"target_reached", result.trajectory.target_reached}};
    write_file_atomic(out + "/report.json", report.dump(2) + "\n");
    std::cout << "redesign: original=" << orig_flops << " final=" << flops_now << " ("
              << gap_pct << "% off) baseline_top1=" << baseline.top1
              << " redesigned_top1=" << redesigned.top1 << "\n";
    if (!result.trajectory.target_reached) {
        std::cerr << "redesign: FLOPs target not reached\n";
        return 1;
    }
    return 0;
}

int pipeline_flops(const RunConfig& cfg) {
    const std::string out = prepare_output_dir(cfg);
    const int classes = cfg.preset == "vgg16-cifar" ? 10 : cfg.data.synthetic.classes;
    const NetworkSpec spec = build_preset(cfg, classes);
    const FlopsReport rep = flops_of(spec);
    write_file_atomic(out + "/flops.json", flops_to_json(rep).dump(2) + "\n");
    std::cout << "preset=" << cfg.preset << " conv_macs=" << rep.conv_total
              << " fc_macs=" << rep.fc_total << " total_macs=" << rep.total() << "\n";
    return 0;
}

int pipeline_eval(const RunConfig& cfg) {
    if (cfg.checkpoint.empty()) throw std::invalid_argument("eval needs --checkpoint");
    const std::string out = prepare_output_dir(cfg);
    const auto data = load_dataset(cfg.data);
    auto loaded = load_model(cfg.checkpoint);
    const EvalReport rep = evaluate(loaded.spec, loaded.params, data.eval);
    nlohmann::json report = {{"pipeline", "eval"}, {"eval", eval_to_json(rep)}};
    write_file_atomic(out + "/report.json", report.dump(2) + "\n");
    std::cout << "eval: top1=" << rep.top1 << " mean_loss=" << rep.mean_loss
              << " count=" << rep.count << "\n";
    return 0;
}

int run_pipeline(const RunConfig& cfg) {
    if (cfg.pipeline == "train") return pipeline_train(cfg);
    if (cfg.pipeline == "prune") return pipeline_prune(cfg);
    if (cfg.pipeline == "prune-baseline") return pipeline_prune_baseline(cfg);
    if (cfg.pipeline == "redesign") return pipeline_redesign(cfg);
    if (cfg.pipeline == "flops") return pipeline_flops(cfg);
    if (cfg.pipeline == "eval") return pipeline_eval(cfg);
    throw std::invalid_argument("unknown pipeline: " + cfg.pipeline);
}

}  // namespace prunekit
