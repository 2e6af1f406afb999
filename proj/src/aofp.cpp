#include "prunekit/aofp.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace prunekit {

void AofpConfig::validate() const {
    if (theta < 0.0) throw std::invalid_argument("theta must be non-negative");
    if (phi < 1) throw std::invalid_argument("phi must be at least 1");
    if (!(flops_target > 0.0) || flops_target > 1.0) {
        throw std::invalid_argument("flops_target must be in (0, 1]");
    }
    if (max_batches < 1) throw std::invalid_argument("max_batches must be positive");
    if (trajectory_cadence < 1) throw std::invalid_argument("trajectory_cadence must be positive");
}

int LayerPruningState::remaining() const {
    int n = 0;
    for (auto v : base_mask) n += v ? 1 : 0;
    return n;
}

void LayerPruningState::reset_search() {
    search_space.clear();
    for (int j = 0; j < width(); ++j) {
        if (base_mask[static_cast<size_t>(j)]) search_space.push_back(j);
    }
    records.clear();
    samples_this_step = 0;
    picked_set.clear();
}

bool LayerPruningState::estimates_ready(long long phi) const {
    if (samples_this_step < phi) return false;
    for (int j : search_space) {
        auto it = records.find(j);
        if (it == records.end() || it->second.empty()) return false;
    }
    return true;
}

LayerPruningState make_layer_state(const NetworkSpec& spec, const std::string& conv_id) {
    const auto& l = spec.layer(conv_id);
    if (l.kind != LayerKind::conv) throw std::invalid_argument(conv_id + " is not a conv layer");
    LayerPruningState st;
    st.layer = conv_id;
    st.base_mask.assign(static_cast<size_t>(l.width), 1);
    st.scoring_mask = st.base_mask;
    st.reset_search();
    return st;
}

std::vector<int> sample_ablation(const std::vector<int>& space, std::mt19937_64& rng) {
    if (space.empty()) throw std::invalid_argument("cannot sample from an empty search space");
    const size_t want = std::max<size_t>(1, space.size() / 2);
    // partial Fisher-Yates over a copy, then sort for stable downstream order
    std::vector<int> pool = space;
    for (size_t i = 0; i < want; ++i) {
        std::uniform_int_distribution<size_t> pick(i, pool.size() - 1);
        std::swap(pool[i], pool[pick(rng)]);
    }
    std::vector<int> h(pool.begin(), pool.begin() + static_cast<long long>(want));
    std::sort(h.begin(), h.end());
    return h;
}

double isolated_damage(const Tensor& base_out, const Tensor& scored_out) {
    double den = 0.0;
    const double t = ops::normalized_squared_deviation(base_out, scored_out, &den);
    if (den <= 0.0) throw std::domain_error("isolated damage undefined for a zero base output");
    return t;
}

std::map<int, double> estimate_importance(const LayerPruningState& st) {
    std::map<int, double> out;
    for (int j : st.search_space) {
        auto it = st.records.find(j);
        if (it == st.records.end() || it->second.empty()) {
            throw std::logic_error("filter " + std::to_string(j) +
                                   " has no damage samples; resample before estimating");
        }
        double sum = 0.0;
        for (double v : it->second) sum += v;
        out[j] = sum / static_cast<double>(it->second.size());
    }
    return out;
}

RefineDecision refine_step(LayerPruningState& st, double theta) {
    const auto t_hat = estimate_importance(st);
    std::vector<int> by_damage = st.search_space;
    std::sort(by_damage.begin(), by_damage.end(), [&](int a, int b) {
        const double ta = t_hat.at(a), tb = t_hat.at(b);
        if (ta != tb) return ta < tb;
        return a < b;
    });
    const size_t pick = std::max<size_t>(1, st.search_space.size() / 2);
    std::vector<int> b(by_damage.begin(), by_damage.begin() + static_cast<long long>(pick));
    double p = 0.0;
    for (int j : b) p = std::max(p, t_hat.at(j));
    st.picked_set = b;

    RefineDecision d;
    d.set = b;
    d.p = p;
    if (p < theta) {
        if (st.remaining() == static_cast<int>(b.size())) {
            st.finished = true;
            d.kind = RefineKind::layer_finished;
            return d;
        }
        for (int j : b) {
            st.base_mask[static_cast<size_t>(j)] = 0;
            st.scoring_mask[static_cast<size_t>(j)] = 0;
        }
        st.reset_search();
        d.kind = RefineKind::pruned;
        return d;
    }
    if (b.size() > 1) {
        std::vector<int> narrowed = b;
        std::sort(narrowed.begin(), narrowed.end());
        st.search_space = std::move(narrowed);
        st.records.clear();
        st.samples_this_step = 0;
        d.kind = RefineKind::refined;
        return d;
    }
    st.finished = true;
    d.kind = RefineKind::layer_finished;
    return d;
}

ReplayPlan make_replay_plan(const NetworkSpec& spec, const std::string& conv_id) {
    ReplayPlan plan;
    plan.conv_id = conv_id;
    plan.chain = successor_chain(spec, conv_id);
    const auto consumers = detail::consumer_map(spec);
    // include the successor's own bn and activation when they follow directly
    if (spec.layer(plan.chain.back()).kind == LayerKind::conv) {
        std::string cur = plan.chain.back();
        for (int hops = 0; hops < 2; ++hops) {
            auto it = consumers.find(cur);
            if (it == consumers.end() || it->second.size() != 1) break;
            const auto& nxt = it->second[0];
            const LayerKind k = spec.layer(nxt).kind;
            if ((hops == 0 && k == LayerKind::bn) || (hops == 1 && k == LayerKind::relu)) {
                plan.chain.push_back(nxt);
                cur = nxt;
            } else {
                break;
            }
        }
    }
    return plan;
}

namespace {

void zero_listed_channels(Tensor& t, const std::vector<int>& channels) {
    const int c = t.dim(t.rank() - 1);
    const long long rows = t.numel() / c;
    for (long long r = 0; r < rows; ++r) {
        for (int ch : channels) {
            t.data[static_cast<size_t>(r) * c + ch] = 0.0f;
        }
    }
}

}  // namespace

std::optional<double> scoring_pass(const NetworkSpec& spec, const ModelParamsT<float>& params,
                                   const MaskMap& masks, const GraphCache& cache,
                                   const ReplayPlan& plan, LayerPruningState& state,
                                   const std::vector<int>& ablation, bool stats_from_base) {
    if (state.finished) throw std::logic_error(state.layer + ": scoring a finished layer");
    state.scoring_mask = state.base_mask;
    for (int j : ablation) {
        if (j < 0 || j >= state.width() || !state.base_mask[static_cast<size_t>(j)]) {
            throw std::invalid_argument(state.layer + ": ablation outside the live filter set");
        }
        state.scoring_mask[static_cast<size_t>(j)] = 0;
    }

    const auto reapply = detail::mask_reapply_points(spec);
    std::map<std::string, std::string> bn_owner;
    for (const auto& [conv, bn] : reapply) bn_owner[bn] = conv;

    Tensor x = cache.out.at(plan.conv_id);  // carries the base mask already
    zero_listed_channels(x, ablation);
    for (const auto& id : plan.chain) {
        const auto& l = spec.layer(id);
        switch (l.kind) {
            case LayerKind::conv: {
                x = ops::conv2d_forward(x, params.conv.at(id));
                auto mit = masks.find(id);
                if (mit != masks.end()) detail::scale_channels(x, mit->second);
                break;
            }
            case LayerKind::bn: {
                ops::BNStatsT<float> own_stats;
                const ops::BNStatsT<float>* ov;
                if (stats_from_base) {
                    ov = &cache.bn_stats.at(id);
                } else {
                    own_stats = ops::batch_statistics(x);
                    ov = &own_stats;
                }
                x = ops::batchnorm_forward(x, params.bn.at(id), Mode::eval, ov);
                auto oit = bn_owner.find(id);
                if (oit != bn_owner.end()) {
                    if (oit->second == state.layer) {
                        detail::scale_channels(x, state.scoring_mask);
                    } else {
                        auto mit = masks.find(oit->second);
                        if (mit != masks.end()) detail::scale_channels(x, mit->second);
                    }
                }
                break;
            }
            case LayerKind::relu:
                x = ops::relu_forward(x);
                break;
            case LayerKind::maxpool:
                x = ops::maxpool2d_forward(x, l.ksize, l.stride);
                break;
            case LayerKind::flatten:
                x = ops::flatten(x);
                break;
            case LayerKind::fc:
                x = ops::fc_forward(x, params.fc.at(id));
                break;
            default:
                throw std::logic_error(id + ": unexpected layer kind on a scoring chain");
        }
    }

    const Tensor& base = cache.out.at(plan.end_id());
    double den = 0.0;
    const double t = ops::normalized_squared_deviation(base, x, &den);
    if (den < 1e-12) return std::nullopt;
    for (int j : ablation) state.records[j].push_back(t);
    ++state.samples_this_step;
    return t;
}

namespace {

std::string format_double(double v) {
    std::ostringstream os;
    os.precision(10);
    os << v;
    return os.str();
}

}  // namespace

AofpResult aofp_run(const NetworkSpec& spec, ModelParams params, const Dataset& train_set,
                    const AofpConfig& acfg, const TrainConfig& tcfg) {
    acfg.validate();
    tcfg.validate();
    train_set.validate();
    const auto prunable = spec.prunable_conv_ids();
    if (prunable.empty()) throw std::invalid_argument("network has no prunable conv layers");
    for (const auto& id : prunable) {
        if (spec.layer(id).width < 2) {
            throw std::invalid_argument(id + ": prunable layers need width of at least 2");
        }
    }

    // Masked filters must stay frozen; decay would keep shrinking them.
    TrainConfig base_cfg = tcfg;
    base_cfg.weight_decay = 0.0;

    std::vector<LayerPruningState> states;
    std::vector<ReplayPlan> plans;
    for (const auto& id : prunable) {
        states.push_back(make_layer_state(spec, id));
        plans.push_back(make_replay_plan(spec, id));
    }
    MaskMap masks = full_masks(spec);

    Trainer trainer(spec, params, base_cfg);
    BatchSampler sampler(train_set.size(), base_cfg.batch_size, base_cfg.seed);
    std::mt19937_64 ablation_rng(acfg.ablation_seed);

    PruneTrajectory traj;
    const long long baseline = flops_of(spec).total();
    traj.baseline_flops = baseline;
    long long flops_eff = baseline;
    std::ostringstream csv;
    csv << "step,layer,remaining_width,move_granularity,p,flops_effective\n";

    size_t active = 0;  // per-layer mode cursor
    bool target_reached = false;
    GraphCache cache;

    auto reduction = [&]() {
        return static_cast<double>(baseline - flops_eff) / static_cast<double>(baseline);
    };

    for (long long batch = 1; batch <= acfg.max_batches && !target_reached; ++batch) {
        const auto idx = sampler.next();
        auto [images, labels] = gather(train_set, idx);
        trainer.step(images, labels, &masks, &cache);

        if (acfg.scoring_enabled) {
            for (size_t si = 0; si < states.size(); ++si) {
                auto& st = states[si];
                if (st.finished) continue;
                if (acfg.mode == AofpConfig::Mode::per_layer && si != active) continue;
                const auto h = sample_ablation(st.search_space, ablation_rng);
                scoring_pass(spec, params, masks, cache, plans[si], st, h,
                             acfg.stats_from_base);
            }
        }

        for (size_t si = 0; si < states.size() && !target_reached; ++si) {
            auto& st = states[si];
            if (st.finished) continue;
            if (acfg.mode == AofpConfig::Mode::per_layer && si != active) continue;
            if (!st.estimates_ready(acfg.phi)) continue;
            const auto decision = refine_step(st, acfg.theta);
            switch (decision.kind) {
                case RefineKind::pruned: {
                    masks[st.layer] = st.base_mask;
                    trainer.zero_masked_momentum(masks);
                    flops_eff = flops_of(spec, &masks).total();
                    MoveRecord mv;
                    mv.layer = st.layer;
                    mv.pruned = decision.set;
                    mv.granularity = static_cast<int>(decision.set.size());
                    mv.max_damage = decision.p;
                    mv.step = trainer.step_count();
                    traj.moves.push_back(mv);
                    csv << trainer.step_count() << ',' << st.layer << ',' << st.remaining() << ','
                        << decision.set.size() << ',' << format_double(decision.p) << ','
                        << flops_eff << '\n';
                    if (reduction() >= acfg.flops_target) target_reached = true;
                    break;
                }
                case RefineKind::refined:
                    csv << trainer.step_count() << ',' << st.layer << ',' << st.remaining() << ','
                        << 0 << ',' << format_double(decision.p) << ',' << flops_eff << '\n';
                    break;
                case RefineKind::layer_finished:
                    csv << trainer.step_count() << ',' << st.layer << ',' << st.remaining() << ','
                        << 0 << ',' << format_double(decision.p) << ',' << flops_eff << '\n';
                    if (acfg.mode == AofpConfig::Mode::global) {
                        // restart a fresh move on the surviving filters
                        st.finished = false;
                        st.reset_search();
                    }
                    break;
            }
        }

        if (acfg.mode == AofpConfig::Mode::per_layer && states[active].finished) {
            while (active < states.size() && states[active].finished) ++active;
            if (active >= states.size()) {
                traj.batches = batch;
                break;  // every layer finished before the target
            }
        }
        if (batch % acfg.trajectory_cadence == 0) {
            for (const auto& st : states) {
                csv << trainer.step_count() << ',' << st.layer << ',' << st.remaining() << ",0,,"
                    << flops_eff << '\n';
            }
        }
        traj.batches = batch;
    }

    traj.trajectory_csv = csv.str();
    traj.final_flops = flops_eff;
    traj.achieved_reduction = reduction();
    traj.target_reached = target_reached;
    traj.final_masks = masks;

    auto rec = reconstruct(spec, params, masks);
    AofpResult res;
    res.pruned_spec = std::move(rec.spec);
    res.pruned_params = std::move(rec.params);
    res.masked_params = std::move(params);
    res.masks = std::move(masks);
    res.trajectory = std::move(traj);
    return res;
}

}  // namespace prunekit
