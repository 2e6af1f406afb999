#include "prunekit/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace prunekit {

void TrainConfig::validate() const {
    if (batch_size <= 0) throw std::invalid_argument("batch_size must be positive");
    if (max_steps <= 0) throw std::invalid_argument("max_steps must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("momentum must be in [0,1)");
    if (weight_decay < 0.0) throw std::invalid_argument("weight_decay must be non-negative");
    if (lr_schedule.empty()) throw std::invalid_argument("lr_schedule must be non-empty");
    for (size_t i = 1; i < lr_schedule.size(); ++i) {
        if (lr_schedule[i].first <= lr_schedule[i - 1].first) {
            throw std::invalid_argument("lr_schedule steps must be strictly increasing");
        }
    }
}

double TrainConfig::lr_at(long long step) const {
    double lr = lr_schedule.front().second;
    for (const auto& [from, value] : lr_schedule) {
        if (step >= from) lr = value;
    }
    return lr;
}

BatchSampler::BatchSampler(long long n, int batch_size, std::uint64_t seed)
    : n_(n), batch_(batch_size), seed_(seed), rng_(seed) {
    if (n_ < batch_) throw std::invalid_argument("dataset smaller than one batch");
    perm_.resize(static_cast<size_t>(n_));
    std::iota(perm_.begin(), perm_.end(), 0LL);
    reshuffle();
}

void BatchSampler::reshuffle() {
    std::shuffle(perm_.begin(), perm_.end(), rng_);
    cursor_ = 0;
}

std::vector<long long> BatchSampler::next() {
    if (cursor_ + batch_ > n_) reshuffle();
    std::vector<long long> idx(perm_.begin() + cursor_, perm_.begin() + cursor_ + batch_);
    cursor_ += batch_;
    ++served_;
    return idx;
}

void BatchSampler::restore(long long served) {
    rng_.seed(seed_);
    std::iota(perm_.begin(), perm_.end(), 0LL);
    reshuffle();
    cursor_ = 0;
    served_ = 0;
    for (long long i = 0; i < served; ++i) (void)next();
    served_ = served;
}

Trainer::Trainer(const NetworkSpec& spec, ModelParams& params, const TrainConfig& cfg)
    : spec_(spec), params_(params), cfg_(cfg) {
    cfg_.validate();
    validate(spec_);
    vel_ = params_;
    for (auto& [id, p] : vel_.conv) {
        std::fill(p.kernel.data.begin(), p.kernel.data.end(), 0.0f);
        std::fill(p.bias.data.begin(), p.bias.data.end(), 0.0f);
    }
    for (auto& [id, p] : vel_.fc) {
        std::fill(p.weight.data.begin(), p.weight.data.end(), 0.0f);
        std::fill(p.bias.data.begin(), p.bias.data.end(), 0.0f);
    }
    for (auto& [id, p] : vel_.bn) {
        std::fill(p.gamma.data.begin(), p.gamma.data.end(), 0.0f);
        std::fill(p.beta.data.begin(), p.beta.data.end(), 0.0f);
    }
    if (!cfg_.log_path.empty()) {
        log_.open(cfg_.log_path);
        if (!log_) throw std::runtime_error("cannot open train log " + cfg_.log_path);
        log_ << "step,lr,loss,top1\n";
    }
}

namespace {

void sgd_update(Tensor& p, Tensor& v, const Tensor& g, double lr, double mu, double wd) {
    for (size_t i = 0; i < p.data.size(); ++i) {
        const double grad = static_cast<double>(g.data[i]) + wd * static_cast<double>(p.data[i]);
        const double vel = mu * static_cast<double>(v.data[i]) + grad;
        v.data[i] = static_cast<float>(vel);
        p.data[i] = static_cast<float>(static_cast<double>(p.data[i]) - lr * vel);
    }
}

long long count_correct(const Tensor& logits, const std::vector<int>& labels) {
    const int n = logits.dim(0), k = logits.dim(1);
    long long correct = 0;
    for (int i = 0; i < n; ++i) {
        const float* row = logits.data.data() + static_cast<size_t>(i) * k;
        int best = 0;
        for (int j = 1; j < k; ++j) {
            if (row[j] > row[best]) best = j;
        }
        if (best == labels[static_cast<size_t>(i)]) ++correct;
    }
    return correct;
}

double batch_top1(const Tensor& logits, const std::vector<int>& labels) {
    return static_cast<double>(count_correct(logits, labels)) / logits.dim(0);
}

}  // namespace

Trainer::StepStats Trainer::step(const Tensor& images, const std::vector<int>& labels,
                                 const MaskMap* masks, GraphCache* cache) {
    GraphCache local;
    GraphCache* c = cache != nullptr ? cache : &local;
    const Tensor logits =
        graph_forward(spec_, params_, images, Mode::train, masks, c, &params_);
    const auto xent = ops::softmax_xent(logits, labels, true);
    if (!std::isfinite(xent.mean_loss)) {
        throw std::runtime_error("training diverged: non-finite loss at step " +
                                 std::to_string(step_ + 1));
    }
    const auto grads = graph_backward(spec_, params_, masks, *c, xent.grad_logits);

    const double lr = cfg_.lr_at(step_);
    const double mu = cfg_.momentum;
    const double wd = cfg_.weight_decay;
    for (const auto& l : spec_.layers) {
        switch (l.kind) {
            case LayerKind::conv: {
                auto git = grads.conv.find(l.id);
                if (git == grads.conv.end()) break;
                sgd_update(params_.conv.at(l.id).kernel, vel_.conv.at(l.id).kernel,
                           git->second.kernel, lr, mu, wd);
                sgd_update(params_.conv.at(l.id).bias, vel_.conv.at(l.id).bias, git->second.bias,
                           lr, mu, 0.0);
                break;
            }
            case LayerKind::fc: {
                auto git = grads.fc.find(l.id);
                if (git == grads.fc.end()) break;
                sgd_update(params_.fc.at(l.id).weight, vel_.fc.at(l.id).weight, git->second.weight,
                           lr, mu, wd);
                sgd_update(params_.fc.at(l.id).bias, vel_.fc.at(l.id).bias, git->second.bias, lr,
                           mu, 0.0);
                break;
            }
            case LayerKind::bn: {
                auto git = grads.bn.find(l.id);
                if (git == grads.bn.end()) break;
                sgd_update(params_.bn.at(l.id).gamma, vel_.bn.at(l.id).gamma, git->second.gamma,
                           lr, mu, 0.0);
                sgd_update(params_.bn.at(l.id).beta, vel_.bn.at(l.id).beta, git->second.beta, lr,
                           mu, 0.0);
                break;
            }
            default:
                break;
        }
    }
    ++step_;
    StepStats st{step_, lr, xent.mean_loss, batch_top1(logits, labels)};
    if (log_.is_open()) {
        log_ << st.step << ',' << st.lr << ',' << st.loss << ',' << st.top1 << '\n';
    }
    return st;
}

void Trainer::zero_masked_momentum(const MaskMap& masks) {
    const auto reapply = detail::mask_reapply_points(spec_);
    for (const auto& [conv_id, mask] : masks) {
        auto vit = vel_.conv.find(conv_id);
        if (vit == vel_.conv.end()) throw std::invalid_argument(conv_id + ": mask on unknown conv");
        auto& kernel = vit->second.kernel;
        const int cout = kernel.dim(3);
        if (static_cast<int>(mask.size()) != cout) {
            throw std::invalid_argument(conv_id + ": mask length does not match width");
        }
        const long long rows = kernel.numel() / cout;
        for (long long r = 0; r < rows; ++r) {
            for (int k = 0; k < cout; ++k) {
                if (!mask[static_cast<size_t>(k)]) {
                    kernel.data[static_cast<size_t>(r) * cout + k] = 0.0f;
                }
            }
        }
        for (int k = 0; k < cout; ++k) {
            if (!mask[static_cast<size_t>(k)]) vit->second.bias.data[static_cast<size_t>(k)] = 0.0f;
        }
        auto bit = reapply.find(conv_id);
        if (bit != reapply.end()) {
            auto& bn = vel_.bn.at(bit->second);
            for (int k = 0; k < cout; ++k) {
                if (!mask[static_cast<size_t>(k)]) {
                    bn.gamma.data[static_cast<size_t>(k)] = 0.0f;
                    bn.beta.data[static_cast<size_t>(k)] = 0.0f;
                }
            }
        }
    }
}

ModelParams train(const NetworkSpec& spec, std::optional<ModelParams> init, const Dataset& data,
                  const TrainConfig& cfg) {
    cfg.validate();
    data.validate();
    ModelParams params = init.has_value() ? std::move(*init) : init_params(spec, cfg.seed);
    Trainer trainer(spec, params, cfg);
    BatchSampler sampler(data.size(), cfg.batch_size, cfg.seed);
    for (long long s = 0; s < cfg.max_steps; ++s) {
        const auto idx = sampler.next();
        auto [images, labels] = gather(data, idx);
        trainer.step(images, labels);
    }
    return params;
}

ModelParams finetune(const NetworkSpec& spec, ModelParams params, const Dataset& data,
                     const TrainConfig& cfg) {
    return train(spec, std::move(params), data, cfg);
}

EvalReport evaluate(const NetworkSpec& spec, const ModelParams& params, const Dataset& data,
                    int batch_size, const MaskMap* masks) {
    data.validate();
    if (batch_size <= 0) throw std::invalid_argument("batch_size must be positive");
    const long long n = data.size();
    if (n == 0) throw std::invalid_argument("evaluate: empty dataset");
    EvalReport rep;
    rep.count = n;
    double loss_sum = 0.0;
    long long correct = 0;
    for (long long start = 0; start < n; start += batch_size) {
        const long long stop = std::min(n, start + batch_size);
        std::vector<long long> idx(static_cast<size_t>(stop - start));
        std::iota(idx.begin(), idx.end(), start);
        auto [images, labels] = gather(data, idx);
        const Tensor logits = graph_forward(spec, params, images, Mode::eval, masks);
        const auto xent = ops::softmax_xent(logits, labels, false);
        for (double l : xent.per_example) loss_sum += l;
        correct += count_correct(logits, labels);
    }
    rep.mean_loss = loss_sum / static_cast<double>(n);
    rep.top1 = static_cast<double>(correct) / static_cast<double>(n);
    return rep;
}

}  // namespace prunekit
