#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "prunekit/dataset.hpp"
#include "prunekit/graph.hpp"

namespace prunekit {

struct TrainConfig {
    int batch_size = 64;
    std::vector<std::pair<long long, double>> lr_schedule = {{0, 0.05}};  // (from step, lr)
    double momentum = 0.9;
    double weight_decay = 0.0;
    long long max_steps = 1000;
    std::uint64_t seed = 0;
    std::string log_path;  // per-step CSV (step, lr, loss, top1) when non-empty

    void validate() const;
    double lr_at(long long step) const;
};

struct EvalReport {
    double top1 = 0.0;
    double mean_loss = 0.0;
    long long count = 0;
};

// Serves full batches of indices, reshuffling each epoch. State is the pair
// (seed, batches served), so a sampler can be reconstructed by replay.
class BatchSampler {
  public:
    BatchSampler(long long n, int batch_size, std::uint64_t seed);
    std::vector<long long> next();
    long long served() const { return served_; }
    std::uint64_t seed() const { return seed_; }
    void restore(long long served);

  private:
    void reshuffle();
    long long n_;
    int batch_;
    std::uint64_t seed_;
    std::mt19937_64 rng_;
    std::vector<long long> perm_;
    long long cursor_ = 0;
    long long served_ = 0;
};

// Single writer of ModelParams: owns the momentum buffers and the step
// counter. The AOFP engine drives it batch by batch; train()/finetune() wrap
// it for plain runs.
class Trainer {
  public:
    Trainer(const NetworkSpec& spec, ModelParams& params, const TrainConfig& cfg);

    struct StepStats {
        long long step = 0;
        double lr = 0.0;
        double loss = 0.0;
        double top1 = 0.0;
    };

    // One SGD step on the given batch. When `cache` is supplied it holds the
    // train-mode base-path activations of this batch after the call.
    StepStats step(const Tensor& images, const std::vector<int>& labels,
                   const MaskMap* masks = nullptr, GraphCache* cache = nullptr);

    // Clear momentum for every masked-off channel's own parameters (kernel
    // slice, bias, and the directly following bn's gamma/beta) so committed
    // filters stay bit-frozen under zero gradients.
    void zero_masked_momentum(const MaskMap& masks);

    long long step_count() const { return step_; }

  private:
    const NetworkSpec& spec_;
    ModelParams& params_;
    TrainConfig cfg_;
    ModelParams vel_;
    long long step_ = 0;
    std::ofstream log_;
};

ModelParams train(const NetworkSpec& spec, std::optional<ModelParams> init, const Dataset& data,
                  const TrainConfig& cfg);
ModelParams finetune(const NetworkSpec& spec, ModelParams params, const Dataset& data,
                     const TrainConfig& cfg);
EvalReport evaluate(const NetworkSpec& spec, const ModelParams& params, const Dataset& data,
                    int batch_size = 256, const MaskMap* masks = nullptr);

}  // namespace prunekit
