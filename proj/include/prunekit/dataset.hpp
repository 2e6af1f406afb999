#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "prunekit/tensor.hpp"

namespace prunekit {

struct Dataset {
    Tensor images;  // N x H x W x C, normalized floats
    std::vector<int> labels;
    int classes = 0;

    long long size() const { return images.rank() == 4 ? images.dim(0) : 0; }
    void validate() const;
};

// IDX pair (big-endian headers; image magic 0x00000803, label magic 0x00000801).
// Pixels are bytes mapped to (v/255 - 0.5) / 0.5.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

// CIFAR-10 binary batches: records of 1 label byte + 3072 pixel bytes stored
// as three 32x32 planes (R, G, B); converted to 32x32x3 channel-last with the
// same normalization as IDX.
Dataset load_cifar10_bin(const std::vector<std::string>& files);

// Seeded separable classification set: one smoothed random template per class
// plus per-example Gaussian noise.
struct SyntheticSpec {
    long long count = 3072;
    int h = 16, w = 16, c = 1;
    int classes = 4;
    double noise = 0.6;
    std::uint64_t seed = 7;
};
Dataset make_synthetic(const SyntheticSpec& cfg);

struct Splits {
    std::vector<long long> train, assessment, eval;
};

// Deterministic: seeded permutation; eval = first eval_count indices, train =
// the rest, assessment = first assessment_count of train (so assessment is a
// subset of train and disjoint from eval).
Splits make_splits(long long n, long long eval_count, long long assessment_count,
                   std::uint64_t seed);

Dataset subset(const Dataset& d, const std::vector<long long>& indices);

std::pair<Tensor, std::vector<int>> gather(const Dataset& d, const std::vector<long long>& indices);

}  // namespace prunekit
