#include "prunekit/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

namespace prunekit {

void Dataset::validate() const {
    if (images.rank() != 4) throw std::invalid_argument("dataset images must be N x H x W x C");
    if (static_cast<long long>(labels.size()) != images.dim(0)) {
        throw std::invalid_argument("dataset label count does not match image count");
    }
    if (classes <= 0) throw std::invalid_argument("dataset class count must be positive");
    for (int lab : labels) {
        if (lab < 0 || lab >= classes) throw std::out_of_range("dataset label out of range");
    }
}

namespace {

float normalize_pixel(unsigned char v) { return (static_cast<float>(v) / 255.0f - 0.5f) / 0.5f; }

std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    return std::vector<unsigned char>(std::istreambuf_iterator<char>(in),
                                      std::istreambuf_iterator<char>());
}

std::uint32_t be32(const std::vector<unsigned char>& b, size_t off) {
    if (off + 4 > b.size()) throw std::runtime_error("truncated header");
    return (static_cast<std::uint32_t>(b[off]) << 24) | (static_cast<std::uint32_t>(b[off + 1]) << 16) |
           (static_cast<std::uint32_t>(b[off + 2]) << 8) | static_cast<std::uint32_t>(b[off + 3]);
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    const auto ib = read_file(images_path);
    if (be32(ib, 0) != 0x00000803u) {
        throw std::runtime_error(images_path + ": bad IDX image magic");
    }
    const long long n = be32(ib, 4);
    const int h = static_cast<int>(be32(ib, 8));
    const int w = static_cast<int>(be32(ib, 12));
    const size_t need = 16 + static_cast<size_t>(n) * h * w;
    if (ib.size() != need) throw std::runtime_error(images_path + ": truncated IDX image file");

    const auto lb = read_file(labels_path);
    if (be32(lb, 0) != 0x00000801u) {
        throw std::runtime_error(labels_path + ": bad IDX label magic");
    }
    if (static_cast<long long>(be32(lb, 4)) != n || lb.size() != 8 + static_cast<size_t>(n)) {
        throw std::runtime_error(labels_path + ": label count mismatch or truncation");
    }

    Dataset d;
    d.images = Tensor({static_cast<int>(n), h, w, 1});
    d.labels.resize(static_cast<size_t>(n));
    int max_label = 0;
    for (long long i = 0; i < n; ++i) {
        for (int p = 0; p < h * w; ++p) {
            d.images.data[static_cast<size_t>(i) * h * w + p] =
                normalize_pixel(ib[16 + static_cast<size_t>(i) * h * w + p]);
        }
        d.labels[static_cast<size_t>(i)] = lb[8 + static_cast<size_t>(i)];
        max_label = std::max(max_label, d.labels[static_cast<size_t>(i)]);
    }
    d.classes = max_label + 1;
    d.validate();
    return d;
}

Dataset load_cifar10_bin(const std::vector<std::string>& files) {
    constexpr size_t kRecord = 1 + 3 * 32 * 32;
    Dataset d;
    d.classes = 10;
    std::vector<unsigned char> all;
    for (const auto& f : files) {
        const auto b = read_file(f);
        if (b.empty() || b.size() % kRecord != 0) {
            throw std::runtime_error(f + ": size is not a whole number of CIFAR records");
        }
        all.insert(all.end(), b.begin(), b.end());
    }
    const long long n = static_cast<long long>(all.size() / kRecord);
    d.images = Tensor({static_cast<int>(n), 32, 32, 3});
    d.labels.resize(static_cast<size_t>(n));
    for (long long i = 0; i < n; ++i) {
        const unsigned char* rec = all.data() + static_cast<size_t>(i) * kRecord;
        d.labels[static_cast<size_t>(i)] = rec[0];
        for (int ch = 0; ch < 3; ++ch) {
            for (int y = 0; y < 32; ++y) {
                for (int x = 0; x < 32; ++x) {
                    d.images.at(static_cast<int>(i), y, x, ch) =
                        normalize_pixel(rec[1 + (ch * 32 + y) * 32 + x]);
                }
            }
        }
    }
    d.validate();
    return d;
}

Dataset make_synthetic(const SyntheticSpec& cfg) {
    if (cfg.count <= 0 || cfg.h <= 0 || cfg.w <= 0 || cfg.c <= 0 || cfg.classes <= 0 ||
        cfg.noise < 0.0) {
        throw std::invalid_argument("bad synthetic dataset parameters");
    }
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const int pix = cfg.h * cfg.w * cfg.c;

    auto smooth = [&](std::vector<double>& img) {
        std::vector<double> out(img.size());
        for (int y = 0; y < cfg.h; ++y) {
            for (int x = 0; x < cfg.w; ++x) {
                for (int ch = 0; ch < cfg.c; ++ch) {
                    double sum = 0.0;
                    int cnt = 0;
                    for (int dy = -1; dy <= 1; ++dy) {
                        for (int dx = -1; dx <= 1; ++dx) {
                            const int yy = y + dy, xx = x + dx;
                            if (yy < 0 || yy >= cfg.h || xx < 0 || xx >= cfg.w) continue;
                            sum += img[static_cast<size_t>((yy * cfg.w + xx) * cfg.c + ch)];
                            ++cnt;
                        }
                    }
                    out[static_cast<size_t>((y * cfg.w + x) * cfg.c + ch)] = sum / cnt;
                }
            }
        }
        img = std::move(out);
    };

    std::vector<std::vector<double>> templates;
    for (int cl = 0; cl < cfg.classes; ++cl) {
        std::vector<double> t(static_cast<size_t>(pix));
        for (auto& v : t) v = normal(rng);
        smooth(t);
        smooth(t);
        double mean = 0.0;
        for (double v : t) mean += v;
        mean /= pix;
        double var = 0.0;
        for (double v : t) var += (v - mean) * (v - mean);
        var /= pix;
        const double inv = 1.0 / std::sqrt(var > 0 ? var : 1.0);
        for (auto& v : t) v = (v - mean) * inv;
        templates.push_back(std::move(t));
    }

    Dataset d;
    d.classes = cfg.classes;
    d.images = Tensor({static_cast<int>(cfg.count), cfg.h, cfg.w, cfg.c});
    d.labels.resize(static_cast<size_t>(cfg.count));
    for (long long i = 0; i < cfg.count; ++i) {
        const int cl = static_cast<int>(i % cfg.classes);
        d.labels[static_cast<size_t>(i)] = cl;
        for (int p = 0; p < pix; ++p) {
            d.images.data[static_cast<size_t>(i) * pix + p] =
                static_cast<float>(templates[static_cast<size_t>(cl)][static_cast<size_t>(p)] +
                                   cfg.noise * normal(rng));
        }
    }
    d.validate();
    return d;
}

Splits make_splits(long long n, long long eval_count, long long assessment_count,
                   std::uint64_t seed) {
    if (eval_count < 0 || assessment_count <= 0 || eval_count + assessment_count > n) {
        throw std::invalid_argument("split sizes do not fit the dataset");
    }
    std::vector<long long> perm(static_cast<size_t>(n));
    std::iota(perm.begin(), perm.end(), 0LL);
    std::mt19937_64 rng(seed);
    std::shuffle(perm.begin(), perm.end(), rng);
    Splits s;
    s.eval.assign(perm.begin(), perm.begin() + eval_count);
    s.train.assign(perm.begin() + eval_count, perm.end());
    s.assessment.assign(s.train.begin(), s.train.begin() + assessment_count);
    return s;
}

Dataset subset(const Dataset& d, const std::vector<long long>& indices) {
    Dataset out;
    out.classes = d.classes;
    auto [imgs, labs] = gather(d, indices);
    out.images = std::move(imgs);
    out.labels = std::move(labs);
    return out;
}

std::pair<Tensor, std::vector<int>> gather(const Dataset& d,
                                           const std::vector<long long>& indices) {
    if (d.images.rank() != 4) throw std::invalid_argument("gather: dataset images must be rank 4");
    const long long per = d.images.numel() / d.images.dim(0);
    Tensor imgs({static_cast<int>(indices.size()), d.images.dim(1), d.images.dim(2),
                 d.images.dim(3)});
    std::vector<int> labs(indices.size());
    for (size_t i = 0; i < indices.size(); ++i) {
        const long long src = indices[i];
        if (src < 0 || src >= d.size()) throw std::out_of_range("gather: index out of range");
        std::copy_n(d.images.data.begin() + src * per, per,
                    imgs.data.begin() + static_cast<long long>(i) * per);
        labs[i] = d.labels[static_cast<size_t>(src)];
    }
    return {std::move(imgs), std::move(labs)};
}

}  // namespace prunekit
