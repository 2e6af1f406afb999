#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "prunekit/checkpoint.hpp"
#include "prunekit/dataset.hpp"

using namespace prunekit;

namespace {

void write_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    REQUIRE(out.good());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

void push_be32(std::vector<unsigned char>& b, std::uint32_t v) {
    b.push_back(static_cast<unsigned char>(v >> 24));
    b.push_back(static_cast<unsigned char>(v >> 16));
    b.push_back(static_cast<unsigned char>(v >> 8));
    b.push_back(static_cast<unsigned char>(v));
}

float normalize_pixel(unsigned char v) {
    return (static_cast<float>(v) / 255.0f - 0.5f) / 0.5f;
}

struct TempFiles {
    std::vector<std::string> paths;
    ~TempFiles() {
        for (const auto& p : paths) std::remove(p.c_str());
    }
    std::string add(const std::string& p) {
        paths.push_back(p);
        return p;
    }
};

}  // namespace

TEST_CASE("idx files decode to normalized channel-last tensors") {
    TempFiles tmp;
    const auto ipath = tmp.add("idx_images_tmp");
    const auto lpath = tmp.add("idx_labels_tmp");

    std::vector<unsigned char> ib;
    push_be32(ib, 0x00000803u);
    push_be32(ib, 2);  // two images
    push_be32(ib, 3);  // rows
    push_be32(ib, 2);  // cols
    for (int p = 0; p < 12; ++p) ib.push_back(static_cast<unsigned char>(p * 20));
    ib[16] = 0;    // first pixel -> -1
    ib[17] = 255;  // second pixel -> +1
    write_bytes(ipath, ib);

    std::vector<unsigned char> lb;
    push_be32(lb, 0x00000801u);
    push_be32(lb, 2);
    lb.push_back(0);
    lb.push_back(2);
    write_bytes(lpath, lb);

    const Dataset d = load_idx(ipath, lpath);
    CHECK(d.images.shape == std::vector<int>{2, 3, 2, 1});
    CHECK(d.labels == std::vector<int>{0, 2});
    CHECK(d.classes == 3);  // densely labeled up to the max seen
    CHECK(d.images.at(0, 0, 0, 0) == -1.0f);
    CHECK(d.images.at(0, 0, 1, 0) == 1.0f);
    for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 2; ++x) {
            CHECK(d.images.at(1, y, x, 0) == normalize_pixel(ib[16 + 6 + static_cast<size_t>(y * 2 + x)]));
        }
}

TEST_CASE("idx loaders reject malformed headers and sizes") {
    TempFiles tmp;
    const auto ipath = tmp.add("idx_bad_images_tmp");
    const auto lpath = tmp.add("idx_bad_labels_tmp");

    std::vector<unsigned char> ib;
    push_be32(ib, 0x00000803u);
    push_be32(ib, 1);
    push_be32(ib, 2);
    push_be32(ib, 2);
    for (int p = 0; p < 4; ++p) ib.push_back(1);
    std::vector<unsigned char> lb;
    push_be32(lb, 0x00000801u);
    push_be32(lb, 1);
    lb.push_back(0);
    write_bytes(ipath, ib);
    write_bytes(lpath, lb);
    CHECK_NOTHROW(load_idx(ipath, lpath));

    auto bad_magic = ib;
    bad_magic[3] = 0x02;
    write_bytes(ipath, bad_magic);
    CHECK_THROWS_WITH_AS(load_idx(ipath, lpath), doctest::Contains("magic"), std::runtime_error);

    auto short_pixels = ib;
    short_pixels.pop_back();
    write_bytes(ipath, short_pixels);
    CHECK_THROWS_WITH_AS(load_idx(ipath, lpath), doctest::Contains("truncated"),
                         std::runtime_error);

    auto extra = ib;
    extra.push_back(9);
    write_bytes(ipath, extra);
    CHECK_THROWS_AS(load_idx(ipath, lpath), std::runtime_error);

    write_bytes(ipath, ib);
    auto bad_label_magic = lb;
    bad_label_magic[3] = 0x05;
    write_bytes(lpath, bad_label_magic);
    CHECK_THROWS_WITH_AS(load_idx(ipath, lpath), doctest::Contains("magic"), std::runtime_error);

    std::vector<unsigned char> miscount;
    push_be32(miscount, 0x00000801u);
    push_be32(miscount, 2);
    miscount.push_back(0);
    miscount.push_back(1);
    write_bytes(lpath, miscount);
    CHECK_THROWS_WITH_AS(load_idx(ipath, lpath), doctest::Contains("count"), std::runtime_error);

    CHECK_THROWS_WITH_AS(load_idx("no_such_file_tmp", lpath), doctest::Contains("cannot open"),
                         std::runtime_error);
}

TEST_CASE("cifar records decode plane-major pixels channel-last") {
    TempFiles tmp;
    const auto path = tmp.add("cifar_tmp.bin");
    std::vector<unsigned char> b;
    auto push_record = [&](unsigned char label, int salt) {
        b.push_back(label);
        for (int k = 0; k < 3 * 32 * 32; ++k) {
            b.push_back(static_cast<unsigned char>((k * 7 + salt) % 251));
        }
    };
    push_record(7, 0);
    push_record(3, 11);
    write_bytes(path, b);

    const Dataset d = load_cifar10_bin({path});
    CHECK(d.images.shape == std::vector<int>{2, 32, 32, 3});
    CHECK(d.labels == std::vector<int>{7, 3});
    CHECK(d.classes == 10);
    for (int ch = 0; ch < 3; ++ch)
        for (int y : {0, 13, 31})
            for (int x : {0, 5, 31}) {
                const int k = (ch * 32 + y) * 32 + x;
                CHECK(d.images.at(0, y, x, ch) ==
                      normalize_pixel(static_cast<unsigned char>((k * 7) % 251)));
                CHECK(d.images.at(1, y, x, ch) ==
                      normalize_pixel(static_cast<unsigned char>((k * 7 + 11) % 251)));
            }

    b.pop_back();
    write_bytes(path, b);
    CHECK_THROWS_WITH_AS(load_cifar10_bin({path}), doctest::Contains("whole number"),
                         std::runtime_error);
}

TEST_CASE("splits are deterministic, disjoint, and nested") {
    const auto s1 = make_splits(100, 20, 10, 5);
    const auto s2 = make_splits(100, 20, 10, 5);
    CHECK(s1.eval == s2.eval);
    CHECK(s1.train == s2.train);
    CHECK(s1.assessment == s2.assessment);
    CHECK(s1.eval.size() == 20);
    CHECK(s1.train.size() == 80);
    CHECK(s1.assessment.size() == 10);

    std::set<long long> eval(s1.eval.begin(), s1.eval.end());
    std::set<long long> train(s1.train.begin(), s1.train.end());
    CHECK(eval.size() == 20);
    CHECK(train.size() == 80);
    for (long long i : s1.eval) CHECK(train.count(i) == 0);
    std::set<long long> all = eval;
    all.insert(train.begin(), train.end());
    CHECK(all.size() == 100);
    CHECK(*all.begin() == 0);
    CHECK(*all.rbegin() == 99);
    // assessment is the head of the training order, so it is a subset
    CHECK(std::equal(s1.assessment.begin(), s1.assessment.end(), s1.train.begin()));

    const auto s3 = make_splits(100, 20, 10, 6);
    CHECK(s3.eval != s1.eval);

    CHECK_THROWS_AS(make_splits(100, 95, 10, 5), std::invalid_argument);
    CHECK_THROWS_AS(make_splits(100, 20, 0, 5), std::invalid_argument);
    CHECK_THROWS_AS(make_splits(100, -1, 10, 5), std::invalid_argument);
}

TEST_CASE("synthetic data is reproducible and template-driven") {
    SyntheticSpec syn;
    syn.count = 16;
    syn.h = syn.w = 4;
    syn.classes = 4;
    syn.noise = 0.0;
    const auto a = make_synthetic(syn);
    const auto b = make_synthetic(syn);
    CHECK(a.images.data == b.images.data);
    CHECK(a.labels == b.labels);
    for (int i = 0; i < 16; ++i) CHECK(a.labels[static_cast<size_t>(i)] == i % 4);

    // without noise every example of a class is exactly its template
    const int pix = 4 * 4;
    for (int p = 0; p < pix; ++p) {
        CHECK(a.images.data[static_cast<size_t>(0 * pix + p)] ==
              a.images.data[static_cast<size_t>(4 * pix + p)]);
    }
    double diff = 0.0;
    for (int p = 0; p < pix; ++p) {
        diff += std::fabs(a.images.data[static_cast<size_t>(0 * pix + p)] -
                          a.images.data[static_cast<size_t>(1 * pix + p)]);
    }
    CHECK(diff > 0.1);  // different classes, different templates

    auto other = syn;
    other.seed = 99;
    const auto c = make_synthetic(other);
    CHECK(a.images.data != c.images.data);

    auto noisy = syn;
    noisy.noise = 0.3;
    const auto d = make_synthetic(noisy);
    CHECK(d.images.data != a.images.data);

    auto bad = syn;
    bad.classes = 0;
    CHECK_THROWS_AS(make_synthetic(bad), std::invalid_argument);
    bad = syn;
    bad.noise = -0.5;
    CHECK_THROWS_AS(make_synthetic(bad), std::invalid_argument);
}

TEST_CASE("gather and subset pick the requested examples") {
    SyntheticSpec syn;
    syn.count = 10;
    syn.h = syn.w = 3;
    syn.classes = 5;
    syn.noise = 0.2;
    const auto d = make_synthetic(syn);

    const std::vector<long long> pick = {7, 2, 2};
    const auto sub = subset(d, pick);
    CHECK(sub.size() == 3);
    CHECK(sub.classes == d.classes);
    CHECK(sub.labels == std::vector<int>{d.labels[7], d.labels[2], d.labels[2]});
    const int pix = 3 * 3;
    for (int p = 0; p < pix; ++p) {
        CHECK(sub.images.data[static_cast<size_t>(p)] ==
              d.images.data[static_cast<size_t>(7 * pix + p)]);
        CHECK(sub.images.data[static_cast<size_t>(pix + p)] ==
              d.images.data[static_cast<size_t>(2 * pix + p)]);
    }

    const auto [imgs, labs] = gather(d, pick);
    CHECK(imgs.data == sub.images.data);
    CHECK(labs == sub.labels);
}

TEST_CASE("dataset validation guards shape and label ranges") {
    Dataset d;
    d.images = Tensor({2, 2, 2, 1});
    d.labels = {0, 1};
    d.classes = 2;
    CHECK_NOTHROW(d.validate());
    d.labels = {0};
    CHECK_THROWS_AS(d.validate(), std::invalid_argument);
    d.labels = {0, 5};
    CHECK_THROWS_AS(d.validate(), std::out_of_range);
    d.labels = {0, 1};
    d.classes = 0;
    CHECK_THROWS_AS(d.validate(), std::invalid_argument);
    d.classes = 2;
    d.images = Tensor({8});
    CHECK_THROWS_AS(d.validate(), std::invalid_argument);
}

TEST_CASE("model checkpoints round-trip bit-exactly") {
    TempFiles tmp;
    tmp.add("ckpt_tmp.json");
    tmp.add("ckpt_tmp.bin");
    const auto spec = build_vgg_small();
    auto params = init_params(spec, 123);
    // make the running statistics non-trivial so the test would catch loss
    std::mt19937_64 rng(3);
    for (auto& [id, bp] : params.bn) {
        for (auto& v : bp.running_mean.data) v = static_cast<float>(rng() % 97) / 17.0f;
        for (auto& v : bp.running_var.data) v = 1.0f + static_cast<float>(rng() % 13) / 7.0f;
    }
    nlohmann::json meta;
    meta["note"] = "round trip";
    meta["steps"] = 42;
    save_model("ckpt_tmp", spec, params, meta);

    const auto loaded = load_model("ckpt_tmp");
    CHECK(spec_to_json(loaded.spec) == spec_to_json(spec));
    CHECK(loaded.meta.at("note") == "round trip");
    CHECK(loaded.meta.at("steps") == 42);
    for (const auto& [id, cp] : params.conv) {
        CHECK(loaded.params.conv.at(id).kernel.data == cp.kernel.data);
        CHECK(loaded.params.conv.at(id).kernel.shape == cp.kernel.shape);
        CHECK(loaded.params.conv.at(id).bias.data == cp.bias.data);
        CHECK(loaded.params.conv.at(id).stride == cp.stride);
        CHECK(loaded.params.conv.at(id).padding == cp.padding);
    }
    for (const auto& [id, fp] : params.fc) {
        CHECK(loaded.params.fc.at(id).weight.data == fp.weight.data);
        CHECK(loaded.params.fc.at(id).bias.data == fp.bias.data);
    }
    for (const auto& [id, bp] : params.bn) {
        CHECK(loaded.params.bn.at(id).gamma.data == bp.gamma.data);
        CHECK(loaded.params.bn.at(id).beta.data == bp.beta.data);
        CHECK(loaded.params.bn.at(id).running_mean.data == bp.running_mean.data);
        CHECK(loaded.params.bn.at(id).running_var.data == bp.running_var.data);
    }
}

TEST_CASE("checkpoint loader rejects mangled files") {
    TempFiles tmp;
    tmp.add("ckpt_bad_tmp.json");
    tmp.add("ckpt_bad_tmp.bin");
    const auto spec = build_small_resnet();
    save_model("ckpt_bad_tmp", spec, init_params(spec, 1));
    CHECK_NOTHROW(load_model("ckpt_bad_tmp"));

    // shear four bytes off the payload
    std::ifstream in("ckpt_bad_tmp.bin", std::ios::binary);
    std::vector<char> blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    blob.resize(blob.size() - 4);
    std::ofstream out("ckpt_bad_tmp.bin", std::ios::binary | std::ios::trunc);
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    out.close();
    CHECK_THROWS_WITH_AS(load_model("ckpt_bad_tmp"), doctest::Contains("blob length"),
                         std::runtime_error);

    std::ifstream jin("ckpt_bad_tmp.json");
    auto j = nlohmann::json::parse(jin);
    jin.close();
    j["format"] = "something-else";
    write_file_atomic("ckpt_bad_tmp.json", j.dump());
    CHECK_THROWS_WITH_AS(load_model("ckpt_bad_tmp"), doctest::Contains("unknown model format"),
                         std::runtime_error);

    CHECK_THROWS_WITH_AS(load_model("ckpt_missing_tmp"), doctest::Contains("cannot open"),
                         std::runtime_error);
}

TEST_CASE("atomic writes land complete or not at all") {
    TempFiles tmp;
    const auto path = tmp.add("atomic_tmp.txt");
    write_file_atomic(path, "first");
    std::ifstream a(path);
    std::string text((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
    CHECK(text == "first");
    a.close();
    write_file_atomic(path, "second version");
    std::ifstream b(path);
    text.assign((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
    CHECK(text == "second version");
}
