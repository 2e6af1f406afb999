#include <cstdio>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "prunekit/trainer.hpp"

using namespace prunekit;
using testutil::make_chain_net;
using testutil::random_tensor;

namespace {

GraphGrads manual_grads(const NetworkSpec& spec, const ModelParams& params, const Tensor& x,
                        const std::vector<int>& labels) {
    GraphCache cache;
    const Tensor logits = graph_forward(spec, params, x, Mode::train, nullptr, &cache);
    const auto xent = ops::softmax_xent(logits, labels, true);
    return graph_backward(spec, params, nullptr, cache, xent.grad_logits);
}

// mirrors one decoupled SGD-with-momentum update in the trainer's precision
void apply_expected(Tensor& p, Tensor& v, const Tensor& g, double lr, double mu, double wd) {
    for (size_t i = 0; i < p.data.size(); ++i) {
        const double grad = static_cast<double>(g.data[i]) + wd * static_cast<double>(p.data[i]);
        const double vel = mu * static_cast<double>(v.data[i]) + grad;
        v.data[i] = static_cast<float>(vel);
        p.data[i] = static_cast<float>(static_cast<double>(p.data[i]) - lr * vel);
    }
}

}  // namespace

TEST_CASE("learning-rate schedule is a right-continuous step function") {
    TrainConfig cfg;
    cfg.lr_schedule = {{0, 0.05}, {10, 0.01}, {20, 0.002}};
    CHECK(cfg.lr_at(0) == 0.05);
    CHECK(cfg.lr_at(9) == 0.05);
    CHECK(cfg.lr_at(10) == 0.01);
    CHECK(cfg.lr_at(19) == 0.01);
    CHECK(cfg.lr_at(20) == 0.002);
    CHECK(cfg.lr_at(1000) == 0.002);

    TrainConfig bad = cfg;
    bad.lr_schedule = {{0, 0.1}, {5, 0.05}, {5, 0.01}};
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad.lr_schedule = {};
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.batch_size = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.momentum = 1.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.weight_decay = -1e-4;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("one step without momentum moves each tensor by minus lr times gradient") {
    const auto spec = make_chain_net({6, 6, 1}, {3, 4}, 3);
    std::mt19937_64 rng(71);
    ModelParams params = init_params(spec, 5);
    const ModelParams before = params;
    const auto x = random_tensor<float>({4, 6, 6, 1}, rng);
    const std::vector<int> labels = {0, 1, 2, 0};

    TrainConfig cfg;
    cfg.batch_size = 4;
    cfg.lr_schedule = {{0, 0.1}};
    cfg.momentum = 0.0;
    cfg.weight_decay = 0.01;  // hits kernels and fc weights, never biases or bn
    const auto grads = manual_grads(spec, before, x, labels);

    Trainer trainer(spec, params, cfg);
    const auto st = trainer.step(x, labels);
    CHECK(st.step == 1);
    CHECK(st.lr == 0.1);

    GraphCache cache;
    const Tensor logits = graph_forward(spec, before, x, Mode::train, nullptr, &cache);
    const auto xent = ops::softmax_xent(logits, labels, false);
    CHECK(st.loss == doctest::Approx(xent.mean_loss).epsilon(1e-12));

    auto expect = [&](const Tensor& got, const Tensor& was, const Tensor& g, double wd) {
        Tensor p = was, v(was.shape);
        apply_expected(p, v, g, 0.1, 0.0, wd);
        CHECK(got.data == p.data);
    };
    for (const auto& [id, cp] : params.conv) {
        expect(cp.kernel, before.conv.at(id).kernel, grads.conv.at(id).kernel, 0.01);
        expect(cp.bias, before.conv.at(id).bias, grads.conv.at(id).bias, 0.0);
    }
    for (const auto& [id, fp] : params.fc) {
        expect(fp.weight, before.fc.at(id).weight, grads.fc.at(id).weight, 0.01);
        expect(fp.bias, before.fc.at(id).bias, grads.fc.at(id).bias, 0.0);
    }
    for (const auto& [id, bp] : params.bn) {
        expect(bp.gamma, before.bn.at(id).gamma, grads.bn.at(id).gamma, 0.0);
        expect(bp.beta, before.bn.at(id).beta, grads.bn.at(id).beta, 0.0);
    }
    // train-mode forward folded the batch statistics into the running ones
    CHECK(params.bn.at("bn1").running_mean.data != before.bn.at("bn1").running_mean.data);
}

TEST_CASE("momentum accumulates velocity across steps") {
    const auto spec = make_chain_net({6, 6, 1}, {2, 2}, 2);
    std::mt19937_64 rng(73);
    ModelParams params = init_params(spec, 6);
    const ModelParams p0 = params;
    const auto x = random_tensor<float>({2, 6, 6, 1}, rng);
    const std::vector<int> labels = {0, 1};

    TrainConfig cfg;
    cfg.batch_size = 2;
    cfg.lr_schedule = {{0, 0.05}};
    cfg.momentum = 0.5;
    cfg.weight_decay = 0.0;

    Trainer trainer(spec, params, cfg);
    trainer.step(x, labels);
    const ModelParams p1 = params;
    trainer.step(x, labels);
    CHECK(trainer.step_count() == 2);

    const auto g1 = manual_grads(spec, p0, x, labels);
    const auto g2 = manual_grads(spec, p1, x, labels);
    Tensor w = p0.fc.at("fc").weight, v(w.shape);
    apply_expected(w, v, g1.fc.at("fc").weight, 0.05, 0.5, 0.0);
    CHECK(w.data == p1.fc.at("fc").weight.data);
    apply_expected(w, v, g2.fc.at("fc").weight, 0.05, 0.5, 0.0);
    CHECK(w.data == params.fc.at("fc").weight.data);
}

TEST_CASE("a zero learning rate only advances batch statistics") {
    const auto spec = make_chain_net({6, 6, 1}, {3, 3}, 2);
    std::mt19937_64 rng(79);
    ModelParams params = init_params(spec, 7);
    const ModelParams before = params;
    const auto x = random_tensor<float>({2, 6, 6, 1}, rng);

    TrainConfig cfg;
    cfg.batch_size = 2;
    cfg.lr_schedule = {{0, 0.0}};
    cfg.weight_decay = 1e-2;
    Trainer trainer(spec, params, cfg);
    trainer.step(x, {0, 1});
    trainer.step(x, {1, 0});

    for (const auto& [id, cp] : params.conv) {
        CHECK(cp.kernel.data == before.conv.at(id).kernel.data);
        CHECK(cp.bias.data == before.conv.at(id).bias.data);
    }
    CHECK(params.fc.at("fc").weight.data == before.fc.at("fc").weight.data);
    for (const auto& [id, bp] : params.bn) {
        CHECK(bp.gamma.data == before.bn.at(id).gamma.data);
        CHECK(bp.beta.data == before.bn.at(id).beta.data);
        CHECK(bp.running_mean.data != before.bn.at(id).running_mean.data);
        CHECK(bp.running_var.data != before.bn.at(id).running_var.data);
    }
}

TEST_CASE("the step schedule switches the reported learning rate") {
    const auto spec = make_chain_net({6, 6, 1}, {2, 2}, 2);
    std::mt19937_64 rng(83);
    ModelParams params = init_params(spec, 8);
    const auto x = random_tensor<float>({2, 6, 6, 1}, rng);
    TrainConfig cfg;
    cfg.batch_size = 2;
    cfg.lr_schedule = {{0, 0.1}, {2, 0.05}};
    Trainer trainer(spec, params, cfg);
    CHECK(trainer.step(x, {0, 1}).lr == 0.1);
    CHECK(trainer.step(x, {0, 1}).lr == 0.1);
    CHECK(trainer.step(x, {0, 1}).lr == 0.05);
}

TEST_CASE("training is reproducible from the seed") {
    const auto spec = make_chain_net({8, 8, 1}, {3, 4}, 3, 2);
    SyntheticSpec syn;
    syn.count = 64;
    syn.h = syn.w = 8;
    syn.classes = 3;
    const auto data = make_synthetic(syn);

    TrainConfig cfg;
    cfg.batch_size = 16;
    cfg.max_steps = 5;
    cfg.seed = 11;
    const auto a = train(spec, std::nullopt, data, cfg);
    const auto b = train(spec, std::nullopt, data, cfg);
    CHECK(a.conv.at("conv1").kernel.data == b.conv.at("conv1").kernel.data);
    CHECK(a.fc.at("fc").weight.data == b.fc.at("fc").weight.data);
    CHECK(a.bn.at("bn2").running_mean.data == b.bn.at("bn2").running_mean.data);

    cfg.seed = 12;
    const auto c = train(spec, std::nullopt, data, cfg);
    CHECK(a.conv.at("conv1").kernel.data != c.conv.at("conv1").kernel.data);
}

TEST_CASE("training separates an easy synthetic problem") {
    SyntheticSpec syn;
    syn.count = 512;
    syn.noise = 0.5;
    const auto data = make_synthetic(syn);
    const auto splits = make_splits(syn.count, 128, 64, 21);
    const auto train_set = subset(data, splits.train);
    const auto held_out = subset(data, splits.eval);

    const auto spec = make_chain_net({16, 16, 1}, {6, 8}, syn.classes, 2);
    TrainConfig cfg;
    cfg.batch_size = 32;
    cfg.lr_schedule = {{0, 0.05}, {200, 0.01}};
    cfg.weight_decay = 1e-4;
    cfg.max_steps = 300;
    cfg.seed = 3;
    const auto params = train(spec, std::nullopt, train_set, cfg);
    const auto rep = evaluate(spec, params, held_out);
    CHECK(rep.count == 128);
    CHECK(rep.top1 >= 0.95);
}

TEST_CASE("an exploding run reports divergence instead of silent garbage") {
    // no batchnorm, so a huge learning rate actually blows the activations up
    NetworkSpec spec;
    spec.input_shape = {8, 8, 1};
    spec.classes = 3;
    spec.layers = {
        {"input", LayerKind::input, 0, 0, 1, 0, {}, false},
        {"conv1", LayerKind::conv, 4, 3, 1, 1, {"input"}, false},
        {"relu1", LayerKind::relu, 0, 0, 1, 0, {"conv1"}, false},
        {"pool", LayerKind::maxpool, 0, 2, 2, 0, {"relu1"}, false},
        {"flat", LayerKind::flatten, 0, 0, 1, 0, {"pool"}, false},
        {"fc", LayerKind::fc, 3, 0, 1, 0, {"flat"}, false},
    };
    validate(spec);
    SyntheticSpec syn;
    syn.count = 64;
    syn.h = syn.w = 8;
    syn.classes = 3;
    const auto data = make_synthetic(syn);
    TrainConfig cfg;
    cfg.batch_size = 16;
    cfg.lr_schedule = {{0, 1e6}};
    cfg.max_steps = 20;
    CHECK_THROWS_WITH_AS(train(spec, std::nullopt, data, cfg), doctest::Contains("diverged"),
                         std::runtime_error);
}

TEST_CASE("evaluate is indifferent to batch size and example order") {
    const auto spec = make_chain_net({8, 8, 1}, {3, 3}, 3);
    SyntheticSpec syn;
    syn.count = 50;
    syn.h = syn.w = 8;
    syn.classes = 3;
    const auto data = make_synthetic(syn);
    const auto params = init_params(spec, 9);

    const auto whole = evaluate(spec, params, data, 256);
    const auto ragged = evaluate(spec, params, data, 7);  // 7 full batches + one of 1
    CHECK(whole.count == 50);
    CHECK(ragged.top1 == whole.top1);
    CHECK(ragged.mean_loss == whole.mean_loss);

    std::vector<long long> order(50);
    for (int i = 0; i < 50; ++i) order[static_cast<size_t>(i)] = (i * 7 + 3) % 50;
    const auto shuffled = evaluate(spec, params, subset(data, order), 16);
    CHECK(shuffled.top1 == whole.top1);
    CHECK(shuffled.mean_loss == doctest::Approx(whole.mean_loss).epsilon(1e-12));

    CHECK_THROWS_AS(evaluate(spec, params, data, 0), std::invalid_argument);
}

TEST_CASE("the batch sampler covers epochs and replays from its state") {
    BatchSampler s(10, 3, 31);
    std::set<long long> seen;
    for (int b = 0; b < 3; ++b) {
        const auto idx = s.next();
        CHECK(idx.size() == 3);
        for (long long i : idx) {
            CHECK(i >= 0);
            CHECK(i < 10);
            CHECK(seen.insert(i).second);  // no repeats within an epoch
        }
    }
    CHECK(s.served() == 3);

    // a fresh sampler fast-forwarded to the same state continues identically
    BatchSampler t(10, 3, 31);
    t.restore(3);
    CHECK(t.served() == 3);
    for (int b = 0; b < 5; ++b) CHECK(t.next() == s.next());

    // same seed, same stream; different seed, different stream
    BatchSampler u(10, 3, 31), v(10, 3, 32);
    const auto first = u.next();
    CHECK(first != v.next());
    BatchSampler w(10, 3, 31);
    CHECK(w.next() == first);

    CHECK_THROWS_AS(BatchSampler(2, 3, 0), std::invalid_argument);
}

TEST_CASE("masked channels stay frozen once their momentum is cleared") {
    const auto spec = make_chain_net({6, 6, 1}, {4, 3}, 3);
    std::mt19937_64 rng(89);
    ModelParams params = init_params(spec, 10);
    const auto x = random_tensor<float>({4, 6, 6, 1}, rng);
    const std::vector<int> labels = {0, 1, 2, 0};

    TrainConfig cfg;
    cfg.batch_size = 4;
    cfg.lr_schedule = {{0, 0.05}};
    cfg.momentum = 0.9;
    cfg.weight_decay = 0.0;  // decay would erode frozen weights
    Trainer trainer(spec, params, cfg);
    trainer.step(x, labels);  // builds velocity on every channel
    trainer.step(x, labels);

    MaskMap masks = full_masks(spec);
    masks["conv1"] = {1, 0, 1, 0};
    trainer.zero_masked_momentum(masks);
    const ModelParams frozen = params;

    for (int i = 0; i < 4; ++i) trainer.step(x, labels, &masks);

    const auto& k0 = frozen.conv.at("conv1").kernel;
    const auto& k1 = params.conv.at("conv1").kernel;
    for (int r = 0; r < 3; ++r)
        for (int s = 0; s < 3; ++s)
            for (int ch : {1, 3}) CHECK(k1.at(r, s, 0, ch) == k0.at(r, s, 0, ch));
    CHECK(params.conv.at("conv1").bias.at(1) == frozen.conv.at("conv1").bias.at(1));
    CHECK(params.bn.at("bn1").gamma.at(3) == frozen.bn.at("bn1").gamma.at(3));
    CHECK(params.bn.at("bn1").beta.at(1) == frozen.bn.at("bn1").beta.at(1));
    // live channels keep moving
    CHECK(k1.at(0, 0, 0, 0) != k0.at(0, 0, 0, 0));

    MaskMap bad;
    bad["nope"] = {1};
    CHECK_THROWS_AS(trainer.zero_masked_momentum(bad), std::invalid_argument);
    bad.clear();
    bad["conv1"] = {1, 1};
    CHECK_THROWS_AS(trainer.zero_masked_momentum(bad), std::invalid_argument);
}

TEST_CASE("train writes a per-step csv log when asked") {
    const auto spec = make_chain_net({8, 8, 1}, {2, 2}, 3);
    SyntheticSpec syn;
    syn.count = 32;
    syn.h = syn.w = 8;
    syn.classes = 3;
    const auto data = make_synthetic(syn);
    TrainConfig cfg;
    cfg.batch_size = 8;
    cfg.max_steps = 4;
    cfg.log_path = "trainer_log_test.csv";
    (void)train(spec, std::nullopt, data, cfg);

    std::ifstream in(cfg.log_path);
    REQUIRE(in.good());
    std::string line;
    std::getline(in, line);
    CHECK(line == "step,lr,loss,top1");
    int rows = 0;
    while (std::getline(in, line)) {
        if (!line.empty()) ++rows;
    }
    CHECK(rows == 4);
    in.close();
    std::remove(cfg.log_path.c_str());
}
