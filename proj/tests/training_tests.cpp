#include <doctest.h>

#include <cmath>
#include <sstream>

#include "attriprompt/io.hpp"
#include "attriprompt/synthetic.hpp"
#include "attriprompt/training.hpp"

using namespace attriprompt;

namespace {

// Small world used across the harness tests: 16x16 images, 4 base + 1 novel
// classes, a handful of samples.
SyntheticSpec tiny_spec(std::uint64_t seed = 7) {
    SyntheticSpec spec;
    spec.n_colors = 2;
    spec.n_shapes = 2;
    spec.n_textures = 1;
    spec.image_size = 16;
    spec.noise_std = 0.08;
    spec.samples_per_class = 5;
    spec.n_novel = 1;
    spec.shots = 3;
    spec.seed = seed;
    return spec;
}

TaskConfig tiny_config(std::uint64_t seed = 1) {
    TaskConfig config;
    config.model.image_size = 16;
    config.model.d_vis = 16;
    config.model.d_txt = 16;
    config.model.d_embed = 8;
    config.model.n_vis_layers = 2;
    config.model.n_txt_layers = 2;
    config.model.n_heads = 2;
    config.pool_size = 3;
    config.prompt_len = 2;
    config.clusters = 2;
    config.kmeans_iters = 10;
    config.weights.lambda2 = 1.0;
    config.schedule.epochs = 5;
    config.schedule.batch_size = 4;
    config.schedule.base_lr = 0.02;
    config.seed = seed;
    return config;
}

struct TinyWorld {
    Dataset dataset;
    FewShotSplit split;
    Model model;
};

TinyWorld make_world(std::uint64_t config_seed = 1) {
    TinyWorld world{generate_synthetic(tiny_spec()), {}, {}};
    world.split = world.dataset.split();
    TaskConfig config = tiny_config(config_seed);
    bind_task_to_dataset(config, world.dataset);
    world.model = build_model(config);
    return world;
}

std::vector<double> snapshot_params(const Model& model) {
    std::vector<double> out;
    TrainableSet set = collect_trainables(model);
    for (const auto& [name, tensor] : set.params) {
        out.insert(out.end(), tensor.values().begin(), tensor.values().end());
    }
    return out;
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("cosine schedule boundaries and monotonicity") {
    CHECK(cosine_lr(0, 100, 0.0035) == doctest::Approx(0.0035).epsilon(1e-12));
    CHECK(cosine_lr(100, 100, 0.0035) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(cosine_lr(50, 100, 0.0035) == doctest::Approx(0.00175).epsilon(1e-12));
    double prev = cosine_lr(0, 64, 1.0);
    for (int t = 1; t <= 64; ++t) {
        const double lr = cosine_lr(t, 64, 1.0);
        CHECK(lr <= prev + 1e-15);
        prev = lr;
    }
    CHECK_THROWS_AS(cosine_lr(101, 100, 1.0), contract_error);
    CHECK_THROWS_AS(cosine_lr(-1, 100, 1.0), contract_error);
    CHECK_THROWS_AS(cosine_lr(0, 0, 1.0), contract_error);
}

TEST_CASE("sgd step: plain update, zero lr, momentum recurrence, missing grad") {
    Tensor p({2}, {0.0, 1.0}, true);
    TrainableSet set;
    set.params.emplace_back("p", p);
    SgdState state = init_sgd_state(set);

    p.ensure_grad();
    p.grad() = {1.0, -2.0};
    sgd_step(set, 0.1, 0.0, state);
    CHECK(p.values()[0] == doctest::Approx(-0.1).epsilon(1e-12));
    CHECK(p.values()[1] == doctest::Approx(1.2).epsilon(1e-12));
    CHECK(p.grad() == std::vector<double>{0.0, 0.0});  // zeroed afterwards

    const std::vector<double> before = p.values();
    p.grad() = {5.0, 5.0};
    sgd_step(set, 0.0, 0.0, state);
    CHECK(p.values() == before);

    // constant gradient 1, lr 1, momentum 0.9, two steps from 0: -1 then -2.9
    Tensor q({1}, {0.0}, true);
    TrainableSet set_q;
    set_q.params.emplace_back("q", q);
    SgdState state_q = init_sgd_state(set_q);
    q.ensure_grad();
    q.grad() = {1.0};
    sgd_step(set_q, 1.0, 0.9, state_q);
    CHECK(q.values()[0] == doctest::Approx(-1.0).epsilon(1e-12));
    q.grad() = {1.0};
    sgd_step(set_q, 1.0, 0.9, state_q);
    CHECK(q.values()[0] == doctest::Approx(-2.9).epsilon(1e-12));
    CHECK(state_q.step_count == 2);

    Tensor fresh({1}, {0.0}, true);
    TrainableSet set_fresh;
    set_fresh.params.emplace_back("fresh", fresh);
    SgdState state_fresh = init_sgd_state(set_fresh);
    CHECK_THROWS_AS(sgd_step(set_fresh, 0.1, 0.0, state_fresh), contract_error);
}

TEST_CASE("trainable set is exactly the pool and the two heads") {
    TinyWorld world = make_world();
    TrainableSet set = collect_trainables(world.model);
    REQUIRE(set.params.size() == 6);
    CHECK(set.params[0].first == "pool.prompts");
    CHECK(set.params[1].first == "pool.keys");

    world.model.backbone.txt_proj.set_requires_grad(true);
    CHECK_THROWS_AS(collect_trainables(world.model), contract_error);
    world.model.backbone.txt_proj.set_requires_grad(false);
}

TEST_CASE("train_step leaves the backbone bit-identical and grads follow the loss paths") {
    TinyWorld world = make_world();
    ClassTokenization classes = world.dataset.tokenize_subset(world.split.base_classes);
    const std::string checksum_before = backbone_checksum(world.model);

    TrainableSet trainables = collect_trainables(world.model);
    SgdState state = init_sgd_state(trainables);
    std::vector<Tensor> images = {world.dataset.image_tensor(world.split.train_indices[0]),
                                  world.dataset.image_tensor(world.split.train_indices[1])};
    std::vector<int> labels = {0, 0};
    for (int step = 0; step < 5; ++step) {
        train_step(world.model, images, labels, classes, 0.01, trainables, state);
    }
    CHECK(backbone_checksum(world.model) == checksum_before);
    CHECK(state.step_count == 5);
}

TEST_CASE("with only the ce path active, keys receive exactly zero gradient") {
    TinyWorld world = make_world();
    world.model.config.weights.lambda1 = 0.0;
    world.model.config.weights.lambda2 = 0.0;
    world.model.config.weights.lambda3 = 0.0;
    world.model.config.weights.lambda4 = 0.0;
    ClassTokenization classes = world.dataset.tokenize_subset(world.split.base_classes);

    TrainableSet trainables = collect_trainables(world.model);
    for (auto& [name, tensor] : trainables.params) {
        tensor.ensure_grad();
        tensor.zero_grad();
    }
    Tape tape;
    ForwardLoss loss = compute_batch_loss(
        tape, world.model, {world.dataset.image_tensor(world.split.train_indices[0])}, {0},
        classes);
    tape.backward(loss.total);

    for (double g : world.model.pool.keys.grad()) CHECK(g == 0.0);
    double prompt_grad = 0.0;
    for (double g : world.model.pool.prompts.grad()) prompt_grad += std::fabs(g);
    CHECK(prompt_grad > 0.0);
}

TEST_CASE("training run: loss drops, logs are deterministic across identical seeds") {
    TinyWorld first = make_world(11);
    TinyWorld second = make_world(11);

    std::ostringstream log_a, log_b;
    SgdState state_a, state_b;
    std::vector<LossBreakdown> hist_a =
        train_run(first.model, first.dataset, first.split, state_a, &log_a);
    std::vector<LossBreakdown> hist_b =
        train_run(second.model, second.dataset, second.split, state_b, &log_b);

    REQUIRE(hist_a.size() >= 6);
    CHECK(log_a.str() == log_b.str());
    CHECK(snapshot_params(first.model) == snapshot_params(second.model));
    // batches are stochastic, so compare means of the first and last three steps
    double head = 0.0, tail = 0.0;
    for (int i = 0; i < 3; ++i) {
        head += hist_a[static_cast<std::size_t>(i)].total;
        tail += hist_a[hist_a.size() - 1 - static_cast<std::size_t>(i)].total;
    }
    CHECK(tail < head);

    // breakdown identity on every step
    const LossWeights& w = first.model.config.weights;
    for (const LossBreakdown& b : hist_a) {
        const double expect = (1 - w.lambda1) * b.ce + w.lambda1 * b.align + w.lambda2 * b.cc +
                              w.lambda3 * b.div - w.lambda4 * b.match;
        CHECK(std::fabs(b.total - expect) <= 1e-12);
    }
}

TEST_CASE("log lines carry the step index and six scalars at 9 significant digits") {
    LossBreakdown b;
    b.ce = 1.0 / 3.0;
    b.align = 2.0 / 3.0;
    b.cc = 0.125;
    b.div = -0.0625;
    b.match = 3.5;
    b.total = 0.123456789123;
    CHECK(format_log_line(7, b) ==
          "7 0.333333333 0.666666667 0.125 -0.0625 3.5 0.123456789");
}

TEST_CASE("evaluate is read-only and reports the harmonic mean") {
    TinyWorld world = make_world(3);
    const std::vector<double> params_before = snapshot_params(world.model);
    const std::string backbone_before = backbone_checksum(world.model);

    EvalResult result =
        evaluate(world.model, world.dataset, world.split, world.model.config.weights.lambda1);
    CHECK(result.base_acc >= 0.0);
    CHECK(result.base_acc <= 100.0);
    CHECK(result.novel_acc >= 0.0);
    CHECK(result.novel_acc <= 100.0);
    CHECK(result.hm == doctest::Approx(harmonic_mean(result.base_acc, result.novel_acc)));

    CHECK(snapshot_params(world.model) == params_before);
    CHECK(backbone_checksum(world.model) == backbone_before);

    FewShotSplit empty = world.split;
    empty.base_test_indices.clear();
    CHECK_THROWS_AS(evaluate(world.model, world.dataset, empty, 0.5), contract_error);
}

TEST_CASE("harmonic mean oracles") {
    CHECK(harmonic_mean(50, 50) == doctest::Approx(50.0).epsilon(1e-12));
    CHECK(harmonic_mean(80, 70) == doctest::Approx(2.0 * 80 * 70 / 150.0).epsilon(1e-12));
    CHECK(harmonic_mean(0, 70) == 0.0);
    CHECK(harmonic_mean(80, 0) == 0.0);
}

}  // TEST_SUITE
