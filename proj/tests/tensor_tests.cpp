#include <doctest.h>

#include <cmath>
#include <random>

#include "attriprompt/ops.hpp"

using namespace attriprompt;

namespace {

Tensor random_tensor(std::vector<int> shape, std::mt19937_64& rng, bool requires_grad = false) {
    std::normal_distribution<double> dist(0.0, 1.0);
    Tensor t(std::move(shape), 0.0, requires_grad);
    for (double& v : t.values()) v = dist(rng);
    return t;
}

}  // namespace

TEST_SUITE("tensor") {

TEST_CASE("matmul identity and hand product") {
    Tape tape;
    Tensor eye({2, 2}, {1, 0, 0, 1});
    Tensor a({2, 2}, {1, 2, 3, 4});
    Tensor prod = matmul(tape, eye, a);
    for (std::size_t i = 0; i < 4; ++i) CHECK(prod.values()[i] == a.values()[i]);

    Tensor row({1, 2}, {1, 2});
    Tensor col({2, 1}, {3, 4});
    CHECK(matmul(tape, row, col).scalar_value() == 11.0);
}

TEST_CASE("matmul rejects mismatched shapes, naming both") {
    Tape tape;
    Tensor a({2, 3}, 1.0);
    Tensor b({2, 2}, 1.0);
    try {
        matmul(tape, a, b);
        FAIL("expected shape_error");
    } catch (const shape_error& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
        CHECK(msg.find("[2x2]") != std::string::npos);
    }
}

TEST_CASE("matmul gradient matches central finite differences") {
    std::mt19937_64 rng(11);
    Tensor a = random_tensor({3, 4}, rng, true);
    Tensor b = random_tensor({4, 2}, rng, true);
    Objective fn = [&](bool with_grad) {
        Tape tape;
        Tensor loss = sum_all(tape, matmul(tape, a, b));
        if (with_grad) tape.backward(loss);
        return loss.scalar_value();
    };
    FiniteDiffReport report = finite_diff_check(fn, {{"a", a}, {"b", b}}, 1e-5);
    CHECK(report.max_rel_err <= 1e-6);
}

TEST_CASE("softmax rows: symmetry, scalar oracle, overflow safety") {
    Tape tape;
    Tensor sym = softmax_rows(tape, Tensor({1, 2}, {0, 0}));
    CHECK(sym.at(0, 0) == doctest::Approx(0.5).epsilon(1e-12));

    Tensor one = softmax_rows(tape, Tensor({1, 2}, {1, 0}));
    // exp(1)/(exp(1)+1) computed independently
    const double expected = std::exp(1.0) / (std::exp(1.0) + 1.0);
    CHECK(one.at(0, 0) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(one.at(0, 1) == doctest::Approx(1.0 - expected).epsilon(1e-12));

    Tensor huge = softmax_rows(tape, Tensor({1, 2}, {1000, 0}));
    CHECK(std::isfinite(huge.at(0, 0)));
    CHECK(std::fabs(huge.at(0, 0) - 1.0) <= 1e-12);
    CHECK(std::fabs(huge.at(0, 1)) <= 1e-12);
}

TEST_CASE("softmax rows sum to one for arbitrary finite input") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> wide(-50.0, 50.0);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor x({4, 7}, 0.0);
        for (double& v : x.values()) v = wide(rng);
        Tape tape;
        Tensor s = softmax_rows(tape, x);
        for (int i = 0; i < 4; ++i) {
            double sum = 0.0;
            for (int j = 0; j < 7; ++j) sum += s.at(i, j);
            CHECK(std::fabs(sum - 1.0) <= 1e-12);
        }
    }
}

TEST_CASE("cosine rows: oracles and zero-norm rejection") {
    Tape tape;
    Tensor a({1, 2}, {1, 0});
    CHECK(cosine_rows(tape, a, Tensor({1, 2}, {1, 0})).scalar_value() == doctest::Approx(1.0));
    CHECK(cosine_rows(tape, a, Tensor({1, 2}, {0, 1})).scalar_value() == doctest::Approx(0.0));
    // 24 / 25 by hand
    Tensor u({1, 2}, {3, 4});
    Tensor v({1, 2}, {4, 3});
    CHECK(cosine_rows(tape, u, v).scalar_value() == doctest::Approx(0.96).epsilon(1e-12));

    Tensor bad({2, 2}, {1, 0, 0, 0});
    try {
        cosine_rows(tape, a, bad);
        FAIL("expected degenerate_input_error");
    } catch (const degenerate_input_error& e) {
        CHECK(std::string(e.what()).find("row 1") != std::string::npos);
    }
}

TEST_CASE("cosine is invariant to positive rescaling of a row") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 25; ++trial) {
        Tensor a = random_tensor({2, 5}, rng);
        Tensor b = random_tensor({3, 5}, rng);
        std::uniform_real_distribution<double> lam(1e-3, 1e3);
        Tensor a_scaled = a.detached();
        const double factor = lam(rng);
        for (int j = 0; j < 5; ++j) a_scaled.set(0, j, a.at(0, j) * factor);
        Tape tape;
        Tensor c1 = cosine_rows(tape, a, b);
        Tensor c2 = cosine_rows(tape, a_scaled, b);
        for (int j = 0; j < 3; ++j) {
            CHECK(std::fabs(c1.at(0, j) - c2.at(0, j)) <= 1e-12);
        }
    }
}

TEST_CASE("layer_norm oracles") {
    Tape tape;
    Tensor gamma({3}, 1.0);
    Tensor beta({3}, 0.0);
    Tensor constant = layer_norm(tape, Tensor({1, 3}, {5, 5, 5}), gamma, beta, 1e-5);
    for (int j = 0; j < 3; ++j) CHECK(constant.at(0, j) == doctest::Approx(0.0));

    Tensor g2({2}, 1.0), b2({2}, 0.0);
    Tensor unit = layer_norm(tape, Tensor({1, 2}, {1, -1}), g2, b2, 1e-12);
    CHECK(unit.at(0, 0) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(unit.at(0, 1) == doctest::Approx(-1.0).epsilon(1e-9));
}

TEST_CASE("layer_norm gradient matches central finite differences") {
    std::mt19937_64 rng(5);
    Tensor x = random_tensor({2, 4}, rng, true);
    Tensor gamma = random_tensor({4}, rng, true);
    Tensor beta = random_tensor({4}, rng, true);
    Objective fn = [&](bool with_grad) {
        Tape tape;
        Tensor normed = layer_norm(tape, x, gamma, beta, 1e-5);
        // a non-uniform weighting so row gradients are not trivially zero
        Tensor weights({2, 4}, {0.3, -1.2, 2.0, 0.7, -0.4, 1.1, 0.2, -2.2});
        Tensor loss = sum_all(tape, mul(tape, normed, weights));
        if (with_grad) tape.backward(loss);
        return loss.scalar_value();
    };
    FiniteDiffReport report =
        finite_diff_check(fn, {{"x", x}, {"gamma", gamma}, {"beta", beta}}, 1e-5);
    CHECK(report.max_rel_err <= 1e-5);
}

TEST_CASE("backward: quadratic, softmax row constant, error contracts") {
    Tape tape;
    Tensor x = Tensor::scalar(3.0, true);
    Tensor loss = mul(tape, x, x);
    tape.backward(loss);
    CHECK(x.grad()[0] == doctest::Approx(6.0).epsilon(1e-12));

    Tape tape2;
    Tensor logits({1, 2}, {0.7, -0.3}, true);
    Tensor total = sum_all(tape2, softmax_rows(tape2, logits));
    tape2.backward(total);
    CHECK(std::fabs(logits.grad()[0]) <= 1e-12);
    CHECK(std::fabs(logits.grad()[1]) <= 1e-12);

    Tape tape3;
    Tensor vec({2}, {1, 2}, true);
    Tensor doubled = scale(tape3, vec, 2.0);
    CHECK_THROWS_AS(tape3.backward(doubled), contract_error);

    Tape tape4;
    Tensor y = Tensor::scalar(2.0, true);
    Tensor z = mul(tape4, y, y);
    tape4.backward(z);
    CHECK_THROWS_AS(tape4.backward(z), contract_error);  // stale tape
    tape4.reset();
    Tensor z2 = mul(tape4, y, y);
    tape4.backward(z2);  // fine after reset
}

TEST_CASE("gradients of shared operands accumulate across uses") {
    Tape tape;
    Tensor x = Tensor::scalar(2.0, true);
    // x*x + 3x -> d/dx = 2x + 3 = 7
    Tensor loss = add(tape, mul(tape, x, x), scale(tape, x, 3.0));
    tape.backward(loss);
    CHECK(x.grad()[0] == doctest::Approx(7.0).epsilon(1e-12));
}

TEST_CASE("backward is linear: grad(f + g) = grad(f) + grad(g)") {
    std::mt19937_64 rng(13);
    Tensor x = random_tensor({3}, rng, true);

    auto grad_of = [&x](int which) {
        x.ensure_grad();
        x.zero_grad();
        Tape tape;
        Tensor f = sum_all(tape, mul(tape, x, x));
        Tensor g = sum_all(tape, gelu(tape, x));
        Tensor loss = which == 0 ? f : (which == 1 ? g : add(tape, f, g));
        tape.backward(loss);
        return x.grad();
    };
    const std::vector<double> gf = grad_of(0);
    const std::vector<double> gg = grad_of(1);
    const std::vector<double> gsum = grad_of(2);
    for (std::size_t i = 0; i < gsum.size(); ++i) {
        CHECK(std::fabs(gsum[i] - (gf[i] + gg[i])) <= 1e-12);
    }
}

TEST_CASE("reverse pass never mutates forward values") {
    std::mt19937_64 rng(17);
    Tensor x = random_tensor({2, 3}, rng, true);
    Tape tape;
    Tensor mid = softmax_rows(tape, x);
    Tensor normed = gelu(tape, mid);
    Tensor loss = sum_all(tape, normed);
    const std::vector<double> x_before = x.values();
    const std::vector<double> mid_before = mid.values();
    const std::vector<double> loss_before = loss.values();
    tape.backward(loss);
    CHECK(x.values() == x_before);
    CHECK(mid.values() == mid_before);
    CHECK(loss.values() == loss_before);
}

TEST_CASE("forward ops are bit-deterministic") {
    std::mt19937_64 rng(19);
    Tensor a = random_tensor({4, 6}, rng);
    Tensor b = random_tensor({6, 3}, rng);
    Tape tape;
    Tensor first = matmul(tape, a, b);
    Tensor second = matmul(tape, a, b);
    CHECK(first.values() == second.values());
    Tensor s1 = softmax_rows(tape, first);
    Tensor s2 = softmax_rows(tape, second);
    CHECK(s1.values() == s2.values());
}

TEST_CASE("finite_diff_check oracles") {
    Tensor p = Tensor::scalar(1.0, true);
    Objective square = [&p](bool with_grad) {
        Tape tape;
        Tensor loss = mul(tape, p, p);
        if (with_grad) tape.backward(loss);
        return loss.scalar_value();
    };
    CHECK(finite_diff_check(square, {{"p", p}}, 1e-5).max_rel_err <= 1e-9);

    Tensor q = Tensor::scalar(0.7, true);
    Objective constant = [&q](bool with_grad) {
        Tape tape;
        Tensor loss = scale(tape, q, 0.0);
        if (with_grad) tape.backward(loss);
        return loss.scalar_value();
    };
    CHECK(finite_diff_check(constant, {{"q", q}}, 1e-5).max_rel_err == 0.0);

    int calls = 0;
    Objective flaky = [&](bool) { return static_cast<double>(calls++); };
    CHECK_THROWS_AS(finite_diff_check(flaky, {{"q", q}}, 1e-5), determinism_error);

    CHECK_THROWS_AS(finite_diff_check(square, {{"p", p}}, 0.0), contract_error);
}

TEST_CASE("slices, concat and reshape scatter gradients back") {
    std::mt19937_64 rng(23);
    Tensor x = random_tensor({4, 3}, rng, true);
    Tensor y = random_tensor({2, 3}, rng, true);
    Objective fn = [&](bool with_grad) {
        Tape tape;
        Tensor top = slice_rows(tape, x, 0, 2);
        Tensor joined = concat_rows(tape, {top, y});
        Tensor cols = slice_cols(tape, joined, 1, 3);
        Tensor flat = reshape(tape, cols, {8});
        Tensor loss = sum_all(tape, mul(tape, flat, flat));
        if (with_grad) tape.backward(loss);
        return loss.scalar_value();
    };
    FiniteDiffReport report = finite_diff_check(fn, {{"x", x}, {"y", y}}, 1e-5);
    CHECK(report.max_rel_err <= 1e-8);
}

TEST_CASE("grad buffers appear only on tensors that require them") {
    Tape tape;
    Tensor frozen({2, 2}, {1, 2, 3, 4}, false);
    Tensor live({2, 2}, {1, 1, 1, 1}, true);
    Tensor loss = sum_all(tape, mul(tape, frozen, live));
    tape.backward(loss);
    CHECK(live.grad_present());
    CHECK_FALSE(frozen.grad_present());
}

}  // TEST_SUITE
