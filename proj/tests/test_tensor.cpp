#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <stdexcept>

#include "wavesr/tensor.hpp"

using namespace wavesr;
using Catch::Approx;

namespace {

Tensor rand_t(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Rng rng(seed);
    return rand_uniform(std::move(shape), rng, lo, hi);
}

}  // namespace

TEST_CASE("splitmix64 matches the reference sequence", "[tensor][rng]") {
    Rng rng(0);
    REQUIRE(rng.next_u64() == 0xE220A8397B1DCDAFULL);
    REQUIRE(rng.next_u64() == 0x6E789E6AA1B965F4ULL);
    REQUIRE(rng.next_u64() == 0x06C45D188009454FULL);
}

TEST_CASE("rng is deterministic per seed", "[tensor][rng]") {
    Rng a(42), b(42), c(43);
    bool all_equal = true, any_diff = false;
    for (int i = 0; i < 100; ++i) {
        auto va = a.next_u64();
        all_equal = all_equal && (va == b.next_u64());
        any_diff = any_diff || (va != c.next_u64());
    }
    REQUIRE(all_equal);
    REQUIRE(any_diff);

    Rng d(7);
    for (int i = 0; i < 1000; ++i) {
        double u = d.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        auto k = d.uniform_int(10);
        REQUIRE(k >= 0);
        REQUIRE(k < 10);
    }
}

TEST_CASE("matmul forward oracle and mult-add law", "[tensor][counter]") {
    Tensor a({2, 2}, {1, 2, 3, 4});
    Tensor b({2, 2}, {5, 6, 7, 8});
    OpCounter::instance().reset();
    Tensor c = matmul(a, b);
    REQUIRE(c.values() == std::vector<double>{19, 22, 43, 50});
    REQUIRE(OpCounter::instance().mult_adds() == 8);

    OpCounter::instance().reset();
    matmul(rand_t({2, 3}, 1), rand_t({3, 4}, 2));
    REQUIRE(OpCounter::instance().mult_adds() == 24);
    REQUIRE(OpCounter::instance().op_count("matmul") == 1);
}

TEST_CASE("counter laws for linear and convolutions", "[tensor][counter]") {
    OpCounter::instance().reset();
    linear(rand_t({5, 4}, 3), rand_t({6, 4}, 4), rand_t({6}, 5));
    REQUIRE(OpCounter::instance().mult_adds() == 5 * 4 * 6);

    OpCounter::instance().reset();
    conv2d(rand_t({2, 4, 4}, 6), rand_t({3, 2, 3, 3}, 7), rand_t({3}, 8), 1);
    REQUIRE(OpCounter::instance().mult_adds() == 3ull * 2 * 9 * 16);

    OpCounter::instance().reset();
    depthwise_conv2d(rand_t({2, 4, 4}, 9), rand_t({2, 3, 3}, 10), rand_t({2}, 11), 1);
    REQUIRE(OpCounter::instance().mult_adds() == 2ull * 9 * 16);

    OpCounter::instance().reset();
    add(rand_t({8, 8}, 12), rand_t({8, 8}, 13));
    gelu(rand_t({8, 8}, 14));
    layer_norm(rand_t({4, 8}, 15), Tensor::full({8}, 1.0), Tensor::zeros({8}));
    REQUIRE(OpCounter::instance().mult_adds() == 0);
}

TEST_CASE("counter overflow is an error", "[tensor][counter]") {
    OpCounter::instance().reset();
    OpCounter::instance().add_mult_adds(std::numeric_limits<std::uint64_t>::max());
    REQUIRE_THROWS_AS(OpCounter::instance().add_mult_adds(1), std::overflow_error);
    OpCounter::instance().reset();
}

TEST_CASE("op trace records call names", "[tensor][counter]") {
    OpCounter::instance().reset();
    Tensor x = rand_t({3, 4}, 20);
    softmax_rows(x);
    gelu(x);
    gelu(x);
    REQUIRE(OpCounter::instance().op_count("softmax") == 1);
    REQUIRE(OpCounter::instance().op_count("exp") == 1);
    REQUIRE(OpCounter::instance().op_count("gelu") == 2);
    REQUIRE(OpCounter::instance().op_count("matmul") == 0);
}

TEST_CASE("gelu and sigmoid values", "[tensor]") {
    Tensor x({3}, {0.0, 1.0, -10.0});
    Tensor y = gelu(x);
    REQUIRE(y.data()[0] == 0.0);
    REQUIRE(y.data()[1] == Approx(0.8412).margin(5e-4));
    REQUIRE(std::abs(y.data()[2]) < 1e-3);

    Tensor s = sigmoid(Tensor({2}, {0.0, 2.0}));
    REQUIRE(s.data()[0] == Approx(0.5));
    REQUIRE(s.data()[1] == Approx(1.0 / (1.0 + std::exp(-2.0))));
}

TEST_CASE("layer_norm normalizes rows then applies affine", "[tensor]") {
    Tensor x({1, 2}, {1.0, 3.0});
    Tensor y = layer_norm(x, Tensor::full({2}, 1.0), Tensor::zeros({2}));
    REQUIRE(y.data()[0] == Approx(-0.999995).margin(1e-6));
    REQUIRE(y.data()[1] == Approx(0.999995).margin(1e-6));

    Tensor y2 = layer_norm(x, Tensor::full({2}, 2.0), Tensor::full({2}, 10.0));
    REQUIRE(y2.data()[0] == Approx(10.0 - 2 * 0.999995).margin(1e-5));
    REQUIRE(y2.data()[1] == Approx(10.0 + 2 * 0.999995).margin(1e-5));
}

TEST_CASE("softmax rows oracle", "[tensor]") {
    Tensor x({2, 2}, {0.0, 0.0, 0.0, std::log(3.0)});
    Tensor y = softmax_rows(x);
    REQUIRE(y.data()[0] == Approx(0.5));
    REQUIRE(y.data()[1] == Approx(0.5));
    REQUIRE(y.data()[2] == Approx(0.25));
    REQUIRE(y.data()[3] == Approx(0.75));
}

TEST_CASE("pixel_shuffle rearranges channel groups into space", "[tensor]") {
    Tensor x({4, 1, 1}, {1, 2, 3, 4});
    Tensor y = pixel_shuffle(x, 2);
    REQUIRE(y.shape() == Shape{1, 2, 2});
    REQUIRE(y.values() == std::vector<double>{1, 2, 3, 4});

    Tensor x2({4, 2, 1}, {1, 2, 3, 4, 5, 6, 7, 8});
    Tensor y2 = pixel_shuffle(x2, 2);
    REQUIRE(y2.shape() == Shape{1, 4, 2});
    REQUIRE(y2.values() == std::vector<double>{1, 3, 5, 7, 2, 4, 6, 8});
}

TEST_CASE("token and planar layouts invert each other", "[tensor]") {
    Tensor x = rand_t({3, 4, 5}, 30);
    Tensor t = to_tokens(x);
    REQUIRE(t.shape() == Shape{20, 3});
    REQUIRE(t.data()[0 * 3 + 2] == x.data()[2 * 20 + 0]);
    Tensor back = to_planar(t, 4, 5);
    REQUIRE(back.values() == x.values());
}

TEST_CASE("concat and slice are inverses along any axis", "[tensor]") {
    Tensor a = rand_t({2, 3, 4}, 40);
    Tensor b = rand_t({2, 5, 4}, 41);
    Tensor c = concat({a, b}, 1);
    REQUIRE(c.shape() == Shape{2, 8, 4});
    REQUIRE(slice(c, 1, 0, 3).values() == a.values());
    REQUIRE(slice(c, 1, 3, 5).values() == b.values());
}

TEST_CASE("backward of sum of squares", "[tensor][grad]") {
    Tensor x({3}, {1, 2, 3});
    x.set_requires_grad(true);
    Tensor loss = sum(mul(x, x));
    REQUIRE(loss.item() == 14.0);
    loss.backward();
    REQUIRE(x.grad() == std::vector<double>{2, 4, 6});
}

TEST_CASE("gradients accumulate across tapes until zeroed", "[tensor][grad]") {
    Tensor x({2}, {1, 2});
    x.set_requires_grad(true);
    sum(mul(x, x)).backward();
    sum(mul(x, x)).backward();
    REQUIRE(x.grad() == std::vector<double>{4, 8});
    x.zero_grad();
    sum(x).backward();
    REQUIRE(x.grad() == std::vector<double>{1, 1});
}

TEST_CASE("repeated backward on a consumed tape is an error", "[tensor][grad]") {
    Tensor x({2}, {1, 2});
    x.set_requires_grad(true);
    Tensor loss = sum(x);
    loss.backward();
    REQUIRE_THROWS_AS(loss.backward(), std::runtime_error);
}

TEST_CASE("backward without a recorded graph is an error", "[tensor][grad]") {
    Tensor x({2}, {1, 2});
    x.set_requires_grad(true);
    Tensor y;
    {
        NoGradGuard ng;
        y = sum(x);
    }
    REQUIRE_THROWS_AS(y.backward(), std::runtime_error);
}

TEST_CASE("backward requires a scalar loss", "[tensor][grad]") {
    Tensor x({2}, {1, 2});
    x.set_requires_grad(true);
    Tensor y = mul(x, x);
    REQUIRE_THROWS_AS(y.backward(), std::invalid_argument);
}

TEST_CASE("no-grad mode records no tape", "[tensor][grad]") {
    Tensor x({2}, {1, 2});
    x.set_requires_grad(true);
    NoGradGuard ng;
    Tensor y = sum(mul(x, x));
    REQUIRE(y.ptr()->node == nullptr);
}

TEST_CASE("diamond reuse accumulates both contributions", "[tensor][grad]") {
    Tensor x({2}, {3, 5});
    x.set_requires_grad(true);
    Tensor a = add(x, x);
    Tensor loss = sum(mul(a, x));  // 2x*x, d/dx = 4x
    loss.backward();
    REQUIRE(x.grad() == std::vector<double>{12, 20});
}

TEST_CASE("finite differences validate every primitive", "[tensor][grad]") {
    const double tol = 1e-6;
    Tensor a = rand_t({3, 4}, 50);
    Tensor b = rand_t({3, 4}, 51);
    Tensor m = rand_t({4, 5}, 52);

    REQUIRE(grad_check([&](const Tensor& t) { return sum(add(t, b)); }, a) < tol);
    REQUIRE(grad_check([&](const Tensor& t) { return sum(sub(b, t)); }, a) < tol);
    REQUIRE(grad_check([&](const Tensor& t) { return sum(mul(t, b)); }, a) < tol);
    REQUIRE(grad_check([&](const Tensor& t) { return sum(scale(t, -2.5)); }, a) < tol);
    REQUIRE(grad_check([&](const Tensor& t) { return mean(mul(t, t)); }, a) < tol);
    REQUIRE(grad_check([&](const Tensor& t) { return sum(matmul(t, m)); }, a) < tol);
    REQUIRE(grad_check([&](const Tensor& t) { return sum(mul(matmul(t, m), matmul(t, m))); }, a) <
            tol);
    REQUIRE(grad_check([&](const Tensor& t) { return sum(transpose2d(t)); }, a) < tol);
    REQUIRE(grad_check([&](const Tensor& t) { return sum(mul(reshape(t, {4, 3}), rand_t({4, 3}, 53))); },
                       a) < tol);
    REQUIRE(grad_check([&](const Tensor& t) { return sum(gelu(t)); }, scale(a, 3.0)) < tol);
    REQUIRE(grad_check([&](const Tensor& t) { return sum(sigmoid(t)); }, scale(a, 3.0)) < tol);
    REQUIRE(grad_check([&](const Tensor& t) { return sum(mul(softmax_rows(t), b)); }, a) < tol);
    REQUIRE(grad_check([&](const Tensor& t) { return sum(exp(t)); }, a) < tol);

    // Kinked maps probed away from their corners.
    Tensor far = add(rand_t({3, 4}, 54, 0.5, 1.5), Tensor::zeros({3, 4}));
    REQUIRE(grad_check([&](const Tensor& t) { return sum(relu(t)); }, far) < tol);
    REQUIRE(grad_check([&](const Tensor& t) { return sum(abs(t)); }, far) < tol);
    REQUIRE(grad_check([&](const Tensor& t) { return sum(mul(clamp01(t), b)); },
                       rand_t({3, 4}, 55, 0.1, 0.9)) < tol);
}

TEST_CASE("finite differences validate structured ops", "[tensor][grad]") {
    const double tol = 1e-6;
    Tensor img = rand_t({2, 5, 6}, 60);
    Tensor w = rand_t({3, 2, 3, 3}, 61, -0.3, 0.3);
    Tensor bias = rand_t({3}, 62, -0.1, 0.1);
    Tensor dwk = rand_t({2, 3, 3}, 63, -0.3, 0.3);
    Tensor dwb = rand_t({2}, 64, -0.1, 0.1);
    Tensor probe = rand_t({3, 5, 6}, 65);

    REQUIRE(grad_check([&](const Tensor& t) { return sum(mul(conv2d(t, w, bias, 1), rand_t({3, 5, 6}, 66))); },
                       img) < tol);
    REQUIRE(grad_check([&](const Tensor& t) { return sum(mul(conv2d(img, t, bias, 1), probe)); }, w) < tol);
    REQUIRE(grad_check([&](const Tensor& t) { return sum(mul(conv2d(img, w, t, 1), probe)); }, bias) < tol);
    REQUIRE(grad_check([&](const Tensor& t) {
                return sum(mul(depthwise_conv2d(t, dwk, dwb, 1), rand_t({2, 5, 6}, 67)));
            }, img) < tol);
    REQUIRE(grad_check([&](const Tensor& t) {
                return sum(mul(depthwise_conv2d(img, t, dwb, 1), rand_t({2, 5, 6}, 68)));
            }, dwk) < tol);

    Tensor x = rand_t({4, 6}, 70);
    Tensor gamma = rand_t({6}, 71, 0.5, 1.5);
    Tensor beta = rand_t({6}, 72, -0.5, 0.5);
    Tensor lnp = rand_t({4, 6}, 73);
    REQUIRE(grad_check([&](const Tensor& t) { return sum(mul(layer_norm(t, gamma, beta), lnp)); }, x) < tol);
    REQUIRE(grad_check([&](const Tensor& t) { return sum(mul(layer_norm(x, t, beta), lnp)); }, gamma) < tol);
    REQUIRE(grad_check([&](const Tensor& t) { return sum(mul(layer_norm(x, gamma, t), lnp)); }, beta) < tol);

    Tensor lx = rand_t({5, 4}, 74);
    Tensor lw = rand_t({6, 4}, 75);
    Tensor lb = rand_t({6}, 76);
    Tensor lp = rand_t({5, 6}, 77);
    REQUIRE(grad_check([&](const Tensor& t) { return sum(mul(linear(t, lw, lb), lp)); }, lx) < tol);
    REQUIRE(grad_check([&](const Tensor& t) { return sum(mul(linear(lx, t, lb), lp)); }, lw) < tol);
    REQUIRE(grad_check([&](const Tensor& t) { return sum(mul(linear(lx, lw, t), lp)); }, lb) < tol);

    Tensor ps = rand_t({8, 2, 3}, 78);
    REQUIRE(grad_check([&](const Tensor& t) { return sum(mul(pixel_shuffle(t, 2), rand_t({2, 4, 6}, 79))); },
                       ps) < tol);
    REQUIRE(grad_check([&](const Tensor& t) { return sum(mul(to_tokens(t), rand_t({30, 2}, 80))); },
                       rand_t({2, 5, 6}, 81)) < tol);
    REQUIRE(grad_check([&](const Tensor& t) { return sum(mul(to_planar(t, 5, 6), rand_t({2, 5, 6}, 82))); },
                       rand_t({30, 2}, 83)) < tol);
    REQUIRE(grad_check([&](const Tensor& t) { return sum(mul(channel_mean(t), rand_t({3}, 84))); },
                       probe) < tol);
    Tensor cs = rand_t({3}, 85);
    REQUIRE(grad_check([&](const Tensor& t) { return sum(mul(channel_scale(t, cs), rand_t({3, 5, 6}, 86))); },
                       probe) < tol);
    REQUIRE(grad_check([&](const Tensor& t) { return sum(mul(channel_scale(probe, t), rand_t({3, 5, 6}, 87))); },
                       cs) < tol);

    Tensor c1 = rand_t({2, 3}, 88), c2 = rand_t({2, 5}, 89);
    REQUIRE(grad_check([&](const Tensor& t) {
                return sum(mul(concat({t, c2}, 1), rand_t({2, 8}, 90)));
            }, c1) < tol);
    REQUIRE(grad_check([&](const Tensor& t) { return sum(mul(slice(t, 1, 1, 3), rand_t({2, 3}, 91))); },
                       rand_t({2, 5}, 92)) < tol);
}

TEST_CASE("shape violations raise invalid_argument", "[tensor][errors]") {
    REQUIRE_THROWS_AS(matmul(rand_t({2, 3}, 100), rand_t({4, 2}, 101)), std::invalid_argument);
    REQUIRE_THROWS_AS(add(rand_t({2, 3}, 102), rand_t({3, 2}, 103)), std::invalid_argument);
    REQUIRE_THROWS_AS(linear(rand_t({2, 3}, 104), rand_t({4, 3}, 105), rand_t({5}, 106)),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(layer_norm(rand_t({2, 3}, 107), rand_t({4}, 108), rand_t({3}, 109)),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(pixel_shuffle(rand_t({3, 2, 2}, 110), 2), std::invalid_argument);
    REQUIRE_THROWS_AS(slice(rand_t({2, 3}, 111), 1, 2, 5), std::invalid_argument);
    REQUIRE_THROWS_AS(Tensor({2, 2}, {1, 2, 3}), std::invalid_argument);
    REQUIRE_THROWS_AS(rand_t({2, 2}, 112).item(), std::invalid_argument);
    REQUIRE_THROWS_AS(conv2d(rand_t({2, 4, 4}, 113), rand_t({3, 2, 2, 2}, 114), rand_t({3}, 115), 1),
                      std::invalid_argument);
}

TEST_CASE("non-finite op outputs raise runtime_error naming the op", "[tensor][errors]") {
    Tensor x({2}, {1.0, 2.0});
    try {
        scale(x, std::numeric_limits<double>::infinity());
        FAIL("expected runtime_error");
    } catch (const std::runtime_error& e) {
        REQUIRE(std::string(e.what()).find("scale") != std::string::npos);
        REQUIRE(std::string(e.what()).find("non-finite") != std::string::npos);
    }
    Tensor big = Tensor::full({2}, 1e308);
    REQUIRE_THROWS_AS(mul(big, big), std::runtime_error);
}

TEST_CASE("init_weight is float-representable and fan-in scaled", "[tensor][init]") {
    Rng rng(123);
    Tensor w = init_weight({16, 9}, 9, rng);
    const double bound = 1.0 / 3.0;
    for (double x : w.values()) {
        REQUIRE(x == static_cast<double>(static_cast<float>(x)));
        REQUIRE(std::abs(x) <= bound);
    }
    // Same seed reproduces the exact tensor.
    Rng rng2(123);
    Tensor w2 = init_weight({16, 9}, 9, rng2);
    REQUIRE(w.values() == w2.values());
}
