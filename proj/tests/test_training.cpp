#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "wavesr/training.hpp"

using namespace wavesr;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.num_blocks = 1;
    cfg.layers_per_block = 2;
    cfg.channels = 8;
    cfg.heads = 2;
    cfg.base_window = 8;
    cfg.window_schedule = {4, 8};
    cfg.upscale = 2;
    return cfg;
}

// Smooth synthetic scene with structure along both axes.
Image synthetic_scene(std::int64_t h, std::int64_t w) {
    Image img = make_image(3, h, w);
    for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x) {
            const double u = static_cast<double>(x) / static_cast<double>(w - 1);
            const double v = static_cast<double>(y) / static_cast<double>(h - 1);
            img.at(0, y, x) = 0.5 + 0.4 * std::sin(6.0 * u + 2.0 * v);
            img.at(1, y, x) = 0.5 + 0.3 * std::cos(4.0 * v) * std::sin(3.0 * u);
            img.at(2, y, x) = 0.25 + 0.5 * u * v;
        }
    for (auto& s : img.samples) s = std::clamp(s, 0.0, 1.0);
    return img;
}

TrainSpec toy_spec(std::int64_t steps, std::uint64_t seed = 9) {
    TrainSpec spec;
    spec.patch = 32;
    spec.batch = 4;
    spec.total_steps = steps;
    spec.seed = seed;
    return spec;
}

}  // namespace

TEST_CASE("l1 loss measures mean absolute deviation", "[training]") {
    Rng rng(1);
    Tensor a = rand_uniform({3, 5, 4}, rng, 0.0, 1.0);
    REQUIRE(l1_loss(a, a).item() == 0.0);

    Tensor b = add(a, Tensor::full(a.shape(), -0.125));
    REQUIRE(l1_loss(a, b).item() == Catch::Approx(0.125).margin(1e-15));
    REQUIRE(l1_loss(b, a).item() == Catch::Approx(0.125).margin(1e-15));

    REQUIRE_THROWS_AS(l1_loss(a, Tensor::zeros({3, 4, 5})), std::invalid_argument);
}

TEST_CASE("l1 loss gradient matches finite differences away from ties", "[training]") {
    Rng rng(2);
    Tensor target = rand_uniform({2, 3, 3}, rng, 0.0, 0.4);
    Tensor x = rand_uniform({2, 3, 3}, rng, 0.6, 1.0);  // no pred==target ties
    const double worst = grad_check([&](const Tensor& t) { return l1_loss(t, target); }, x);
    REQUIRE(worst < 1e-6);
}

TEST_CASE("adam leaves parameters alone on zero gradients", "[training]") {
    std::vector<Tensor> params = {Tensor({3}, {0.1, -0.2, 0.3}).set_requires_grad(true)};
    params[0].zero_grad();
    AdamState state = make_adam_state(params);
    adam_step(params, state, 0.1);
    REQUIRE(state.t == 1);
    REQUIRE(params[0].values() == std::vector<double>{0.1, -0.2, 0.3});
}

TEST_CASE("adam first step moves by minus lr under unit gradient", "[training]") {
    std::vector<Tensor> params = {Tensor({2}, {0.7, -0.4}).set_requires_grad(true)};
    auto& g = detail::grad_buf(*params[0].ptr());
    g[0] = 1.0;
    g[1] = 1.0;
    AdamState state = make_adam_state(params);
    adam_step(params, state, 0.1);
    REQUIRE(params[0].data()[0] == Catch::Approx(0.6).margin(1e-8));
    REQUIRE(params[0].data()[1] == Catch::Approx(-0.5).margin(1e-8));
}

TEST_CASE("adam runs are bit-identical", "[training]") {
    auto run = [] {
        std::vector<Tensor> params = {Tensor({3}, {0.5, -1.0, 2.0}).set_requires_grad(true)};
        AdamState state = make_adam_state(params);
        Rng rng(3);
        for (int i = 0; i < 50; ++i) {
            auto& g = detail::grad_buf(*params[0].ptr());
            for (auto& x : g) x = rng.uniform(-1.0, 1.0);
            adam_step(params, state, 1e-3);
            params[0].zero_grad();
        }
        return params[0].values();
    };
    REQUIRE(run() == run());
}

TEST_CASE("adam rejects non-finite and missing gradients", "[training]") {
    std::vector<Tensor> params = {Tensor({2}, {1.0, 2.0}).set_requires_grad(true)};
    AdamState state = make_adam_state(params);
    REQUIRE_THROWS_AS(adam_step(params, state, 0.1), std::runtime_error);  // no grad yet

    auto& g = detail::grad_buf(*params[0].ptr());
    g[0] = std::numeric_limits<double>::quiet_NaN();
    REQUIRE_THROWS_AS(adam_step(params, state, 0.1), std::runtime_error);
}

TEST_CASE("gradient clipping rescales to the requested norm", "[training]") {
    std::vector<Tensor> params = {Tensor({2}, {0.0, 0.0}).set_requires_grad(true),
                                  Tensor({1}, {0.0}).set_requires_grad(true)};
    auto& g0 = detail::grad_buf(*params[0].ptr());
    auto& g1 = detail::grad_buf(*params[1].ptr());
    g0[0] = 3.0;
    g0[1] = 0.0;
    g1[0] = 4.0;
    const double norm = clip_grad_norm(params, 1.0);
    REQUIRE(norm == Catch::Approx(5.0).margin(1e-12));
    REQUIRE(params[0].grad()[0] == Catch::Approx(0.6).margin(1e-12));
    REQUIRE(params[1].grad()[0] == Catch::Approx(0.8).margin(1e-12));

    // Below the threshold, gradients pass through untouched.
    g0[0] = 0.1;
    g1[0] = 0.1;
    g0[1] = 0.0;
    clip_grad_norm(params, 1.0);
    REQUIRE(params[0].grad()[0] == 0.1);
    REQUIRE(params[1].grad()[0] == 0.1);
}

TEST_CASE("milestones halve the learning rate at exact steps", "[training]") {
    TrainSpec spec = toy_spec(200);
    spec.base_lr = 6e-4;
    REQUIRE(milestone_lr(spec, 0) == 6e-4);
    REQUIRE(milestone_lr(spec, 99) == 6e-4);
    REQUIRE(milestone_lr(spec, 100) == 3e-4);
    REQUIRE(milestone_lr(spec, 159) == 3e-4);
    REQUIRE(milestone_lr(spec, 160) == 1.5e-4);
    REQUIRE(milestone_lr(spec, 180) == 7.5e-5);
    REQUIRE(milestone_lr(spec, 190) == 3.75e-5);
    REQUIRE(milestone_lr(spec, 199) == 3.75e-5);
}

TEST_CASE("train spec validation rejects malformed inputs", "[training]") {
    TrainSpec spec = toy_spec(10);
    REQUIRE_NOTHROW(spec.validate(2));

    TrainSpec odd = spec;
    odd.patch = 33;
    REQUIRE_THROWS_AS(odd.validate(2), std::invalid_argument);

    TrainSpec bad_ms = spec;
    bad_ms.milestones = {0.8, 0.5};
    REQUIRE_THROWS_AS(bad_ms.validate(2), std::invalid_argument);

    TrainSpec out_ms = spec;
    out_ms.milestones = {0.5, 1.0};
    REQUIRE_THROWS_AS(out_ms.validate(2), std::invalid_argument);

    TrainSpec neg = spec;
    neg.base_lr = -1e-4;
    REQUIRE_THROWS_AS(neg.validate(2), std::invalid_argument);
}

TEST_CASE("patch sampling is seed-deterministic with exact extents", "[training]") {
    Image hr = synthetic_scene(64, 80);
    TrainSpec spec = toy_spec(1);

    Rng r1(42), r2(42);
    auto a = sample_patches(hr, spec, 2, r1);
    auto b = sample_patches(hr, spec, 2, r2);
    REQUIRE(a.size() == 4);
    for (std::size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a[i].hr.shape() == Shape{3, 32, 32});
        REQUIRE(a[i].lr.shape() == Shape{3, 16, 16});
        REQUIRE(a[i].hr.values() == b[i].hr.values());
        REQUIRE(a[i].lr.values() == b[i].lr.values());
    }

    bool crops_vary = false;
    for (std::size_t i = 1; i < a.size(); ++i)
        if (a[i].hr.values() != a[0].hr.values()) crops_vary = true;
    REQUIRE(crops_vary);
}

TEST_CASE("patch crops read the source image at their offset", "[training]") {
    // Encode the absolute pixel index in the red channel, then recover the
    // crop origin from the first sample and check the whole patch.
    const std::int64_t h = 56, w = 72;
    Image hr = synthetic_scene(h, w);
    for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x)
            hr.at(0, y, x) = static_cast<double>(y * w + x) / static_cast<double>(h * w);

    TrainSpec spec = toy_spec(1);
    Rng rng(7);
    auto batch = sample_patches(hr, spec, 2, rng);
    for (const auto& pair : batch) {
        const double v0 = pair.hr.data()[0];
        const std::int64_t flat = static_cast<std::int64_t>(std::llround(v0 * h * w));
        const std::int64_t y0 = flat / w, x0 = flat % w;
        REQUIRE(y0 + spec.patch <= h);
        REQUIRE(x0 + spec.patch <= w);
        for (std::int64_t c = 0; c < 3; ++c)
            for (std::int64_t y = 0; y < spec.patch; ++y)
                for (std::int64_t x = 0; x < spec.patch; ++x)
                    REQUIRE(pair.hr.data()[(c * spec.patch + y) * spec.patch + x] ==
                            hr.at(c, y0 + y, x0 + x));
    }
}

TEST_CASE("constant scenes produce constant low-resolution patches", "[training]") {
    Image hr = make_image(3, 48, 48);
    for (auto& s : hr.samples) s = 0.625;
    TrainSpec spec = toy_spec(1);
    Rng rng(11);
    auto batch = sample_patches(hr, spec, 2, rng);
    for (const auto& pair : batch)
        for (std::int64_t i = 0; i < pair.lr.numel(); ++i)
            REQUIRE(pair.lr.data()[i] == Catch::Approx(0.625).margin(1e-12));
}

TEST_CASE("patch sampling rejects undersized images", "[training]") {
    Image hr = synthetic_scene(24, 64);
    TrainSpec spec = toy_spec(1);
    Rng rng(13);
    REQUIRE_THROWS_AS(sample_patches(hr, spec, 2, rng), std::invalid_argument);
    REQUIRE_THROWS_AS(sample_patches(make_image(1, 64, 64), spec, 2, rng),
                      std::invalid_argument);
}

TEST_CASE("zero learning rate freezes the loss trace", "[training]") {
    TrainSpec spec = toy_spec(12);
    spec.base_lr = 0.0;
    std::vector<Image> data = {synthetic_scene(48, 48)};
    ToyResult result = train_toy(tiny_config(), spec, data);
    REQUIRE(result.trace.size() == 12);
    for (const auto& row : result.trace) {
        REQUIRE(row.lr == 0.0);
        REQUIRE(row.loss == result.trace[0].loss);
    }
}

TEST_CASE("toy training runs are bit-identical", "[training]") {
    TrainSpec spec = toy_spec(20);
    spec.batch = 2;
    std::vector<Image> data = {synthetic_scene(48, 56)};

    ToyResult a = train_toy(tiny_config(), spec, data);
    ToyResult b = train_toy(tiny_config(), spec, data);
    REQUIRE(a.trace.size() == b.trace.size());
    for (std::size_t i = 0; i < a.trace.size(); ++i) {
        REQUIRE(a.trace[i].loss == b.trace[i].loss);
        REQUIRE(a.trace[i].lr == b.trace[i].lr);
    }
    auto na = named_params(a.params), nb = named_params(b.params);
    for (std::size_t i = 0; i < na.size(); ++i)
        REQUIRE(na[i].second.values() == nb[i].second.values());
}

TEST_CASE("toy training overfits its fixed batch", "[training]") {
    TrainSpec spec = toy_spec(200);
    std::vector<Image> data = {synthetic_scene(64, 64)};
    ToyResult result = train_toy(tiny_config(), spec, data);

    REQUIRE(result.trace.size() == 200);
    const double initial = result.trace.front().loss;
    const double final_loss = result.trace.back().loss;
    INFO("initial " << initial << " final " << final_loss);
    REQUIRE(final_loss < 0.5 * initial);

    // Learning-rate column mirrors the schedule.
    for (const auto& row : result.trace) REQUIRE(row.lr == milestone_lr(spec, row.step));

    // Windowed means after the warm-up are non-increasing.
    auto window_mean = [&](std::size_t lo, std::size_t hi) {
        double s = 0.0;
        for (std::size_t i = lo; i < hi; ++i) s += result.trace[i].loss;
        return s / static_cast<double>(hi - lo);
    };
    REQUIRE(window_mean(150, 200) <= window_mean(100, 150));
}

TEST_CASE("divergent training reports the failing step", "[training]") {
    TrainSpec spec = toy_spec(50);
    // Normalization layers keep moderate blow-ups polynomial, so force the
    // parameters far enough out that their products overflow double range.
    spec.base_lr = 1e150;
    spec.clip_gradients = false;
    std::vector<Image> data = {synthetic_scene(48, 48)};
    REQUIRE_THROWS_MATCHES(train_toy(tiny_config(), spec, data), std::runtime_error,
                           Catch::Matchers::MessageMatches(
                               Catch::Matchers::ContainsSubstring("diverged at step")));
}

TEST_CASE("loss trace serializes with the expected header", "[training]") {
    std::vector<TraceRow> trace = {{0, 6e-4, 0.5}, {1, 6e-4, 0.25}};
    std::ostringstream os;
    write_loss_csv(trace, os);
    std::istringstream is(os.str());
    std::string line;
    REQUIRE(std::getline(is, line));
    REQUIRE(line == "step,lr,loss");
    std::size_t rows = 0;
    while (std::getline(is, line)) {
        ++rows;
        REQUIRE(std::count(line.begin(), line.end(), ',') == 2);
    }
    REQUIRE(rows == 2);
}

TEST_CASE("toy training validates its inputs", "[training]") {
    TrainSpec spec = toy_spec(5);
    REQUIRE_THROWS_AS(train_toy(tiny_config(), spec, {}), std::invalid_argument);

    TrainSpec small = spec;
    small.patch = 8;  // patch/upscale below the base window
    std::vector<Image> data = {synthetic_scene(48, 48)};
    REQUIRE_THROWS_AS(train_toy(tiny_config(), small, data), std::invalid_argument);
}
