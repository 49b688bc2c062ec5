#pragma once

// Named finite-difference checks over every differentiable primitive and the
// small end-to-end model. Each entry reports the worst relative error
// between analytic and central-difference gradients; callers decide the
// pass bar. Probe values sit away from subgradient kinks (relu, abs, clamp)
// so the comparison is well posed.

#include "wavesr/network.hpp"
#include "wavesr/training.hpp"

namespace wavesr {

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
};

namespace detail {

// Reduce through a fixed random functional so every output element gets a
// distinct cotangent.
inline Tensor pin(const Tensor& t, std::uint64_t seed) {
    Rng rng(seed);
    Tensor w = rand_uniform(t.shape(), rng, 0.5, 1.5);
    return sum(mul(t, w));
}

inline Tensor away_from(const Tensor& base, double gap) {
    // Push magnitudes above `gap` so finite-difference probes cannot cross
    // a kink.
    std::vector<double> v = base.values();
    for (auto& x : v) x += (x >= 0 ? gap : -gap);
    return Tensor(base.shape(), std::move(v));
}

}  // namespace detail

inline std::vector<GradCheckEntry> gradient_suite(bool include_model = true) {
    std::vector<GradCheckEntry> out;
    Rng rng(0xD1FFBA5E);

    Tensor x34 = rand_uniform({3, 4}, rng, -1.0, 1.0);
    Tensor y34 = rand_uniform({3, 4}, rng, -1.0, 1.0);
    Tensor x245 = rand_uniform({2, 4, 5}, rng, -1.0, 1.0);

    auto check = [&](const std::string& name, const std::function<Tensor(const Tensor&)>& f,
                     const Tensor& probe) { out.push_back({name, grad_check(f, probe)}); };

    check("add", [&](const Tensor& t) { return detail::pin(add(t, y34), 1); }, x34);
    check("sub", [&](const Tensor& t) { return detail::pin(sub(y34, t), 2); }, x34);
    check("mul", [&](const Tensor& t) { return detail::pin(mul(t, y34), 3); }, x34);
    check("scale", [&](const Tensor& t) { return detail::pin(scale(t, -1.75), 4); }, x34);
    check("reshape", [&](const Tensor& t) { return detail::pin(reshape(t, {4, 3}), 5); }, x34);
    check("transpose2d", [&](const Tensor& t) { return detail::pin(transpose2d(t), 6); }, x34);
    check("concat_slice",
          [&](const Tensor& t) {
              Tensor c = concat({t, y34}, 1);
              return detail::pin(slice(c, 1, 2, 4), 7);
          },
          x34);
    check("sum", [&](const Tensor& t) { return sum(t); }, x34);
    check("mean", [&](const Tensor& t) { return mean(t); }, x34);
    check("abs", [&](const Tensor& t) { return detail::pin(abs(t), 8); },
          detail::away_from(x34, 0.1));
    check("relu", [&](const Tensor& t) { return detail::pin(relu(t), 9); },
          detail::away_from(x34, 0.1));
    check("sigmoid", [&](const Tensor& t) { return detail::pin(sigmoid(t), 10); }, x34);
    check("gelu", [&](const Tensor& t) { return detail::pin(gelu(t), 11); }, x34);
    check("exp", [&](const Tensor& t) { return detail::pin(exp(t), 12); }, x34);
    check("softmax_rows", [&](const Tensor& t) { return detail::pin(softmax_rows(t), 13); },
          x34);
    {
        Rng r2(77);
        Tensor mid = rand_uniform({3, 4}, r2, 0.2, 0.8);
        check("clamp01", [&](const Tensor& t) { return detail::pin(clamp01(t), 14); }, mid);
    }
    {
        Tensor w = rand_uniform({4, 2}, rng, -1.0, 1.0);
        check("matmul", [&](const Tensor& t) { return detail::pin(matmul(t, w), 15); }, x34);
    }
    check("layer_norm",
          [&](const Tensor& t) {
              Tensor gamma({4}, {1.1, 0.9, 1.2, 0.8});
              Tensor beta({4}, {0.1, -0.1, 0.2, 0.0});
              return detail::pin(layer_norm(t, gamma, beta), 16);
          },
          x34);
    check("pixel_shuffle",
          [&](const Tensor& t) { return detail::pin(pixel_shuffle(t, 2), 17); },
          rand_uniform({8, 3, 2}, rng, -1.0, 1.0));
    check("tokens_planar",
          [&](const Tensor& t) { return detail::pin(to_planar(to_tokens(t), 4, 5), 18); }, x245);
    check("channel_mean", [&](const Tensor& t) { return detail::pin(channel_mean(t), 19); },
          x245);
    check("channel_scale",
          [&](const Tensor& t) {
              Tensor s({2}, {0.7, -1.3});
              return detail::pin(channel_scale(t, s), 20);
          },
          x245);

    // Parameterized primitives: check input and parameters jointly.
    auto check_params = [&](const std::string& name, const std::function<Tensor()>& loss,
                            const std::vector<Tensor>& params, double h = 1e-5) {
        out.push_back({name, grad_check_params(loss, params, h)});
    };
    {
        Tensor xi = rand_uniform({3, 4}, rng, -1.0, 1.0);
        Tensor w = rand_uniform({2, 4}, rng, -1.0, 1.0);
        Tensor b = rand_uniform({2}, rng, -0.5, 0.5);
        check_params("linear", [&] { return detail::pin(linear(xi, w, b), 21); }, {xi, w, b});
    }
    {
        Tensor xi = rand_uniform({2, 5, 6}, rng, -1.0, 1.0);
        Tensor w = rand_uniform({3, 2, 3, 3}, rng, -0.5, 0.5);
        Tensor b = rand_uniform({3}, rng, -0.5, 0.5);
        check_params("conv2d", [&] { return detail::pin(conv2d(xi, w, b, 1), 22); }, {xi, w, b});
    }
    {
        Tensor xi = rand_uniform({3, 4, 4}, rng, -1.0, 1.0);
        Tensor w = rand_uniform({3, 3, 3}, rng, -0.5, 0.5);
        Tensor b = rand_uniform({3}, rng, -0.5, 0.5);
        check_params("depthwise_conv2d",
                     [&] { return detail::pin(depthwise_conv2d(xi, w, b, 1), 23); },
                     {xi, w, b});
    }
    {
        Tensor xi = rand_uniform({2, 4, 6}, rng, -1.0, 1.0);
        check("haar_dwt2_stack",
              [&](const Tensor& t) { return detail::pin(haar_dwt2_stack(t), 24); }, xi);
        Tensor bands = rand_uniform({8, 2, 3}, rng, -1.0, 1.0);
        check("haar_idwt2_stack",
              [&](const Tensor& t) { return detail::pin(haar_idwt2_stack(t), 25); }, bands);
    }
    {
        ModelConfig cfg;
        WindowLayout layout = schedule(cfg, 2);  // 16x16 window, one level
        Tensor xi = rand_uniform({2, 12, 18}, rng, -1.0, 1.0);
        check("partition_merge",
              [&](const Tensor& t) {
                  auto [wins, rec] = partition(t, layout);
                  return detail::pin(merge(wins, rec), 26);
              },
              xi);
    }
    {
        Tensor xi = rand_uniform({4, 4, 4}, rng, -1.0, 1.0);
        Rng pr(0xFEED);
        DfeParams dp = make_dfe_params(4, pr);
        check_params("dfe",
                     [&] {
                         auto [q, v] = dfe(xi, dp);
                         return add(detail::pin(q, 27), detail::pin(v, 28));
                     },
                     {xi, dp.linear_w, dp.linear_b, dp.wave_w, dp.wave_b});
    }
    {
        WindowLayout layout;
        layout.window_h = layout.window_w = 4;
        layout.base_h = layout.base_w = 2;
        layout.alpha = 2.0;
        layout.dwt_levels = 1;
        Rng pr(0xBEE5);
        WaScParams wp = make_wa_sc_params(4, 2, layout, pr);
        Tensor q = rand_uniform({16, 4}, rng, -1.0, 1.0);
        Tensor v = rand_uniform({16, 4}, rng, -1.0, 1.0);
        check_params("wa_sc",
                     [&] { return detail::pin(wa_sc(q, v, layout, wp), 29); },
                     {q, v, wp.bias_table, wp.fuse[0].weight, wp.fuse[0].bias, wp.proj_w});
    }
    {
        Tensor q = rand_uniform({9, 4}, rng, -1.0, 1.0);
        Tensor v = rand_uniform({9, 4}, rng, -1.0, 1.0);
        check_params("c_sc", [&] { return detail::pin(c_sc(q, v), 30); }, {q, v});
    }

    if (include_model) {
        ModelConfig cfg;
        cfg.num_blocks = 1;
        cfg.layers_per_block = 2;
        cfg.channels = 8;
        cfg.heads = 2;
        cfg.base_window = 8;
        cfg.window_schedule = {4, 8};
        cfg.upscale = 2;
        ModelParams mp = make_model_params(cfg, 0xE2E);
        Rng model_rng(0x7E57DA7A);
        Tensor lr_in = rand_uniform({3, 8, 8}, model_rng, 0.1, 0.9);

        // Probe at a generic parameter point. Fresh initialization zeroes
        // the biases, which parks the gate's relu units exactly on their
        // kink and leaves some gradients too small for finite differences
        // to resolve; a small random offset on every parameter avoids both.
        std::vector<Tensor> params;
        Rng jitter(0x0FF5E7);
        for (auto& [name, t] : named_params(mp)) {
            for (std::int64_t i = 0; i < t.numel(); ++i)
                t.data()[i] += jitter.uniform(-0.2, 0.2);
            params.push_back(t);
        }
        // Wider step than the primitives: the composed loss is O(100), so
        // at h=1e-5 cancellation noise in the differences swamps the
        // smallest parameter gradients. h=5e-5 sits in the measured flat
        // band between the noise and curvature regimes for this probe.
        check_params("model_params",
                     [&] { return detail::pin(model_forward(lr_in, mp, cfg, true), 31); },
                     params, 5e-5);
        out.push_back({"model_input",
                       grad_check(
                           [&](const Tensor& t) {
                               return detail::pin(model_forward(t, mp, cfg, true), 32);
                           },
                           lr_in, 5e-5)});
    }
    return out;
}

}  // namespace wavesr
