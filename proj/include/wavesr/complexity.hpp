#pragma once

// Cost accounting: analytic mult-add formulas, closed-form predictions
// assembled from the per-op counting laws, a dense softmax window-attention
// baseline, and the instrumented scaling experiment over window sizes.
//
// The analytic_* functions are the headline formulas (exact integer
// arithmetic). The predicted_* functions count everything the instrumented
// path actually executes, including analysis/fusion and projection costs
// the headline formulas omit; measured counters must match them.

#include <chrono>
#include <ostream>

#include "wavesr/network.hpp"

namespace wavesr {

inline std::uint64_t analytic_w_sa(std::uint64_t n_windows, std::uint64_t c, std::uint64_t h,
                                   std::uint64_t w) {
    return 2 * n_windows * c * (h * w) * (h * w);
}

inline std::uint64_t analytic_wa_sc(std::uint64_t n_windows, std::uint64_t c_head,
                                    std::uint64_t h, std::uint64_t w) {
    return 2 * n_windows * c_head * (w / 2) * (h / 2);
}

// Exact expected counter value of one wa_sc call on [n x width] tokens.
inline std::uint64_t predicted_wa_sc_mult_adds(std::int64_t width, const WindowLayout& layout) {
    const std::uint64_t c = static_cast<std::uint64_t>(width);
    const std::uint64_t n = static_cast<std::uint64_t>(layout.tokens());
    const std::uint64_t nd = static_cast<std::uint64_t>(layout.value_tokens());
    std::uint64_t total = 0;
    std::uint64_t cur = n;
    for (std::int64_t lvl = 0; lvl < layout.dwt_levels; ++lvl) {
        total += 4 * c * cur;            // analysis
        total += (cur / 4) * 4 * c * c;  // band fusion
        cur /= 4;
    }
    total += 2 * n * nd * c;  // correlation map and aggregation across heads
    total += n * c * c;       // output projection
    return total;
}

// Exact expected counter value of one c_sc call.
inline std::uint64_t predicted_c_sc_mult_adds(std::int64_t width, std::int64_t n) {
    return 2ull * static_cast<std::uint64_t>(n) * width * width;
}

// Exact expected counter value of one transformer layer on [C x H x W].
inline std::uint64_t predicted_layer_mult_adds(std::int64_t channels, std::int64_t h,
                                               std::int64_t w, const WindowLayout& layout,
                                               bool use_wa) {
    const std::uint64_t c = static_cast<std::uint64_t>(channels);
    const std::uint64_t half = c / 2;
    const std::uint64_t hp =
        static_cast<std::uint64_t>((h + layout.window_h - 1) / layout.window_h * layout.window_h);
    const std::uint64_t wp =
        static_cast<std::uint64_t>((w + layout.window_w - 1) / layout.window_w * layout.window_w);
    const std::uint64_t nwin = (hp / layout.window_h) * (wp / layout.window_w);
    const std::uint64_t n = static_cast<std::uint64_t>(layout.tokens());
    const std::uint64_t hw = static_cast<std::uint64_t>(h) * static_cast<std::uint64_t>(w);
    const std::uint64_t gate_hidden = std::max<std::uint64_t>(1, c / 4);

    // dfe: per-pixel linear + analysis + depthwise 3x3 on half-resolution
    // bands + synthesis.
    const std::uint64_t dfe = n * c * c + 4 * c * n + 4 * c * 9 * (n / 4) + 4 * c * n;
    const std::uint64_t attn = use_wa
                                   ? predicted_wa_sc_mult_adds(static_cast<std::int64_t>(half),
                                                               layout)
                                   : predicted_c_sc_mult_adds(static_cast<std::int64_t>(half),
                                                              static_cast<std::int64_t>(n));
    const std::uint64_t restore = hw * half * c;
    const std::uint64_t gate = c * gate_hidden + gate_hidden * c;
    const std::uint64_t ffn = 2 * hw * c * (2 * c);
    return nwin * (dfe + attn) + restore + gate + ffn;
}

inline std::uint64_t predicted_block_mult_adds(const ModelConfig& cfg, std::int64_t h,
                                               std::int64_t w) {
    std::uint64_t total = 0;
    for (std::int64_t i = 0; i < cfg.layers_per_block; ++i)
        total += predicted_layer_mult_adds(cfg.channels, h, w, schedule(cfg, i),
                                           layer_uses_wa(cfg, i));
    total += static_cast<std::uint64_t>(cfg.channels) * cfg.channels * 9 * h * w;
    return total;
}

// ---------------------------------------------------------------------------
// Dense softmax window self-attention, kept only as the quadratic cost
// baseline. Queries, keys, and values are the same tokens; its op trace
// deliberately records softmax/exp so the tracer's detection is testable.

inline Tensor reference_w_sa(const Tensor& tokens, std::int64_t heads) {
    detail::require(tokens.ndim() == 2, "reference_w_sa", "tokens must be [n x C]");
    const std::int64_t c = tokens.dim(1);
    detail::require(c % heads == 0, "reference_w_sa", "channels not divisible by heads");
    const std::int64_t hd = c / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));

    std::vector<Tensor> outs;
    outs.reserve(static_cast<std::size_t>(heads));
    for (std::int64_t j = 0; j < heads; ++j) {
        Tensor tj = slice(tokens, 1, j * hd, hd);
        Tensor attn = softmax_rows(scale(matmul(tj, transpose2d(tj)), inv_sqrt));
        outs.push_back(matmul(attn, tj));
    }
    return heads == 1 ? outs[0] : concat(outs, 1);
}

// ---------------------------------------------------------------------------
// Scaling experiment: probes a fixed image area with growing window sizes and
// reports analytic and measured mult-adds per window plus wall-clock.

struct CostProbe {
    std::int64_t window = 0;
    std::uint64_t area = 0;
    std::uint64_t analytic_wsa = 0;
    std::uint64_t analytic_wasc = 0;
    std::uint64_t measured_wasc = 0;
    std::uint64_t measured_wsa = 0;
    double seconds_wasc = 0.0;
    double seconds_wsa = 0.0;
};

struct CostReport {
    std::vector<CostProbe> probes;
    double slope_wasc = 0.0, slope_wsa = 0.0;
    double residual_wasc = 0.0, residual_wsa = 0.0;  // max abs log-fit residual
};

namespace detail {

inline double fit_loglog_slope(const std::vector<double>& xs, const std::vector<double>& ys,
                               double& max_residual) {
    const std::size_t n = xs.size();
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += std::log(xs[i]);
        my += std::log(ys[i]);
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        num += (std::log(xs[i]) - mx) * (std::log(ys[i]) - my);
        den += (std::log(xs[i]) - mx) * (std::log(xs[i]) - mx);
    }
    const double slope = num / den;
    const double intercept = my - slope * mx;
    max_residual = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        max_residual = std::max(max_residual,
                                std::abs(std::log(ys[i]) - (intercept + slope * std::log(xs[i]))));
    return slope;
}

}  // namespace detail

inline CostReport scaling_experiment(const ModelConfig& cfg, std::vector<std::int64_t> sizes) {
    cfg.validate();
    detail::require(!sizes.empty(), "scaling_experiment", "no window sizes given");
    std::int64_t side = 0;
    for (auto s : sizes) {
        detail::require(s >= 8 && (s & (s - 1)) == 0, "scaling_experiment",
                        "sizes must be powers of two >= 8, got " + std::to_string(s));
        std::int64_t m = s;
        while (m > cfg.base_window && m % 2 == 0) m /= 2;
        detail::require(m == cfg.base_window, "scaling_experiment",
                        "size " + std::to_string(s) + " is not base*2^j for base " +
                            std::to_string(cfg.base_window));
        side = std::max(side, s);
    }

    const std::int64_t c = cfg.channels, half = c / 2, heads = cfg.heads;
    NoGradGuard ng;
    CostReport report;
    for (auto size : sizes) {
        WindowLayout layout;
        layout.window_h = layout.window_w = size;
        layout.base_h = layout.base_w = cfg.base_window;
        layout.alpha = static_cast<double>(size) / static_cast<double>(cfg.base_window);
        layout.dwt_levels = 0;
        for (std::int64_t m = size; m > cfg.base_window; m /= 2) ++layout.dwt_levels;

        const std::int64_t nwin = (side / size) * (side / size);
        const std::int64_t n = size * size;
        Rng rng(0x5CA1E000ULL + static_cast<std::uint64_t>(size));
        WaScParams params = make_wa_sc_params(half, heads, layout, rng);

        CostProbe probe;
        probe.window = size;
        probe.area = static_cast<std::uint64_t>(n);
        probe.analytic_wsa = analytic_w_sa(1, static_cast<std::uint64_t>(c),
                                           static_cast<std::uint64_t>(size),
                                           static_cast<std::uint64_t>(size));
        probe.analytic_wasc = analytic_wa_sc(1, static_cast<std::uint64_t>(c / heads),
                                             static_cast<std::uint64_t>(size),
                                             static_cast<std::uint64_t>(size));

        OpCounter::instance().reset();
        auto t0 = std::chrono::steady_clock::now();
        for (std::int64_t wi = 0; wi < nwin; ++wi) {
            Tensor q = rand_uniform({n, half}, rng, -1.0, 1.0);
            Tensor v = rand_uniform({n, half}, rng, -1.0, 1.0);
            wa_sc(q, v, layout, params);
        }
        auto t1 = std::chrono::steady_clock::now();
        probe.measured_wasc = OpCounter::instance().mult_adds() / static_cast<std::uint64_t>(nwin);
        probe.seconds_wasc = std::chrono::duration<double>(t1 - t0).count();

        OpCounter::instance().reset();
        t0 = std::chrono::steady_clock::now();
        for (std::int64_t wi = 0; wi < nwin; ++wi) {
            Tensor tokens = rand_uniform({n, c}, rng, -1.0, 1.0);
            reference_w_sa(tokens, heads);
        }
        t1 = std::chrono::steady_clock::now();
        probe.measured_wsa = OpCounter::instance().mult_adds() / static_cast<std::uint64_t>(nwin);
        probe.seconds_wsa = std::chrono::duration<double>(t1 - t0).count();

        report.probes.push_back(probe);
    }

    std::vector<double> areas, wasc, wsa;
    for (const auto& p : report.probes) {
        areas.push_back(static_cast<double>(p.area));
        wasc.push_back(static_cast<double>(p.measured_wasc));
        wsa.push_back(static_cast<double>(p.measured_wsa));
    }
    if (report.probes.size() >= 2) {
        report.slope_wasc = detail::fit_loglog_slope(areas, wasc, report.residual_wasc);
        report.slope_wsa = detail::fit_loglog_slope(areas, wsa, report.residual_wsa);
    }
    return report;
}

inline void write_cost_csv(const CostReport& report, std::ostream& os) {
    os << "window,area,analytic_wsa,analytic_wasc,measured_wasc,measured_wsa,"
          "seconds_wasc,seconds_wsa\n";
    for (const auto& p : report.probes)
        os << p.window << ',' << p.area << ',' << p.analytic_wsa << ',' << p.analytic_wasc << ','
           << p.measured_wasc << ',' << p.measured_wsa << ',' << p.seconds_wasc << ','
           << p.seconds_wsa << '\n';
}

}  // namespace wavesr
