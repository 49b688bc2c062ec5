#pragma once

// Non-overlapping window partition/merge with reflect padding, and the
// per-layer schedule of window sizes and wavelet downsampling depths.
//
// Windows never shift or overlap. Layers whose window exceeds the base size
// carry a downsampling depth k with window = base * 2^k, so the value grid
// inside attention always collapses back to the base resolution; that is
// what keeps per-window attention cost linear in window area.

#include "wavesr/config.hpp"
#include "wavesr/tensor.hpp"
#include "wavesr/wavelet.hpp"

namespace wavesr {

struct WindowLayout {
    std::int64_t layer_index = 0;
    std::int64_t window_h = 8, window_w = 8;
    std::int64_t base_h = 8, base_w = 8;
    double alpha = 1.0;          // window/base ratio
    std::int64_t dwt_levels = 0; // k; value grid is window/2^k per axis

    std::int64_t tokens() const { return window_h * window_w; }
    std::int64_t value_h() const { return window_h >> dwt_levels; }
    std::int64_t value_w() const { return window_w >> dwt_levels; }
    std::int64_t value_tokens() const { return value_h() * value_w(); }
};

inline WindowLayout schedule(const ModelConfig& config, std::int64_t layer_index) {
    config.validate();
    detail::require(layer_index >= 0 && layer_index < config.layers_per_block, "schedule",
                    "layer index " + std::to_string(layer_index) + " outside [0," +
                        std::to_string(config.layers_per_block) + ")");
    WindowLayout l;
    l.layer_index = layer_index;
    l.window_h = l.window_w = config.window_schedule[static_cast<std::size_t>(layer_index)];
    l.base_h = l.base_w = config.base_window;
    l.alpha = static_cast<double>(l.window_h) / static_cast<double>(l.base_h);
    if (l.alpha > 1.0) {
        std::int64_t k = 0, m = l.window_h;
        while (m > l.base_h) {
            m /= 2;
            ++k;
        }
        l.dwt_levels = k;
    }
    return l;
}

struct PadRecord {
    std::int64_t channels = 0;
    std::int64_t orig_h = 0, orig_w = 0;
    std::int64_t padded_h = 0, padded_w = 0;
    std::int64_t window_h = 0, window_w = 0;
};

// Splits [C x H x W] into [N x h*w x C] reflect-padding H,W up to window
// multiples. Window order and intra-window pixel order are row-major.
inline std::pair<Tensor, PadRecord> partition(const Tensor& x, const WindowLayout& layout) {
    detail::require(x.ndim() == 3, "partition", "input must be [C x H x W]");
    const std::int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const std::int64_t wh = layout.window_h, ww = layout.window_w;
    detail::require(wh >= 1 && ww >= 1, "partition", "window extents must be positive");
    detail::require(wh <= 4 * h && ww <= 4 * w, "partition",
                    "degenerate configuration: window " + std::to_string(wh) + "x" +
                        std::to_string(ww) + " exceeds 4x image " + std::to_string(h) + "x" +
                        std::to_string(w));
    const std::int64_t hp = (h + wh - 1) / wh * wh;
    const std::int64_t wp = (w + ww - 1) / ww * ww;
    const std::int64_t nwy = hp / wh, nwx = wp / ww;
    const std::int64_t nwin = nwy * nwx, n = wh * ww;

    std::vector<double> v(static_cast<std::size_t>(nwin * n * c));
    for (std::int64_t wy = 0; wy < nwy; ++wy)
        for (std::int64_t wx = 0; wx < nwx; ++wx) {
            const std::int64_t wi = wy * nwx + wx;
            for (std::int64_t py = 0; py < wh; ++py) {
                const std::int64_t sy = reflect_index(wy * wh + py, h);
                for (std::int64_t px = 0; px < ww; ++px) {
                    const std::int64_t sx = reflect_index(wx * ww + px, w);
                    const std::int64_t p = py * ww + px;
                    for (std::int64_t ci = 0; ci < c; ++ci)
                        v[(wi * n + p) * c + ci] = x.data()[(ci * h + sy) * w + sx];
                }
            }
        }

    PadRecord rec{c, h, w, hp, wp, wh, ww};
    Tensor out = detail::make_op(
        "partition", {nwin, n, c}, std::move(v), {x},
        [x, c, h, w, wh, ww, nwy, nwx, n](const TensorData& o) {
            auto& g = detail::grad_buf(*x.ptr());
            for (std::int64_t wy = 0; wy < nwy; ++wy)
                for (std::int64_t wx = 0; wx < nwx; ++wx) {
                    const std::int64_t wi = wy * nwx + wx;
                    for (std::int64_t py = 0; py < wh; ++py) {
                        const std::int64_t sy = reflect_index(wy * wh + py, h);
                        for (std::int64_t px = 0; px < ww; ++px) {
                            const std::int64_t sx = reflect_index(wx * ww + px, w);
                            const std::int64_t p = py * ww + px;
                            for (std::int64_t ci = 0; ci < c; ++ci)
                                g[(ci * h + sy) * w + sx] += o.grad[(wi * n + p) * c + ci];
                        }
                    }
                }
        });
    return {out, rec};
}

// Exact inverse of partition: reads each original pixel's unique window slot
// and drops the padded copies. Accepts any channel count (the attention path
// merges half-width windows).
inline Tensor merge(const Tensor& windows, const PadRecord& rec) {
    detail::require(windows.ndim() == 3, "merge", "windows must be [N x n x C]");
    const std::int64_t c = windows.dim(2);
    const std::int64_t wh = rec.window_h, ww = rec.window_w;
    detail::require(wh >= 1 && ww >= 1 && rec.orig_h >= 1 && rec.orig_w >= 1, "merge",
                    "invalid pad record");
    detail::require(rec.padded_h % wh == 0 && rec.padded_w % ww == 0, "merge",
                    "pad record extents not window multiples");
    detail::require(rec.padded_h >= rec.orig_h && rec.padded_h < rec.orig_h + wh &&
                        rec.padded_w >= rec.orig_w && rec.padded_w < rec.orig_w + ww,
                    "merge", "pad record inconsistent with window size");
    const std::int64_t nwy = rec.padded_h / wh, nwx = rec.padded_w / ww;
    const std::int64_t n = wh * ww;
    detail::require(windows.dim(0) == nwy * nwx && windows.dim(1) == n, "merge",
                    "windows " + shape_str(windows.shape()) + " inconsistent with pad record");
    const std::int64_t h = rec.orig_h, w = rec.orig_w;

    std::vector<double> v(static_cast<std::size_t>(c * h * w));
    for (std::int64_t i = 0; i < h; ++i)
        for (std::int64_t j = 0; j < w; ++j) {
            const std::int64_t wi = (i / wh) * nwx + j / ww;
            const std::int64_t p = (i % wh) * ww + j % ww;
            for (std::int64_t ci = 0; ci < c; ++ci)
                v[(ci * h + i) * w + j] = windows.data()[(wi * n + p) * c + ci];
        }

    return detail::make_op("merge", {c, h, w}, std::move(v), {windows},
                           [windows, c, h, w, wh, ww, nwx, n](const TensorData& o) {
                               auto& g = detail::grad_buf(*windows.ptr());
                               for (std::int64_t i = 0; i < h; ++i)
                                   for (std::int64_t j = 0; j < w; ++j) {
                                       const std::int64_t wi = (i / wh) * nwx + j / ww;
                                       const std::int64_t p = (i % wh) * ww + j % ww;
                                       for (std::int64_t ci = 0; ci < c; ++ci)
                                           g[(wi * n + p) * c + ci] +=
                                               o.grad[(ci * h + i) * w + j];
                                   }
                           });
}

}  // namespace wavesr
