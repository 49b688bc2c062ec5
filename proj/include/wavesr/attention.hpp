#pragma once

// Dual feature extraction and the softmax-free self-correlation pair.
//
// dfe:   X_ch = per-pixel linear map; X_wave = synthesis(depthwise 3x3 over
//        the four stacked analysis bands); the product X_ch * X_wave splits
//        channel-wise into queries (first half) and values (second half).
// wa_sc: values are wavelet-downsampled to the base grid, then per head
//        M = Q V_down^T / D + B and out = M V_down. The correlation map is
//        used raw: no softmax, no exponentiation anywhere on this path.
// c_sc:  channel correlation M_c = Q^T V / n applied back to Q.
//
// Conventions: the output projection of wa_sc has no bias and fusion biases
// start at zero, so zero values produce exactly zero output.

#include "wavesr/tensor.hpp"
#include "wavesr/wavelet.hpp"
#include "wavesr/windowing.hpp"

namespace wavesr {

struct DfeParams {
    Tensor linear_w;  // [C x C]
    Tensor linear_b;  // [C]
    Tensor wave_w;    // [4C x 3 x 3], one kernel per sub-band channel
    Tensor wave_b;    // [4C]
};

inline DfeParams make_dfe_params(std::int64_t channels, Rng& rng) {
    return {init_weight({channels, channels}, channels, rng), Tensor::zeros({channels}),
            init_weight({4 * channels, 3, 3}, 9, rng), Tensor::zeros({4 * channels})};
}

inline std::pair<Tensor, Tensor> dfe(const Tensor& x, const DfeParams& p) {
    detail::require(x.ndim() == 3, "dfe", "input must be [C x H x W]");
    const std::int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    detail::require(c % 2 == 0, "dfe", "channel count must be even to split into Q and V");
    detail::require(p.linear_w.shape() == Shape{c, c}, "dfe",
                    "linear weight must be " + shape_str({c, c}));
    detail::require(p.wave_w.shape() == Shape{4 * c, 3, 3}, "dfe",
                    "depthwise weight must be " + shape_str({4 * c, 3, 3}));

    Tensor x_ch = linear(to_tokens(x), p.linear_w, p.linear_b);  // [HW x C]
    Tensor bands = haar_dwt2_stack(x);
    Tensor mixed = depthwise_conv2d(bands, p.wave_w, p.wave_b, 1);
    Tensor x_wave = to_tokens(haar_idwt2_stack(mixed));          // [HW x C]
    Tensor d = mul(x_ch, x_wave);
    return {slice(d, 1, 0, c / 2), slice(d, 1, c / 2, c / 2)};
}

// ---------------------------------------------------------------------------
// Relative position bias. One table row per head over all (2h-1)(2w-1)
// spatial offsets; downsampled value coordinates scale by 2^k back onto the
// query grid, so equal offsets share one entry regardless of depth.

inline std::int64_t bias_table_size(const WindowLayout& layout) {
    return (2 * layout.window_h - 1) * (2 * layout.window_w - 1);
}

inline Tensor relative_bias_lookup(const WindowLayout& layout, const Tensor& table) {
    const std::int64_t h = layout.window_h, w = layout.window_w;
    const std::int64_t vh = layout.value_h(), vw = layout.value_w();
    const std::int64_t n = h * w, nd = vh * vw;
    const std::int64_t tsize = bias_table_size(layout);
    detail::require(table.ndim() == 2 && table.dim(1) == tsize, "relative_bias_lookup",
                    "table " + shape_str(table.shape()) + " must be [heads x " +
                        std::to_string(tsize) + "]");
    const std::int64_t heads = table.dim(0);
    const std::int64_t step = std::int64_t(1) << layout.dwt_levels;

    std::vector<std::int64_t> index(static_cast<std::size_t>(n * nd));
    for (std::int64_t py = 0; py < h; ++py)
        for (std::int64_t px = 0; px < w; ++px)
            for (std::int64_t vy = 0; vy < vh; ++vy)
                for (std::int64_t vx = 0; vx < vw; ++vx) {
                    const std::int64_t dy = py - vy * step + h - 1;
                    const std::int64_t dx = px - vx * step + w - 1;
                    index[(py * w + px) * nd + vy * vw + vx] = dy * (2 * w - 1) + dx;
                }

    std::vector<double> v(static_cast<std::size_t>(heads * n * nd));
    for (std::int64_t j = 0; j < heads; ++j)
        for (std::int64_t i = 0; i < n * nd; ++i)
            v[j * n * nd + i] = table.data()[j * tsize + index[static_cast<std::size_t>(i)]];

    return detail::make_op("relative_bias_lookup", {heads, n, nd}, std::move(v), {table},
                           [table, heads, n, nd, tsize,
                            index = std::move(index)](const TensorData& out) {
                               auto& g = detail::grad_buf(*table.ptr());
                               for (std::int64_t j = 0; j < heads; ++j)
                                   for (std::int64_t i = 0; i < n * nd; ++i)
                                       g[j * tsize + index[static_cast<std::size_t>(i)]] +=
                                           out.grad[j * n * nd + i];
                           });
}

// ---------------------------------------------------------------------------
// Wave-attention self-correlation

struct WaScParams {
    std::int64_t heads = 1;
    Tensor bias_table;             // [heads x (2h-1)(2w-1)]
    std::vector<FuseParams> fuse;  // one stage per downsampling level
    Tensor proj_w;                 // [C' x C'], bias-free output projection
};

inline WaScParams make_wa_sc_params(std::int64_t width, std::int64_t heads,
                                    const WindowLayout& layout, Rng& rng) {
    detail::require(width % heads == 0, "make_wa_sc_params",
                    std::to_string(width) + " channels not divisible by " +
                        std::to_string(heads) + " heads");
    WaScParams p;
    p.heads = heads;
    const std::int64_t tsize = bias_table_size(layout);
    p.bias_table = init_weight({heads, tsize}, tsize, rng);
    for (std::int64_t lvl = 0; lvl < layout.dwt_levels; ++lvl)
        p.fuse.push_back(make_fuse_params(width, rng));
    p.proj_w = init_weight({width, width}, width, rng);
    return p;
}

inline Tensor wa_sc(const Tensor& q, const Tensor& v, const WindowLayout& layout,
                    const WaScParams& p) {
    detail::require(q.ndim() == 2 && v.ndim() == 2, "wa_sc", "q and v must be [n x C']");
    detail::require(q.shape() == v.shape(), "wa_sc",
                    "q " + shape_str(q.shape()) + " and v " + shape_str(v.shape()) + " differ");
    const std::int64_t n = q.dim(0), width = q.dim(1);
    detail::require(n == layout.tokens(), "wa_sc",
                    std::to_string(n) + " tokens do not fill a " +
                        std::to_string(layout.window_h) + "x" + std::to_string(layout.window_w) +
                        " window");
    detail::require(width % p.heads == 0, "wa_sc", "width not divisible by head count");
    detail::require(static_cast<std::int64_t>(p.fuse.size()) == layout.dwt_levels, "wa_sc",
                    "fusion stages " + std::to_string(p.fuse.size()) + " != levels " +
                        std::to_string(layout.dwt_levels));
    detail::require(p.proj_w.shape() == Shape{width, width}, "wa_sc",
                    "projection must be " + shape_str({width, width}));
    const std::int64_t head_dim = width / p.heads;
    const double inv_d = 1.0 / static_cast<double>(head_dim);

    Tensor v_down =
        dwt_downsample(v, layout.window_h, layout.window_w, layout.dwt_levels, p.fuse);
    Tensor bias = relative_bias_lookup(layout, p.bias_table);  // [heads x n x nd]
    const std::int64_t nd = v_down.dim(0);

    std::vector<Tensor> head_outs;
    head_outs.reserve(static_cast<std::size_t>(p.heads));
    for (std::int64_t j = 0; j < p.heads; ++j) {
        Tensor qj = slice(q, 1, j * head_dim, head_dim);
        Tensor vj = slice(v_down, 1, j * head_dim, head_dim);
        Tensor m = add(scale(matmul(qj, transpose2d(vj)), inv_d),
                       reshape(slice(bias, 0, j, 1), {n, nd}));
        head_outs.push_back(matmul(m, vj));
    }
    Tensor merged = p.heads == 1 ? head_outs[0] : concat(head_outs, 1);
    return matmul(merged, transpose2d(p.proj_w));
}

// ---------------------------------------------------------------------------
// Channel self-correlation: parameter-free, softmax-free.

inline Tensor c_sc(const Tensor& q, const Tensor& v) {
    detail::require(q.ndim() == 2 && v.ndim() == 2, "c_sc", "q and v must be [n x C']");
    detail::require(q.shape() == v.shape(), "c_sc",
                    "q " + shape_str(q.shape()) + " and v " + shape_str(v.shape()) + " differ");
    const std::int64_t n = q.dim(0);
    Tensor mc = scale(matmul(transpose2d(q), v), 1.0 / static_cast<double>(n));
    return matmul(q, mc);
}

}  // namespace wavesr
