#pragma once

// Orthonormal 2x2 Haar transforms and the wavelet token downsampler.
//
// Per 2x2 block [[a,b],[c,d]] the four sub-band coefficients are
//   ll = (a+b+c+d)/2   lh = (a+b-c-d)/2
//   hl = (a-b+c-d)/2   hh = (a-b-c+d)/2
// and the synthesis is
//   a = (ll+lh+hl+hh)/2   b = (ll+lh-hl-hh)/2
//   c = (ll-lh+hl-hh)/2   d = (ll-lh-hl+hh)/2
// The transform matrix is orthonormal, so analysis and synthesis are exact
// inverses, energy is preserved, and the adjoint of each direction is the
// other; the backward passes below exploit that.
//
// Stacked layout: bands concatenate along channels in the order
// [ll, lh, hl, hh], i.e. [C x H x W] -> [4C x H/2 x W/2].
//
// Mult-add count for either direction is 4*C*H*W with H,W the
// full-resolution extents.

#include "wavesr/tensor.hpp"

namespace wavesr {

// Reflects an arbitrary integer index into [0, n) without duplicating the
// border sample: n=4 maps ... 4->2, 5->1 (pattern 0 1 2 3 2 1 0 1 ...).
inline std::int64_t reflect_index(std::int64_t i, std::int64_t n) {
    if (n == 1) return 0;
    const std::int64_t period = 2 * n - 2;
    std::int64_t m = i % period;
    if (m < 0) m += period;
    return m < n ? m : period - m;
}

inline Tensor haar_dwt2_stack(const Tensor& x) {
    detail::require(x.ndim() == 3, "haar_dwt2", "input must be [C x H x W]");
    const std::int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    detail::require(h % 2 == 0 && w % 2 == 0, "haar_dwt2",
                    "extents " + std::to_string(h) + "x" + std::to_string(w) +
                        " must be even; reflect-pad first");
    const std::int64_t ho = h / 2, wo = w / 2;
    OpCounter::instance().add_mult_adds(4ull * c * h * w);

    std::vector<double> v(static_cast<std::size_t>(4 * c * ho * wo));
    const std::int64_t band = c * ho * wo;
    for (std::int64_t ci = 0; ci < c; ++ci)
        for (std::int64_t y = 0; y < ho; ++y)
            for (std::int64_t xx = 0; xx < wo; ++xx) {
                const double a = x.data()[(ci * h + 2 * y) * w + 2 * xx];
                const double b = x.data()[(ci * h + 2 * y) * w + 2 * xx + 1];
                const double cc = x.data()[(ci * h + 2 * y + 1) * w + 2 * xx];
                const double d = x.data()[(ci * h + 2 * y + 1) * w + 2 * xx + 1];
                const std::int64_t o = (ci * ho + y) * wo + xx;
                v[o] = 0.5 * (a + b + cc + d);
                v[band + o] = 0.5 * (a + b - cc - d);
                v[2 * band + o] = 0.5 * (a - b + cc - d);
                v[3 * band + o] = 0.5 * (a - b - cc + d);
            }

    return detail::make_op("haar_dwt2", {4 * c, ho, wo}, std::move(v), {x},
                           [x, c, h, w, ho, wo, band](const TensorData& out) {
                               // Adjoint of an orthonormal analysis = synthesis.
                               auto& g = detail::grad_buf(*x.ptr());
                               for (std::int64_t ci = 0; ci < c; ++ci)
                                   for (std::int64_t y = 0; y < ho; ++y)
                                       for (std::int64_t xx = 0; xx < wo; ++xx) {
                                           const std::int64_t o = (ci * ho + y) * wo + xx;
                                           const double ll = out.grad[o];
                                           const double lh = out.grad[band + o];
                                           const double hl = out.grad[2 * band + o];
                                           const double hh = out.grad[3 * band + o];
                                           g[(ci * h + 2 * y) * w + 2 * xx] +=
                                               0.5 * (ll + lh + hl + hh);
                                           g[(ci * h + 2 * y) * w + 2 * xx + 1] +=
                                               0.5 * (ll + lh - hl - hh);
                                           g[(ci * h + 2 * y + 1) * w + 2 * xx] +=
                                               0.5 * (ll - lh + hl - hh);
                                           g[(ci * h + 2 * y + 1) * w + 2 * xx + 1] +=
                                               0.5 * (ll - lh - hl + hh);
                                       }
                           });
}

inline Tensor haar_idwt2_stack(const Tensor& bands) {
    detail::require(bands.ndim() == 3, "haar_idwt2", "input must be [4C x H/2 x W/2]");
    detail::require(bands.dim(0) % 4 == 0, "haar_idwt2",
                    std::to_string(bands.dim(0)) + " channels do not split into 4 bands");
    const std::int64_t c = bands.dim(0) / 4, ho = bands.dim(1), wo = bands.dim(2);
    const std::int64_t h = 2 * ho, w = 2 * wo;
    const std::int64_t band = c * ho * wo;
    OpCounter::instance().add_mult_adds(4ull * c * h * w);

    std::vector<double> v(static_cast<std::size_t>(c * h * w));
    for (std::int64_t ci = 0; ci < c; ++ci)
        for (std::int64_t y = 0; y < ho; ++y)
            for (std::int64_t xx = 0; xx < wo; ++xx) {
                const std::int64_t o = (ci * ho + y) * wo + xx;
                const double ll = bands.data()[o];
                const double lh = bands.data()[band + o];
                const double hl = bands.data()[2 * band + o];
                const double hh = bands.data()[3 * band + o];
                v[(ci * h + 2 * y) * w + 2 * xx] = 0.5 * (ll + lh + hl + hh);
                v[(ci * h + 2 * y) * w + 2 * xx + 1] = 0.5 * (ll + lh - hl - hh);
                v[(ci * h + 2 * y + 1) * w + 2 * xx] = 0.5 * (ll - lh + hl - hh);
                v[(ci * h + 2 * y + 1) * w + 2 * xx + 1] = 0.5 * (ll - lh - hl + hh);
            }

    return detail::make_op("haar_idwt2", {c, h, w}, std::move(v), {bands},
                           [bands, c, h, w, ho, wo, band](const TensorData& out) {
                               auto& g = detail::grad_buf(*bands.ptr());
                               for (std::int64_t ci = 0; ci < c; ++ci)
                                   for (std::int64_t y = 0; y < ho; ++y)
                                       for (std::int64_t xx = 0; xx < wo; ++xx) {
                                           const double a = out.grad[(ci * h + 2 * y) * w + 2 * xx];
                                           const double b =
                                               out.grad[(ci * h + 2 * y) * w + 2 * xx + 1];
                                           const double cc =
                                               out.grad[(ci * h + 2 * y + 1) * w + 2 * xx];
                                           const double d =
                                               out.grad[(ci * h + 2 * y + 1) * w + 2 * xx + 1];
                                           const std::int64_t o = (ci * ho + y) * wo + xx;
                                           g[o] += 0.5 * (a + b + cc + d);
                                           g[band + o] += 0.5 * (a + b - cc - d);
                                           g[2 * band + o] += 0.5 * (a - b + cc - d);
                                           g[3 * band + o] += 0.5 * (a - b - cc + d);
                                       }
                           });
}

struct SubbandSet {
    Tensor ll, lh, hl, hh;
};

inline SubbandSet haar_dwt2(const Tensor& x) {
    Tensor s = haar_dwt2_stack(x);
    const std::int64_t c = s.dim(0) / 4;
    return {slice(s, 0, 0, c), slice(s, 0, c, c), slice(s, 0, 2 * c, c), slice(s, 0, 3 * c, c)};
}

inline Tensor haar_idwt2(const SubbandSet& s) {
    return haar_idwt2_stack(concat({s.ll, s.lh, s.hl, s.hh}, 0));
}

// Pads odd extents to even by mirroring the row/column before the border.
inline Tensor reflect_pad_even(const Tensor& x) {
    detail::require(x.ndim() == 3, "reflect_pad", "input must be [C x H x W]");
    const std::int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const std::int64_t hp = h + (h % 2), wp = w + (w % 2);
    if (hp == h && wp == w) return x;
    detail::require(h > 1 || hp == h, "reflect_pad", "cannot mirror a single row");
    detail::require(w > 1 || wp == w, "reflect_pad", "cannot mirror a single column");

    std::vector<double> v(static_cast<std::size_t>(c * hp * wp));
    for (std::int64_t ci = 0; ci < c; ++ci)
        for (std::int64_t y = 0; y < hp; ++y) {
            const std::int64_t sy = reflect_index(y, h);
            for (std::int64_t xx = 0; xx < wp; ++xx)
                v[(ci * hp + y) * wp + xx] =
                    x.data()[(ci * h + sy) * w + reflect_index(xx, w)];
        }
    return detail::make_op("reflect_pad", {c, hp, wp}, std::move(v), {x},
                           [x, c, h, w, hp, wp](const TensorData& out) {
                               auto& g = detail::grad_buf(*x.ptr());
                               for (std::int64_t ci = 0; ci < c; ++ci)
                                   for (std::int64_t y = 0; y < hp; ++y) {
                                       const std::int64_t sy = reflect_index(y, h);
                                       for (std::int64_t xx = 0; xx < wp; ++xx)
                                           g[(ci * h + sy) * w + reflect_index(xx, w)] +=
                                               out.grad[(ci * hp + y) * wp + xx];
                                   }
                           });
}

inline Tensor crop2d(const Tensor& x, std::int64_t h, std::int64_t w) {
    detail::require(x.ndim() == 3, "crop2d", "input must be [C x H x W]");
    Tensor r = x;
    if (h < x.dim(1)) r = slice(r, 1, 0, h);
    if (w < r.dim(2)) r = slice(r, 2, 0, w);
    return r;
}

// ---------------------------------------------------------------------------
// Wavelet token downsampler: k rounds of {analysis -> stack the four bands
// on channels -> learned linear fusion 4C -> C}. Tokens are row-major over
// an h x w grid; each round quarters the token count.

struct FuseParams {
    Tensor weight;  // [C x 4C]
    Tensor bias;    // [C]
};

inline FuseParams make_fuse_params(std::int64_t channels, Rng& rng) {
    return {init_weight({channels, 4 * channels}, 4 * channels, rng), Tensor::zeros({channels})};
}

inline Tensor dwt_downsample(const Tensor& tokens, std::int64_t h, std::int64_t w, std::int64_t k,
                             const std::vector<FuseParams>& fuse) {
    detail::require(tokens.ndim() == 2, "dwt_downsample", "tokens must be [n x C]");
    detail::require(k >= 0, "dwt_downsample", "negative level count");
    detail::require(tokens.dim(0) == h * w, "dwt_downsample",
                    std::to_string(tokens.dim(0)) + " tokens do not tile " + std::to_string(h) +
                        "x" + std::to_string(w));
    detail::require(static_cast<std::int64_t>(fuse.size()) == k, "dwt_downsample",
                    "need one fusion stage per level: " + std::to_string(fuse.size()) + " for k=" +
                        std::to_string(k));
    const std::int64_t c = tokens.dim(1);
    const std::int64_t div = std::int64_t(1) << k;
    detail::require(h % div == 0 && w % div == 0, "dwt_downsample",
                    "grid " + std::to_string(h) + "x" + std::to_string(w) +
                        " not divisible by 2^" + std::to_string(k));

    Tensor cur = tokens;
    std::int64_t ch = h, cw = w;
    for (std::int64_t lvl = 0; lvl < k; ++lvl) {
        Tensor stack = haar_dwt2_stack(to_planar(cur, ch, cw));
        ch /= 2;
        cw /= 2;
        detail::require(fuse[lvl].weight.shape() == Shape{c, 4 * c}, "dwt_downsample",
                        "fusion weight at level " + std::to_string(lvl) + " must be " +
                            shape_str({c, 4 * c}));
        cur = linear(to_tokens(stack), fuse[lvl].weight, fuse[lvl].bias);
    }
    return cur;
}

}  // namespace wavesr
