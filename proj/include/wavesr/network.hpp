#pragma once

// Model assembly: transformer layers and blocks, the channel-gated attention
// branch, the full SR network, and checkpoint serialization.
//
// Layer:  y = x + gate(restore(merge(attn(dfe(partition(LN(x)))))))
//         z = y + FFN(LN(y))
// where attn alternates between spatial (wa_sc) and channel (c_sc)
// self-correlation across layer indices, both operating on the half-width
// Q/V split; restore is a linear map back to full width and gate is a
// squeeze -> bottleneck -> sigmoid per-channel scale.
// Block:  out = x + conv3x3(layer chain(x))
// Model:  shallow conv3x3 -> blocks -> + shallow (global residual)
//         -> conv to 3*s^2 channels -> pixel shuffle. Output is clamped to
//         [0,1] at inference only.

#include <cstring>
#include <fstream>
#include <map>
#include <utility>

#include "wavesr/attention.hpp"
#include "wavesr/config.hpp"
#include "wavesr/tensor.hpp"
#include "wavesr/windowing.hpp"

namespace wavesr {

struct LayerNormParams {
    Tensor gamma, beta;
};

struct GateParams {
    Tensor fc1_w, fc1_b;  // C -> C/4
    Tensor fc2_w, fc2_b;  // C/4 -> C
};

struct FfnParams {
    Tensor fc1_w, fc1_b;  // C -> e*C
    Tensor fc2_w, fc2_b;  // e*C -> C
};

struct LayerParams {
    LayerNormParams ln1, ln2;
    DfeParams dfe;
    bool use_wa = true;
    WaScParams wa;  // populated only when use_wa
    Tensor restore_w, restore_b;
    GateParams gate;
    FfnParams ffn;
};

struct BlockParams {
    std::vector<LayerParams> layers;
    Tensor conv_w, conv_b;
};

struct ModelParams {
    Tensor shallow_w, shallow_b;
    std::vector<BlockParams> blocks;
    Tensor recon_w, recon_b;
};

inline bool layer_uses_wa(const ModelConfig& cfg, std::int64_t layer_index) {
    return !cfg.alternate_channel_attention || layer_index % 2 == 0;
}

inline ModelParams make_model_params(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    const std::int64_t c = cfg.channels, half = c / 2;
    const std::int64_t gate_hidden = std::max<std::int64_t>(1, c / 4);
    const std::int64_t ffn_hidden = cfg.ffn_expansion * c;

    ModelParams p;
    p.shallow_w = init_weight({c, 3, 3, 3}, 27, rng);
    p.shallow_b = Tensor::zeros({c});
    for (std::int64_t b = 0; b < cfg.num_blocks; ++b) {
        BlockParams bp;
        for (std::int64_t i = 0; i < cfg.layers_per_block; ++i) {
            LayerParams lp;
            lp.ln1 = {Tensor::full({c}, 1.0), Tensor::zeros({c})};
            lp.dfe = make_dfe_params(c, rng);
            lp.use_wa = layer_uses_wa(cfg, i);
            if (lp.use_wa) lp.wa = make_wa_sc_params(half, cfg.heads, schedule(cfg, i), rng);
            lp.restore_w = init_weight({c, half}, half, rng);
            lp.restore_b = Tensor::zeros({c});
            lp.gate = {init_weight({gate_hidden, c}, c, rng), Tensor::zeros({gate_hidden}),
                       init_weight({c, gate_hidden}, gate_hidden, rng), Tensor::zeros({c})};
            lp.ln2 = {Tensor::full({c}, 1.0), Tensor::zeros({c})};
            lp.ffn = {init_weight({ffn_hidden, c}, c, rng), Tensor::zeros({ffn_hidden}),
                      init_weight({c, ffn_hidden}, ffn_hidden, rng), Tensor::zeros({c})};
            bp.layers.push_back(std::move(lp));
        }
        bp.conv_w = init_weight({c, c, 3, 3}, 9 * c, rng);
        bp.conv_b = Tensor::zeros({c});
        p.blocks.push_back(std::move(bp));
    }
    const std::int64_t out_ch = 3 * cfg.upscale * cfg.upscale;
    p.recon_w = init_weight({out_ch, c, 3, 3}, 9 * c, rng);
    p.recon_b = Tensor::zeros({out_ch});
    return p;
}

// Deterministic (name, tensor) enumeration; tensors share storage with the
// model, so writes through the returned handles mutate it.
inline std::vector<std::pair<std::string, Tensor>> named_params(const ModelParams& p) {
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("shallow.weight", p.shallow_w);
    out.emplace_back("shallow.bias", p.shallow_b);
    for (std::size_t b = 0; b < p.blocks.size(); ++b) {
        const BlockParams& bp = p.blocks[b];
        const std::string bprefix = "block" + std::to_string(b) + ".";
        for (std::size_t i = 0; i < bp.layers.size(); ++i) {
            const LayerParams& lp = bp.layers[i];
            const std::string pre = bprefix + "layer" + std::to_string(i) + ".";
            out.emplace_back(pre + "ln1.gamma", lp.ln1.gamma);
            out.emplace_back(pre + "ln1.beta", lp.ln1.beta);
            out.emplace_back(pre + "dfe.linear.weight", lp.dfe.linear_w);
            out.emplace_back(pre + "dfe.linear.bias", lp.dfe.linear_b);
            out.emplace_back(pre + "dfe.wave.weight", lp.dfe.wave_w);
            out.emplace_back(pre + "dfe.wave.bias", lp.dfe.wave_b);
            if (lp.use_wa) {
                out.emplace_back(pre + "attn.bias_table", lp.wa.bias_table);
                for (std::size_t f = 0; f < lp.wa.fuse.size(); ++f) {
                    const std::string fp = pre + "attn.fuse" + std::to_string(f) + ".";
                    out.emplace_back(fp + "weight", lp.wa.fuse[f].weight);
                    out.emplace_back(fp + "bias", lp.wa.fuse[f].bias);
                }
                out.emplace_back(pre + "attn.proj.weight", lp.wa.proj_w);
            }
            out.emplace_back(pre + "restore.weight", lp.restore_w);
            out.emplace_back(pre + "restore.bias", lp.restore_b);
            out.emplace_back(pre + "gate.fc1.weight", lp.gate.fc1_w);
            out.emplace_back(pre + "gate.fc1.bias", lp.gate.fc1_b);
            out.emplace_back(pre + "gate.fc2.weight", lp.gate.fc2_w);
            out.emplace_back(pre + "gate.fc2.bias", lp.gate.fc2_b);
            out.emplace_back(pre + "ln2.gamma", lp.ln2.gamma);
            out.emplace_back(pre + "ln2.beta", lp.ln2.beta);
            out.emplace_back(pre + "ffn.fc1.weight", lp.ffn.fc1_w);
            out.emplace_back(pre + "ffn.fc1.bias", lp.ffn.fc1_b);
            out.emplace_back(pre + "ffn.fc2.weight", lp.ffn.fc2_w);
            out.emplace_back(pre + "ffn.fc2.bias", lp.ffn.fc2_b);
        }
        out.emplace_back(bprefix + "conv.weight", bp.conv_w);
        out.emplace_back(bprefix + "conv.bias", bp.conv_b);
    }
    out.emplace_back("recon.weight", p.recon_w);
    out.emplace_back("recon.bias", p.recon_b);
    return out;
}

inline std::uint64_t count_params(const ModelParams& p) {
    std::uint64_t total = 0;
    for (const auto& [name, t] : named_params(p)) total += static_cast<std::uint64_t>(t.numel());
    return total;
}

// ---------------------------------------------------------------------------
// Forward passes

inline Tensor transformer_layer(const Tensor& x, const LayerParams& lp,
                                const WindowLayout& layout) {
    detail::require(x.ndim() == 3, "transformer_layer", "input must be [C x H x W]");
    const std::int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);

    Tensor normed = to_planar(layer_norm(to_tokens(x), lp.ln1.gamma, lp.ln1.beta), h, w);
    auto [windows, rec] = partition(normed, layout);
    const std::int64_t nwin = windows.dim(0), n = windows.dim(1);

    std::vector<Tensor> outs;
    outs.reserve(static_cast<std::size_t>(nwin));
    for (std::int64_t wi = 0; wi < nwin; ++wi) {
        Tensor wt = reshape(slice(windows, 0, wi, 1), {n, c});
        auto [q, v] = dfe(to_planar(wt, layout.window_h, layout.window_w), lp.dfe);
        Tensor o = lp.use_wa ? wa_sc(q, v, layout, lp.wa) : c_sc(q, v);
        outs.push_back(reshape(o, {1, n, c / 2}));
    }
    Tensor merged = merge(nwin == 1 ? outs[0] : concat(outs, 0), rec);
    Tensor restored = to_planar(linear(to_tokens(merged), lp.restore_w, lp.restore_b), h, w);

    Tensor pooled = reshape(channel_mean(restored), {1, c});
    Tensor gate = sigmoid(linear(relu(linear(pooled, lp.gate.fc1_w, lp.gate.fc1_b)),
                                 lp.gate.fc2_w, lp.gate.fc2_b));
    Tensor y = add(x, channel_scale(restored, reshape(gate, {c})));

    Tensor t2 = layer_norm(to_tokens(y), lp.ln2.gamma, lp.ln2.beta);
    Tensor f = linear(gelu(linear(t2, lp.ffn.fc1_w, lp.ffn.fc1_b)), lp.ffn.fc2_w, lp.ffn.fc2_b);
    return add(y, to_planar(f, h, w));
}

inline Tensor transformer_block(const Tensor& x, const BlockParams& bp, const ModelConfig& cfg) {
    detail::require(static_cast<std::int64_t>(bp.layers.size()) == cfg.layers_per_block,
                    "transformer_block", "layer count does not match config");
    Tensor d = x;
    for (std::int64_t i = 0; i < cfg.layers_per_block; ++i)
        d = transformer_layer(d, bp.layers[static_cast<std::size_t>(i)], schedule(cfg, i));
    return add(x, conv2d(d, bp.conv_w, bp.conv_b, 1));
}

inline Tensor model_forward(const Tensor& lr, const ModelParams& p, const ModelConfig& cfg,
                            bool training = false) {
    detail::require(lr.ndim() == 3 && lr.dim(0) == 3, "model_forward",
                    "input must be [3 x H x W]");
    detail::require(lr.dim(1) >= cfg.base_window && lr.dim(2) >= cfg.base_window,
                    "model_forward",
                    "input " + std::to_string(lr.dim(1)) + "x" + std::to_string(lr.dim(2)) +
                        " smaller than base window " + std::to_string(cfg.base_window));
    Tensor fs = conv2d(lr, p.shallow_w, p.shallow_b, 1);
    Tensor d = fs;
    for (const auto& bp : p.blocks) d = transformer_block(d, bp, cfg);
    d = add(d, fs);
    Tensor r = conv2d(d, p.recon_w, p.recon_b, 1);
    Tensor out = pixel_shuffle(r, cfg.upscale);
    return training ? out : clamp01(out);
}

// ---------------------------------------------------------------------------
// Checkpoint format: magic "WHSR", u32 version, config block, then tensor
// records (u32 name length, name bytes, u32 rank, u32 extents, float32
// little-endian scalars). Everything little-endian; writes are byte-exact
// deterministic.

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f32(std::string& out, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(out, bits);
}

struct ByteReader {
    const std::string& buf;
    std::size_t pos = 0;

    void need(std::size_t n, const char* what) const {
        if (pos + n > buf.size())
            throw std::runtime_error("checkpoint truncated at byte " + std::to_string(pos) +
                                     " while reading " + what);
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    float f32(const char* what) {
        std::uint32_t bits = u32(what);
        float f;
        std::memcpy(&f, &bits, 4);
        return f;
    }
    std::string bytes(std::size_t n, const char* what) {
        need(n, what);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace detail

inline void save_checkpoint(const ModelParams& p, const ModelConfig& cfg,
                            const std::string& path) {
    std::string out;
    out += "WHSR";
    detail::put_u32(out, kCheckpointVersion);
    detail::put_u32(out, static_cast<std::uint32_t>(cfg.num_blocks));
    detail::put_u32(out, static_cast<std::uint32_t>(cfg.layers_per_block));
    detail::put_u32(out, static_cast<std::uint32_t>(cfg.channels));
    detail::put_u32(out, static_cast<std::uint32_t>(cfg.heads));
    detail::put_u32(out, static_cast<std::uint32_t>(cfg.base_window));
    detail::put_u32(out, static_cast<std::uint32_t>(cfg.upscale));
    detail::put_u32(out, static_cast<std::uint32_t>(cfg.ffn_expansion));
    detail::put_u32(out, cfg.alternate_channel_attention ? 1u : 0u);
    detail::put_u32(out, static_cast<std::uint32_t>(cfg.window_schedule.size()));
    for (auto w : cfg.window_schedule) detail::put_u32(out, static_cast<std::uint32_t>(w));

    const auto named = named_params(p);
    detail::put_u32(out, static_cast<std::uint32_t>(named.size()));
    for (const auto& [name, t] : named) {
        detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        detail::put_u32(out, static_cast<std::uint32_t>(t.shape().size()));
        for (auto e : t.shape()) detail::put_u32(out, static_cast<std::uint32_t>(e));
        for (std::int64_t i = 0; i < t.numel(); ++i)
            detail::put_f32(out, static_cast<float>(t.data()[i]));
    }

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("short write to " + path);
}

inline std::pair<ModelParams, ModelConfig> load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    detail::ByteReader r{buf};
    if (r.bytes(4, "magic") != "WHSR")
        throw std::runtime_error("not a checkpoint: bad magic in " + path);
    const std::uint32_t version = r.u32("version");
    if (version != kCheckpointVersion)
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));

    ModelConfig cfg;
    cfg.num_blocks = r.u32("num_blocks");
    cfg.layers_per_block = r.u32("layers_per_block");
    cfg.channels = r.u32("channels");
    cfg.heads = r.u32("heads");
    cfg.base_window = r.u32("base_window");
    cfg.upscale = r.u32("upscale");
    cfg.ffn_expansion = r.u32("ffn_expansion");
    cfg.alternate_channel_attention = r.u32("alternation") != 0;
    const std::uint32_t sched_len = r.u32("schedule length");
    cfg.window_schedule.clear();
    for (std::uint32_t i = 0; i < sched_len; ++i)
        cfg.window_schedule.push_back(r.u32("schedule entry"));
    cfg.validate();

    // Build the skeleton the config implies, then fill by name with shape
    // checks; every parameter must be present exactly once.
    ModelParams p = make_model_params(cfg, 0);
    auto named = named_params(p);
    std::map<std::string, Tensor> by_name(named.begin(), named.end());
    std::map<std::string, bool> filled;

    const std::uint32_t count = r.u32("tensor count");
    if (count != named.size())
        throw std::runtime_error("checkpoint holds " + std::to_string(count) + " tensors, config implies " +
                                 std::to_string(named.size()));
    for (std::uint32_t ti = 0; ti < count; ++ti) {
        const std::uint32_t name_len = r.u32("name length");
        const std::string name = r.bytes(name_len, "tensor name");
        auto it = by_name.find(name);
        if (it == by_name.end())
            throw std::runtime_error("checkpoint tensor '" + name + "' unknown to this config");
        if (filled[name]) throw std::runtime_error("duplicate tensor '" + name + "'");
        filled[name] = true;
        const std::uint32_t rank = r.u32("rank");
        Shape shape;
        for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(r.u32("extent"));
        if (shape != it->second.shape())
            throw std::runtime_error("tensor '" + name + "' has shape " + shape_str(shape) +
                                     ", config implies " + shape_str(it->second.shape()));
        for (std::int64_t i = 0; i < it->second.numel(); ++i)
            it->second.data()[i] = static_cast<double>(r.f32("tensor data"));
    }
    return {std::move(p), std::move(cfg)};
}

}  // namespace wavesr
