#pragma once

// Training plumbing: L1 objective, bias-corrected Adam, milestone LR
// schedule, bicubic patch sampling, and a deterministic toy loop that
// overfits a fixed batch of patches. Everything is seeded; two runs with the
// same inputs produce bit-identical parameters and traces.

#include <ostream>

#include "wavesr/imaging.hpp"
#include "wavesr/network.hpp"

namespace wavesr {

inline Tensor l1_loss(const Tensor& pred, const Tensor& target) {
    detail::require(pred.shape() == target.shape(), "l1_loss",
                    "shapes differ: " + shape_str(pred.shape()) + " vs " +
                        shape_str(target.shape()));
    return mean(abs(sub(pred, target)));
}

// ---------------------------------------------------------------------------
// Adam. Moments are kept per parameter in the same order as the parameter
// vector handed to adam_step; gradients are read off the tensors themselves.

struct AdamState {
    double beta1 = 0.9, beta2 = 0.99, eps = 1e-8;
    std::int64_t t = 0;
    std::vector<std::vector<double>> m, v;
};

inline AdamState make_adam_state(const std::vector<Tensor>& params) {
    AdamState s;
    for (const auto& p : params) {
        s.m.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
        s.v.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
    }
    return s;
}

inline void adam_step(std::vector<Tensor>& params, AdamState& state, double lr) {
    detail::require(params.size() == state.m.size(), "adam_step",
                    "state tracks " + std::to_string(state.m.size()) + " parameters, got " +
                        std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& g = params[i].grad();
        detail::require(g.size() == state.m[i].size(), "adam_step",
                        "gradient size mismatch at parameter " + std::to_string(i));
        for (double x : g)
            if (!std::isfinite(x))
                throw std::runtime_error("adam_step: non-finite gradient at parameter " +
                                         std::to_string(i));
    }
    state.t += 1;
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& g = params[i].grad();
        auto& m = state.m[i];
        auto& v = state.v[i];
        double* p = params[i].data();
        for (std::size_t j = 0; j < g.size(); ++j) {
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
            const double mhat = m[j] / c1;
            const double vhat = v[j] / c2;
            p[j] -= lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

// Scales all gradients so their joint euclidean norm is at most max_norm.
// Returns the pre-clip norm.
inline double clip_grad_norm(std::vector<Tensor>& params, double max_norm) {
    double sq = 0.0;
    for (const auto& p : params)
        for (double g : p.grad()) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const double s = max_norm / norm;
        for (auto& p : params) {
            auto& g = detail::grad_buf(*p.ptr());
            for (double& x : g) x *= s;
        }
    }
    return norm;
}

// ---------------------------------------------------------------------------
// Run shape: milestone fractions mark the steps where the learning rate
// halves, mirroring a large-run decay profile at any total step count.

struct TrainSpec {
    std::int64_t patch = 32;
    std::int64_t batch = 4;
    std::int64_t total_steps = 500;
    std::vector<double> milestones = {0.5, 0.8, 0.9, 0.95};
    double base_lr = 6e-4;
    std::uint64_t seed = 0;
    bool clip_gradients = true;
    double clip_norm = 1.0;

    void validate(std::int64_t scale) const {
        detail::require(patch >= 1 && batch >= 1 && total_steps >= 1, "TrainSpec",
                        "patch, batch, and total_steps must be positive");
        detail::require(patch % scale == 0, "TrainSpec",
                        "patch " + std::to_string(patch) + " not divisible by scale " +
                            std::to_string(scale));
        double prev = 0.0;
        for (double f : milestones) {
            detail::require(f > prev && f < 1.0, "TrainSpec",
                            "milestones must be ascending within (0,1)");
            prev = f;
        }
        detail::require(base_lr >= 0.0, "TrainSpec", "negative learning rate");
        detail::require(!clip_gradients || clip_norm > 0.0, "TrainSpec",
                        "clip norm must be positive when clipping");
    }
};

// The rate halves once the step index reaches floor(fraction * total) for
// each milestone fraction.
inline double milestone_lr(const TrainSpec& spec, std::int64_t step) {
    double lr = spec.base_lr;
    for (double f : spec.milestones)
        if (step >=
            static_cast<std::int64_t>(std::floor(f * static_cast<double>(spec.total_steps))))
            lr *= 0.5;
    return lr;
}

// ---------------------------------------------------------------------------
// Patch pipeline

struct PatchPair {
    Tensor lr, hr;  // [3 x p/s x p/s] and [3 x p x p]
};

inline std::vector<PatchPair> sample_patches(const Image& hr, const TrainSpec& spec,
                                             std::int64_t scale, Rng& rng) {
    spec.validate(scale);
    detail::require(hr.channels == 3, "sample_patches", "expects a 3-channel image");
    detail::require(hr.height >= spec.patch && hr.width >= spec.patch, "sample_patches",
                    "image " + std::to_string(hr.height) + "x" + std::to_string(hr.width) +
                        " smaller than patch " + std::to_string(spec.patch));
    std::vector<PatchPair> batch;
    for (std::int64_t b = 0; b < spec.batch; ++b) {
        const std::int64_t y0 = rng.uniform_int(hr.height - spec.patch + 1);
        const std::int64_t x0 = rng.uniform_int(hr.width - spec.patch + 1);
        Image crop = make_image(3, spec.patch, spec.patch);
        for (std::int64_t c = 0; c < 3; ++c)
            for (std::int64_t y = 0; y < spec.patch; ++y)
                for (std::int64_t x = 0; x < spec.patch; ++x)
                    crop.at(c, y, x) = hr.at(c, y0 + y, x0 + x);
        Image small = bicubic_resize(crop, spec.patch / scale, spec.patch / scale);
        batch.push_back({image_to_tensor(small), image_to_tensor(crop)});
    }
    return batch;
}

// ---------------------------------------------------------------------------
// Toy loop

struct TraceRow {
    std::int64_t step = 0;
    double lr = 0.0;
    double loss = 0.0;
};

struct ToyResult {
    ModelParams params;
    ModelConfig config;
    std::vector<TraceRow> trace;
};

inline void write_loss_csv(const std::vector<TraceRow>& trace, std::ostream& os) {
    os << "step,lr,loss\n";
    for (const auto& row : trace) os << row.step << ',' << row.lr << ',' << row.loss << '\n';
}

// The fixed batch a toy run trains on: patches drawn once from the seeded
// stream, round-robin across the supplied images. Reconstructible by anyone
// holding the same config, spec, and images.
inline std::vector<PatchPair> toy_batch(const ModelConfig& cfg, const TrainSpec& spec,
                                        const std::vector<Image>& hr_images) {
    cfg.validate();
    spec.validate(cfg.upscale);
    detail::require(!hr_images.empty(), "toy_batch", "need at least one training image");
    Rng rng(spec.seed);
    std::vector<PatchPair> batch;
    TrainSpec one = spec;
    one.batch = 1;
    for (std::int64_t b = 0; b < spec.batch; ++b) {
        const Image& img = hr_images[static_cast<std::size_t>(b) % hr_images.size()];
        auto drawn = sample_patches(img, one, cfg.upscale, rng);
        batch.push_back(std::move(drawn[0]));
    }
    return batch;
}

inline ToyResult train_toy(const ModelConfig& cfg, const TrainSpec& spec,
                           const std::vector<Image>& hr_images) {
    cfg.validate();
    spec.validate(cfg.upscale);
    detail::require(spec.patch / cfg.upscale >= cfg.base_window, "train_toy",
                    "low-resolution patch smaller than the base window");
    std::vector<PatchPair> batch = toy_batch(cfg, spec, hr_images);

    ToyResult result;
    result.config = cfg;
    result.params = make_model_params(cfg, spec.seed);
    auto named = named_params(result.params);
    std::vector<Tensor> params;
    for (auto& [name, t] : named) params.push_back(t.set_requires_grad(true));
    AdamState state = make_adam_state(params);

    for (std::int64_t step = 0; step < spec.total_steps; ++step) {
        const double lr = milestone_lr(spec, step);
        double loss_value = 0.0;
        // Numeric failures anywhere in the step (every op checks its output
        // for non-finite values) surface as divergence at this step.
        try {
            for (auto& p : params) p.zero_grad();
            std::vector<Tensor> losses;
            losses.reserve(batch.size());
            for (const auto& pair : batch)
                losses.push_back(
                    l1_loss(model_forward(pair.lr, result.params, cfg, true), pair.hr));
            Tensor total = losses[0];
            for (std::size_t i = 1; i < losses.size(); ++i) total = add(total, losses[i]);
            Tensor loss = scale(total, 1.0 / static_cast<double>(losses.size()));

            loss_value = loss.item();
            if (!std::isfinite(loss_value)) throw std::runtime_error("loss is non-finite");

            loss.backward();
            if (spec.clip_gradients) clip_grad_norm(params, spec.clip_norm);
            adam_step(params, state, lr);
        } catch (const std::runtime_error& e) {
            throw std::runtime_error("train_toy: diverged at step " + std::to_string(step) +
                                     ": " + e.what());
        }
        result.trace.push_back({step, lr, loss_value});
    }
    return result;
}

}  // namespace wavesr
