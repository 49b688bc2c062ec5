// Command-line front end for the wavesr library. One subcommand per
// workflow; all outputs are files or plot-ready text. Exit codes: 0 success,
// 1 runtime failure (message on stderr), 2 usage error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "wavesr/complexity.hpp"
#include "wavesr/gradsuite.hpp"
#include "wavesr/imaging.hpp"
#include "wavesr/training.hpp"
#include "wavesr/wavelet.hpp"

namespace {

using namespace wavesr;

// Configuration problems caused by the caller (bad file keys, bad values)
// are usage errors, distinct from runtime failures.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::vector<std::int64_t> parse_int_list(const std::string& text, const std::string& what) {
    std::vector<std::int64_t> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stoll(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw UsageError(what + ": bad integer '" + item + "'");
        }
    }
    if (out.empty()) throw UsageError(what + ": empty list");
    return out;
}

void apply_config_line(ModelConfig& cfg, const std::string& key, const std::string& value,
                       const std::string& where) {
    auto as_int = [&](const std::string& v) {
        try {
            std::size_t used = 0;
            const std::int64_t r = std::stoll(v, &used);
            if (used != v.size()) throw std::invalid_argument(v);
            return r;
        } catch (const std::exception&) {
            throw UsageError(where + ": bad integer '" + v + "' for key '" + key + "'");
        }
    };
    if (key == "num_blocks")
        cfg.num_blocks = as_int(value);
    else if (key == "layers_per_block")
        cfg.layers_per_block = as_int(value);
    else if (key == "channels")
        cfg.channels = as_int(value);
    else if (key == "heads")
        cfg.heads = as_int(value);
    else if (key == "base_window")
        cfg.base_window = as_int(value);
    else if (key == "upscale")
        cfg.upscale = as_int(value);
    else if (key == "ffn_expansion")
        cfg.ffn_expansion = as_int(value);
    else if (key == "window_schedule")
        cfg.window_schedule = parse_int_list(value, where);
    else if (key == "alternate_channel_attention") {
        if (value == "true" || value == "1")
            cfg.alternate_channel_attention = true;
        else if (value == "false" || value == "0")
            cfg.alternate_channel_attention = false;
        else
            throw UsageError(where + ": bad boolean '" + value + "' for key '" + key + "'");
    } else {
        throw UsageError(where + ": unknown key '" + key + "'");
    }
}

// key=value lines, '#' comments, blank lines ignored. Unknown keys are
// rejected so typos cannot silently fall back to defaults.
void apply_config_file(ModelConfig& cfg, const std::string& path) {
    std::ifstream f(path);
    if (!f) throw UsageError("cannot open config file " + path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        const auto last = line.find_last_not_of(" \t\r");
        line = line.substr(first, last - first + 1);
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw UsageError(path + ":" + std::to_string(lineno) + ": expected key=value");
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t");
            const auto b = s.find_last_not_of(" \t");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty())
            throw UsageError(path + ":" + std::to_string(lineno) + ": expected key=value");
        apply_config_line(cfg, key, value, path + ":" + std::to_string(lineno));
    }
}

// ---------------------------------------------------------------------------

int run_dwt(const std::string& in_path, const std::string& out_dir) {
    Image img = read_pnm(in_path);
    Image gray = img.channels == 3 ? rgb_to_y(img) : img;
    Tensor x = image_to_tensor(gray);
    if (gray.height % 2 != 0 || gray.width % 2 != 0) {
        x = reflect_pad_even(x);
        std::printf("padded %lldx%lld -> %lldx%lld for even extents\n",
                    static_cast<long long>(gray.height), static_cast<long long>(gray.width),
                    static_cast<long long>(x.dim(1)), static_cast<long long>(x.dim(2)));
    }

    SubbandSet bands = haar_dwt2(x);
    Tensor recon = haar_idwt2(bands);
    double err = 0.0;
    for (std::int64_t i = 0; i < x.numel(); ++i)
        err = std::max(err, std::abs(x.data()[i] - recon.data()[i]));

    std::filesystem::create_directories(out_dir);
    const std::pair<const char*, const Tensor*> named[4] = {
        {"ll", &bands.ll}, {"lh", &bands.lh}, {"hl", &bands.hl}, {"hh", &bands.hh}};
    for (const auto& [name, band] : named) {
        double lo = band->data()[0], hi = band->data()[0];
        for (std::int64_t i = 0; i < band->numel(); ++i) {
            lo = std::min(lo, band->data()[i]);
            hi = std::max(hi, band->data()[i]);
        }
        Image out = make_image(1, band->dim(1), band->dim(2));
        for (std::int64_t i = 0; i < band->numel(); ++i)
            out.samples[static_cast<std::size_t>(i)] =
                hi > lo ? (band->data()[i] - lo) / (hi - lo) : 0.5;
        const std::string path = out_dir + "/" + name + ".pgm";
        write_pnm(out, path);
        std::printf("%s: min=%.9g max=%.9g -> %s\n", name, lo, hi, path.c_str());
    }
    std::printf("round_trip_max_abs_err=%.3e\n", err);
    return 0;
}

int run_gradcheck(bool tiny_only) {
    const double bar = 1e-4;
    bool all_ok = true;
    std::vector<GradCheckEntry> entries;
    if (tiny_only) {
        for (auto& e : gradient_suite(true))
            if (e.name.rfind("model_", 0) == 0) entries.push_back(e);
    } else {
        entries = gradient_suite(true);
    }
    for (const auto& e : entries) {
        const bool ok = e.max_rel_err <= bar;
        all_ok = all_ok && ok;
        std::printf("%-18s max_rel_err=%.3e %s\n", e.name.c_str(), e.max_rel_err,
                    ok ? "pass" : "FAIL");
    }
    std::printf("%zu checks, bar %.0e: %s\n", entries.size(), bar, all_ok ? "pass" : "FAIL");
    return all_ok ? 0 : 1;
}

int run_bench(const std::vector<std::int64_t>& sizes, const std::string& out_path,
              const ModelConfig& cfg) {
    CostReport report = scaling_experiment(cfg, sizes);
    if (out_path.empty()) {
        write_cost_csv(report, std::cout);
    } else {
        std::ofstream f(out_path, std::ios::trunc);
        if (!f) throw std::runtime_error("cannot open " + out_path + " for writing");
        write_cost_csv(report, f);
        std::printf("wrote %s\n", out_path.c_str());
    }
    std::printf("slope_wasc=%.4f slope_wsa=%.4f\n", report.slope_wasc, report.slope_wsa);
    return 0;
}

int run_train_toy(const std::vector<std::string>& hr_paths, const ModelConfig& cfg,
                  const TrainSpec& spec, const std::string& ckpt_path,
                  const std::string& trace_path) {
    std::vector<Image> images;
    for (const auto& p : hr_paths) images.push_back(read_pnm(p, 3));

    ToyResult result = train_toy(cfg, spec, images);
    std::printf("steps=%lld initial_loss=%.6f final_loss=%.6f\n",
                static_cast<long long>(spec.total_steps), result.trace.front().loss,
                result.trace.back().loss);

    // Trained-vs-bicubic PSNR on the fixed training patches.
    const auto batch = toy_batch(cfg, spec, images);
    double model_db = 0.0, bicubic_db = 0.0;
    {
        NoGradGuard ng;
        for (const auto& pair : batch) {
            const Image hr = tensor_to_image(pair.hr);
            const Image lr = tensor_to_image(pair.lr);
            const Image sr = tensor_to_image(model_forward(pair.lr, result.params, cfg));
            model_db += psnr(sr, hr);
            bicubic_db += psnr(bicubic_resize(lr, hr.width, hr.height), hr);
        }
    }
    model_db /= static_cast<double>(batch.size());
    bicubic_db /= static_cast<double>(batch.size());
    std::printf("psnr_model=%.4f psnr_bicubic=%.4f gain_db=%.4f\n", model_db, bicubic_db,
                model_db - bicubic_db);

    if (!ckpt_path.empty()) {
        save_checkpoint(result.params, cfg, ckpt_path);
        std::printf("wrote %s\n", ckpt_path.c_str());
    }
    if (!trace_path.empty()) {
        std::ofstream f(trace_path, std::ios::trunc);
        if (!f) throw std::runtime_error("cannot open " + trace_path + " for writing");
        write_loss_csv(result.trace, f);
        std::printf("wrote %s\n", trace_path.c_str());
    }
    return 0;
}

int run_infer(const std::string& ckpt_path, const std::string& in_path,
              const std::string& out_path) {
    auto [params, cfg] = load_checkpoint(ckpt_path);
    Image lr = read_pnm(in_path, 3);
    NoGradGuard ng;
    Tensor sr = model_forward(image_to_tensor(lr), params, cfg);
    write_pnm(tensor_to_image(sr), out_path);
    std::printf("wrote %s (%lldx%lld, x%lld)\n", out_path.c_str(),
                static_cast<long long>(sr.dim(2)), static_cast<long long>(sr.dim(1)),
                static_cast<long long>(cfg.upscale));
    return 0;
}

int run_metrics(const std::string& a_path, const std::string& b_path) {
    Image a = read_pnm(a_path);
    Image b = read_pnm(b_path);
    std::printf("psnr=%.4f ssim=%.6f\n", psnr(a, b), ssim(a, b));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"wavesr: wavelet-assisted window-attention super resolution"};
    app.require_subcommand(1);

    // dwt
    auto* dwt_cmd = app.add_subcommand(
        "dwt", "Decompose an image into Haar sub-bands (written as normalized PGMs)");
    std::string dwt_in, dwt_out_dir = ".";
    dwt_cmd->add_option("--in", dwt_in, "input PGM/PPM image")->required();
    dwt_cmd->add_option("--out-dir", dwt_out_dir, "directory for ll/lh/hl/hh.pgm (default .)");

    // gradcheck
    auto* grad_cmd =
        app.add_subcommand("gradcheck", "Finite-difference validation of analytic gradients");
    bool grad_tiny = false;
    grad_cmd->add_flag("--tiny", grad_tiny, "only the end-to-end small-model checks");

    // bench
    auto* bench_cmd = app.add_subcommand(
        "bench", "Mult-add scaling experiment across window sizes (CSV output)");
    std::string bench_sizes = "8,16,32,64", bench_out, bench_config;
    bench_cmd->add_option("--sizes", bench_sizes, "comma list of window sizes (default 8,16,32,64)");
    bench_cmd->add_option("--out", bench_out, "CSV path (stdout when omitted)");
    bench_cmd->add_option("--config", bench_config, "key=value model config file");

    // train-toy
    auto* train_cmd =
        app.add_subcommand("train-toy", "Overfit a small model on fixed patches (deterministic)");
    std::vector<std::string> train_hr;
    std::string train_ckpt, train_trace, train_config;
    std::int64_t train_scale = 2, train_steps = 500, train_patch = 32, train_batch = 4;
    std::uint64_t train_seed = 0;
    double train_lr = 6e-4;
    bool train_no_clip = false;
    train_cmd->add_option("--hr", train_hr, "HR training image(s), PPM")->required();
    train_cmd->add_option("--scale", train_scale, "upscale factor (default 2)");
    train_cmd->add_option("--steps", train_steps, "training steps (default 500)");
    train_cmd->add_option("--patch", train_patch, "HR patch size (default 32)");
    train_cmd->add_option("--batch", train_batch, "fixed batch size (default 4)");
    train_cmd->add_option("--seed", train_seed, "RNG seed (default 0)");
    train_cmd->add_option("--lr", train_lr, "base learning rate (default 6e-4)");
    train_cmd->add_flag("--no-clip", train_no_clip, "disable gradient norm clipping");
    train_cmd->add_option("--out", train_ckpt, "checkpoint output path");
    train_cmd->add_option("--trace", train_trace, "loss trace CSV path");
    train_cmd->add_option("--config", train_config,
                          "key=value model config file (defaults to the small demo profile)");
    std::int64_t t_blocks = -1, t_layers = -1, t_channels = -1, t_heads = -1, t_base = -1;
    std::string t_windows;
    train_cmd->add_option("--blocks", t_blocks, "residual blocks");
    train_cmd->add_option("--layers", t_layers, "layers per block");
    train_cmd->add_option("--channels", t_channels, "feature channels");
    train_cmd->add_option("--heads", t_heads, "attention heads");
    train_cmd->add_option("--base-window", t_base, "base window size");
    train_cmd->add_option("--windows", t_windows, "comma list window schedule");

    // infer
    auto* infer_cmd = app.add_subcommand("infer", "Upscale an image with a trained checkpoint");
    std::string infer_ckpt, infer_in, infer_out;
    infer_cmd->add_option("--ckpt", infer_ckpt, "checkpoint path")->required();
    infer_cmd->add_option("--in", infer_in, "input PPM (low resolution)")->required();
    infer_cmd->add_option("--out", infer_out, "output PPM path")->required();

    // metrics
    auto* metrics_cmd =
        app.add_subcommand("metrics", "PSNR/SSIM between two images (luma plane)");
    std::string metrics_a, metrics_b;
    metrics_cmd->add_option("--a", metrics_a, "first image")->required();
    metrics_cmd->add_option("--b", metrics_b, "second image")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (dwt_cmd->parsed()) return run_dwt(dwt_in, dwt_out_dir);
        if (grad_cmd->parsed()) return run_gradcheck(grad_tiny);
        if (bench_cmd->parsed()) {
            ModelConfig cfg;
            if (!bench_config.empty()) apply_config_file(cfg, bench_config);
            return run_bench(parse_int_list(bench_sizes, "--sizes"), bench_out, cfg);
        }
        if (train_cmd->parsed()) {
            // Small demonstration profile; a config file and flags override.
            ModelConfig cfg;
            cfg.num_blocks = 1;
            cfg.layers_per_block = 2;
            cfg.channels = 8;
            cfg.heads = 2;
            cfg.base_window = 8;
            cfg.window_schedule = {4, 8};
            cfg.upscale = 2;
            if (!train_config.empty()) apply_config_file(cfg, train_config);
            if (t_blocks >= 0) cfg.num_blocks = t_blocks;
            if (t_layers >= 0) cfg.layers_per_block = t_layers;
            if (t_channels >= 0) cfg.channels = t_channels;
            if (t_heads >= 0) cfg.heads = t_heads;
            if (t_base >= 0) cfg.base_window = t_base;
            if (!t_windows.empty())
                cfg.window_schedule = parse_int_list(t_windows, "--windows");
            if (train_cmd->count("--scale") != 0 || train_config.empty()) {
                cfg.upscale = train_scale;
            }

            TrainSpec spec;
            spec.patch = train_patch;
            spec.batch = train_batch;
            spec.total_steps = train_steps;
            spec.seed = train_seed;
            spec.base_lr = train_lr;
            spec.clip_gradients = !train_no_clip;
            return run_train_toy(train_hr, cfg, spec, train_ckpt, train_trace);
        }
        if (infer_cmd->parsed()) return run_infer(infer_ckpt, infer_in, infer_out);
        if (metrics_cmd->parsed()) return run_metrics(metrics_a, metrics_b);
        std::cerr << "no subcommand selected\n";
        return 2;
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
