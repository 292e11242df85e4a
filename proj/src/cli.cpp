#include "idf/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "idf/engine.hpp"
#include "idf/io.hpp"
#include "idf/metrics.hpp"
#include "idf/model.hpp"
#include "idf/noise.hpp"
#include "idf/train.hpp"

namespace idf {
namespace {

namespace fs = std::filesystem;

Image replicate_gray(const Image& img, int channels) {
    if (img.channels == channels) return img;
    if (img.channels == 1 && channels == 3) {
        Image out(3, img.height, img.width);
        const size_t hw = img.pixel_count();
        for (int ch = 0; ch < 3; ++ch) {
            std::copy(img.values.data(), img.values.data() + hw,
                      out.values.data() + static_cast<size_t>(ch) * hw);
        }
        return out;
    }
    throw ValidationError("image channel count incompatible with the model");
}

Image take_channel0(const Image& img) {
    Image out(1, img.height, img.width);
    std::copy(img.values.data(), img.values.data() + img.pixel_count(), out.values.data());
    return out;
}

void print_config(const RunConfig& cfg) {
    std::istringstream in(cfg.render());
    std::string line;
    while (std::getline(in, line)) std::cout << "config: " << line << '\n';
}

std::vector<fs::path> list_pngs(const std::string& dir) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".png") {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());
    return files;
}

int cmd_add_noise(const RunConfig& cfg, const std::string& in, const std::string& out,
                  const std::string& noise_text, uint64_t seed) {
    print_config(cfg);
    NoiseSpec spec = NoiseSpec::parse(noise_text);
    spec.seed = seed;
    const Image img = load_image(in);
    save_image(apply_noise(img, spec), out);
    std::cout << "noise: " << spec.render() << " seed=" << seed << " -> " << out << '\n';
    return 0;
}

int cmd_denoise(const RunConfig& cfg, const std::string& in, const std::string& out,
                const std::string& weights_path, const std::string& trace_dir) {
    print_config(cfg);
    RunConfig run = cfg;
    if (!trace_dir.empty()) run.engine.trace_level = TraceLevel::full;
    const ModelWeights weights = load_weights(weights_path, run.model);
    Image img = load_image(in);
    const bool gray = img.channels == 1;
    img = replicate_gray(img, run.model.channels);

    const DenoiseResult result = denoise(img, weights, run.engine);
    save_image(gray ? take_channel0(result.estimate) : result.estimate, out);
    std::cout << "iterations_used: " << result.iterations_used << '\n';
    std::cout << "stop_reason: " << to_string(result.stop_reason) << '\n';
    std::cout << "degenerate_kernels: " << result.degenerate_kernel_count << '\n';
    if (!trace_dir.empty()) write_trace(result, trace_dir);
    return 0;
}

int cmd_train(const RunConfig& cfg, const std::string& data_dir, const std::string& out,
              const std::string& log_path) {
    print_config(cfg);
    const TrainResult result = train(data_dir, cfg.model, cfg.train);
    save_weights(result.weights, out);

    const std::string log_file = log_path.empty() ? out + ".log.csv" : log_path;
    check_sandbox_path(log_file);
    std::ofstream log(log_file);
    if (!log) throw IoError("cannot create training log: " + log_file);
    log << "step,loss,wall_ms\n";
    log.precision(17);
    for (const auto& entry : result.log) {
        log << entry.step << ',' << entry.loss << ',' << entry.wall_ms << '\n';
    }
    if (!result.log.empty()) {
        std::cout << "final_loss: " << result.log.back().loss << '\n';
    }
    std::cout << "weights: " << out << "\ntraining_log: " << log_file << '\n';
    return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& pred, const std::string& ref,
             const std::string& report_path) {
    print_config(cfg);
    std::vector<std::pair<fs::path, fs::path>> pairs;
    if (fs::is_directory(pred)) {
        if (!fs::is_directory(ref)) throw ValidationError("eval: pred is a dir but ref is not");
        for (const auto& p : list_pngs(pred)) {
            const fs::path r = fs::path(ref) / p.filename();
            if (!fs::exists(r)) {
                throw ValidationError("eval: no reference for " + p.filename().string());
            }
            pairs.emplace_back(p, r);
        }
        if (pairs.empty()) throw ValidationError("eval: no PNG files in " + pred);
    } else {
        pairs.emplace_back(pred, ref);
    }

    MetricReport report;
    for (const auto& [p, r] : pairs) {
        const Image a = load_image(p.string());
        const Image b = load_image(r.string());
        MetricReport::Row row;
        row.name = p.filename().string();
        row.psnr_db = psnr(a, b);
        row.ssim = ssim(a, b);
        report.per_image.push_back(row);
    }
    report.finalize();
    if (!report_path.empty()) {
        check_sandbox_path(report_path);
        std::ofstream out(report_path);
        if (!out) throw IoError("cannot create report: " + report_path);
        out << report.to_csv();
    }
    std::cout << report.to_markdown();
    return 0;
}

int cmd_bench(const RunConfig& cfg, const std::string& data_dir, const std::string& weights_path,
              const std::string& suite_path, const std::string& report_path, uint64_t seed) {
    print_config(cfg);
    const ModelWeights weights = load_weights(weights_path, cfg.model);
    const auto files = list_pngs(data_dir);
    if (files.empty()) throw ValidationError("bench: no PNG files in " + data_dir);

    check_sandbox_path(suite_path);
    std::ifstream suite(suite_path);
    if (!suite) throw IoError("cannot open suite file: " + suite_path);
    std::vector<NoiseSpec> specs;
    std::string line;
    while (std::getline(suite, line)) {
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        while (!line.empty() && (line.back() == ' ' || line.back() == '\t' || line.back() == '\r')) {
            line.pop_back();
        }
        size_t b = line.find_first_not_of(" \t");
        if (b == std::string::npos) continue;
        specs.push_back(NoiseSpec::parse(line.substr(b)));
    }
    if (specs.empty()) throw ValidationError("bench: suite file lists no noise specs");

    std::vector<Image> cleans;
    for (const auto& f : files) cleans.push_back(replicate_gray(load_image(f.string()), cfg.model.channels));

    std::ostringstream md;
    md << "| noise | PSNR (dB) | SSIM | mean iters | early stops |\n|---|---|---|---|---|\n";
    std::ostringstream csv;
    csv << "noise,psnr_db,ssim,mean_iterations,early_stops\n";
    const Rng base(seed);
    for (size_t si = 0; si < specs.size(); ++si) {
        MetricReport report;
        std::vector<DenoiseResult> results;
        for (size_t ii = 0; ii < cleans.size(); ++ii) {
            Rng rng = base.fork(si * 100003 + ii + 1);
            NoiseSpec spec = specs[si];
            Image noisy = apply_noise(cleans[ii], spec, rng);
            DenoiseResult res = denoise(noisy, weights, cfg.engine);
            MetricReport::Row row;
            row.name = files[ii].filename().string();
            row.psnr_db = psnr(res.estimate, cleans[ii]);
            row.ssim = ssim(res.estimate, cleans[ii]);
            report.per_image.push_back(row);
            results.push_back(std::move(res));
        }
        report.finalize();
        const IterationStats stats = iteration_stats(results);
        char psnr_s[32], ssim_s[32], iter_s[32];
        std::snprintf(psnr_s, sizeof(psnr_s), "%.2f", report.psnr_db);
        std::snprintf(ssim_s, sizeof(ssim_s), "%.4f", report.ssim);
        std::snprintf(iter_s, sizeof(iter_s), "%.2f", stats.mean_iterations);
        md << "| " << specs[si].render() << " | " << psnr_s << " | " << ssim_s << " | "
           << iter_s << " | " << stats.stopped_early << " |\n";
        csv << specs[si].render() << ',' << psnr_s << ',' << ssim_s << ',' << iter_s << ','
            << stats.stopped_early << '\n';
    }
    std::cout << md.str();
    if (!report_path.empty()) {
        check_sandbox_path(report_path);
        std::ofstream out(report_path);
        if (!out) throw IoError("cannot create report: " + report_path);
        out << csv.str();
    }
    return 0;
}

int cmd_param_count(const RunConfig& cfg) {
    print_config(cfg);
    std::cout << param_count(cfg.model) << '\n';
    return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"Iterative per-pixel kernel-prediction denoiser"};
    app.require_subcommand(1);

    bool sandbox = false;
    std::string config_path;
    std::vector<std::string> overrides;
    app.add_flag("--sandbox", sandbox, "restrict file access to the working directory");
    app.add_option("--config", config_path, "key=value config file");
    app.add_option("--set", overrides, "config override key=value (repeatable)");

    auto* add_noise = app.add_subcommand("add-noise", "corrupt an image with synthetic noise");
    std::string an_in, an_out, an_noise;
    uint64_t an_seed = 0;
    add_noise->add_option("--in", an_in)->required();
    add_noise->add_option("--out", an_out)->required();
    add_noise->add_option("--noise", an_noise, "e.g. gaussian:sigma=25")->required();
    add_noise->add_option("--seed", an_seed);

    auto* dn = app.add_subcommand("denoise", "run the iterative denoiser");
    std::string dn_in, dn_out, dn_weights, dn_stop, dn_trace;
    double dn_kappa = -1.0;
    int dn_T = -1;
    dn->add_option("--in", dn_in)->required();
    dn->add_option("--out", dn_out)->required();
    dn->add_option("--weights", dn_weights)->required();
    dn->add_option("--stop", dn_stop, "fixed | kernel-dic | image-dic");
    dn->add_option("--kappa", dn_kappa);
    dn->add_option("--T", dn_T, "maximum iterations");
    dn->add_option("--trace", dn_trace, "dump per-iteration trace into this directory");

    auto* tr = app.add_subcommand("train", "train weights on a directory of clean images");
    std::string tr_data, tr_out, tr_log;
    tr->add_option("--data", tr_data)->required();
    tr->add_option("--out", tr_out)->required();
    tr->add_option("--log", tr_log, "training log CSV (default <out>.log.csv)");

    auto* ev = app.add_subcommand("eval", "PSNR/SSIM between prediction and reference");
    std::string ev_pred, ev_ref, ev_report;
    ev->add_option("--pred", ev_pred)->required();
    ev->add_option("--ref", ev_ref)->required();
    ev->add_option("--report", ev_report, "CSV output path");

    auto* bn = app.add_subcommand("bench", "noise-suite sweep with metrics and iteration stats");
    std::string bn_data, bn_weights, bn_suite, bn_report;
    uint64_t bn_seed = 0;
    bn->add_option("--data", bn_data)->required();
    bn->add_option("--weights", bn_weights)->required();
    bn->add_option("--suite", bn_suite, "file with one noise spec per line")->required();
    bn->add_option("--report", bn_report, "CSV output path");
    bn->add_option("--seed", bn_seed);

    auto* pc = app.add_subcommand("param-count", "print the trainable parameter count");

    for (auto* sub : app.get_subcommands({})) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (sandbox) set_sandbox(true);
        RunConfig cfg;
        if (!config_path.empty()) cfg = RunConfig::load(config_path);
        for (const std::string& kv : overrides) {
            const size_t eq = kv.find('=');
            if (eq == std::string::npos) {
                throw ValidationError("--set expects key=value, got: " + kv);
            }
            cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
        }

        if (*add_noise) return cmd_add_noise(cfg, an_in, an_out, an_noise, an_seed);
        if (*dn) {
            if (!dn_stop.empty()) cfg.engine.stop_mode = stop_mode_from_string(dn_stop);
            if (dn_kappa >= 0.0) cfg.engine.kappa = dn_kappa;
            if (dn_T > 0) cfg.engine.max_iterations = dn_T;
            return cmd_denoise(cfg, dn_in, dn_out, dn_weights, dn_trace);
        }
        if (*tr) return cmd_train(cfg, tr_data, tr_out, tr_log);
        if (*ev) return cmd_eval(cfg, ev_pred, ev_ref, ev_report);
        if (*bn) return cmd_bench(cfg, bn_data, bn_weights, bn_suite, bn_report, bn_seed);
        if (*pc) return cmd_param_count(cfg);
        return 2;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 4;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}

}  // namespace idf
