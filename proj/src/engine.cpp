#include "idf/engine.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "idf/io.hpp"

namespace idf {

void EngineConfig::validate() const {
    if (max_iterations < 1) throw ValidationError("engine: max iterations must be >= 1");
    if (kappa < 0.0) throw ValidationError("engine: kappa must be >= 0");
    if (kernel_size <= 0 || kernel_size % 2 == 0) {
        throw ValidationError("engine: kernel size must be odd and positive");
    }
    if (power_p < 1.0) throw ValidationError("engine: power p must be >= 1");
}

double confidence_score(const KernelField& current, const KernelField& previous,
                        bool mean_abs) {
    if (current.kernel_area != previous.kernel_area ||
        current.positions != previous.positions) {
        throw ValidationError("confidence_score: kernel field dimensions disagree");
    }
    const int m = current.positions;
    const int center = current.center_tap();
    const double* a = current.data.data() + static_cast<size_t>(center) * m;
    const double* b = previous.data.data() + static_cast<size_t>(center) * m;
    double acc = 0.0;
    if (mean_abs) {
        for (int j = 0; j < m; ++j) acc += std::fabs(a[j] - b[j]);
        return acc / static_cast<double>(m);
    }
    for (int j = 0; j < m; ++j) acc += a[j] - b[j];
    return std::fabs(acc) / static_cast<double>(m);
}

namespace {

double image_score(const Image& current, const Image& previous) {
    double acc = 0.0;
    const double* a = current.values.data();
    const double* b = previous.values.data();
    const size_t n = current.values.size();
    for (size_t i = 0; i < n; ++i) acc += std::fabs(a[i] - b[i]);
    return acc / static_cast<double>(n);
}

Tensor center_plane(const KernelField& kernels, int h, int w) {
    Tensor plane({h, w});
    const double* src = kernels.data.data() + static_cast<size_t>(kernels.center_tap()) * kernels.positions;
    std::copy(src, src + kernels.positions, plane.data());
    return plane;
}

}  // namespace

DenoiseResult denoise(const Image& img, const ModelWeights& weights, const EngineConfig& cfg) {
    cfg.validate();
    if (cfg.kernel_size != weights.config.kernel_size) {
        throw ValidationError("engine: kernel size disagrees with model weights");
    }
    if (cfg.power_p != weights.config.power_p) {
        throw ValidationError("engine: power p disagrees with model weights");
    }

    DenoiseResult result;
    Image est_prev2;
    Image est = img;
    bool have_prev2 = false;
    KernelField prev_kernels;

    for (int t = 1; t <= cfg.max_iterations; ++t) {
        const int dilation = (t % 2 == 1) ? 2 : 1;  // odd → broad context, even → local
        DidResult step = did_forward(est, have_prev2 ? &est_prev2 : nullptr, weights, dilation);

        IterationRecord rec;
        rec.t = t;
        rec.dilation = dilation;
        rec.degenerate_kernels = step.kernels.degenerate_columns;
        result.degenerate_kernel_count += step.kernels.degenerate_columns;

        std::optional<double> score;
        if (t >= 2) {
            if (cfg.stop_mode == StopMode::image_dic) {
                score = image_score(step.estimate, est);
            } else {
                score = confidence_score(step.kernels, prev_kernels, cfg.confidence_mean_abs);
            }
            result.confidence_history.push_back(*score);
        }
        rec.score = score;
        result.records.push_back(rec);

        if (cfg.trace_level != TraceLevel::final_only) {
            result.kernel_centers.push_back(center_plane(step.kernels, img.height, img.width));
        }
        if (cfg.trace_level == TraceLevel::full) {
            result.estimates.push_back(step.estimate);
        }

        est_prev2 = std::move(est);
        have_prev2 = true;
        est = std::move(step.estimate);
        prev_kernels = std::move(step.kernels);
        result.iterations_used = t;

        if (cfg.stop_mode != StopMode::fixed && score && *score < cfg.kappa) {
            result.stop_reason = StopReason::confidence_converged;
            result.estimate = std::move(est);
            return result;
        }
    }
    result.stop_reason = StopReason::max_reached;
    result.estimate = std::move(est);
    return result;
}

IterationStats iteration_stats(const std::vector<DenoiseResult>& results) {
    if (results.empty()) throw ValidationError("iteration_stats: empty result list");
    IterationStats stats;
    stats.min_iterations = results.front().iterations_used;
    stats.max_iterations = results.front().iterations_used;
    double sum = 0.0;
    for (const auto& r : results) {
        sum += r.iterations_used;
        stats.min_iterations = std::min(stats.min_iterations, r.iterations_used);
        stats.max_iterations = std::max(stats.max_iterations, r.iterations_used);
        if (r.stop_reason == StopReason::confidence_converged) {
            ++stats.stopped_early;
        } else {
            ++stats.reached_max;
        }
    }
    stats.mean_iterations = sum / static_cast<double>(results.size());
    return stats;
}

void write_trace(const DenoiseResult& result, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::ofstream jsonl(fs::path(dir) / "trace.jsonl");
    if (!jsonl) throw IoError("cannot write trace file in " + dir);
    jsonl.precision(17);
    for (const auto& rec : result.records) {
        jsonl << "{\"t\":" << rec.t << ",\"dilation\":" << rec.dilation << ",\"confidence\":";
        if (rec.score) {
            jsonl << *rec.score;
        } else {
            jsonl << "null";
        }
        jsonl << ",\"degenerate_kernels\":" << rec.degenerate_kernels << "}\n";
    }
    for (size_t i = 0; i < result.estimates.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "iter_%02zu.png", i + 1);
        save_image(result.estimates[i], (fs::path(dir) / name).string());
    }
    // Raw kernel dumps: center-tap weight plane per iteration (values already
    // lie in [0,1]).
    for (size_t i = 0; i < result.kernel_centers.size(); ++i) {
        const Tensor& plane = result.kernel_centers[i];
        Image img(1, plane.dim(0), plane.dim(1));
        std::copy(plane.data(), plane.data() + plane.size(), img.values.data());
        char name[32];
        std::snprintf(name, sizeof(name), "kernel_%02zu.png", i + 1);
        save_image(img, (fs::path(dir) / name).string());
    }
}

std::string to_string(StopMode mode) {
    switch (mode) {
        case StopMode::fixed: return "fixed";
        case StopMode::kernel_dic: return "kernel-dic";
        case StopMode::image_dic: return "image-dic";
    }
    return "?";
}

std::string to_string(StopReason reason) {
    return reason == StopReason::max_reached ? "max_reached" : "confidence_converged";
}

std::string to_string(TraceLevel level) {
    switch (level) {
        case TraceLevel::final_only: return "final_only";
        case TraceLevel::kernels: return "kernels";
        case TraceLevel::full: return "full";
    }
    return "?";
}

StopMode stop_mode_from_string(const std::string& s) {
    if (s == "fixed") return StopMode::fixed;
    if (s == "kernel-dic" || s == "kernel_dic") return StopMode::kernel_dic;
    if (s == "image-dic" || s == "image_dic") return StopMode::image_dic;
    throw ValidationError("unknown stop mode: " + s);
}

TraceLevel trace_level_from_string(const std::string& s) {
    if (s == "final_only") return TraceLevel::final_only;
    if (s == "kernels") return TraceLevel::kernels;
    if (s == "full") return TraceLevel::full;
    throw ValidationError("unknown trace level: " + s);
}

}  // namespace idf
