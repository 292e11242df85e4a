// Outer refinement loop: alternating-dilation iteration of the shared block
// with fixed-count or confidence-based early stopping.
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "idf/model.hpp"
#include "idf/tensor.hpp"

namespace idf {

enum class StopMode { fixed, kernel_dic, image_dic };
enum class TraceLevel { final_only, kernels, full };

struct EngineConfig {
    int max_iterations = 10;
    StopMode stop_mode = StopMode::fixed;
    double kappa = 0.015;
    int kernel_size = 3;
    double power_p = 3.0;
    TraceLevel trace_level = TraceLevel::final_only;
    // Off by default: replace the signed spatial sum of center-weight
    // differences with a mean of absolute differences (the literal criterion
    // permits sign cancellation).
    bool confidence_mean_abs = false;

    void validate() const;
};

enum class StopReason { max_reached, confidence_converged };

struct IterationRecord {
    int t = 0;
    int dilation = 1;
    // Confidence / image score computed against the previous iteration;
    // absent for t == 1.
    std::optional<double> score;
    int degenerate_kernels = 0;
};

struct DenoiseResult {
    Image estimate;
    int iterations_used = 0;
    StopReason stop_reason = StopReason::max_reached;
    std::vector<double> confidence_history;  // one entry per t >= 2
    int degenerate_kernel_count = 0;
    std::vector<IterationRecord> records;
    // trace_level >= kernels: center-tap weight plane per iteration (H×W).
    std::vector<Tensor> kernel_centers;
    // trace_level == full: estimate after each iteration.
    std::vector<Image> estimates;
};

// Eq-form confidence: |Σ_j (center_t[j] − center_prev[j])| / (H·W).
double confidence_score(const KernelField& current, const KernelField& previous,
                        bool mean_abs = false);

DenoiseResult denoise(const Image& img, const ModelWeights& weights, const EngineConfig& cfg);

struct IterationStats {
    double mean_iterations = 0.0;
    int min_iterations = 0;
    int max_iterations = 0;
    int stopped_early = 0;
    int reached_max = 0;
};

IterationStats iteration_stats(const std::vector<DenoiseResult>& results);

// trace_level==full dump: per-iteration PNGs plus a JSON-lines file with
// {t, dilation, confidence, degenerate_kernels}.
void write_trace(const DenoiseResult& result, const std::string& dir);

std::string to_string(StopMode mode);
std::string to_string(StopReason reason);
std::string to_string(TraceLevel level);
StopMode stop_mode_from_string(const std::string& s);
TraceLevel trace_level_from_string(const std::string& s);

}  // namespace idf
