// The single shared denoising block: feature extraction (FEM), global
// residual statistics (GSM), local correlation (LCM) and kernel prediction
// (KPM), composed into one refinement step that predicts per-pixel
// sum-to-one kernels and applies them.
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "idf/tensor.hpp"

namespace idf {

struct ModelConfig {
    int channels = 3;
    int hidden_width = 56;
    int kernel_size = 3;
    double power_p = 3.0;
    double epsilon = 1e-4;  // RMS normalization stabilizer
    double eta = 1e-4;      // power normalization stabilizer
    int lcm_window = 7;

    int kernel_area() const { return kernel_size * kernel_size; }
    void validate() const;
};

// One weight set, reused by every iteration.
struct ModelWeights {
    ModelConfig config;
    Tensor fem1_w, fem1_b;  // C_h×C×9, C_h
    Tensor fem2_w, fem2_b;  // C_h×C_h×9, C_h
    Tensor gsm1_w, gsm1_b;  // C_h×2C×1, C_h
    Tensor gsm2_w, gsm2_b;  // C_h×C_h×1, C_h
    Tensor kpm_w, kpm_b;    // K²×(C_h+K²)×9, K²

    static ModelWeights init(const ModelConfig& cfg, uint64_t seed);

    // Fixed on-disk tensor naming.
    std::vector<std::pair<std::string, Tensor*>> named_tensors();
    std::vector<std::pair<std::string, const Tensor*>> named_tensors() const;
};

size_t param_count(const ModelConfig& cfg);

// Everything the backward pass needs to replay one refinement step.
struct DidActivations {
    int dilation = 1;
    bool has_residual = false;
    double rms_fem = 0.0;
    Tensor z1, z2;      // FEM pre-activations
    Tensor stats;       // {2C}: per-channel residual mean then std
    double rms_gsm = 0.0;
    Tensor zg1, zg2;    // {C_h}
    Tensor gate;        // {C_h}, sigmoid output
    Tensor f_lc;        // K²×H×W correlation planes (constant in backward)
    double rms_kpm = 0.0;
    Tensor raw;         // K²×H×W pre-normalization kernel logits
    Tensor pre_clamp;   // C×H×W estimate before clamp01
    int degenerate_columns = 0;
};

Tensor fem_forward(const Image& est, const ModelWeights& w);

// Gate vector from per-channel residual statistics; residual == nullptr means
// the first iteration (all-zero residual).
Tensor gsm_forward(const Image* residual, const ModelWeights& w);

// Pearson correlation between each (dilated) kernel tap and the patch center,
// estimated over an L×L window per channel and averaged over channels.
// Entries in [−1,1]; the center-tap plane is identically 1; windows with
// variance below tau contribute 0.
Tensor lcm_forward(const Image& est, int kernel_size, int dilation, int window = 7,
                   double tau = 1e-8);

// Kernel logits: conv3x3(rms_normalize(concat(f_fe ⊙ gate, f_lc))).
Tensor kpm_raw(const Tensor& f_fe, const Tensor& gate, const Tensor& f_lc,
               const ModelWeights& w);

// kpm_raw followed by power normalization, flattened to 1×K²×(H·W).
KernelField kpm_forward(const Tensor& f_fe, const Tensor& gate, const Tensor& f_lc,
                        const ModelWeights& w);

struct DidResult {
    Image estimate;       // clamp01-ed refined estimate
    KernelField kernels;  // power-normalized field (for confidence & traces)
};

// One refinement step. est_prev2 == nullptr means first iteration. The
// filtering itself uses the exact unit-sum kernel weighting so constants are
// true fixed points; `kernels` carries the published power-normalized values.
DidResult did_forward(const Image& est_prev, const Image* est_prev2, const ModelWeights& w,
                      int dilation, DidActivations* acts = nullptr);

// Same step with the correlation planes supplied by the caller instead of
// being recomputed from est_prev. Training treats those planes as constants,
// so the finite-difference gradient oracle replays the loop through this
// variant with the nominal planes pinned.
DidResult did_forward_with_correlation(const Image& est_prev, const Image* est_prev2,
                                       const ModelWeights& w, int dilation, const Tensor& f_lc,
                                       DidActivations* acts = nullptr);

}  // namespace idf
