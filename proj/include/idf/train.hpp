// Supervised training of the shared block: L1 loss on the final iterate,
// manual reverse-mode differentiation through the unrolled loop (the local
// correlation planes are treated as constants), AdamW updates, patch
// sampling with flip augmentation, and finite-difference gradient checks.
#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "idf/model.hpp"
#include "idf/noise.hpp"
#include "idf/tensor.hpp"

namespace idf {

// Gradient of clamp01 during training: `clamp` passes gradient only where the
// pre-clamp value lies in [0,1] (matches finite differences); `identity`
// passes it everywhere.
enum class ClampAdjoint { clamp, identity };

struct AdamWConfig {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

struct TrainConfig {
    int steps = 2000;       // desk scale; full-scale runs use 50000
    int batch_size = 8;
    int patch_size = 48;    // desk scale; full-scale runs use 128
    int unroll_iterations = 4;  // desk scale; full-scale runs use 10
    AdamWConfig adamw;
    NoiseSpec noise;        // on-the-fly corruption, default Gaussian σ=15
    uint64_t seed = 0;
    ClampAdjoint clamp_adjoint = ClampAdjoint::clamp;
    int checkpoint_every = 0;       // 0 = no checkpoints
    std::string checkpoint_dir;

    void validate(const ModelConfig& model) const;
};

// Mean absolute difference over all elements.
double l1_loss(const Image& pred, const Image& target);

struct SampleTape {
    Image noisy, clean;
    std::vector<Image> estimates;       // est_0 .. est_T
    std::vector<DidActivations> steps;  // T entries
    double loss = 0.0;
};

struct BatchTape {
    std::vector<SampleTape> samples;
    double loss = 0.0;  // mean over samples
    int unroll_iterations = 0;
    ClampAdjoint clamp_adjoint = ClampAdjoint::clamp;
    bool consumed = false;
};

struct Gradients {
    Tensor fem1_w, fem1_b, fem2_w, fem2_b;
    Tensor gsm1_w, gsm1_b, gsm2_w, gsm2_b;
    Tensor kpm_w, kpm_b;

    static Gradients zeros_like(const ModelWeights& w);
    std::vector<std::pair<std::string, Tensor*>> named_tensors();
    void accumulate(const Gradients& other, double scale);
    void scale(double factor);
};

// Unrolled fixed-T forward over (noisy, clean) pairs; no early stopping
// during training. Loss is the batch mean of per-sample L1 on the final
// iterate.
BatchTape forward_with_tape(const std::vector<std::pair<Image, Image>>& batch,
                            const ModelWeights& w, int unroll_iterations,
                            ClampAdjoint clamp_adjoint = ClampAdjoint::clamp);

// Exact reverse-mode gradients of the recorded loss. The tape is consumed;
// calling twice is an error.
Gradients backward(BatchTape& tape, const ModelWeights& w);

struct AdamWState {
    std::vector<Tensor> first_moment;
    std::vector<Tensor> second_moment;
    long step = 0;

    static AdamWState zeros_like(const ModelWeights& w);
};

void adamw_step(ModelWeights& w, const Gradients& g, AdamWState& state,
                const AdamWConfig& cfg);

struct TrainLogEntry {
    int step = 0;
    double loss = 0.0;
    double wall_ms = 0.0;
};

struct TrainResult {
    ModelWeights weights;
    std::vector<TrainLogEntry> log;
};

TrainResult train(const std::string& dataset_dir, const ModelConfig& model_cfg,
                  const TrainConfig& cfg);

struct GradCheckReport {
    struct TensorEntry {
        std::string name;
        double max_rel_err = 0.0;
        int checked = 0;
        int kink_excluded = 0;
    };
    std::vector<TensorEntry> tensors;
    double max_rel_err = 0.0;
    int total_params = 0;
    int checked_params = 0;
    int kink_excluded = 0;
};

// Central finite differences against the analytic gradients. Parameters whose
// ±step perturbations land on different activation regions (ReLU sign, |·|
// sign, clamp saturation, L1 sign) are excluded and counted.
GradCheckReport grad_check(const ModelWeights& w, const Image& noisy, const Image& clean,
                           int unroll_iterations, ClampAdjoint clamp_adjoint = ClampAdjoint::clamp,
                           double fd_step = 1e-5);

std::string to_string(ClampAdjoint mode);
ClampAdjoint clamp_adjoint_from_string(const std::string& s);

}  // namespace idf
