// Numeric primitives: RMS / power normalization, unfold, per-pixel kernel
// application, same-size replicate-padded convolution, channel statistics.
// All pure, f64, deterministic.
#pragma once

#include "idf/tensor.hpp"

namespace idf {

// out[i] = t[i] / (sqrt(mean(t²)) + epsilon), mean over all elements.
Tensor rms_normalize(const Tensor& t, double epsilon = 1e-4);
// Root mean square over all elements (helper; rms_normalize divides by it + eps).
double rms(const Tensor& t);

// Power normalization over each K²-column: out[i,j] = |raw[i,j]|^p / (S_j + eta),
// S_j = Σ_k |raw[k,j]|^p. All-zero columns stay zero and are counted in
// degenerate_columns.
KernelField power_normalize(const KernelField& raw, double p = 3.0, double eta = 1e-4);

// Same weighting with exact unit column sums: out[i,j] = |raw[i,j]|^p / S_j.
// This is the filtering-path variant; columns sum to 1 bit-tight so constant
// inputs are exact fixed points of the kernel application.
KernelField power_normalize_unit(const KernelField& raw, double p = 3.0);

// Both normalizations of a K²×H×W logit tensor in one pass over the data
// (the layout already matches the 1×K²×(H·W) field).
void power_normalize_pair(const Tensor& raw, double p, double eta, KernelField* published,
                          KernelField* applied);

// Extract every K×K (dilated) neighborhood with replicate padding into
// C×K²×(H·W). Tap order is row-major over (du, dv), du outer; the center tap
// has index (K²−1)/2.
PatchField unfold(const Image& img, int kernel_size, int dilation);

// out[ch, j] = Σ_i kernels[0,i,j] · patches[ch,i,j], reshaped to C×H×W.
Image apply_kernels(const PatchField& patches, const KernelField& kernels);

// Adjoint of unfold: scatter-add patch gradients back to image positions
// (border taps accumulate onto the clamped edge pixels).
void unfold_adjoint(const PatchField& dpatches, Image& dimg_accum);

// Cross-correlation with replicate padding, output spatial size == input.
// input C_in×H×W, weight C_out×C_in×k×k (k ∈ {1,3}), bias C_out.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias);

// Adjoints of conv2d. d_input/d_weight/d_bias are accumulated into (+=).
void conv2d_backward(const Tensor& input, const Tensor& weight, const Tensor& d_out,
                     Tensor* d_input, Tensor& d_weight, Tensor& d_bias);

// Per-channel mean and population std over the spatial dims of a C×H×W tensor.
ChannelStats channel_stats(const Tensor& t);

Image clamp01_image(const Image& img);

}  // namespace idf
