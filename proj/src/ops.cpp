#include "idf/ops.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "idf/blas.hpp"

namespace idf {
namespace {

inline int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

inline double abs_pow(double v, double p) {
    const double a = std::fabs(v);
    if (p == 3.0) return a * a * a;  // hot path
    if (p == 2.0) return a * a;
    if (p == 1.0) return a;
    return std::pow(a, p);
}

// Shared power-normalization core; eta == 0 gives exact unit sums.
KernelField power_norm_impl(const KernelField& raw, double p, double eta) {
    if (raw.kernel_area <= 0 || raw.positions <= 0) {
        throw ValidationError("power_normalize: empty kernel field");
    }
    if (p < 1.0) throw ValidationError("power_normalize: p must be >= 1");
    KernelField out;
    out.kernel_area = raw.kernel_area;
    out.positions = raw.positions;
    out.data = Tensor({1, raw.kernel_area, raw.positions});
    out.normalized = true;

    const int taps = raw.kernel_area;
    const int m = raw.positions;
    const double* src = raw.data.data();
    double* dst = out.data.data();

    std::vector<double> inv(static_cast<size_t>(m), 0.0);
    for (int i = 0; i < taps; ++i) {
        const double* r = src + static_cast<size_t>(i) * m;
        double* o = dst + static_cast<size_t>(i) * m;
        for (int j = 0; j < m; ++j) {
            const double a = abs_pow(r[j], p);
            o[j] = a;
            inv[static_cast<size_t>(j)] += a;
        }
    }
    int degenerate = 0;
    for (int j = 0; j < m; ++j) {
        const double s = inv[static_cast<size_t>(j)];
        if (s == 0.0) {
            ++degenerate;  // column stays all-zero
        } else {
            inv[static_cast<size_t>(j)] = 1.0 / (s + eta);
        }
    }
    for (int i = 0; i < taps; ++i) {
        double* o = dst + static_cast<size_t>(i) * m;
        for (int j = 0; j < m; ++j) o[j] *= inv[static_cast<size_t>(j)];
    }
    out.degenerate_columns = degenerate;
    return out;
}

// Replicate-pad a C×H×W tensor by `pad` on each spatial side.
void build_padded(const Tensor& input, int pad, std::vector<double>& out, int& ph, int& pw) {
    const int c = input.dim(0), h = input.dim(1), w = input.dim(2);
    ph = h + 2 * pad;
    pw = w + 2 * pad;
    out.resize(static_cast<size_t>(c) * ph * pw);
    for (int ch = 0; ch < c; ++ch) {
        const double* src = input.data() + static_cast<size_t>(ch) * h * w;
        double* dstc = out.data() + static_cast<size_t>(ch) * ph * pw;
        for (int r = 0; r < ph; ++r) {
            const double* srow = src + static_cast<size_t>(clampi(r - pad, 0, h - 1)) * w;
            double* drow = dstc + static_cast<size_t>(r) * pw;
            for (int col = 0; col < pad; ++col) drow[col] = srow[0];
            std::copy(srow, srow + w, drow + pad);
            for (int col = 0; col < pad; ++col) drow[pad + w + col] = srow[w - 1];
        }
    }
}

// Rows of the padded image gathered for a 3×3 conv over output rows
// [r0, r0+rows): col is (C_in·9) × (rows·W), each row a contiguous slice of P.
void im2col_rows(const std::vector<double>& padded, int c_in, int ph, int pw, int w,
                 int r0, int rows, std::vector<double>& col) {
    const size_t ncols = static_cast<size_t>(rows) * w;
    col.resize(static_cast<size_t>(c_in) * 9 * ncols);
    for (int ci = 0; ci < c_in; ++ci) {
        const double* pc = padded.data() + static_cast<size_t>(ci) * ph * pw;
        for (int u = 0; u < 3; ++u) {
            for (int v = 0; v < 3; ++v) {
                double* dst = col.data() + (static_cast<size_t>(ci) * 9 + u * 3 + v) * ncols;
                for (int lr = 0; lr < rows; ++lr) {
                    const double* srow = pc + static_cast<size_t>(r0 + lr + u) * pw + v;
                    std::copy(srow, srow + w, dst + static_cast<size_t>(lr) * w);
                }
            }
        }
    }
}

int chunk_rows(int w, int k_cols) {
    // Keep the per-chunk column matrix around ~2 MB so it stays cache resident.
    const int target = static_cast<int>((2 << 20) / (sizeof(double) * static_cast<size_t>(k_cols) * w));
    return std::max(1, target);
}

void validate_conv_args(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    if (input.rank() != 3) throw ValidationError("conv2d: input must be C×H×W");
    if (weight.rank() != 3) throw ValidationError("conv2d: weight must be C_out×C_in×(k·k)");
    if (bias.rank() != 1) throw ValidationError("conv2d: bias must be rank 1");
    const int kk = weight.dim(2);
    if (kk != 1 && kk != 9) throw ValidationError("conv2d: kernel must be 1x1 or 3x3");
    if (weight.dim(1) != input.dim(0)) throw ValidationError("conv2d: channel mismatch");
    if (bias.dim(0) != weight.dim(0)) throw ValidationError("conv2d: bias length mismatch");
}

}  // namespace

double rms(const Tensor& t) {
    double ss = 0.0;
    const double* d = t.data();
    const size_t n = t.size();
    for (size_t i = 0; i < n; ++i) ss += d[i] * d[i];
    return std::sqrt(ss / static_cast<double>(n));
}

Tensor rms_normalize(const Tensor& t, double epsilon) {
    if (t.empty()) throw ValidationError("rms_normalize: empty tensor");
    Tensor out(t.dims());
    const double scale = 1.0 / (rms(t) + epsilon);
    const double* src = t.data();
    double* dst = out.data();
    for (size_t i = 0; i < t.size(); ++i) dst[i] = src[i] * scale;
    return out;
}

KernelField power_normalize(const KernelField& raw, double p, double eta) {
    if (eta <= 0.0) throw ValidationError("power_normalize: eta must be positive");
    return power_norm_impl(raw, p, eta);
}

KernelField power_normalize_unit(const KernelField& raw, double p) {
    return power_norm_impl(raw, p, 0.0);
}

void power_normalize_pair(const Tensor& raw, double p, double eta, KernelField* published,
                          KernelField* applied) {
    if (raw.rank() != 3) throw ValidationError("power_normalize_pair: expected K²×H×W");
    const int taps = raw.dim(0);
    const int m = raw.dim(1) * raw.dim(2);
    auto init = [&](KernelField& f) {
        f.kernel_area = taps;
        f.positions = m;
        f.data = Tensor({1, taps, m});
        f.normalized = true;
    };
    init(*published);
    init(*applied);
    const double* src = raw.data();
    double* pub = published->data.data();
    double* app = applied->data.data();

    std::vector<double> colsum(static_cast<size_t>(m), 0.0);
    for (int i = 0; i < taps; ++i) {
        const double* r = src + static_cast<size_t>(i) * m;
        double* o = pub + static_cast<size_t>(i) * m;
        for (int j = 0; j < m; ++j) {
            const double a = abs_pow(r[j], p);
            o[j] = a;
            colsum[static_cast<size_t>(j)] += a;
        }
    }
    int degenerate = 0;
    std::vector<double> inv_pub(static_cast<size_t>(m)), inv_app(static_cast<size_t>(m));
    for (int j = 0; j < m; ++j) {
        const double s = colsum[static_cast<size_t>(j)];
        if (s == 0.0) {
            ++degenerate;
            inv_pub[static_cast<size_t>(j)] = 0.0;
            inv_app[static_cast<size_t>(j)] = 0.0;
        } else {
            inv_pub[static_cast<size_t>(j)] = 1.0 / (s + eta);
            inv_app[static_cast<size_t>(j)] = 1.0 / s;
        }
    }
    for (int i = 0; i < taps; ++i) {
        double* op = pub + static_cast<size_t>(i) * m;
        double* oa = app + static_cast<size_t>(i) * m;
        for (int j = 0; j < m; ++j) {
            const double a = op[j];
            op[j] = a * inv_pub[static_cast<size_t>(j)];
            oa[j] = a * inv_app[static_cast<size_t>(j)];
        }
    }
    published->degenerate_columns = degenerate;
    applied->degenerate_columns = degenerate;
}

PatchField unfold(const Image& img, int kernel_size, int dilation) {
    if (kernel_size <= 0 || kernel_size % 2 == 0) {
        throw ValidationError("unfold: kernel size must be odd and positive");
    }
    if (dilation != 1 && dilation != 2) {
        throw ValidationError("unfold: dilation must be 1 or 2");
    }
    const int c = img.channels, h = img.height, w = img.width;
    const int k = kernel_size, half = k / 2;
    const int m = h * w;

    PatchField out;
    out.channels = c;
    out.kernel_area = k * k;
    out.positions = m;
    out.dilation = dilation;
    out.source_height = h;
    out.source_width = w;
    out.data = Tensor({c, k * k, m});

    for (int ch = 0; ch < c; ++ch) {
        const double* src = img.values.data() + static_cast<size_t>(ch) * m;
        for (int du = -half; du <= half; ++du) {
            for (int dv = -half; dv <= half; ++dv) {
                const int tap = (du + half) * k + (dv + half);
                double* dst = out.data.data() + (static_cast<size_t>(ch) * (k * k) + tap) * m;
                const int off_c = dv * dilation;
                for (int r = 0; r < h; ++r) {
                    const double* srow =
                        src + static_cast<size_t>(clampi(r + du * dilation, 0, h - 1)) * w;
                    double* drow = dst + static_cast<size_t>(r) * w;
                    // clamped-left / contiguous middle / clamped-right
                    const int lo = clampi(-off_c, 0, w);
                    const int hi = clampi(w - off_c, 0, w);
                    for (int col = 0; col < lo; ++col) drow[col] = srow[0];
                    for (int col = lo; col < hi; ++col) drow[col] = srow[col + off_c];
                    for (int col = hi; col < w; ++col) drow[col] = srow[w - 1];
                }
            }
        }
    }
    return out;
}

Image apply_kernels(const PatchField& patches, const KernelField& kernels) {
    if (patches.kernel_area != kernels.kernel_area || patches.positions != kernels.positions) {
        throw ValidationError("apply_kernels: patch/kernel field dimensions disagree");
    }
    const int c = patches.channels;
    const int taps = patches.kernel_area;
    const int m = patches.positions;
    Image out(c, patches.source_height, patches.source_width);
    for (int ch = 0; ch < c; ++ch) {
        double* dst = out.values.data() + static_cast<size_t>(ch) * m;
        for (int tap = 0; tap < taps; ++tap) {
            const double* kp = kernels.data.data() + static_cast<size_t>(tap) * m;
            const double* pp = patches.data.data() + (static_cast<size_t>(ch) * taps + tap) * m;
            for (int j = 0; j < m; ++j) dst[j] += kp[j] * pp[j];
        }
    }
    return out;
}

void unfold_adjoint(const PatchField& dpatches, Image& dimg_accum) {
    const int c = dpatches.channels;
    const int h = dpatches.source_height, w = dpatches.source_width;
    const int k2 = dpatches.kernel_area;
    const int k = static_cast<int>(std::lround(std::sqrt(static_cast<double>(k2))));
    const int half = k / 2;
    const int dilation = dpatches.dilation;
    if (dimg_accum.channels != c || dimg_accum.height != h || dimg_accum.width != w) {
        throw ValidationError("unfold_adjoint: image shape mismatch");
    }
    for (int ch = 0; ch < c; ++ch) {
        double* dst = dimg_accum.values.data() + static_cast<size_t>(ch) * h * w;
        for (int du = -half; du <= half; ++du) {
            for (int dv = -half; dv <= half; ++dv) {
                const int tap = (du + half) * k + (dv + half);
                const double* src =
                    dpatches.data.data() + (static_cast<size_t>(ch) * k2 + tap) * (h * w);
                for (int r = 0; r < h; ++r) {
                    double* drow =
                        dst + static_cast<size_t>(clampi(r + du * dilation, 0, h - 1)) * w;
                    const double* srow = src + static_cast<size_t>(r) * w;
                    for (int col = 0; col < w; ++col) {
                        drow[clampi(col + dv * dilation, 0, w - 1)] += srow[col];
                    }
                }
            }
        }
    }
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    validate_conv_args(input, weight, bias);
    const int c_in = input.dim(0), h = input.dim(1), w = input.dim(2);
    const int c_out = weight.dim(0);
    const int kk = weight.dim(2);
    const int hw = h * w;
    Tensor out({c_out, h, w});

    if (kk == 1) {
        blas::dgemm(false, false, c_out, hw, c_in, 1.0, weight.data(), c_in, input.data(), hw,
                    0.0, out.data(), hw);
    } else {
        thread_local std::vector<double> padded;
        int ph = 0, pw = 0;
        build_padded(input, 1, padded, ph, pw);
        const int kcols = c_in * 9;
        const int rchunk = chunk_rows(w, kcols);
        thread_local std::vector<double> col;
        for (int r0 = 0; r0 < h; r0 += rchunk) {
            const int rows = std::min(rchunk, h - r0);
            im2col_rows(padded, c_in, ph, pw, w, r0, rows, col);
            blas::dgemm(false, false, c_out, rows * w, kcols, 1.0, weight.data(), kcols,
                        col.data(), rows * w, 0.0, out.data() + static_cast<size_t>(r0) * w,
                        hw);
        }
    }
    for (int co = 0; co < c_out; ++co) {
        const double b = bias.at(co);
        double* dst = out.data() + static_cast<size_t>(co) * hw;
        for (int j = 0; j < hw; ++j) dst[j] += b;
    }
    return out;
}

void conv2d_backward(const Tensor& input, const Tensor& weight, const Tensor& d_out,
                     Tensor* d_input, Tensor& d_weight, Tensor& d_bias) {
    validate_conv_args(input, weight, d_bias);
    if (!d_weight.same_shape(weight)) throw ValidationError("conv2d_backward: d_weight shape");
    const int c_in = input.dim(0), h = input.dim(1), w = input.dim(2);
    const int c_out = weight.dim(0);
    const int kk = weight.dim(2);
    const int hw = h * w;
    if (d_out.dim(0) != c_out || d_out.dim(1) != h || d_out.dim(2) != w) {
        throw ValidationError("conv2d_backward: d_out shape mismatch");
    }

    for (int co = 0; co < c_out; ++co) {
        const double* g = d_out.data() + static_cast<size_t>(co) * hw;
        double s = 0.0;
        for (int j = 0; j < hw; ++j) s += g[j];
        d_bias.at(co) += s;
    }

    if (kk == 1) {
        // dW += g · xᵀ ; dx += Wᵀ · g
        blas::dgemm(false, true, c_out, c_in, hw, 1.0, d_out.data(), hw, input.data(), hw, 1.0,
                    d_weight.data(), c_in);
        if (d_input) {
            blas::dgemm(true, false, c_in, hw, c_out, 1.0, weight.data(), c_in, d_out.data(),
                        hw, 1.0, d_input->data(), hw);
        }
        return;
    }

    thread_local std::vector<double> padded;
    int ph = 0, pw = 0;
    build_padded(input, 1, padded, ph, pw);
    const int kcols = c_in * 9;
    const int rchunk = chunk_rows(w, kcols);
    thread_local std::vector<double> col, dcol;
    thread_local std::vector<double> dpadded;
    if (d_input) dpadded.assign(static_cast<size_t>(c_in) * ph * pw, 0.0);

    for (int r0 = 0; r0 < h; r0 += rchunk) {
        const int rows = std::min(rchunk, h - r0);
        const int ncols = rows * w;
        im2col_rows(padded, c_in, ph, pw, w, r0, rows, col);
        // dW += g_chunk · colᵀ
        blas::dgemm(false, true, c_out, kcols, ncols, 1.0,
                    d_out.data() + static_cast<size_t>(r0) * w, hw, col.data(), ncols, 1.0,
                    d_weight.data(), kcols);
        if (!d_input) continue;
        // dcol = Wᵀ · g_chunk, then scatter back into the padded gradient
        dcol.resize(static_cast<size_t>(kcols) * ncols);
        blas::dgemm(true, false, kcols, ncols, c_out, 1.0, weight.data(), kcols,
                    d_out.data() + static_cast<size_t>(r0) * w, hw, 0.0, dcol.data(), ncols);
        for (int ci = 0; ci < c_in; ++ci) {
            double* pc = dpadded.data() + static_cast<size_t>(ci) * ph * pw;
            for (int u = 0; u < 3; ++u) {
                for (int v = 0; v < 3; ++v) {
                    const double* src =
                        dcol.data() + (static_cast<size_t>(ci) * 9 + u * 3 + v) * ncols;
                    for (int lr = 0; lr < rows; ++lr) {
                        double* drow = pc + static_cast<size_t>(r0 + lr + u) * pw + v;
                        const double* srow = src + static_cast<size_t>(lr) * w;
                        for (int cidx = 0; cidx < w; ++cidx) drow[cidx] += srow[cidx];
                    }
                }
            }
        }
    }
    if (d_input) {
        // Fold replicate-padding contributions onto the clamped edge pixels.
        for (int ci = 0; ci < c_in; ++ci) {
            const double* pc = dpadded.data() + static_cast<size_t>(ci) * ph * pw;
            double* dst = d_input->data() + static_cast<size_t>(ci) * hw;
            for (int pr = 0; pr < ph; ++pr) {
                double* drow = dst + static_cast<size_t>(clampi(pr - 1, 0, h - 1)) * w;
                const double* srow = pc + static_cast<size_t>(pr) * pw;
                for (int pcx = 0; pcx < pw; ++pcx) {
                    drow[clampi(pcx - 1, 0, w - 1)] += srow[pcx];
                }
            }
        }
    }
}

ChannelStats channel_stats(const Tensor& t) {
    if (t.rank() != 3) throw ValidationError("channel_stats: expected C×H×W tensor");
    const int c = t.dim(0);
    const size_t m = static_cast<size_t>(t.dim(1)) * t.dim(2);
    ChannelStats stats;
    stats.mean.resize(static_cast<size_t>(c));
    stats.stddev.resize(static_cast<size_t>(c));
    for (int ch = 0; ch < c; ++ch) {
        const double* d = t.data() + static_cast<size_t>(ch) * m;
        double sum = 0.0;
        for (size_t i = 0; i < m; ++i) sum += d[i];
        const double mean = sum / static_cast<double>(m);
        double var = 0.0;
        for (size_t i = 0; i < m; ++i) {
            const double dv = d[i] - mean;
            var += dv * dv;
        }
        stats.mean[static_cast<size_t>(ch)] = mean;
        stats.stddev[static_cast<size_t>(ch)] = std::sqrt(var / static_cast<double>(m));
    }
    return stats;
}

Image clamp01_image(const Image& img) {
    Image out = img;
    double* d = out.values.data();
    for (size_t i = 0; i < out.values.size(); ++i) d[i] = clamp01(d[i]);
    return out;
}

}  // namespace idf
