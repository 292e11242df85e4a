#include "idf/model.hpp"

#include <cmath>
#include <vector>

#include "idf/noise.hpp"
#include "idf/ops.hpp"

namespace idf {
namespace {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Tensor relu(const Tensor& t) {
    Tensor out = t;
    double* d = out.data();
    for (size_t i = 0; i < out.size(); ++i) {
        if (d[i] < 0.0) d[i] = 0.0;
    }
    return out;
}

void relu_inplace(Tensor& t) {
    double* d = t.data();
    for (size_t i = 0; i < t.size(); ++i) {
        if (d[i] < 0.0) d[i] = 0.0;
    }
}

Tensor kaiming_uniform(std::vector<int> dims, int fan_in, Rng& rng) {
    Tensor t(std::move(dims));
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    double* d = t.data();
    for (size_t i = 0; i < t.size(); ++i) d[i] = rng.uniform(-bound, bound);
    return t;
}

// Separable L×L box sum with direct (non-running) summation so the result
// stays within a few ulp of per-window summation. src is ph×pw; out is
// oh×ow with window top-left at (r0 + i, c0 + j).
void box_sum(const std::vector<double>& src, int pw, int window, int r0, int c0, int oh,
             int ow, std::vector<double>& scratch, std::vector<double>& out) {
    const int rows = oh + window - 1;
    scratch.resize(static_cast<size_t>(rows) * ow);
    for (int i = 0; i < rows; ++i) {
        const double* srow = src.data() + static_cast<size_t>(r0 + i) * pw + c0;
        double* drow = scratch.data() + static_cast<size_t>(i) * ow;
        for (int j = 0; j < ow; ++j) {
            double s = 0.0;
            for (int b = 0; b < window; ++b) s += srow[j + b];
            drow[j] = s;
        }
    }
    out.resize(static_cast<size_t>(oh) * ow);
    for (int i = 0; i < oh; ++i) {
        double* drow = out.data() + static_cast<size_t>(i) * ow;
        for (int j = 0; j < ow; ++j) {
            double s = 0.0;
            for (int a = 0; a < window; ++a) s += scratch[static_cast<size_t>(i + a) * ow + j];
            drow[j] = s;
        }
    }
}

}  // namespace

void ModelConfig::validate() const {
    if (channels <= 0) throw ValidationError("model: channels must be positive");
    if (hidden_width <= 0) throw ValidationError("model: hidden width must be positive");
    if (kernel_size <= 0 || kernel_size % 2 == 0) {
        throw ValidationError("model: kernel size must be odd and positive");
    }
    if (power_p < 1.0) throw ValidationError("model: power p must be >= 1");
    if (epsilon <= 0.0 || eta <= 0.0) throw ValidationError("model: epsilon/eta must be positive");
    if (lcm_window <= 0 || lcm_window % 2 == 0) {
        throw ValidationError("model: correlation window must be odd and positive");
    }
}

ModelWeights ModelWeights::init(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    const int c = cfg.channels, ch = cfg.hidden_width, k2 = cfg.kernel_area();
    ModelWeights w;
    w.config = cfg;
    Rng rng(seed);
    w.fem1_w = kaiming_uniform({ch, c, 9}, c * 9, rng);
    w.fem1_b = Tensor({ch});
    w.fem2_w = kaiming_uniform({ch, ch, 9}, ch * 9, rng);
    w.fem2_b = Tensor({ch});
    w.gsm1_w = kaiming_uniform({ch, 2 * c, 1}, 2 * c, rng);
    w.gsm1_b = Tensor({ch});
    w.gsm2_w = kaiming_uniform({ch, ch, 1}, ch, rng);
    w.gsm2_b = Tensor({ch});
    w.kpm_w = kaiming_uniform({k2, ch + k2, 9}, (ch + k2) * 9, rng);
    w.kpm_b = Tensor({k2});
    return w;
}

std::vector<std::pair<std::string, Tensor*>> ModelWeights::named_tensors() {
    return {{"fem.conv1.w", &fem1_w}, {"fem.conv1.b", &fem1_b}, {"fem.conv2.w", &fem2_w},
            {"fem.conv2.b", &fem2_b}, {"gsm.conv1.w", &gsm1_w}, {"gsm.conv1.b", &gsm1_b},
            {"gsm.conv2.w", &gsm2_w}, {"gsm.conv2.b", &gsm2_b}, {"kpm.conv.w", &kpm_w},
            {"kpm.conv.b", &kpm_b}};
}

std::vector<std::pair<std::string, const Tensor*>> ModelWeights::named_tensors() const {
    auto mutable_view = const_cast<ModelWeights*>(this)->named_tensors();
    std::vector<std::pair<std::string, const Tensor*>> out;
    out.reserve(mutable_view.size());
    for (auto& [name, t] : mutable_view) out.emplace_back(name, t);
    return out;
}

size_t param_count(const ModelConfig& cfg) {
    const size_t c = static_cast<size_t>(cfg.channels);
    const size_t ch = static_cast<size_t>(cfg.hidden_width);
    const size_t k2 = static_cast<size_t>(cfg.kernel_area());
    return ch * c * 9 + ch          // fem conv1
         + ch * ch * 9 + ch         // fem conv2
         + ch * 2 * c + ch          // gsm conv1
         + ch * ch + ch             // gsm conv2
         + k2 * (ch + k2) * 9 + k2; // kpm conv
}

Tensor fem_forward(const Image& est, const ModelWeights& w) {
    const Tensor x = rms_normalize(est.values, w.config.epsilon);
    const Tensor a1 = relu(conv2d(x, w.fem1_w, w.fem1_b));
    return relu(conv2d(a1, w.fem2_w, w.fem2_b));
}

Tensor gsm_forward(const Image* residual, const ModelWeights& w) {
    const int c = w.config.channels;
    Tensor stats({2 * c, 1, 1});
    if (residual) {
        if (residual->channels != c) throw ValidationError("gsm: residual channel mismatch");
        const ChannelStats cs = channel_stats(residual->values);
        for (int i = 0; i < c; ++i) {
            stats.at(i, 0, 0) = cs.mean[static_cast<size_t>(i)];
            stats.at(c + i, 0, 0) = cs.stddev[static_cast<size_t>(i)];
        }
    }
    const Tensor sn = rms_normalize(stats, w.config.epsilon);
    const Tensor a1 = relu(conv2d(sn, w.gsm1_w, w.gsm1_b));
    const Tensor z2 = conv2d(a1, w.gsm2_w, w.gsm2_b);
    Tensor gate({w.config.hidden_width});
    for (int i = 0; i < w.config.hidden_width; ++i) gate.at(i) = sigmoid(z2.at(i, 0, 0));
    return gate;
}

Tensor lcm_forward(const Image& est, int kernel_size, int dilation, int window, double tau) {
    if (kernel_size % 2 == 0 || window % 2 == 0) {
        throw ValidationError("lcm: kernel size and window must be odd");
    }
    if (dilation != 1 && dilation != 2) throw ValidationError("lcm: dilation must be 1 or 2");
    const int c = est.channels, h = est.height, w = est.width;
    const int k = kernel_size, k2 = k * k, half = k / 2;
    const int hw = (window - 1) / 2;
    const int maxoff = half * dilation;
    const int pad = hw + maxoff;
    const int ph = h + 2 * pad, pw = w + 2 * pad;
    const double n = static_cast<double>(window) * window;

    Tensor out({k2, h, w});
    // Center tap is 1 by definition.
    {
        const int center = (k2 - 1) / 2;
        double* plane = out.data() + static_cast<size_t>(center) * h * w;
        for (int i = 0; i < h * w; ++i) plane[i] = 1.0;
    }

    thread_local std::vector<double> padded, padded_sq, prod;
    thread_local std::vector<double> scratch, s1, s2, sx;
    padded.resize(static_cast<size_t>(ph) * pw);
    padded_sq.resize(padded.size());
    prod.resize(static_cast<size_t>(h + 2 * hw) * (w + 2 * hw));
    auto cl = [](int v, int hi) { return v < 0 ? 0 : (v > hi ? hi : v); };

    for (int ch = 0; ch < c; ++ch) {
        const double* src = est.values.data() + static_cast<size_t>(ch) * h * w;
        for (int r = 0; r < ph; ++r) {
            const double* srow = src + static_cast<size_t>(cl(r - pad, h - 1)) * w;
            double* drow = padded.data() + static_cast<size_t>(r) * pw;
            for (int col = 0; col < pw; ++col) drow[col] = srow[cl(col - pad, w - 1)];
        }
        for (size_t i = 0; i < padded.size(); ++i) padded_sq[i] = padded[i] * padded[i];

        // Window sums on the extended grid so shifted lookups stay in range;
        // entry (i, j) is the window centered at image pixel (i−maxoff, j−maxoff).
        const int eh = h + 2 * maxoff, ew = w + 2 * maxoff;
        box_sum(padded, pw, window, 0, 0, eh, ew, scratch, s1);
        box_sum(padded_sq, pw, window, 0, 0, eh, ew, scratch, s2);

        const double sum_n = n;
        for (int du = -half; du <= half; ++du) {
            for (int dv = -half; dv <= half; ++dv) {
                if (du == 0 && dv == 0) continue;
                const int tap = (du + half) * k + (dv + half);
                const int odr = du * dilation, odc = dv * dilation;
                // Product of the window field with its shifted copy.
                const int prh = h + 2 * hw, prw = w + 2 * hw;
                for (int i = 0; i < prh; ++i) {
                    const double* arow = padded.data() + static_cast<size_t>(maxoff + i) * pw + maxoff;
                    const double* brow =
                        padded.data() + static_cast<size_t>(maxoff + i + odr) * pw + maxoff + odc;
                    double* drow = prod.data() + static_cast<size_t>(i) * prw;
                    for (int j = 0; j < prw; ++j) drow[j] = arow[j] * brow[j];
                }
                box_sum(prod, prw, window, 0, 0, h, w, scratch, sx);

                double* plane = out.data() + static_cast<size_t>(tap) * h * w;
                for (int r = 0; r < h; ++r) {
                    for (int col = 0; col < w; ++col) {
                        const size_t ci = static_cast<size_t>(maxoff + r) * ew + (maxoff + col);
                        const size_t oi = static_cast<size_t>(maxoff + r + odr) * ew + (maxoff + col + odc);
                        const double sc = s1[ci], so = s1[oi];
                        const double var_c = std::max(0.0, (s2[ci] - sc * sc / sum_n) / sum_n);
                        const double var_o = std::max(0.0, (s2[oi] - so * so / sum_n) / sum_n);
                        double r_val = 0.0;
                        if (var_c >= tau && var_o >= tau) {
                            const double cov =
                                (sx[static_cast<size_t>(r) * w + col] - sc * so / sum_n) / sum_n;
                            r_val = cov / std::sqrt(var_c * var_o);
                            if (r_val > 1.0) r_val = 1.0;
                            if (r_val < -1.0) r_val = -1.0;
                        }
                        plane[static_cast<size_t>(r) * w + col] += r_val;
                    }
                }
            }
        }
    }
    // Average the off-center taps over channels.
    const double inv_c = 1.0 / static_cast<double>(c);
    const int center = (k2 - 1) / 2;
    for (int tap = 0; tap < k2; ++tap) {
        if (tap == center) continue;
        double* plane = out.data() + static_cast<size_t>(tap) * h * w;
        for (int i = 0; i < h * w; ++i) plane[i] *= inv_c;
    }
    return out;
}

Tensor kpm_raw(const Tensor& f_fe, const Tensor& gate, const Tensor& f_lc,
               const ModelWeights& w) {
    const int ch = w.config.hidden_width;
    const int k2 = w.config.kernel_area();
    if (f_fe.dim(0) != ch || gate.dim(0) != ch || f_lc.dim(0) != k2 ||
        f_fe.dim(1) != f_lc.dim(1) || f_fe.dim(2) != f_lc.dim(2)) {
        throw ValidationError("kpm: feature dimensions disagree");
    }
    const int h = f_fe.dim(1), wid = f_fe.dim(2);
    const size_t hw = static_cast<size_t>(h) * wid;
    Tensor concat({ch + k2, h, wid});
    for (int i = 0; i < ch; ++i) {
        const double g = gate.at(i);
        const double* src = f_fe.data() + static_cast<size_t>(i) * hw;
        double* dst = concat.data() + static_cast<size_t>(i) * hw;
        for (size_t j = 0; j < hw; ++j) dst[j] = src[j] * g;
    }
    std::copy(f_lc.data(), f_lc.data() + static_cast<size_t>(k2) * hw,
              concat.data() + static_cast<size_t>(ch) * hw);
    const Tensor cn = rms_normalize(concat, w.config.epsilon);
    return conv2d(cn, w.kpm_w, w.kpm_b);
}

KernelField kpm_forward(const Tensor& f_fe, const Tensor& gate, const Tensor& f_lc,
                        const ModelWeights& w) {
    const Tensor raw = kpm_raw(f_fe, gate, f_lc, w);
    KernelField rawf;
    rawf.kernel_area = raw.dim(0);
    rawf.positions = raw.dim(1) * raw.dim(2);
    rawf.data = Tensor({1, rawf.kernel_area, rawf.positions});
    std::copy(raw.data(), raw.data() + raw.size(), rawf.data.data());
    return power_normalize(rawf, w.config.power_p, w.config.eta);
}

DidResult did_forward(const Image& est_prev, const Image* est_prev2, const ModelWeights& w,
                      int dilation, DidActivations* acts) {
    const Tensor f_lc =
        lcm_forward(est_prev, w.config.kernel_size, dilation, w.config.lcm_window);
    return did_forward_with_correlation(est_prev, est_prev2, w, dilation, f_lc, acts);
}

DidResult did_forward_with_correlation(const Image& est_prev, const Image* est_prev2,
                                       const ModelWeights& w, int dilation, const Tensor& f_lc,
                                       DidActivations* acts) {
    const ModelConfig& cfg = w.config;
    if (est_prev.channels != cfg.channels) {
        throw ValidationError("did_forward: channel count mismatch with model");
    }
    if (est_prev2 && !est_prev2->same_shape(est_prev)) {
        throw ValidationError("did_forward: estimate history shape mismatch");
    }
    const int h = est_prev.height, wid = est_prev.width;
    const int k2 = cfg.kernel_area();
    if (f_lc.rank() != 3 || f_lc.dim(0) != k2 || f_lc.dim(1) != h || f_lc.dim(2) != wid) {
        throw ValidationError("did_forward: correlation plane shape mismatch");
    }

    // FEM. When nothing is taped, activations are rectified in place.
    const double r_fem = rms(est_prev.values);
    Tensor x(est_prev.values.dims());
    {
        const double scale = 1.0 / (r_fem + cfg.epsilon);
        const double* src = est_prev.values.data();
        double* dst = x.data();
        for (size_t i = 0; i < x.size(); ++i) dst[i] = src[i] * scale;
    }
    Tensor z1 = conv2d(x, w.fem1_w, w.fem1_b);
    Tensor a1 = acts ? relu(z1) : std::move(z1);
    if (!acts) relu_inplace(a1);
    Tensor z2 = conv2d(a1, w.fem2_w, w.fem2_b);
    Tensor f_fe = acts ? relu(z2) : std::move(z2);
    if (!acts) relu_inplace(f_fe);

    // GSM on the previous-step residual (zero at the first iteration)
    Tensor stats({2 * cfg.channels, 1, 1});
    if (est_prev2) {
        Tensor res(est_prev.values.dims());
        const double* a = est_prev.values.data();
        const double* b = est_prev2->values.data();
        double* d = res.data();
        for (size_t i = 0; i < res.size(); ++i) d[i] = a[i] - b[i];
        const ChannelStats cs = channel_stats(res);
        for (int i = 0; i < cfg.channels; ++i) {
            stats.at(i, 0, 0) = cs.mean[static_cast<size_t>(i)];
            stats.at(cfg.channels + i, 0, 0) = cs.stddev[static_cast<size_t>(i)];
        }
    }
    const double r_gsm = rms(stats);
    Tensor sn(stats.dims());
    {
        const double scale = 1.0 / (r_gsm + cfg.epsilon);
        for (size_t i = 0; i < stats.size(); ++i) sn[i] = stats[i] * scale;
    }
    Tensor zg1 = conv2d(sn, w.gsm1_w, w.gsm1_b);
    Tensor ag1 = relu(zg1);
    Tensor zg2 = conv2d(ag1, w.gsm2_w, w.gsm2_b);
    Tensor gate({cfg.hidden_width});
    for (int i = 0; i < cfg.hidden_width; ++i) gate.at(i) = sigmoid(zg2.at(i, 0, 0));

    // KPM (the correlation planes enter as data)
    Tensor concat({cfg.hidden_width + k2, h, wid});
    const size_t hw = static_cast<size_t>(h) * wid;
    for (int i = 0; i < cfg.hidden_width; ++i) {
        const double g = gate.at(i);
        const double* src = f_fe.data() + static_cast<size_t>(i) * hw;
        double* dst = concat.data() + static_cast<size_t>(i) * hw;
        for (size_t j = 0; j < hw; ++j) dst[j] = src[j] * g;
    }
    std::copy(f_lc.data(), f_lc.data() + static_cast<size_t>(k2) * hw,
              concat.data() + static_cast<size_t>(cfg.hidden_width) * hw);
    const double r_kpm = rms(concat);
    {
        const double scale = 1.0 / (r_kpm + cfg.epsilon);
        double* d = concat.data();
        for (size_t i = 0; i < concat.size(); ++i) d[i] *= scale;
    }
    Tensor raw = conv2d(concat, w.kpm_w, w.kpm_b);

    KernelField published, applied;
    power_normalize_pair(raw, cfg.power_p, cfg.eta, &published, &applied);

    PatchField patches = unfold(est_prev, cfg.kernel_size, dilation);
    Image pre_clamp = apply_kernels(patches, applied);
    Image estimate = acts ? clamp01_image(pre_clamp) : std::move(pre_clamp);
    if (!acts) {
        double* d = estimate.values.data();
        for (size_t i = 0; i < estimate.values.size(); ++i) d[i] = clamp01(d[i]);
    }

    if (acts) {
        acts->dilation = dilation;
        acts->has_residual = est_prev2 != nullptr;
        acts->rms_fem = r_fem;
        acts->z1 = std::move(z1);
        acts->z2 = std::move(z2);
        Tensor flat_stats({2 * cfg.channels});
        for (int i = 0; i < 2 * cfg.channels; ++i) flat_stats.at(i) = stats.at(i, 0, 0);
        acts->stats = std::move(flat_stats);
        acts->rms_gsm = r_gsm;
        Tensor fzg1({cfg.hidden_width}), fzg2({cfg.hidden_width});
        for (int i = 0; i < cfg.hidden_width; ++i) {
            fzg1.at(i) = zg1.at(i, 0, 0);
            fzg2.at(i) = zg2.at(i, 0, 0);
        }
        acts->zg1 = std::move(fzg1);
        acts->zg2 = std::move(fzg2);
        acts->gate = gate;
        acts->f_lc = f_lc;
        acts->rms_kpm = r_kpm;
        acts->raw = std::move(raw);
        acts->pre_clamp = pre_clamp.values;
        acts->degenerate_columns = applied.degenerate_columns;
    }

    DidResult result;
    result.estimate = std::move(estimate);
    result.kernels = std::move(published);
    result.kernels.degenerate_columns = applied.degenerate_columns;
    return result;
}

}  // namespace idf
