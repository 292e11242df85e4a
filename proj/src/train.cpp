#include "idf/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <future>
#include <thread>
#include <vector>

#include "idf/io.hpp"
#include "idf/ops.hpp"

namespace idf {
namespace {

Tensor relu(const Tensor& t) {
    Tensor out = t;
    double* d = out.data();
    for (size_t i = 0; i < out.size(); ++i) {
        if (d[i] < 0.0) d[i] = 0.0;
    }
    return out;
}

inline double sign_of(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// Adjoint of y = x / (rms(x) + eps). Accumulates into d_x.
void rms_backward(const Tensor& d_y, const Tensor& x, double r, double eps, Tensor& d_x) {
    const size_t n = x.size();
    const double s = 1.0 / (r + eps);
    const double* gy = d_y.data();
    const double* xv = x.data();
    double* gx = d_x.data();
    if (r > 0.0) {
        double dot = 0.0;
        for (size_t i = 0; i < n; ++i) dot += gy[i] * xv[i];
        const double coef = dot * s * s / (static_cast<double>(n) * r);
        for (size_t i = 0; i < n; ++i) gx[i] += gy[i] * s - coef * xv[i];
    } else {
        for (size_t i = 0; i < n; ++i) gx[i] += gy[i] * s;
    }
}

KernelField raw_as_field(const Tensor& raw) {
    KernelField f;
    f.kernel_area = raw.dim(0);
    f.positions = raw.dim(1) * raw.dim(2);
    f.data = Tensor({1, f.kernel_area, f.positions});
    std::copy(raw.data(), raw.data() + raw.size(), f.data.data());
    return f;
}

// Backward through one refinement step. g_out is dL/d(est_t); contributions
// to dL/d(est_{t-1}) and dL/d(est_{t-2}) are accumulated into g_prev/g_prev2.
void did_backward(const DidActivations& acts, const Image& est_prev, const Image* est_prev2,
                  const ModelWeights& w, ClampAdjoint clamp_mode, const Tensor& g_out,
                  Tensor& g_prev, Tensor* g_prev2, Gradients& gs) {
    const ModelConfig& cfg = w.config;
    const int c = cfg.channels, ch = cfg.hidden_width;
    const int k2 = cfg.kernel_area();
    const int h = est_prev.height, wid = est_prev.width;
    const int m = h * wid;
    const double p = cfg.power_p;

    // clamp01 adjoint
    Tensor g_v = g_out;
    if (clamp_mode == ClampAdjoint::clamp) {
        const double* pc = acts.pre_clamp.data();
        double* gv = g_v.data();
        for (size_t i = 0; i < g_v.size(); ++i) {
            if (pc[i] < 0.0 || pc[i] > 1.0) gv[i] = 0.0;
        }
    }

    // apply_kernels adjoint
    PatchField patches = unfold(est_prev, cfg.kernel_size, acts.dilation);
    KernelField rawf = raw_as_field(acts.raw);
    KernelField applied = power_normalize_unit(rawf, p);

    Tensor d_applied({k2, m});
    PatchField d_patches;
    d_patches.channels = patches.channels;
    d_patches.kernel_area = patches.kernel_area;
    d_patches.positions = patches.positions;
    d_patches.dilation = patches.dilation;
    d_patches.source_height = patches.source_height;
    d_patches.source_width = patches.source_width;
    d_patches.data = Tensor({c, k2, m});  // every entry assigned below
    for (int cc = 0; cc < c; ++cc) {
        const double* gv = g_v.data() + static_cast<size_t>(cc) * m;
        for (int tap = 0; tap < k2; ++tap) {
            const double* pp = patches.data.data() + (static_cast<size_t>(cc) * k2 + tap) * m;
            const double* ap = applied.data.data() + static_cast<size_t>(tap) * m;
            double* da = d_applied.data() + static_cast<size_t>(tap) * m;
            double* dp = d_patches.data.data() + (static_cast<size_t>(cc) * k2 + tap) * m;
            for (int j = 0; j < m; ++j) {
                da[j] += gv[j] * pp[j];
                dp[j] = gv[j] * ap[j];
            }
        }
    }
    {
        Image g_prev_img(c, h, wid);
        g_prev_img.values = std::move(g_prev);
        unfold_adjoint(d_patches, g_prev_img);
        g_prev = std::move(g_prev_img.values);
    }

    // exact-unit power normalization adjoint: w_i = |r_i|^p / S
    Tensor d_raw({k2, h, wid});
    {
        std::vector<double> colsum(static_cast<size_t>(m), 0.0);
        const double* rv = rawf.data.data();
        for (int tap = 0; tap < k2; ++tap) {
            const double* rp = rv + static_cast<size_t>(tap) * m;
            for (int j = 0; j < m; ++j) {
                const double a = std::fabs(rp[j]);
                colsum[static_cast<size_t>(j)] += (p == 3.0) ? a * a * a : std::pow(a, p);
            }
        }
        std::vector<double> dot(static_cast<size_t>(m), 0.0);
        for (int tap = 0; tap < k2; ++tap) {
            const double* da = d_applied.data() + static_cast<size_t>(tap) * m;
            const double* ap = applied.data.data() + static_cast<size_t>(tap) * m;
            for (int j = 0; j < m; ++j) dot[static_cast<size_t>(j)] += da[j] * ap[j];
        }
        for (int tap = 0; tap < k2; ++tap) {
            const double* rp = rv + static_cast<size_t>(tap) * m;
            const double* da = d_applied.data() + static_cast<size_t>(tap) * m;
            double* dr = d_raw.data() + static_cast<size_t>(tap) * m;
            for (int j = 0; j < m; ++j) {
                const double s = colsum[static_cast<size_t>(j)];
                if (s == 0.0) {
                    dr[j] = 0.0;
                    continue;
                }
                const double a = std::fabs(rp[j]);
                const double dpow = (p == 3.0) ? a * rp[j]  // p·|r|^{p-1}·sgn(r) / p
                                               : std::pow(a, p - 1.0) * sign_of(rp[j]);
                dr[j] = p * dpow * (da[j] - dot[static_cast<size_t>(j)]) / s;
            }
        }
    }

    // KPM conv adjoint (the correlation planes stay constant)
    Tensor f_fe = relu(acts.z2);
    Tensor concat({ch + k2, h, wid});
    const size_t hw = static_cast<size_t>(m);
    for (int i = 0; i < ch; ++i) {
        const double g = acts.gate.at(i);
        const double* src = f_fe.data() + static_cast<size_t>(i) * hw;
        double* dst = concat.data() + static_cast<size_t>(i) * hw;
        for (size_t j = 0; j < hw; ++j) dst[j] = src[j] * g;
    }
    std::copy(acts.f_lc.data(), acts.f_lc.data() + static_cast<size_t>(k2) * hw,
              concat.data() + static_cast<size_t>(ch) * hw);
    Tensor cn(concat.dims());
    {
        const double s = 1.0 / (acts.rms_kpm + cfg.epsilon);
        const double* src = concat.data();
        double* dst = cn.data();
        for (size_t i = 0; i < cn.size(); ++i) dst[i] = src[i] * s;
    }
    Tensor d_cn({ch + k2, h, wid});
    conv2d_backward(cn, w.kpm_w, d_raw, &d_cn, gs.kpm_w, gs.kpm_b);

    Tensor d_concat({ch + k2, h, wid});
    rms_backward(d_cn, concat, acts.rms_kpm, cfg.epsilon, d_concat);

    // gate ⊙ feature split
    Tensor d_f_fe({ch, h, wid});
    Tensor d_gate({ch});
    for (int i = 0; i < ch; ++i) {
        const double g = acts.gate.at(i);
        const double* dm = d_concat.data() + static_cast<size_t>(i) * hw;
        const double* fe = f_fe.data() + static_cast<size_t>(i) * hw;
        double* df = d_f_fe.data() + static_cast<size_t>(i) * hw;
        double acc = 0.0;
        for (size_t j = 0; j < hw; ++j) {
            df[j] = dm[j] * g;
            acc += dm[j] * fe[j];
        }
        d_gate.at(i) = acc;
    }

    // GSM adjoint (tiny dense layers, plain loops)
    const int c2 = 2 * c;
    Tensor d_zg2({ch});
    for (int i = 0; i < ch; ++i) {
        const double g = acts.gate.at(i);
        d_zg2.at(i) = d_gate.at(i) * g * (1.0 - g);
    }
    Tensor ag1({ch});
    for (int i = 0; i < ch; ++i) ag1.at(i) = std::max(0.0, acts.zg1.at(i));
    Tensor d_ag1({ch});
    for (int i = 0; i < ch; ++i) {
        gs.gsm2_b.at(i) += d_zg2.at(i);
        for (int k = 0; k < ch; ++k) {
            gs.gsm2_w.at(i, k, 0) += d_zg2.at(i) * ag1.at(k);
            d_ag1.at(k) += w.gsm2_w.at(i, k, 0) * d_zg2.at(i);
        }
    }
    Tensor sn({c2});
    {
        const double s = 1.0 / (acts.rms_gsm + cfg.epsilon);
        for (int i = 0; i < c2; ++i) sn.at(i) = acts.stats.at(i) * s;
    }
    Tensor d_sn({c2});
    for (int i = 0; i < ch; ++i) {
        if (acts.zg1.at(i) <= 0.0) continue;
        const double dz = d_ag1.at(i);
        gs.gsm1_b.at(i) += dz;
        for (int k = 0; k < c2; ++k) {
            gs.gsm1_w.at(i, k, 0) += dz * sn.at(k);
            d_sn.at(k) += w.gsm1_w.at(i, k, 0) * dz;
        }
    }
    Tensor d_stats({c2});
    rms_backward(d_sn, acts.stats, acts.rms_gsm, cfg.epsilon, d_stats);

    // channel-stats adjoint back onto the residual (skipped at t = 1, where
    // the residual is a constant zero image)
    if (acts.has_residual && est_prev2) {
        const double inv_m = 1.0 / static_cast<double>(m);
        for (int cc = 0; cc < c; ++cc) {
            const double mu = acts.stats.at(cc);
            const double sd = acts.stats.at(c + cc);
            const double dmu = d_stats.at(cc) * inv_m;
            const double dsd = acts.stats.at(c + cc) > 0.0
                                   ? d_stats.at(c + cc) * inv_m / sd
                                   : 0.0;
            const double* a = est_prev.values.data() + static_cast<size_t>(cc) * hw;
            const double* b = est_prev2->values.data() + static_cast<size_t>(cc) * hw;
            double* gp = g_prev.data() + static_cast<size_t>(cc) * hw;
            double* gp2 = g_prev2 ? g_prev2->data() + static_cast<size_t>(cc) * hw : nullptr;
            for (size_t j = 0; j < hw; ++j) {
                const double res = a[j] - b[j];
                const double d = dmu + dsd * (res - mu);
                gp[j] += d;
                if (gp2) gp2[j] -= d;
            }
        }
    }

    // FEM adjoint
    Tensor d_z2 = d_f_fe;
    {
        const double* z = acts.z2.data();
        double* d = d_z2.data();
        for (size_t i = 0; i < d_z2.size(); ++i) {
            if (z[i] <= 0.0) d[i] = 0.0;
        }
    }
    Tensor a1 = relu(acts.z1);
    Tensor d_a1({ch, h, wid});
    conv2d_backward(a1, w.fem2_w, d_z2, &d_a1, gs.fem2_w, gs.fem2_b);
    Tensor d_z1 = d_a1;
    {
        const double* z = acts.z1.data();
        double* d = d_z1.data();
        for (size_t i = 0; i < d_z1.size(); ++i) {
            if (z[i] <= 0.0) d[i] = 0.0;
        }
    }
    Tensor x(est_prev.values.dims());
    {
        const double s = 1.0 / (acts.rms_fem + cfg.epsilon);
        const double* src = est_prev.values.data();
        double* dst = x.data();
        for (size_t i = 0; i < x.size(); ++i) dst[i] = src[i] * s;
    }
    Tensor d_x({c, h, wid});
    conv2d_backward(x, w.fem1_w, d_z1, &d_x, gs.fem1_w, gs.fem1_b);
    rms_backward(d_x, est_prev.values, acts.rms_fem, cfg.epsilon, g_prev);
}

Gradients backward_sample(const SampleTape& sample, const ModelWeights& w, int t_count,
                          ClampAdjoint clamp_mode) {
    Gradients gs = Gradients::zeros_like(w);
    const Image& pred = sample.estimates[static_cast<size_t>(t_count)];
    const size_t n = pred.values.size();

    std::vector<Tensor> g_est(static_cast<size_t>(t_count) + 1);
    g_est[static_cast<size_t>(t_count)] = Tensor(pred.values.dims());
    {
        const double inv = 1.0 / static_cast<double>(n);
        const double* pv = pred.values.data();
        const double* tv = sample.clean.values.data();
        double* g = g_est[static_cast<size_t>(t_count)].data();
        for (size_t i = 0; i < n; ++i) g[i] = sign_of(pv[i] - tv[i]) * inv;
    }
    for (int t = t_count; t >= 1; --t) {
        const Image& e = sample.estimates[static_cast<size_t>(t - 1)];
        const Image* f = t >= 2 ? &sample.estimates[static_cast<size_t>(t - 2)] : nullptr;
        if (g_est[static_cast<size_t>(t - 1)].empty()) {
            g_est[static_cast<size_t>(t - 1)] = Tensor(e.values.dims());
        }
        if (t >= 2 && g_est[static_cast<size_t>(t - 2)].empty()) {
            g_est[static_cast<size_t>(t - 2)] = Tensor(e.values.dims());
        }
        did_backward(sample.steps[static_cast<size_t>(t - 1)], e, f, w, clamp_mode,
                     g_est[static_cast<size_t>(t)], g_est[static_cast<size_t>(t - 1)],
                     t >= 2 ? &g_est[static_cast<size_t>(t - 2)] : nullptr, gs);
    }
    return gs;
}

Image crop_patch(const Image& img, int y0, int x0, int size, bool hflip, bool vflip) {
    Image out(img.channels, size, size);
    const size_t hw = img.pixel_count();
    for (int ch = 0; ch < img.channels; ++ch) {
        const double* src = img.values.data() + static_cast<size_t>(ch) * hw;
        double* dst = out.values.data() + static_cast<size_t>(ch) * size * size;
        for (int r = 0; r < size; ++r) {
            const int sr = y0 + (vflip ? size - 1 - r : r);
            for (int c = 0; c < size; ++c) {
                const int sc = x0 + (hflip ? size - 1 - c : c);
                dst[static_cast<size_t>(r) * size + c] = src[static_cast<size_t>(sr) * img.width + sc];
            }
        }
    }
    return out;
}

Image to_channels(const Image& img, int channels) {
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
    throw ValidationError("train: image channel count incompatible with the model");
}

// Run fn(i) for i in [0, n): sequential when one worker suffices, otherwise
// contiguous index ranges on a capped worker set. Results must not depend on
// the split, so each index does independent work.
void parallel_indices(size_t n, const std::function<void(size_t)>& fn) {
    const size_t workers =
        std::min<size_t>(n, std::max(1u, std::thread::hardware_concurrency()));
    if (workers <= 1 || n <= 1) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::future<void>> futs;
    futs.reserve(workers);
    const size_t chunk = (n + workers - 1) / workers;
    for (size_t w = 0; w < workers; ++w) {
        const size_t lo = w * chunk;
        const size_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        futs.push_back(std::async(std::launch::async, [lo, hi, &fn] {
            for (size_t i = lo; i < hi; ++i) fn(i);
        }));
    }
    for (auto& f : futs) f.get();
}

}  // namespace

void TrainConfig::validate(const ModelConfig& model) const {
    if (steps < 0) throw ValidationError("train: steps must be >= 0");
    if (batch_size < 1) throw ValidationError("train: batch size must be >= 1");
    if (unroll_iterations < 1) throw ValidationError("train: unroll iterations must be >= 1");
    if (patch_size < model.kernel_size * 2 + 1) {
        throw ValidationError("train: patch size must be >= 2*kernel_size + 1");
    }
    if (adamw.learning_rate <= 0.0) throw ValidationError("train: learning rate must be > 0");
    if (checkpoint_every < 0) throw ValidationError("train: checkpoint_every must be >= 0");
    noise.validate();
}

double l1_loss(const Image& pred, const Image& target) {
    if (!pred.same_shape(target)) throw ValidationError("l1_loss: image dimensions disagree");
    const double* a = pred.values.data();
    const double* b = target.values.data();
    const size_t n = pred.values.size();
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) acc += std::fabs(a[i] - b[i]);
    return acc / static_cast<double>(n);
}

Gradients Gradients::zeros_like(const ModelWeights& w) {
    Gradients g;
    g.fem1_w = Tensor(w.fem1_w.dims());
    g.fem1_b = Tensor(w.fem1_b.dims());
    g.fem2_w = Tensor(w.fem2_w.dims());
    g.fem2_b = Tensor(w.fem2_b.dims());
    g.gsm1_w = Tensor(w.gsm1_w.dims());
    g.gsm1_b = Tensor(w.gsm1_b.dims());
    g.gsm2_w = Tensor(w.gsm2_w.dims());
    g.gsm2_b = Tensor(w.gsm2_b.dims());
    g.kpm_w = Tensor(w.kpm_w.dims());
    g.kpm_b = Tensor(w.kpm_b.dims());
    return g;
}

std::vector<std::pair<std::string, Tensor*>> Gradients::named_tensors() {
    return {{"fem.conv1.w", &fem1_w}, {"fem.conv1.b", &fem1_b}, {"fem.conv2.w", &fem2_w},
            {"fem.conv2.b", &fem2_b}, {"gsm.conv1.w", &gsm1_w}, {"gsm.conv1.b", &gsm1_b},
            {"gsm.conv2.w", &gsm2_w}, {"gsm.conv2.b", &gsm2_b}, {"kpm.conv.w", &kpm_w},
            {"kpm.conv.b", &kpm_b}};
}

void Gradients::accumulate(const Gradients& other, double scale) {
    auto dst = named_tensors();
    auto src = const_cast<Gradients&>(other).named_tensors();
    for (size_t i = 0; i < dst.size(); ++i) {
        double* d = dst[i].second->data();
        const double* s = src[i].second->data();
        for (size_t j = 0; j < dst[i].second->size(); ++j) d[j] += scale * s[j];
    }
}

void Gradients::scale(double factor) {
    for (auto& [name, t] : named_tensors()) {
        double* d = t->data();
        for (size_t j = 0; j < t->size(); ++j) d[j] *= factor;
    }
}

BatchTape forward_with_tape(const std::vector<std::pair<Image, Image>>& batch,
                            const ModelWeights& w, int unroll_iterations,
                            ClampAdjoint clamp_adjoint) {
    if (batch.empty()) throw ValidationError("forward_with_tape: empty batch");
    if (unroll_iterations < 1) throw ValidationError("forward_with_tape: T must be >= 1");

    BatchTape tape;
    tape.unroll_iterations = unroll_iterations;
    tape.clamp_adjoint = clamp_adjoint;
    tape.samples.resize(batch.size());

    auto run_sample = [&](size_t s) {
        const Image& noisy = batch[s].first;
        const Image& clean = batch[s].second;
        if (!noisy.same_shape(clean)) {
            throw ValidationError("forward_with_tape: noisy/clean shape mismatch");
        }
        SampleTape& st = tape.samples[s];
        st.noisy = noisy;
        st.clean = clean;
        st.estimates.reserve(static_cast<size_t>(unroll_iterations) + 1);
        st.estimates.push_back(noisy);
        st.steps.resize(static_cast<size_t>(unroll_iterations));
        for (int t = 1; t <= unroll_iterations; ++t) {
            const int dilation = (t % 2 == 1) ? 2 : 1;
            const Image* prev2 =
                t >= 2 ? &st.estimates[static_cast<size_t>(t - 2)] : nullptr;
            DidResult step = did_forward(st.estimates[static_cast<size_t>(t - 1)], prev2, w,
                                         dilation, &st.steps[static_cast<size_t>(t - 1)]);
            st.estimates.push_back(std::move(step.estimate));
        }
        st.loss = l1_loss(st.estimates.back(), clean);
    };

    parallel_indices(batch.size(), run_sample);

    double loss = 0.0;
    for (const auto& st : tape.samples) loss += st.loss;
    tape.loss = loss / static_cast<double>(tape.samples.size());
    return tape;
}

Gradients backward(BatchTape& tape, const ModelWeights& w) {
    if (tape.consumed) throw ValidationError("backward: tape already consumed");
    if (tape.samples.empty()) throw ValidationError("backward: empty tape");
    tape.consumed = true;

    const size_t b = tape.samples.size();
    std::vector<Gradients> per_sample(b);
    parallel_indices(b, [&](size_t s) {
        per_sample[s] = backward_sample(tape.samples[s], w, tape.unroll_iterations,
                                        tape.clamp_adjoint);
    });

    Gradients total = Gradients::zeros_like(w);
    const double inv_b = 1.0 / static_cast<double>(b);
    for (size_t s = 0; s < b; ++s) total.accumulate(per_sample[s], inv_b);
    return total;
}

AdamWState AdamWState::zeros_like(const ModelWeights& w) {
    AdamWState st;
    auto named = const_cast<ModelWeights&>(w).named_tensors();
    for (auto& [name, t] : named) {
        st.first_moment.emplace_back(t->dims());
        st.second_moment.emplace_back(t->dims());
    }
    return st;
}

void adamw_step(ModelWeights& w, const Gradients& g, AdamWState& state, const AdamWConfig& cfg) {
    auto wt = w.named_tensors();
    auto gt = const_cast<Gradients&>(g).named_tensors();
    if (state.first_moment.size() != wt.size()) {
        throw ValidationError("adamw_step: state does not match the weight set");
    }
    ++state.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (size_t i = 0; i < wt.size(); ++i) {
        Tensor& weight = *wt[i].second;
        const Tensor& grad = *gt[i].second;
        if (!weight.same_shape(grad)) {
            throw ValidationError("adamw_step: gradient shape mismatch for " + wt[i].first);
        }
        Tensor& m = state.first_moment[i];
        Tensor& v = state.second_moment[i];
        double* wd = weight.data();
        const double* gd = grad.data();
        double* md = m.data();
        double* vd = v.data();
        for (size_t j = 0; j < weight.size(); ++j) {
            md[j] = cfg.beta1 * md[j] + (1.0 - cfg.beta1) * gd[j];
            vd[j] = cfg.beta2 * vd[j] + (1.0 - cfg.beta2) * gd[j] * gd[j];
            const double mhat = md[j] / bc1;
            const double vhat = vd[j] / bc2;
            wd[j] -= cfg.learning_rate * (mhat / (std::sqrt(vhat) + cfg.eps) +
                                          cfg.weight_decay * wd[j]);
        }
    }
}

TrainResult train(const std::string& dataset_dir, const ModelConfig& model_cfg,
                  const TrainConfig& cfg) {
    namespace fs = std::filesystem;
    model_cfg.validate();
    cfg.validate(model_cfg);

    std::vector<fs::path> files;
    if (!fs::is_directory(dataset_dir)) throw IoError("dataset dir not found: " + dataset_dir);
    for (const auto& entry : fs::directory_iterator(dataset_dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".png") {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw ValidationError("train: dataset directory has no PNG images");

    std::vector<Image> images;
    images.reserve(files.size());
    for (const auto& f : files) {
        Image img = to_channels(load_image(f.string()), model_cfg.channels);
        if (img.height < cfg.patch_size || img.width < cfg.patch_size) {
            throw ValidationError("train: image smaller than the patch size: " + f.string());
        }
        images.push_back(std::move(img));
    }

    TrainResult result;
    result.weights = ModelWeights::init(model_cfg, cfg.seed);
    if (cfg.steps == 0) return result;

    AdamWState state = AdamWState::zeros_like(result.weights);
    const Rng base(cfg.seed);
    result.log.reserve(static_cast<size_t>(cfg.steps));

    for (int step = 1; step <= cfg.steps; ++step) {
        const auto t0 = std::chrono::steady_clock::now();
        std::vector<std::pair<Image, Image>> batch;
        batch.reserve(static_cast<size_t>(cfg.batch_size));
        for (int s = 0; s < cfg.batch_size; ++s) {
            Rng rng = base.fork(static_cast<uint64_t>(step - 1) * cfg.batch_size + s + 1);
            const Image& src = images[rng.next_u64() % images.size()];
            const int y0 = static_cast<int>(rng.next_u64() % (src.height - cfg.patch_size + 1));
            const int x0 = static_cast<int>(rng.next_u64() % (src.width - cfg.patch_size + 1));
            const bool hflip = rng.uniform01() < 0.5;
            const bool vflip = rng.uniform01() < 0.5;
            Image clean = crop_patch(src, y0, x0, cfg.patch_size, hflip, vflip);
            Image noisy = apply_noise(clean, cfg.noise, rng);
            batch.emplace_back(std::move(noisy), std::move(clean));
        }
        BatchTape tape = forward_with_tape(batch, result.weights, cfg.unroll_iterations,
                                           cfg.clamp_adjoint);
        const Gradients grads = backward(tape, result.weights);
        adamw_step(result.weights, grads, state, cfg.adamw);

        const auto t1 = std::chrono::steady_clock::now();
        result.log.push_back({step, tape.loss,
                              std::chrono::duration<double, std::milli>(t1 - t0).count()});

        if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 &&
            !cfg.checkpoint_dir.empty()) {
            fs::create_directories(cfg.checkpoint_dir);
            char name[32];
            std::snprintf(name, sizeof(name), "step_%06d.idfw", step);
            save_weights(result.weights, (fs::path(cfg.checkpoint_dir) / name).string());
        }
    }
    return result;
}

namespace {

void append_masks(const DidActivations& acts, std::vector<uint8_t>& sig) {
    auto push_sign = [&sig](double v) { sig.push_back(v > 0.0 ? 2 : (v < 0.0 ? 0 : 1)); };
    for (size_t i = 0; i < acts.z1.size(); ++i) sig.push_back(acts.z1[i] > 0.0);
    for (size_t i = 0; i < acts.z2.size(); ++i) sig.push_back(acts.z2[i] > 0.0);
    for (size_t i = 0; i < acts.zg1.size(); ++i) sig.push_back(acts.zg1[i] > 0.0);
    for (size_t i = 0; i < acts.raw.size(); ++i) push_sign(acts.raw[i]);
    for (size_t i = 0; i < acts.pre_clamp.size(); ++i) {
        const double v = acts.pre_clamp[i];
        sig.push_back(v < 0.0 ? 0 : (v > 1.0 ? 2 : 1));
    }
}

// The loss that backward differentiates: the unrolled loop with the
// correlation planes pinned at their nominal values. Also returns the
// activation-region fingerprint so FD evaluations that hop over a kink can
// be excluded.
double frozen_lcm_loss(const Image& noisy, const Image& clean, const ModelWeights& w,
                       const std::vector<Tensor>& f_lc_per_iter, std::vector<uint8_t>& sig) {
    sig.clear();
    const int t_count = static_cast<int>(f_lc_per_iter.size());
    std::vector<Image> estimates;
    estimates.reserve(static_cast<size_t>(t_count) + 1);
    estimates.push_back(noisy);
    for (int t = 1; t <= t_count; ++t) {
        const int dilation = (t % 2 == 1) ? 2 : 1;
        const Image* prev2 = t >= 2 ? &estimates[static_cast<size_t>(t - 2)] : nullptr;
        DidActivations acts;
        DidResult step =
            did_forward_with_correlation(estimates[static_cast<size_t>(t - 1)], prev2, w,
                                         dilation, f_lc_per_iter[static_cast<size_t>(t - 1)],
                                         &acts);
        append_masks(acts, sig);
        estimates.push_back(std::move(step.estimate));
    }
    const Image& pred = estimates.back();
    for (size_t i = 0; i < pred.values.size(); ++i) {
        const double v = pred.values[i] - clean.values[i];
        sig.push_back(v > 0.0 ? 2 : (v < 0.0 ? 0 : 1));
    }
    return l1_loss(pred, clean);
}

}  // namespace

GradCheckReport grad_check(const ModelWeights& w, const Image& noisy, const Image& clean,
                           int unroll_iterations, ClampAdjoint clamp_adjoint, double fd_step) {
    std::vector<std::pair<Image, Image>> batch{{noisy, clean}};
    BatchTape tape = forward_with_tape(batch, w, unroll_iterations, clamp_adjoint);
    // Correlation planes are data during backward; pin the nominal ones for
    // the finite-difference replays so both sides differentiate the same
    // objective.
    std::vector<Tensor> f_lc_per_iter;
    for (const auto& acts : tape.samples[0].steps) f_lc_per_iter.push_back(acts.f_lc);
    ModelWeights work = w;  // perturbed copy
    Gradients analytic = backward(tape, work);

    GradCheckReport report;
    std::vector<uint8_t> sig_p, sig_m;
    auto wt = work.named_tensors();
    auto gt = analytic.named_tensors();
    for (size_t i = 0; i < wt.size(); ++i) {
        GradCheckReport::TensorEntry entry;
        entry.name = wt[i].first;
        Tensor& tensor = *wt[i].second;
        const Tensor& grads = *gt[i].second;
        for (size_t j = 0; j < tensor.size(); ++j) {
            const double saved = tensor[j];
            tensor[j] = saved + fd_step;
            const double loss_p = frozen_lcm_loss(noisy, clean, work, f_lc_per_iter, sig_p);
            tensor[j] = saved - fd_step;
            const double loss_m = frozen_lcm_loss(noisy, clean, work, f_lc_per_iter, sig_m);
            tensor[j] = saved;
            ++report.total_params;
            if (sig_p != sig_m) {
                ++entry.kink_excluded;
                ++report.kink_excluded;
                continue;
            }
            const double fd = (loss_p - loss_m) / (2.0 * fd_step);
            const double a = grads[j];
            const double denom = std::max(std::max(std::fabs(a), std::fabs(fd)), 1e-8);
            const double rel = std::fabs(a - fd) / denom;
            entry.max_rel_err = std::max(entry.max_rel_err, rel);
            ++entry.checked;
            ++report.checked_params;
        }
        report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
        report.tensors.push_back(std::move(entry));
    }
    return report;
}

std::string to_string(ClampAdjoint mode) {
    return mode == ClampAdjoint::clamp ? "clamp" : "identity";
}

ClampAdjoint clamp_adjoint_from_string(const std::string& s) {
    if (s == "clamp") return ClampAdjoint::clamp;
    if (s == "identity") return ClampAdjoint::identity;
    throw ValidationError("unknown clamp adjoint mode: " + s);
}

}  // namespace idf
