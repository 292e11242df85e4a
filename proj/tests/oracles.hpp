// Independent brute-force references used by the tests. Everything here is
// deliberately written with plain per-element loops and no shared code with
// the library implementations it checks.
#pragma once

#include <cmath>
#include <vector>

#include "idf/model.hpp"
#include "idf/noise.hpp"
#include "idf/tensor.hpp"

namespace oracle {

inline int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

// --- tensor-core references ---------------------------------------------

inline idf::Tensor naive_conv2d(const idf::Tensor& input, const idf::Tensor& weight,
                                const idf::Tensor& bias) {
    const int c_in = input.dim(0), h = input.dim(1), w = input.dim(2);
    const int c_out = weight.dim(0);
    const int kk = weight.dim(2);
    const int k = kk == 1 ? 1 : 3;
    const int half = k / 2;
    idf::Tensor out({c_out, h, w});
    for (int co = 0; co < c_out; ++co) {
        for (int r = 0; r < h; ++r) {
            for (int col = 0; col < w; ++col) {
                double acc = bias.at(co);
                for (int ci = 0; ci < c_in; ++ci) {
                    for (int u = 0; u < k; ++u) {
                        for (int v = 0; v < k; ++v) {
                            const int rr = clampi(r + u - half, 0, h - 1);
                            const int cc = clampi(col + v - half, 0, w - 1);
                            acc += weight.at(co, ci, u * k + v) * input.at(ci, rr, cc);
                        }
                    }
                }
                out.at(co, r, col) = acc;
            }
        }
    }
    return out;
}

// Patch value by direct index arithmetic.
inline double patch_value(const idf::Image& img, int ch, int r, int c, int tap, int k,
                          int dilation) {
    const int half = k / 2;
    const int du = tap / k - half;
    const int dv = tap % k - half;
    return img.at(ch, clampi(r + du * dilation, 0, img.height - 1),
                  clampi(c + dv * dilation, 0, img.width - 1));
}

// K×K sliding box mean with replicate padding.
inline idf::Image naive_box_filter(const idf::Image& img, int k) {
    idf::Image out(img.channels, img.height, img.width);
    const int half = k / 2;
    for (int ch = 0; ch < img.channels; ++ch) {
        for (int r = 0; r < img.height; ++r) {
            for (int c = 0; c < img.width; ++c) {
                double acc = 0.0;
                for (int u = -half; u <= half; ++u) {
                    for (int v = -half; v <= half; ++v) {
                        acc += img.at(ch, clampi(r + u, 0, img.height - 1),
                                      clampi(c + v, 0, img.width - 1));
                    }
                }
                out.at(ch, r, c) = acc / (k * k);
            }
        }
    }
    return out;
}

struct MeanStd {
    std::vector<double> mean, stddev;
};

// Two-pass per-channel statistics.
inline MeanStd two_pass_stats(const idf::Tensor& t) {
    MeanStd out;
    const int c = t.dim(0);
    const int m = t.dim(1) * t.dim(2);
    for (int ch = 0; ch < c; ++ch) {
        double sum = 0.0;
        for (int i = 0; i < m; ++i) sum += t.at(ch, i / t.dim(2), i % t.dim(2));
        const double mean = sum / m;
        double var = 0.0;
        for (int i = 0; i < m; ++i) {
            const double d = t.at(ch, i / t.dim(2), i % t.dim(2)) - mean;
            var += d * d;
        }
        out.mean.push_back(mean);
        out.stddev.push_back(std::sqrt(var / m));
    }
    return out;
}

// --- correlation reference ------------------------------------------------

// Per-window two-pass Pearson between the center window and the tap-shifted
// window, channel averaged; center tap is 1, degenerate windows give 0.
inline idf::Tensor naive_lcm(const idf::Image& img, int k, int dilation, int window,
                             double tau = 1e-8) {
    const int k2 = k * k, half = k / 2, hw = (window - 1) / 2;
    const int h = img.height, w = img.width;
    idf::Tensor out({k2, h, w});
    const int center = (k2 - 1) / 2;
    const int n = window * window;
    for (int tap = 0; tap < k2; ++tap) {
        for (int r = 0; r < h; ++r) {
            for (int c = 0; c < w; ++c) {
                if (tap == center) {
                    out.at(tap, r, c) = 1.0;
                    continue;
                }
                const int odr = (tap / k - half) * dilation;
                const int odc = (tap % k - half) * dilation;
                double total = 0.0;
                for (int ch = 0; ch < img.channels; ++ch) {
                    std::vector<double> sc, so;
                    sc.reserve(n);
                    so.reserve(n);
                    for (int wr = -hw; wr <= hw; ++wr) {
                        for (int wc = -hw; wc <= hw; ++wc) {
                            sc.push_back(img.at(ch, clampi(r + wr, 0, h - 1),
                                                clampi(c + wc, 0, w - 1)));
                            so.push_back(img.at(ch, clampi(r + wr + odr, 0, h - 1),
                                                clampi(c + wc + odc, 0, w - 1)));
                        }
                    }
                    double mc = 0.0, mo = 0.0;
                    for (int i = 0; i < n; ++i) {
                        mc += sc[i];
                        mo += so[i];
                    }
                    mc /= n;
                    mo /= n;
                    double vc = 0.0, vo = 0.0, cov = 0.0;
                    for (int i = 0; i < n; ++i) {
                        vc += (sc[i] - mc) * (sc[i] - mc);
                        vo += (so[i] - mo) * (so[i] - mo);
                        cov += (sc[i] - mc) * (so[i] - mo);
                    }
                    vc /= n;
                    vo /= n;
                    cov /= n;
                    if (vc >= tau && vo >= tau) {
                        double rv = cov / std::sqrt(vc * vo);
                        if (rv > 1.0) rv = 1.0;
                        if (rv < -1.0) rv = -1.0;
                        total += rv;
                    }
                }
                out.at(tap, r, c) = total / img.channels;
            }
        }
    }
    return out;
}

// --- monolithic refinement-step reference ---------------------------------

// The whole block in one straight-line function: plain loops only.
inline idf::Image did_reference(const idf::Image& est, const idf::Image* est_prev2,
                                const idf::ModelWeights& w, int dilation) {
    const idf::ModelConfig& cfg = w.config;
    const int c = cfg.channels, chn = cfg.hidden_width, k = cfg.kernel_size, k2 = k * k;
    const int h = est.height, wd = est.width;
    const double eps = cfg.epsilon;
    const double p = cfg.power_p;

    auto rms_of = [](const idf::Tensor& t) {
        double ss = 0.0;
        for (size_t i = 0; i < t.size(); ++i) ss += t[i] * t[i];
        return std::sqrt(ss / static_cast<double>(t.size()));
    };

    // FEM
    idf::Tensor x(est.values.dims());
    const double r1 = rms_of(est.values);
    for (size_t i = 0; i < x.size(); ++i) x[i] = est.values[i] / (r1 + eps);
    idf::Tensor z1 = naive_conv2d(x, w.fem1_w, w.fem1_b);
    for (size_t i = 0; i < z1.size(); ++i) z1[i] = std::max(0.0, z1[i]);
    idf::Tensor z2 = naive_conv2d(z1, w.fem2_w, w.fem2_b);
    for (size_t i = 0; i < z2.size(); ++i) z2[i] = std::max(0.0, z2[i]);

    // GSM
    idf::Tensor stats({2 * c, 1, 1});
    if (est_prev2) {
        for (int ch = 0; ch < c; ++ch) {
            double sum = 0.0;
            for (int r = 0; r < h; ++r)
                for (int cc = 0; cc < wd; ++cc) sum += est.at(ch, r, cc) - est_prev2->at(ch, r, cc);
            const double mean = sum / (h * wd);
            double var = 0.0;
            for (int r = 0; r < h; ++r)
                for (int cc = 0; cc < wd; ++cc) {
                    const double d = est.at(ch, r, cc) - est_prev2->at(ch, r, cc) - mean;
                    var += d * d;
                }
            stats.at(ch, 0, 0) = mean;
            stats.at(c + ch, 0, 0) = std::sqrt(var / (h * wd));
        }
    }
    const double rg = rms_of(stats);
    idf::Tensor sn(stats.dims());
    for (size_t i = 0; i < sn.size(); ++i) sn[i] = stats[i] / (rg + eps);
    idf::Tensor gate({chn});
    {
        std::vector<double> a1(static_cast<size_t>(chn));
        for (int i = 0; i < chn; ++i) {
            double acc = w.gsm1_b.at(i);
            for (int j = 0; j < 2 * c; ++j) acc += w.gsm1_w.at(i, j, 0) * sn.at(j, 0, 0);
            a1[static_cast<size_t>(i)] = std::max(0.0, acc);
        }
        for (int i = 0; i < chn; ++i) {
            double acc = w.gsm2_b.at(i);
            for (int j = 0; j < chn; ++j) acc += w.gsm2_w.at(i, j, 0) * a1[static_cast<size_t>(j)];
            gate.at(i) = 1.0 / (1.0 + std::exp(-acc));
        }
    }

    // LCM + KPM
    idf::Tensor f_lc = naive_lcm(est, k, dilation, cfg.lcm_window);
    idf::Tensor concat({chn + k2, h, wd});
    for (int i = 0; i < chn; ++i)
        for (int r = 0; r < h; ++r)
            for (int cc = 0; cc < wd; ++cc) concat.at(i, r, cc) = z2.at(i, r, cc) * gate.at(i);
    for (int i = 0; i < k2; ++i)
        for (int r = 0; r < h; ++r)
            for (int cc = 0; cc < wd; ++cc) concat.at(chn + i, r, cc) = f_lc.at(i, r, cc);
    const double rk = rms_of(concat);
    for (size_t i = 0; i < concat.size(); ++i) concat[i] = concat[i] / (rk + eps);
    idf::Tensor raw = naive_conv2d(concat, w.kpm_w, w.kpm_b);

    // exact unit-sum power weighting + per-pixel filtering
    idf::Image out(c, h, wd);
    for (int r = 0; r < h; ++r) {
        for (int cc = 0; cc < wd; ++cc) {
            double s = 0.0;
            std::vector<double> a(static_cast<size_t>(k2));
            for (int tap = 0; tap < k2; ++tap) {
                a[static_cast<size_t>(tap)] = std::pow(std::fabs(raw.at(tap, r, cc)), p);
                s += a[static_cast<size_t>(tap)];
            }
            for (int ch = 0; ch < c; ++ch) {
                double acc = 0.0;
                if (s > 0.0) {
                    for (int tap = 0; tap < k2; ++tap) {
                        acc += a[static_cast<size_t>(tap)] / s *
                               patch_value(est, ch, r, cc, tap, k, dilation);
                    }
                }
                out.at(ch, r, cc) = std::min(1.0, std::max(0.0, acc));
            }
        }
    }
    return out;
}

// --- metrics references ----------------------------------------------------

inline double naive_mse(const idf::Image& a, const idf::Image& b) {
    double acc = 0.0;
    for (size_t i = 0; i < a.values.size(); ++i) {
        const double d = a.values[i] - b.values[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.values.size());
}

// Direct per-window SSIM with an explicitly materialized 11×11 Gaussian.
inline double naive_ssim(const idf::Image& a, const idf::Image& b) {
    const int win = 11;
    const double sigma = 1.5, c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    double wts[win][win];
    double wsum = 0.0;
    for (int i = 0; i < win; ++i) {
        for (int j = 0; j < win; ++j) {
            const double di = i - 5.0, dj = j - 5.0;
            wts[i][j] = std::exp(-(di * di + dj * dj) / (2.0 * sigma * sigma));
            wsum += wts[i][j];
        }
    }
    for (int i = 0; i < win; ++i)
        for (int j = 0; j < win; ++j) wts[i][j] /= wsum;

    double total = 0.0;
    for (int ch = 0; ch < a.channels; ++ch) {
        double acc = 0.0;
        int count = 0;
        for (int r = 0; r + win <= a.height; ++r) {
            for (int c = 0; c + win <= a.width; ++c) {
                double ma = 0.0, mb = 0.0;
                for (int i = 0; i < win; ++i)
                    for (int j = 0; j < win; ++j) {
                        ma += wts[i][j] * a.at(ch, r + i, c + j);
                        mb += wts[i][j] * b.at(ch, r + i, c + j);
                    }
                double va = 0.0, vb = 0.0, cov = 0.0;
                for (int i = 0; i < win; ++i)
                    for (int j = 0; j < win; ++j) {
                        const double da = a.at(ch, r + i, c + j) - ma;
                        const double db = b.at(ch, r + i, c + j) - mb;
                        va += wts[i][j] * da * da;
                        vb += wts[i][j] * db * db;
                        cov += wts[i][j] * da * db;
                    }
                acc += ((2 * ma * mb + c1) * (2 * cov + c2)) /
                       ((ma * ma + mb * mb + c1) * (va + vb + c2));
                ++count;
            }
        }
        total += acc / count;
    }
    return total / a.channels;
}

// --- random data helpers ----------------------------------------------------

inline idf::Image random_image(int c, int h, int w, uint64_t seed, double lo = 0.0,
                               double hi = 1.0) {
    idf::Image img(c, h, w);
    idf::Rng rng(seed);
    for (size_t i = 0; i < img.values.size(); ++i) img.values[i] = rng.uniform(lo, hi);
    return img;
}

inline idf::Tensor random_tensor(std::vector<int> dims, uint64_t seed, double lo = -1.0,
                                 double hi = 1.0) {
    idf::Tensor t(std::move(dims));
    idf::Rng rng(seed);
    for (size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

// Smooth random texture: sum of a few random sinusoids plus a gradient,
// rescaled into [0.05, 0.95].
inline idf::Image random_texture(int c, int h, int w, uint64_t seed) {
    idf::Rng rng(seed);
    idf::Image img(c, h, w);
    for (int ch = 0; ch < c; ++ch) {
        const double gx = rng.uniform(-1.0, 1.0), gy = rng.uniform(-1.0, 1.0);
        double fr[4], dx[4], dy[4], ph[4], amp[4];
        for (int i = 0; i < 4; ++i) {
            fr[i] = rng.uniform(1.0, 8.0);
            const double ang = rng.uniform(0.0, 2.0 * M_PI);
            dx[i] = std::cos(ang);
            dy[i] = std::sin(ang);
            ph[i] = rng.uniform(0.0, 2.0 * M_PI);
            amp[i] = rng.uniform(0.3, 1.0);
        }
        double vmin = 1e300, vmax = -1e300;
        for (int r = 0; r < h; ++r) {
            for (int cc = 0; cc < w; ++cc) {
                const double u = static_cast<double>(cc) / w, v = static_cast<double>(r) / h;
                double val = gx * u + gy * v;
                for (int i = 0; i < 4; ++i) {
                    val += amp[i] * std::sin(2.0 * M_PI * fr[i] * (dx[i] * u + dy[i] * v) + ph[i]);
                }
                img.at(ch, r, cc) = val;
                vmin = std::min(vmin, val);
                vmax = std::max(vmax, val);
            }
        }
        const double scale = vmax > vmin ? 0.9 / (vmax - vmin) : 0.0;
        for (int r = 0; r < h; ++r)
            for (int cc = 0; cc < w; ++cc) {
                img.at(ch, r, cc) = 0.05 + (img.at(ch, r, cc) - vmin) * scale;
            }
    }
    return img;
}

}  // namespace oracle
