#include "idf/metrics.hpp"

#include <array>
#include <cmath>
#include <sstream>

namespace idf {
namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;  // (K1·L)², L = 1
constexpr double kC2 = 0.03 * 0.03;

std::array<double, kWindow> gaussian_window() {
    std::array<double, kWindow> w{};
    double sum = 0.0;
    for (int i = 0; i < kWindow; ++i) {
        const double d = i - (kWindow - 1) / 2.0;
        w[static_cast<size_t>(i)] = std::exp(-d * d / (2.0 * kSigma * kSigma));
        sum += w[static_cast<size_t>(i)];
    }
    for (double& v : w) v /= sum;
    return w;
}

// Separable valid-mode filtering with the normalized Gaussian window.
// src is h×w; out is (h−10)×(w−10).
void gauss_valid(const std::vector<double>& src, int h, int w,
                 const std::array<double, kWindow>& win, std::vector<double>& scratch,
                 std::vector<double>& out) {
    const int ow = w - kWindow + 1;
    const int oh = h - kWindow + 1;
    scratch.resize(static_cast<size_t>(h) * ow);
    for (int r = 0; r < h; ++r) {
        const double* srow = src.data() + static_cast<size_t>(r) * w;
        double* drow = scratch.data() + static_cast<size_t>(r) * ow;
        for (int c = 0; c < ow; ++c) {
            double s = 0.0;
            for (int i = 0; i < kWindow; ++i) s += win[static_cast<size_t>(i)] * srow[c + i];
            drow[c] = s;
        }
    }
    out.resize(static_cast<size_t>(oh) * ow);
    for (int r = 0; r < oh; ++r) {
        double* drow = out.data() + static_cast<size_t>(r) * ow;
        for (int c = 0; c < ow; ++c) {
            double s = 0.0;
            for (int i = 0; i < kWindow; ++i) {
                s += win[static_cast<size_t>(i)] * scratch[static_cast<size_t>(r + i) * ow + c];
            }
            drow[c] = s;
        }
    }
}

void require_same_shape(const Image& a, const Image& b, const char* who) {
    if (!a.same_shape(b)) {
        throw ValidationError(std::string(who) + ": image dimensions disagree");
    }
}

}  // namespace

double psnr(const Image& a, const Image& b) {
    require_same_shape(a, b, "psnr");
    const double* pa = a.values.data();
    const double* pb = b.values.data();
    const size_t n = a.values.size();
    double se = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double d = pa[i] - pb[i];
        se += d * d;
    }
    const double mse = se / static_cast<double>(n);
    if (mse < 1e-10) return 100.0;
    return 10.0 * std::log10(1.0 / mse);
}

double ssim(const Image& a, const Image& b) {
    require_same_shape(a, b, "ssim");
    if (a.height < kWindow || a.width < kWindow) {
        throw ValidationError("ssim: image smaller than the 11x11 window");
    }
    static const std::array<double, kWindow> win = gaussian_window();
    const int h = a.height, w = a.width;
    const size_t hw = static_cast<size_t>(h) * w;
    const int oh = h - kWindow + 1, ow = w - kWindow + 1;

    std::vector<double> xa(hw), xb(hw), aa(hw), bb(hw), ab(hw);
    std::vector<double> mu_a, mu_b, m_aa, m_bb, m_ab, scratch;

    double total = 0.0;
    for (int ch = 0; ch < a.channels; ++ch) {
        const double* pa = a.values.data() + static_cast<size_t>(ch) * hw;
        const double* pb = b.values.data() + static_cast<size_t>(ch) * hw;
        for (size_t i = 0; i < hw; ++i) {
            xa[i] = pa[i];
            xb[i] = pb[i];
            aa[i] = pa[i] * pa[i];
            bb[i] = pb[i] * pb[i];
            ab[i] = pa[i] * pb[i];
        }
        gauss_valid(xa, h, w, win, scratch, mu_a);
        gauss_valid(xb, h, w, win, scratch, mu_b);
        gauss_valid(aa, h, w, win, scratch, m_aa);
        gauss_valid(bb, h, w, win, scratch, m_bb);
        gauss_valid(ab, h, w, win, scratch, m_ab);
        double acc = 0.0;
        const size_t on = static_cast<size_t>(oh) * ow;
        for (size_t i = 0; i < on; ++i) {
            const double ma = mu_a[i], mb = mu_b[i];
            const double va = m_aa[i] - ma * ma;
            const double vb = m_bb[i] - mb * mb;
            const double cov = m_ab[i] - ma * mb;
            acc += ((2.0 * ma * mb + kC1) * (2.0 * cov + kC2)) /
                   ((ma * ma + mb * mb + kC1) * (va + vb + kC2));
        }
        total += acc / static_cast<double>(on);
    }
    return total / static_cast<double>(a.channels);
}

void MetricReport::finalize() {
    double ps = 0.0, ss = 0.0;
    for (const Row& r : per_image) {
        ps += r.psnr_db;
        ss += r.ssim;
    }
    const double n = per_image.empty() ? 1.0 : static_cast<double>(per_image.size());
    psnr_db = ps / n;
    ssim = ss / n;
}

namespace {
// RFC-4180: quote fields containing comma, quote or newline.
std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}
}  // namespace

std::string MetricReport::to_csv() const {
    std::ostringstream os;
    os.precision(6);
    os << std::fixed;
    os << "name,psnr_db,ssim\n";
    for (const Row& r : per_image) {
        os << csv_field(r.name) << ',' << r.psnr_db << ',' << r.ssim << '\n';
    }
    os << "mean," << psnr_db << ',' << ssim << '\n';
    return os.str();
}

std::string MetricReport::to_markdown() const {
    std::ostringstream os;
    os.precision(4);
    os << std::fixed;
    os << "| name | PSNR (dB) | SSIM |\n|---|---|---|\n";
    for (const Row& r : per_image) {
        os << "| " << r.name << " | " << r.psnr_db << " | " << r.ssim << " |\n";
    }
    os << "| **mean** | " << psnr_db << " | " << ssim << " |\n";
    return os.str();
}

}  // namespace idf
