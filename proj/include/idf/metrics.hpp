// PSNR / SSIM with the usual reporting conventions: MAX = 1.0, 11×11
// Gaussian window (σ = 1.5), K1 = 0.01, K2 = 0.03, per-channel SSIM averaged
// over channels, valid (fully interior) windows only.
#pragma once

#include <string>
#include <vector>

#include "idf/tensor.hpp"

namespace idf {

// 10·log10(1/MSE) in dB, capped at 100 when MSE < 1e−10.
double psnr(const Image& a, const Image& b);

double ssim(const Image& a, const Image& b);

struct MetricReport {
    struct Row {
        std::string name;
        double psnr_db = 0.0;
        double ssim = 0.0;
    };
    std::vector<Row> per_image;
    double psnr_db = 0.0;  // means over rows
    double ssim = 0.0;

    void finalize();  // recompute the aggregate means
    std::string to_csv() const;
    std::string to_markdown() const;
};

}  // namespace idf
