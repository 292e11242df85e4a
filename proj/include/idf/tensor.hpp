// Dense row-major f64 tensor (rank 1..3) and the image/patch/kernel carriers
// built on top of it.
#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <vector>

#include "idf/common.hpp"

namespace idf {

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> dims);
    Tensor(std::initializer_list<int> dims) : Tensor(std::vector<int>(dims)) {}

    static Tensor full(std::vector<int> dims, double value);

    int rank() const { return static_cast<int>(dims_.size()); }
    int dim(int i) const { return dims_[static_cast<size_t>(i)]; }
    const std::vector<int>& dims() const { return dims_; }
    size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](size_t i) { return data_[i]; }
    double operator[](size_t i) const { return data_[i]; }

    // Rank-checked element access; last axis fastest.
    double& at(int i) { return data_[static_cast<size_t>(i)]; }
    double at(int i) const { return data_[static_cast<size_t>(i)]; }
    double& at(int i, int j) { return data_[static_cast<size_t>(i) * dims_[1] + j]; }
    double at(int i, int j) const { return data_[static_cast<size_t>(i) * dims_[1] + j]; }
    double& at(int i, int j, int k) {
        return data_[(static_cast<size_t>(i) * dims_[1] + j) * dims_[2] + k];
    }
    double at(int i, int j, int k) const {
        return data_[(static_cast<size_t>(i) * dims_[1] + j) * dims_[2] + k];
    }

    bool same_shape(const Tensor& other) const { return dims_ == other.dims_; }
    bool all_finite() const;

    void fill(double value);

private:
    std::vector<int> dims_;
    std::vector<double> data_;
};

// C×H×W raster in [0,1] at pipeline boundaries.
struct Image {
    int channels = 0;
    int height = 0;
    int width = 0;
    Tensor values;  // shape C×H×W

    Image() = default;
    Image(int c, int h, int w) : channels(c), height(h), width(w), values({c, h, w}) {}

    static Image constant(int c, int h, int w, double value);

    double& at(int ch, int r, int col) { return values.at(ch, r, col); }
    double at(int ch, int r, int col) const { return values.at(ch, r, col); }
    size_t pixel_count() const { return static_cast<size_t>(height) * width; }
    bool same_shape(const Image& other) const {
        return channels == other.channels && height == other.height && width == other.width;
    }
};

// Unfolded overlapping K×K neighborhoods: C×K²×(H·W).
struct PatchField {
    int channels = 0;
    int kernel_area = 0;
    int positions = 0;
    int dilation = 1;
    int source_height = 0;
    int source_width = 0;
    Tensor data;  // shape C×K²×M

    double at(int ch, int tap, int pos) const { return data.at(ch, tap, pos); }
};

// Per-pixel denoising kernels: 1×K²×(H·W).
struct KernelField {
    int kernel_area = 0;
    int positions = 0;
    bool normalized = false;
    int degenerate_columns = 0;  // all-zero raw columns seen during normalization
    Tensor data;                 // shape 1×K²×M

    double at(int tap, int pos) const { return data.at(0, tap, pos); }
    double& at(int tap, int pos) { return data.at(0, tap, pos); }
    int center_tap() const { return (kernel_area - 1) / 2; }
};

// Per-channel mean and population std (ddof = 0).
struct ChannelStats {
    std::vector<double> mean;
    std::vector<double> stddev;
};

}  // namespace idf
