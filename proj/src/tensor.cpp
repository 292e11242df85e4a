#include "idf/tensor.hpp"

#include <cmath>
#include <numeric>

namespace idf {

Tensor::Tensor(std::vector<int> dims) : dims_(std::move(dims)) {
    if (dims_.empty() || dims_.size() > 3) {
        throw ValidationError("Tensor rank must be 1..3");
    }
    size_t n = 1;
    for (int d : dims_) {
        if (d <= 0) throw ValidationError("Tensor extents must be positive");
        n *= static_cast<size_t>(d);
    }
    data_.assign(n, 0.0);
}

Tensor Tensor::full(std::vector<int> dims, double value) {
    Tensor t(std::move(dims));
    t.fill(value);
    return t;
}

bool Tensor::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

void Tensor::fill(double value) { data_.assign(data_.size(), value); }

Image Image::constant(int c, int h, int w, double value) {
    Image img(c, h, w);
    img.values.fill(value);
    return img;
}

}  // namespace idf
