#include "idf/noise.hpp"

#include <cmath>
#include <cstdio>
#include <vector>

namespace idf {
namespace {

constexpr uint64_t kGolden = 0x9E3779B97F4A7C15ull;

inline uint64_t mix64(uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ull;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBull;
    z ^= z >> 31;
    return z;
}

// 3×3 box average with replicate padding, per channel.
Tensor box3x3(const Tensor& t) {
    const int c = t.dim(0), h = t.dim(1), w = t.dim(2);
    Tensor out({c, h, w});
    auto cl = [](int v, int hi) { return v < 0 ? 0 : (v > hi ? hi : v); };
    for (int ch = 0; ch < c; ++ch) {
        const double* src = t.data() + static_cast<size_t>(ch) * h * w;
        double* dst = out.data() + static_cast<size_t>(ch) * h * w;
        for (int r = 0; r < h; ++r) {
            for (int col = 0; col < w; ++col) {
                double s = 0.0;
                for (int dr = -1; dr <= 1; ++dr) {
                    const double* srow = src + static_cast<size_t>(cl(r + dr, h - 1)) * w;
                    for (int dc = -1; dc <= 1; ++dc) s += srow[cl(col + dc, w - 1)];
                }
                dst[static_cast<size_t>(r) * w + col] = s / 9.0;
            }
        }
    }
    return out;
}

// Additive Gaussian with the std given in [0,1] units.
Image add_gaussian01(const Image& img, double sigma01, Rng& rng) {
    if (sigma01 == 0.0) return img;
    Image out = img;
    double* d = out.values.data();
    for (size_t i = 0; i < out.values.size(); ++i) d[i] = clamp01(d[i] + sigma01 * rng.normal());
    return out;
}

struct MixtureParams {
    double gaussian_var, speckle1_var, alpha, density, speckle2_var;
};

MixtureParams mixture_params(int level) {
    switch (level) {
        case 1: return {0.003, 0.003, 1.0, 0.002, 0.003};
        case 2: return {0.004, 0.004, 1.0, 0.002, 0.003};
        case 3: return {0.006, 0.006, 1.0, 0.003, 0.006};
        case 4: return {0.008, 0.008, 1.0, 0.004, 0.008};
        default: throw ValidationError("mixture level must be 1..4");
    }
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

uint64_t Rng::next_u64() { return mix64(key_ + (++counter_) * kGolden); }

double Rng::uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

double Rng::normal() {
    if (have_cached_normal_) {
        have_cached_normal_ = false;
        return cached_normal_;
    }
    const double u1 = 1.0 - uniform01();  // (0, 1]
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    cached_normal_ = r * std::sin(theta);
    have_cached_normal_ = true;
    return r * std::cos(theta);
}

int64_t Rng::poisson(double lambda) {
    if (lambda <= 0.0) return 0;
    if (lambda < 30.0) {
        // Knuth's multiplication method.
        const double limit = std::exp(-lambda);
        int64_t k = 0;
        double p = 1.0;
        do {
            ++k;
            p *= uniform01();
        } while (p > limit);
        return k - 1;
    }
    // Hörmann's transformed rejection with squeeze (PTRS).
    const double b = 0.931 + 2.53 * std::sqrt(lambda);
    const double a = -0.059 + 0.02483 * b;
    const double inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    const double v_r = 0.9277 - 3.6224 / (b - 2.0);
    const double log_lambda = std::log(lambda);
    for (;;) {
        double u = uniform01() - 0.5;
        double v = uniform01();
        const double us = 0.5 - std::fabs(u);
        const double kf = std::floor((2.0 * a / us + b) * u + lambda + 0.43);
        if (us >= 0.07 && v <= v_r) return static_cast<int64_t>(kf);
        if (kf < 0.0 || (us < 0.013 && v > us)) continue;
        const double lhs = std::log(v * inv_alpha / (a / (us * us) + b));
        if (lhs <= kf * log_lambda - lambda - std::lgamma(kf + 1.0)) {
            return static_cast<int64_t>(kf);
        }
    }
}

Rng Rng::fork(uint64_t stream_id) const {
    return Rng(mix64(mix64(key_ ^ 0xD1B54A32D192ED03ull) + stream_id * kGolden));
}

void NoiseSpec::validate() const {
    if (sigma < 0.0) throw ValidationError("noise: sigma must be >= 0");
    if (alpha < 0.0) throw ValidationError("noise: alpha must be >= 0");
    if (density < 0.0 || density > 1.0) throw ValidationError("noise: density must be in [0,1]");
    if (variance < 0.0) throw ValidationError("noise: variance must be >= 0");
    if (level < 1 || level > 4) throw ValidationError("noise: mixture level must be 1..4");
}

Image add_gaussian(const Image& img, double sigma255, Rng& rng) {
    if (sigma255 < 0.0) throw ValidationError("add_gaussian: sigma must be >= 0");
    return add_gaussian01(img, sigma255 / 255.0, rng);
}

Image add_spatial_gaussian(const Image& img, double sigma255, Rng& rng) {
    if (sigma255 < 0.0) throw ValidationError("add_spatial_gaussian: sigma must be >= 0");
    if (sigma255 == 0.0) return img;
    const double sigma01 = sigma255 / 255.0;
    Tensor noise({img.channels, img.height, img.width});
    double* nd = noise.data();
    for (size_t i = 0; i < noise.size(); ++i) nd[i] = sigma01 * rng.normal();
    Tensor smoothed = box3x3(noise);
    Image out = img;
    double* d = out.values.data();
    const double* sm = smoothed.data();
    for (size_t i = 0; i < out.values.size(); ++i) d[i] = clamp01(d[i] + sm[i]);
    return out;
}

Image add_poisson(const Image& img, double alpha, Rng& rng) {
    if (alpha < 0.0) throw ValidationError("add_poisson: alpha must be >= 0");
    if (alpha == 0.0) return img;
    Image out = img;
    double* d = out.values.data();
    for (size_t i = 0; i < out.values.size(); ++i) {
        const double v = d[i];
        // Zero-mean shot noise at 8-bit photon scale: n = Pois(255·v)/255 − v.
        const double n = static_cast<double>(rng.poisson(v * 255.0)) / 255.0 - v;
        d[i] = clamp01(v + alpha * n);
    }
    return out;
}

Image add_salt_pepper(const Image& img, double density, Rng& rng) {
    if (density < 0.0 || density > 1.0) {
        throw ValidationError("add_salt_pepper: density must be in [0,1]");
    }
    Image out = img;
    const size_t m = out.pixel_count();
    for (size_t j = 0; j < m; ++j) {
        if (rng.uniform01() >= density) continue;
        const double v = rng.uniform01() < 0.5 ? 1.0 : 0.0;
        for (int ch = 0; ch < out.channels; ++ch) {
            out.values.data()[static_cast<size_t>(ch) * m + j] = v;
        }
    }
    return out;
}

Image add_speckle(const Image& img, double variance, Rng& rng) {
    if (variance < 0.0) throw ValidationError("add_speckle: variance must be >= 0");
    if (variance == 0.0) return img;
    const double bound = std::sqrt(3.0 * variance);  // uniform with the requested variance
    Image out = img;
    double* d = out.values.data();
    for (size_t i = 0; i < out.values.size(); ++i) {
        const double v = d[i];
        d[i] = clamp01(v + rng.uniform(-bound, bound) * v);
    }
    return out;
}

Image add_mixture(const Image& img, int level, Rng& rng) {
    const MixtureParams p = mixture_params(level);
    Image out = add_gaussian01(img, std::sqrt(p.gaussian_var), rng);
    out = add_speckle(out, p.speckle1_var, rng);
    out = add_poisson(out, p.alpha, rng);
    out = add_salt_pepper(out, p.density, rng);
    out = add_speckle(out, p.speckle2_var, rng);
    return out;
}

Image apply_noise(const Image& img, const NoiseSpec& spec) {
    Rng rng(spec.seed);
    return apply_noise(img, spec, rng);
}

Image apply_noise(const Image& img, const NoiseSpec& spec, Rng& rng) {
    spec.validate();
    switch (spec.kind) {
        case NoiseKind::gaussian: return add_gaussian(img, spec.sigma, rng);
        case NoiseKind::spatial_gaussian: return add_spatial_gaussian(img, spec.sigma, rng);
        case NoiseKind::poisson: return add_poisson(img, spec.alpha, rng);
        case NoiseKind::salt_pepper: return add_salt_pepper(img, spec.density, rng);
        case NoiseKind::speckle: return add_speckle(img, spec.variance, rng);
        case NoiseKind::mixture: return add_mixture(img, spec.level, rng);
    }
    throw ValidationError("apply_noise: unknown noise kind");
}

NoiseSpec NoiseSpec::parse(const std::string& text) {
    NoiseSpec spec;
    const size_t colon = text.find(':');
    const std::string kind = text.substr(0, colon);
    if (kind == "gaussian") spec.kind = NoiseKind::gaussian;
    else if (kind == "spatial_gaussian" || kind == "spatial-gaussian") spec.kind = NoiseKind::spatial_gaussian;
    else if (kind == "poisson") spec.kind = NoiseKind::poisson;
    else if (kind == "salt_pepper" || kind == "salt-pepper") spec.kind = NoiseKind::salt_pepper;
    else if (kind == "speckle") spec.kind = NoiseKind::speckle;
    else if (kind == "mixture") spec.kind = NoiseKind::mixture;
    else throw ValidationError("unknown noise kind: " + kind);

    if (colon != std::string::npos) {
        std::string rest = text.substr(colon + 1);
        size_t pos = 0;
        while (pos < rest.size()) {
            size_t end = rest.find(',', pos);
            if (end == std::string::npos) end = rest.size();
            const std::string item = rest.substr(pos, end - pos);
            const size_t eq = item.find('=');
            if (eq == std::string::npos) throw ValidationError("noise param must be key=value: " + item);
            const std::string key = item.substr(0, eq);
            const std::string value = item.substr(eq + 1);
            try {
                if (key == "sigma") spec.sigma = std::stod(value);
                else if (key == "alpha") spec.alpha = std::stod(value);
                else if (key == "density") spec.density = std::stod(value);
                else if (key == "variance") spec.variance = std::stod(value);
                else if (key == "level") spec.level = std::stoi(value);
                else throw ValidationError("unknown noise param: " + key);
            } catch (const std::invalid_argument&) {
                throw ValidationError("bad noise param value: " + item);
            }
            pos = end + 1;
        }
    }
    spec.validate();
    return spec;
}

std::string NoiseSpec::render() const {
    switch (kind) {
        case NoiseKind::gaussian: return "gaussian:sigma=" + format_double(sigma);
        case NoiseKind::spatial_gaussian: return "spatial_gaussian:sigma=" + format_double(sigma);
        case NoiseKind::poisson: return "poisson:alpha=" + format_double(alpha);
        case NoiseKind::salt_pepper: return "salt_pepper:density=" + format_double(density);
        case NoiseKind::speckle: return "speckle:variance=" + format_double(variance);
        case NoiseKind::mixture: return "mixture:level=" + std::to_string(level);
    }
    throw ValidationError("render: unknown noise kind");
}

}  // namespace idf
