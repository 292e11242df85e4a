// Seeded synthetic noise: Gaussian, spatially correlated Gaussian, Poisson
// shot noise, salt-and-pepper, speckle, and the four sequential mixture
// levels. All synthesizers are deterministic given the Rng value.
#pragma once

#include <cstdint>
#include <string>

#include "idf/tensor.hpp"

namespace idf {

// Counter-based generator (splitmix64 stream): identical seed + call sequence
// gives an identical stream, and fork() derives independent substreams so
// corpora can be generated in parallel deterministically.
class Rng {
public:
    explicit Rng(uint64_t seed) : key_(seed) {}

    uint64_t next_u64();
    double uniform01();                     // [0, 1)
    double uniform(double lo, double hi);   // [lo, hi)
    double normal();                        // N(0, 1), Box-Muller pair cached
    int64_t poisson(double lambda);

    Rng fork(uint64_t stream_id) const;

private:
    uint64_t key_ = 0;
    uint64_t counter_ = 0;
    bool have_cached_normal_ = false;
    double cached_normal_ = 0.0;
};

enum class NoiseKind { gaussian, spatial_gaussian, poisson, salt_pepper, speckle, mixture };

struct NoiseSpec {
    NoiseKind kind = NoiseKind::gaussian;
    double sigma = 15.0;    // gaussian / spatial_gaussian, in 0..255 units
    double alpha = 2.5;     // poisson magnitude
    double density = 0.02;  // salt-and-pepper corruption probability
    double variance = 0.04; // speckle variance in [0,1]² units
    int level = 1;          // mixture level 1..4
    uint64_t seed = 0;

    void validate() const;
    // Compact grammar: kind[:param=value[,param=value]], e.g. "gaussian:sigma=25".
    static NoiseSpec parse(const std::string& text);
    std::string render() const;
};

Image add_gaussian(const Image& img, double sigma255, Rng& rng);
Image add_spatial_gaussian(const Image& img, double sigma255, Rng& rng);
Image add_poisson(const Image& img, double alpha, Rng& rng);
Image add_salt_pepper(const Image& img, double density, Rng& rng);
Image add_speckle(const Image& img, double variance, Rng& rng);
// Sequential mixture: Gaussian(σ_g²) → speckle(σ_s1²) → Poisson(α) →
// salt-and-pepper(d) → speckle(σ_s2²); variances in [0,1]² units.
Image add_mixture(const Image& img, int level, Rng& rng);

// Dispatch on spec.kind; rng is forked internally from spec.seed.
Image apply_noise(const Image& img, const NoiseSpec& spec);
// Same dispatch on a caller-provided stream (spec.seed ignored).
Image apply_noise(const Image& img, const NoiseSpec& spec, Rng& rng);

}  // namespace idf
