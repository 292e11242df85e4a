// Persistence and configuration: 8-bit PNG image I/O, the binary weight-file
// format (f32 payloads, CRC32 trailer), and the flat key=value run
// configuration shared by the CLI subcommands.
#pragma once

#include <cstdint>
#include <string>

#include "idf/engine.hpp"
#include "idf/model.hpp"
#include "idf/noise.hpp"
#include "idf/tensor.hpp"
#include "idf/train.hpp"

namespace idf {

// When enabled, every path passed to the I/O routines must resolve inside the
// working directory recorded at enable time.
void set_sandbox(bool enabled);
bool sandbox_enabled();
// Throws IoError when the sandbox is enabled and the path resolves outside it.
void check_sandbox_path(const std::string& path);

// 8-bit grayscale or RGB PNG → [0,1] doubles (v/255).
Image load_image(const std::string& path);
// round(clamp01(v)·255) → 8-bit PNG; channels must be 1 or 3.
void save_image(const Image& img, const std::string& path);

// Weight file: magic "IDFW", version u32=1, tensor count u32, then per tensor
// name_len u16 + name + rank u8 + dims u32 each + f32 LE payload, and a
// trailing CRC32 over all preceding bytes.
void save_weights(const ModelWeights& w, const std::string& path);
// Shapes are validated against `cfg`; mismatches name the offending tensor.
ModelWeights load_weights(const std::string& path, const ModelConfig& cfg);

struct RunConfig {
    ModelConfig model;
    EngineConfig engine;
    TrainConfig train;  // train.noise carries the noise.* section

    bool operator==(const RunConfig& other) const;

    static RunConfig parse_text(const std::string& text);
    static RunConfig load(const std::string& path);
    // key = value lines, '#' comments; parse(render(cfg)) == cfg.
    std::string render() const;
    // Single key=value override (same keys as the file grammar).
    void set(const std::string& key, const std::string& value);
};

}  // namespace idf
