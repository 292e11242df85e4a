#include <cstdio>
#include <fstream>
#include <sstream>

#include "idf/io.hpp"

namespace idf {
namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

double parse_double(const std::string& key, const std::string& value) {
    try {
        size_t pos = 0;
        double v = std::stod(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ValidationError("bad numeric value for " + key + ": " + value);
    }
}

int parse_int(const std::string& key, const std::string& value) {
    try {
        size_t pos = 0;
        int v = std::stoi(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ValidationError("bad integer value for " + key + ": " + value);
    }
}

uint64_t parse_u64(const std::string& key, const std::string& value) {
    try {
        size_t pos = 0;
        uint64_t v = std::stoull(value, &pos);
        if (pos != value.size()) throw std::invalid_argument(value);
        return v;
    } catch (const std::exception&) {
        throw ValidationError("bad seed value for " + key + ": " + value);
    }
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw ValidationError("bad boolean value for " + key + ": " + value);
}

std::string noise_kind_name(NoiseKind k) {
    switch (k) {
        case NoiseKind::gaussian: return "gaussian";
        case NoiseKind::spatial_gaussian: return "spatial_gaussian";
        case NoiseKind::poisson: return "poisson";
        case NoiseKind::salt_pepper: return "salt_pepper";
        case NoiseKind::speckle: return "speckle";
        case NoiseKind::mixture: return "mixture";
    }
    return "?";
}

NoiseKind noise_kind_from(const std::string& s) {
    if (s == "gaussian") return NoiseKind::gaussian;
    if (s == "spatial_gaussian") return NoiseKind::spatial_gaussian;
    if (s == "poisson") return NoiseKind::poisson;
    if (s == "salt_pepper") return NoiseKind::salt_pepper;
    if (s == "speckle") return NoiseKind::speckle;
    if (s == "mixture") return NoiseKind::mixture;
    throw ValidationError("unknown noise kind: " + s);
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
    if (key == "model.channels") model.channels = parse_int(key, value);
    else if (key == "model.hidden_width") model.hidden_width = parse_int(key, value);
    else if (key == "model.lcm_window") model.lcm_window = parse_int(key, value);
    else if (key == "engine.max_iterations") engine.max_iterations = parse_int(key, value);
    else if (key == "engine.stop_mode") engine.stop_mode = stop_mode_from_string(value);
    else if (key == "engine.kappa") engine.kappa = parse_double(key, value);
    else if (key == "engine.kernel_size") {
        engine.kernel_size = parse_int(key, value);
        model.kernel_size = engine.kernel_size;
    } else if (key == "engine.power_p") {
        engine.power_p = parse_double(key, value);
        model.power_p = engine.power_p;
    } else if (key == "engine.trace_level") engine.trace_level = trace_level_from_string(value);
    else if (key == "engine.confidence_mean_abs") engine.confidence_mean_abs = parse_bool(key, value);
    else if (key == "train.steps") train.steps = parse_int(key, value);
    else if (key == "train.batch_size") train.batch_size = parse_int(key, value);
    else if (key == "train.patch_size") train.patch_size = parse_int(key, value);
    else if (key == "train.unroll_iterations") train.unroll_iterations = parse_int(key, value);
    else if (key == "train.learning_rate") train.adamw.learning_rate = parse_double(key, value);
    else if (key == "train.beta1") train.adamw.beta1 = parse_double(key, value);
    else if (key == "train.beta2") train.adamw.beta2 = parse_double(key, value);
    else if (key == "train.eps") train.adamw.eps = parse_double(key, value);
    else if (key == "train.weight_decay") train.adamw.weight_decay = parse_double(key, value);
    else if (key == "train.seed") train.seed = parse_u64(key, value);
    else if (key == "train.clamp_adjoint") train.clamp_adjoint = clamp_adjoint_from_string(value);
    else if (key == "train.checkpoint_every") train.checkpoint_every = parse_int(key, value);
    else if (key == "train.checkpoint_dir") train.checkpoint_dir = value;
    else if (key == "noise.kind") train.noise.kind = noise_kind_from(value);
    else if (key == "noise.sigma") train.noise.sigma = parse_double(key, value);
    else if (key == "noise.alpha") train.noise.alpha = parse_double(key, value);
    else if (key == "noise.density") train.noise.density = parse_double(key, value);
    else if (key == "noise.variance") train.noise.variance = parse_double(key, value);
    else if (key == "noise.level") train.noise.level = parse_int(key, value);
    else if (key == "noise.seed") train.noise.seed = parse_u64(key, value);
    else throw ValidationError("unknown config key: " + key);
}

RunConfig RunConfig::parse_text(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ValidationError("config line " + std::to_string(lineno) +
                                  " is not key = value: " + line);
        }
        cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
    check_sandbox_path(path);
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_text(ss.str());
}

std::string RunConfig::render() const {
    std::ostringstream os;
    os << "model.channels = " << model.channels << '\n';
    os << "model.hidden_width = " << model.hidden_width << '\n';
    os << "model.lcm_window = " << model.lcm_window << '\n';
    os << "engine.max_iterations = " << engine.max_iterations << '\n';
    os << "engine.stop_mode = " << to_string(engine.stop_mode) << '\n';
    os << "engine.kappa = " << fmt(engine.kappa) << '\n';
    os << "engine.kernel_size = " << engine.kernel_size << '\n';
    os << "engine.power_p = " << fmt(engine.power_p) << '\n';
    os << "engine.trace_level = " << to_string(engine.trace_level) << '\n';
    os << "engine.confidence_mean_abs = " << (engine.confidence_mean_abs ? "true" : "false")
       << '\n';
    os << "train.steps = " << train.steps << '\n';
    os << "train.batch_size = " << train.batch_size << '\n';
    os << "train.patch_size = " << train.patch_size << '\n';
    os << "train.unroll_iterations = " << train.unroll_iterations << '\n';
    os << "train.learning_rate = " << fmt(train.adamw.learning_rate) << '\n';
    os << "train.beta1 = " << fmt(train.adamw.beta1) << '\n';
    os << "train.beta2 = " << fmt(train.adamw.beta2) << '\n';
    os << "train.eps = " << fmt(train.adamw.eps) << '\n';
    os << "train.weight_decay = " << fmt(train.adamw.weight_decay) << '\n';
    os << "train.seed = " << train.seed << '\n';
    os << "train.clamp_adjoint = " << to_string(train.clamp_adjoint) << '\n';
    os << "train.checkpoint_every = " << train.checkpoint_every << '\n';
    if (!train.checkpoint_dir.empty()) {
        os << "train.checkpoint_dir = " << train.checkpoint_dir << '\n';
    }
    os << "noise.kind = " << noise_kind_name(train.noise.kind) << '\n';
    os << "noise.sigma = " << fmt(train.noise.sigma) << '\n';
    os << "noise.alpha = " << fmt(train.noise.alpha) << '\n';
    os << "noise.density = " << fmt(train.noise.density) << '\n';
    os << "noise.variance = " << fmt(train.noise.variance) << '\n';
    os << "noise.level = " << train.noise.level << '\n';
    os << "noise.seed = " << train.noise.seed << '\n';
    return os.str();
}

bool RunConfig::operator==(const RunConfig& other) const {
    // render() covers every settable field, so textual equality is config
    // equality.
    return render() == other.render();
}

}  // namespace idf
