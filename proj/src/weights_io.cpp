#include <zlib.h>

#include <cstring>
#include <fstream>
#include <vector>

#include "idf/io.hpp"

namespace idf {
namespace {

constexpr char kMagic[4] = {'I', 'D', 'F', 'W'};
constexpr uint32_t kVersion = 1;

void put_u16(std::vector<uint8_t>& buf, uint16_t v) {
    buf.push_back(static_cast<uint8_t>(v & 0xff));
    buf.push_back(static_cast<uint8_t>(v >> 8));
}

void put_u32(std::vector<uint8_t>& buf, uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

void put_f32(std::vector<uint8_t>& buf, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(buf, bits);
}

struct Reader {
    const uint8_t* p;
    size_t remaining;
    void need(size_t n) const {
        if (n > remaining) throw ValidationError("weight file truncated");
    }
    uint16_t u16() {
        need(2);
        uint16_t v = static_cast<uint16_t>(p[0] | (p[1] << 8));
        p += 2;
        remaining -= 2;
        return v;
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[i]) << (8 * i);
        p += 4;
        remaining -= 4;
        return v;
    }
    uint8_t u8() {
        need(1);
        uint8_t v = p[0];
        ++p;
        --remaining;
        return v;
    }
    std::string str(size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(p), n);
        p += n;
        remaining -= n;
        return s;
    }
    float f32() {
        const uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
};

}  // namespace

void save_weights(const ModelWeights& w, const std::string& path) {
    check_sandbox_path(path);
    const auto tensors = w.named_tensors();
    std::vector<uint8_t> buf;
    buf.insert(buf.end(), kMagic, kMagic + 4);
    put_u32(buf, kVersion);
    put_u32(buf, static_cast<uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        put_u16(buf, static_cast<uint16_t>(name.size()));
        buf.insert(buf.end(), name.begin(), name.end());
        buf.push_back(static_cast<uint8_t>(t->rank()));
        for (int i = 0; i < t->rank(); ++i) put_u32(buf, static_cast<uint32_t>(t->dim(i)));
        for (size_t i = 0; i < t->size(); ++i) put_f32(buf, static_cast<float>((*t)[i]));
    }
    const uint32_t crc = static_cast<uint32_t>(
        crc32(crc32(0L, Z_NULL, 0), buf.data(), static_cast<uInt>(buf.size())));
    put_u32(buf, crc);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot create weight file: " + path);
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("write failed: " + path);
}

ModelWeights load_weights(const std::string& path, const ModelConfig& cfg) {
    check_sandbox_path(path);
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open weight file: " + path);
    std::vector<uint8_t> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() < 16) throw ValidationError("weight file truncated");

    const uint32_t stored_crc = static_cast<uint32_t>(buf[buf.size() - 4]) |
                                static_cast<uint32_t>(buf[buf.size() - 3]) << 8 |
                                static_cast<uint32_t>(buf[buf.size() - 2]) << 16 |
                                static_cast<uint32_t>(buf[buf.size() - 1]) << 24;
    const uint32_t actual_crc = static_cast<uint32_t>(
        crc32(crc32(0L, Z_NULL, 0), buf.data(), static_cast<uInt>(buf.size() - 4)));
    if (stored_crc != actual_crc) {
        throw ValidationError("weight file CRC mismatch (corrupt file)");
    }

    Reader rd{buf.data(), buf.size() - 4};
    if (std::memcmp(rd.str(4).data(), kMagic, 4) != 0) {
        throw ValidationError("bad weight file magic (expected IDFW)");
    }
    if (rd.u32() != kVersion) throw ValidationError("unsupported weight file version");

    ModelWeights w;
    w.config = cfg;
    // Shape template: tensors get their expected dims from the config.
    ModelWeights expected = ModelWeights::init(cfg, 0);
    auto dst = w.named_tensors();
    auto exp = expected.named_tensors();

    const uint32_t count = rd.u32();
    if (count != dst.size()) {
        throw ValidationError("weight file tensor count mismatch: expected " +
                              std::to_string(dst.size()) + ", found " + std::to_string(count));
    }
    for (size_t i = 0; i < dst.size(); ++i) {
        const std::string name = rd.str(rd.u16());
        if (name != dst[i].first) {
            throw ValidationError("unexpected tensor '" + name + "' (expected '" +
                                  dst[i].first + "')");
        }
        const int rank = rd.u8();
        if (rank != exp[i].second->rank()) {
            throw ValidationError("shape mismatch for tensor '" + name + "'");
        }
        std::vector<int> dims(static_cast<size_t>(rank));
        for (int d = 0; d < rank; ++d) dims[static_cast<size_t>(d)] = static_cast<int>(rd.u32());
        if (dims != exp[i].second->dims()) {
            throw ValidationError("shape mismatch for tensor '" + name + "'");
        }
        Tensor t(dims);
        for (size_t j = 0; j < t.size(); ++j) t[j] = static_cast<double>(rd.f32());
        *dst[i].second = std::move(t);
    }
    if (rd.remaining != 0) throw ValidationError("weight file has trailing bytes");
    return w;
}

}  // namespace idf
