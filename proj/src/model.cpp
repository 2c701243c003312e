#include "evhar/model.hpp"

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace evhar {

std::vector<int> ModelConfig::scaled_channels() const {
    std::vector<int> out;
    out.reserve(channels.size());
    for (int c : channels)
        out.push_back(std::max(1, static_cast<int>(std::lround(c * channel_multiplier))));
    return out;
}

void ModelConfig::validate() const {
    if (channels.size() != 5) throw ConfigError("model requires exactly 5 conv blocks");
    for (int c : channels)
        if (c < 1) throw ConfigError("block widths must be >= 1");
    if (channel_multiplier <= 0) throw ConfigError("channel_multiplier must be > 0");
    if (input_channels != 1) throw ConfigError("model expects single-channel clips");
    if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
    if (clip_length < 1) throw ConfigError("clip_length must be >= 1");
    const int div = 1 << 5;
    if (input_height < div || input_width < div || input_height % div != 0 || input_width % div != 0)
        throw ConfigError("input resolution must be divisible by 32");
    if (dropout_rate < 0 || dropout_rate >= 1) throw ConfigError("dropout_rate must be in [0, 1)");
}

std::map<std::string, std::string> ModelConfig::to_kv() const {
    auto fmt = [](double v) {
        char buf[40];
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };
    std::string ch;
    for (size_t i = 0; i < channels.size(); ++i) ch += (i ? "," : "") + std::to_string(channels[i]);
    return {
        {"channels", ch},
        {"input_channels", std::to_string(input_channels)},
        {"num_classes", std::to_string(num_classes)},
        {"clip_length", std::to_string(clip_length)},
        {"input_height", std::to_string(input_height)},
        {"input_width", std::to_string(input_width)},
        {"dropout_rate", fmt(dropout_rate)},
        {"attention_enabled", attention_enabled ? "1" : "0"},
        {"channel_multiplier", fmt(channel_multiplier)},
    };
}

ModelConfig ModelConfig::from_kv(const std::map<std::string, std::string>& kv) {
    ModelConfig c;
    auto need = [&kv](const std::string& k) -> const std::string& {
        auto it = kv.find(k);
        if (it == kv.end()) throw FormatError("checkpoint config missing key: " + k);
        return it->second;
    };
    c.channels.clear();
    std::stringstream ss(need("channels"));
    std::string tok;
    while (std::getline(ss, tok, ',')) c.channels.push_back(std::stoi(tok));
    c.input_channels = std::stoi(need("input_channels"));
    c.num_classes = std::stoi(need("num_classes"));
    c.clip_length = std::stoi(need("clip_length"));
    c.input_height = std::stoi(need("input_height"));
    c.input_width = std::stoi(need("input_width"));
    c.dropout_rate = std::stod(need("dropout_rate"));
    c.attention_enabled = need("attention_enabled") == "1";
    c.channel_multiplier = std::stod(need("channel_multiplier"));
    c.validate();
    return c;
}

// ------------------------------------------------------------ checkpoint

uint32_t crc32(const void* data, size_t len, uint32_t seed) {
    static const auto table = [] {
        std::array<uint32_t, 256> t{};
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    uint32_t c = seed ^ 0xFFFFFFFFu;
    const auto* p = static_cast<const uint8_t*>(data);
    for (size_t i = 0; i < len; ++i) c = table[(c ^ p[i]) & 0xFF] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

namespace {

constexpr char kMagic[9] = {'E', 'V', 'H', 'A', 'R', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;
constexpr const char* kMetricPrefix = "metric.";

void put_u32(std::string& buf, uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_i64(std::string& buf, int64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((static_cast<uint64_t>(v) >> (8 * i)) & 0xff));
}

void put_f32(std::string& buf, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(buf, bits);
}

class Reader {
public:
    Reader(const char* p, size_t n) : p_(p), n_(n) {}
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(p_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }
    int64_t i64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<uint8_t>(p_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return static_cast<int64_t>(v);
    }
    float f32() {
        const uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    std::string str(size_t len) {
        need(len);
        std::string s(p_ + pos_, len);
        pos_ += len;
        return s;
    }
    size_t pos() const { return pos_; }

private:
    void need(size_t n) const {
        if (pos_ + n > n_) throw FormatError("truncated checkpoint");
    }
    const char* p_;
    size_t n_;
    size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::string& path, const ModelParams<float>& params,
                     const std::map<std::string, std::string>& meta,
                     const std::map<std::string, double>& metrics) {
    std::map<std::string, std::string> kv = params.config.to_kv();
    for (const auto& [k, v] : meta) kv[k] = v;
    for (const auto& [k, v] : metrics) {
        char buf[40];
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        kv[kMetricPrefix + k] = buf;
    }

    std::string buf;
    buf.append(kMagic, sizeof(kMagic));
    put_u32(buf, kVersion);
    put_u32(buf, static_cast<uint32_t>(kv.size()));
    for (const auto& [k, v] : kv) {
        const std::string line = k + "=" + v;
        put_u32(buf, static_cast<uint32_t>(line.size()));
        buf += line;
    }
    put_u32(buf, static_cast<uint32_t>(params.tensors.size()));
    for (const auto& p : params.tensors) {
        put_u32(buf, static_cast<uint32_t>(p.name.size()));
        buf += p.name;
        put_u32(buf, static_cast<uint32_t>(p.value.rank()));
        for (int64_t d : p.value.shape()) put_i64(buf, d);
        for (int64_t i = 0; i < p.value.size(); ++i) put_f32(buf, p.value[i]);
    }
    put_u32(buf, crc32(buf.data(), buf.size()));

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!f) throw IoError("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (buf.size() < sizeof(kMagic) + 8 || std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0)
        throw FormatError("not an EVHARCKPT file: " + path);
    const uint32_t stored_crc = crc32(buf.data(), buf.size() - 4);
    Reader tail(buf.data() + buf.size() - 4, 4);
    if (tail.u32() != stored_crc) throw FormatError("checkpoint checksum mismatch: " + path);

    Reader r(buf.data() + sizeof(kMagic), buf.size() - sizeof(kMagic) - 4);
    const uint32_t version = r.u32();
    if (version != kVersion) throw FormatError("unknown checkpoint version: " + std::to_string(version));

    std::map<std::string, std::string> kv;
    const uint32_t n_kv = r.u32();
    for (uint32_t i = 0; i < n_kv; ++i) {
        const std::string line = r.str(r.u32());
        const size_t eq = line.find('=');
        if (eq == std::string::npos) throw FormatError("malformed checkpoint key=value line");
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }

    Checkpoint ckpt;
    ckpt.params.config = ModelConfig::from_kv(kv);
    const std::map<std::string, std::string> config_kv = ckpt.params.config.to_kv();
    for (const auto& [k, v] : kv) {
        if (config_kv.count(k)) continue;
        if (k.rfind(kMetricPrefix, 0) == 0) ckpt.metrics[k.substr(std::strlen(kMetricPrefix))] = std::stod(v);
        else ckpt.meta[k] = v;
    }

    // Rebuild the declaration-order skeleton, then fill values from the blobs.
    ckpt.params = [&] {
        ModelParams<float> p = build_model<float>(ckpt.params.config, 0);
        const uint32_t n_tensors = r.u32();
        if (n_tensors != p.tensors.size()) throw FormatError("checkpoint tensor count mismatch");
        for (auto& t : p.tensors) {
            const std::string name = r.str(r.u32());
            if (name != t.name) throw FormatError("checkpoint tensor order mismatch at " + name);
            const uint32_t rank = r.u32();
            std::vector<int64_t> shape(rank);
            for (uint32_t d = 0; d < rank; ++d) shape[d] = r.i64();
            if (shape != t.value.shape()) throw FormatError("checkpoint tensor shape mismatch at " + name);
            for (int64_t i = 0; i < t.value.size(); ++i) t.value[i] = r.f32();
        }
        return p;
    }();
    Checkpoint out;
    out.params = std::move(ckpt.params);
    out.meta = std::move(ckpt.meta);
    out.metrics = std::move(ckpt.metrics);
    return out;
}

void load_checkpoint_into(const std::string& path, ModelParams<float>& params) {
    Checkpoint ckpt = load_checkpoint(path);
    const std::vector<int> want = params.config.scaled_channels();
    const std::vector<int> got = ckpt.params.config.scaled_channels();
    if (want != got || params.config.num_classes != ckpt.params.config.num_classes ||
        params.config.attention_enabled != ckpt.params.config.attention_enabled ||
        params.config.clip_length != ckpt.params.config.clip_length ||
        params.config.input_height != ckpt.params.config.input_height ||
        params.config.input_width != ckpt.params.config.input_width)
        throw FormatError("checkpoint architecture incompatible with model config");
    params = std::move(ckpt.params);
}

}  // namespace evhar
