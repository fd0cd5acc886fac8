#include "loclab/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <unordered_map>

#include <json.hpp>

#include "loclab/config_json.hpp"
#include "loclab/corpus.hpp"
#include "loclab/error.hpp"

namespace loclab {

namespace {

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct Reader {
    const std::string& buf;
    size_t pos = 0;

    void need(size_t n) const {
        if (pos + n > buf.size()) fail(errc::corrupt_checkpoint, "truncated file");
    }
    uint8_t u8() {
        need(1);
        return static_cast<uint8_t>(buf[pos++]);
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(buf[pos++])) << (8 * i);
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<uint8_t>(buf[pos++])) << (8 * i);
        return v;
    }
    std::string bytes(size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

} // namespace

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
    std::string blob;
    blob.append(kCheckpointMagic, 4);
    blob.push_back(static_cast<char>(kCheckpointVersion));

    nlohmann::json cfg = params.cfg;
    std::string cfg_text = cfg.dump();
    put_u32(blob, static_cast<uint32_t>(cfg_text.size()));
    blob += cfg_text;

    struct Entry {
        std::string name;
        std::vector<int> shape;
        uint64_t offset;
        uint64_t count;
    };
    std::vector<Entry> manifest;
    uint64_t offset = 0;
    for_each_param(params, [&](const std::string& name, std::span<const float> s,
                               std::vector<int> shape) {
        manifest.push_back({name, std::move(shape), offset, s.size()});
        offset += s.size() * sizeof(float);
    });

    put_u32(blob, static_cast<uint32_t>(manifest.size()));
    for (const auto& e : manifest) {
        if (e.name.size() > 0xffff) fail(errc::invalid_config, "tensor name too long");
        blob.push_back(static_cast<char>(e.name.size() & 0xff));
        blob.push_back(static_cast<char>((e.name.size() >> 8) & 0xff));
        blob += e.name;
        blob.push_back(static_cast<char>(e.shape.size()));
        for (int d : e.shape) put_u32(blob, static_cast<uint32_t>(d));
        put_u64(blob, e.offset);
    }

    put_u64(blob, offset);
    size_t payload_at = blob.size();
    blob.resize(blob.size() + offset);
    for_each_param(params, [&](const std::string&, std::span<const float> s, std::vector<int>) {
        std::memcpy(blob.data() + payload_at, s.data(), s.size() * sizeof(float));
        payload_at += s.size() * sizeof(float);
    });

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(errc::io_error, "cannot write " + path.string());
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) fail(errc::io_error, "short write to " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(errc::io_error, "cannot open " + path.string());
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    Reader r{buf};

    std::string magic = r.bytes(4);
    if (std::memcmp(magic.data(), kCheckpointMagic, 4) != 0)
        fail(errc::corrupt_checkpoint, "bad magic in " + path.string());
    uint8_t version = r.u8();
    if (version != kCheckpointVersion)
        fail(errc::unsupported_version, "file has version " + std::to_string(version) +
                                            ", this build reads version " +
                                            std::to_string(kCheckpointVersion));

    uint32_t cfg_len = r.u32();
    std::string cfg_text = r.bytes(cfg_len);
    ModelConfig cfg;
    try {
        cfg = nlohmann::json::parse(cfg_text).get<ModelConfig>();
        cfg.validate();
    } catch (const nlohmann::json::exception& e) {
        fail(errc::corrupt_checkpoint, std::string("bad config block: ") + e.what());
    }

    ModelParams params = zeros_like_config<float>(cfg);

    struct Entry {
        std::vector<int> shape;
        uint64_t offset = 0;
        bool seen = false;
    };
    std::unordered_map<std::string, Entry> manifest;
    uint32_t count = r.u32();
    for (uint32_t i = 0; i < count; ++i) {
        uint16_t name_len = static_cast<uint16_t>(r.u8());
        name_len |= static_cast<uint16_t>(r.u8()) << 8;
        std::string name = r.bytes(name_len);
        Entry e;
        uint8_t ndim = r.u8();
        for (uint8_t d = 0; d < ndim; ++d) e.shape.push_back(static_cast<int>(r.u32()));
        e.offset = r.u64();
        if (!manifest.emplace(std::move(name), std::move(e)).second)
            fail(errc::corrupt_checkpoint, "duplicate tensor in manifest");
    }

    uint64_t payload_len = r.u64();
    if (r.pos + payload_len != buf.size())
        fail(errc::corrupt_checkpoint, "payload length does not match file size");
    const char* payload = buf.data() + r.pos;

    uint64_t expected_total = 0;
    for_each_param(params, [&](const std::string& name, std::span<float> s,
                               std::vector<int> shape) {
        auto it = manifest.find(name);
        if (it == manifest.end())
            fail(errc::corrupt_checkpoint, "missing tensor " + name);
        Entry& e = it->second;
        if (e.shape != shape) fail(errc::corrupt_checkpoint, "shape mismatch for " + name);
        uint64_t bytes = s.size() * sizeof(float);
        if (e.offset + bytes > payload_len)
            fail(errc::corrupt_checkpoint, "tensor " + name + " overruns the payload");
        std::memcpy(s.data(), payload + e.offset, bytes);
        e.seen = true;
        expected_total += bytes;
    });
    if (expected_total != payload_len)
        fail(errc::corrupt_checkpoint, "payload size does not match the model shape");
    for (const auto& [name, e] : manifest)
        if (!e.seen) fail(errc::corrupt_checkpoint, "unexpected tensor " + name);

    return params;
}

std::string file_hash_hex(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(errc::io_error, "cannot open " + path.string());
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    uint64_t h = fnv1a(buf.data(), buf.size());
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
    return hex;
}

} // namespace loclab
