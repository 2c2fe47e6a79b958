#include "mmt/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

namespace mmt {

namespace {

constexpr char kMagic[4] = {'M', 'M', 'C', 'K'};

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

struct Reader {
    std::ifstream is;
    std::string path;
    std::size_t offset = 0;

    [[noreturn]] void fail(const std::string& what) const {
        throw io_error(path + ": " + what + " at offset " + std::to_string(offset));
    }

    void read(void* dst, std::size_t n, const char* what) {
        if (!is.read(static_cast<char*>(dst), static_cast<std::streamsize>(n)))
            fail(std::string("truncated ") + what);
        offset += n;
    }

    std::uint32_t u32(const char* what) {
        unsigned char b[4];
        read(b, 4, what);
        return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
               (static_cast<std::uint32_t>(b[2]) << 16) |
               (static_cast<std::uint32_t>(b[3]) << 24);
    }

    bool at_eof() {
        is.peek();
        return is.eof();
    }
};

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw io_error("cannot open for writing: " + path);
    os.write(kMagic, 4);
    put_u32(os, Checkpoint::kVersion);
    put_u32(os, static_cast<std::uint32_t>(ckpt.meta_json.size()));
    os.write(ckpt.meta_json.data(), static_cast<std::streamsize>(ckpt.meta_json.size()));
    for (const auto& t : ckpt.tensors) {
        put_u32(os, static_cast<std::uint32_t>(t.name.size()));
        os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        put_u32(os, static_cast<std::uint32_t>(t.shape.size()));
        for (std::size_t d : t.shape) put_u32(os, static_cast<std::uint32_t>(d));
        if (t.data.size() != numel(t.shape))
            throw internal_error("checkpoint tensor " + t.name + " has inconsistent size");
        os.write(reinterpret_cast<const char*>(t.data.data()),
                 static_cast<std::streamsize>(t.data.size() * 4));
    }
    if (!os) throw io_error("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    Reader r;
    r.path = path;
    r.is.open(path, std::ios::binary);
    if (!r.is) throw io_error("cannot open: " + path);

    char magic[4];
    r.read(magic, 4, "magic");
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw io_error(path + ": bad magic bytes at offset 0 (not an MMCK checkpoint)");
    const std::uint32_t version = r.u32("version");
    if (version != Checkpoint::kVersion)
        throw io_error(path + ": unsupported checkpoint version " + std::to_string(version));

    Checkpoint ckpt;
    const std::uint32_t meta_len = r.u32("metadata length");
    ckpt.meta_json.resize(meta_len);
    if (meta_len > 0) r.read(ckpt.meta_json.data(), meta_len, "metadata block");

    while (!r.at_eof()) {
        Checkpoint::NamedTensor t;
        const std::uint32_t name_len = r.u32("tensor name length");
        if (name_len > 4096) r.fail("implausible tensor name length");
        t.name.resize(name_len);
        r.read(t.name.data(), name_len, "tensor name");
        const std::uint32_t rank = r.u32("tensor rank");
        if (rank > 8) r.fail("implausible tensor rank");
        for (std::uint32_t i = 0; i < rank; ++i) t.shape.push_back(r.u32("tensor dim"));
        t.data.resize(numel(t.shape));
        r.read(t.data.data(), t.data.size() * 4, "tensor data");
        ckpt.tensors.push_back(std::move(t));
    }
    return ckpt;
}

void append_store(Checkpoint& ckpt, const ParamStore<float>& store, const std::string& prefix) {
    for (const auto& p : store) {
        ckpt.tensors.push_back({prefix + p.name, p.shape, p.value});
        // moment buffers are lazy; untouched means zeros
        auto moments = [&](const std::vector<float>& m) {
            return m.empty() ? std::vector<float>(p.size(), 0.0f) : m;
        };
        ckpt.tensors.push_back({prefix + p.name + "#m", p.shape, moments(p.adam_m)});
        ckpt.tensors.push_back({prefix + p.name + "#v", p.shape, moments(p.adam_v)});
    }
}

void load_store(const Checkpoint& ckpt, ParamStore<float>& store, const std::string& prefix) {
    for (auto& p : store) {
        const auto* tv = ckpt.find(prefix + p.name);
        const auto* tm = ckpt.find(prefix + p.name + "#m");
        const auto* tvv = ckpt.find(prefix + p.name + "#v");
        if (!tv || !tm || !tvv)
            throw io_error("checkpoint is missing tensor '" + prefix + p.name + "'");
        if (tv->shape != p.shape)
            throw io_error("checkpoint tensor '" + prefix + p.name + "' has shape " +
                           shape_str(tv->shape) + ", expected " + shape_str(p.shape));
        p.value = tv->data;
        p.adam_m = tm->data;
        p.adam_v = tvv->data;
    }
}

std::vector<std::pair<std::string, std::size_t>> checkpoint_component_counts(
    const Checkpoint& ckpt, const std::string& prefix) {
    std::map<std::string, std::size_t> acc;
    for (const auto& t : ckpt.tensors) {
        if (t.name.rfind(prefix, 0) != 0) continue;
        if (t.name.find('#') != std::string::npos) continue;  // optimizer moments
        std::string rest = t.name.substr(prefix.size());
        rest = rest.substr(0, rest.find('.'));
        acc[rest] += t.data.size();
    }
    return {acc.begin(), acc.end()};
}

}  // namespace mmt
