#include "sqa/weights_io.hpp"

#include <cstring>
#include <fstream>
#include <map>

#include "sqa/error.hpp"

namespace sqa {

namespace {

void put_u32(std::string& buf, std::uint32_t v) {
    buf.push_back(char(v & 0xff));
    buf.push_back(char((v >> 8) & 0xff));
    buf.push_back(char((v >> 16) & 0xff));
    buf.push_back(char((v >> 24) & 0xff));
}

void put_f32(std::string& buf, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(buf, bits);
}

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;

    [[noreturn]] void fail(const std::string& what) const {
        throw FormatError("weight file: " + what + " at byte offset " + std::to_string(pos));
    }
    std::uint32_t u32() {
        if (pos + 4 > buf.size()) fail("truncated u32");
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i) v = (v << 8) | std::uint8_t(buf[pos + std::size_t(i)]);
        pos += 4;
        return v;
    }
    float f32() {
        const std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    std::string bytes(std::size_t n, const char* what) {
        if (pos + n > buf.size()) fail(std::string("truncated ") + what);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace

void save_weights(const std::string& path, const std::vector<NamedTensor>& tensors) {
    std::string buf;
    buf += "AQSW";
    put_u32(buf, kWeightFormatVersion);
    put_u32(buf, std::uint32_t(tensors.size()));
    for (const auto& nt : tensors) {
        put_u32(buf, std::uint32_t(nt.name.size()));
        buf += nt.name;
        put_u32(buf, std::uint32_t(nt.tensor->rank()));
        for (auto d : nt.tensor->dims) put_u32(buf, std::uint32_t(d));
        for (float v : nt.tensor->data) put_f32(buf, v);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open '" + path + "' for writing");
    out.write(buf.data(), std::streamsize(buf.size()));
    if (!out) throw FormatError("short write to '" + path + "'");
}

std::vector<NamedTensor> load_weights(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open '" + path + "' for reading");
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    Reader r{buf};

    if (r.bytes(4, "magic") != "AQSW") {
        r.pos = 0;
        r.fail("bad magic (expected \"AQSW\")");
    }
    const std::uint32_t version = r.u32();
    if (version != kWeightFormatVersion) {
        r.pos -= 4;
        r.fail("unsupported version " + std::to_string(version));
    }
    const std::uint32_t count = r.u32();
    std::vector<NamedTensor> out;
    out.reserve(count);
    for (std::uint32_t t = 0; t < count; ++t) {
        const std::uint32_t name_len = r.u32();
        std::string name = r.bytes(name_len, "tensor name");
        const std::uint32_t rank = r.u32();
        std::vector<std::int64_t> dims(rank);
        std::int64_t numel = 1;
        for (std::uint32_t i = 0; i < rank; ++i) {
            dims[i] = std::int64_t(r.u32());
            if (dims[i] <= 0) r.fail("non-positive extent in tensor '" + name + "'");
            numel *= dims[i];
        }
        auto tensor = make_tensor<float>(dims);
        for (std::int64_t i = 0; i < numel; ++i) tensor->data[std::size_t(i)] = r.f32();
        out.push_back({std::move(name), std::move(tensor)});
    }
    if (r.pos != buf.size()) r.fail("trailing bytes after last tensor");
    return out;
}

void assign_weights(const std::vector<NamedTensor>& stored, const std::vector<NamedTensor>& dest) {
    std::map<std::string, TensorPtr<float>> by_name;
    for (const auto& nt : stored) {
        if (!by_name.emplace(nt.name, nt.tensor).second)
            throw FormatError("weight file: duplicate tensor name '" + nt.name + "'");
    }
    for (const auto& d : dest) {
        auto it = by_name.find(d.name);
        if (it == by_name.end())
            throw FormatError("weight file: missing tensor '" + d.name + "'");
        if (it->second->dims != d.tensor->dims)
            throw FormatError("weight file: tensor '" + d.name + "' has shape " +
                              shape_str<float>(it->second->dims) + " but model expects " +
                              shape_str<float>(d.tensor->dims));
        d.tensor->data = it->second->data;
        by_name.erase(it);
    }
    if (!by_name.empty())
        throw FormatError("weight file: unexpected tensor '" + by_name.begin()->first + "'");
}

}  // namespace sqa
