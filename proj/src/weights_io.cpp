#include "cfate/weights_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "cfate/errors.hpp"

namespace cfate {

namespace {

// Serialization is explicitly little-endian; all supported targets are LE,
// enforced here rather than silently assumed.
static_assert(std::endian::native == std::endian::little, "CFW1 writer assumes little-endian host");

template <typename T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw format_error("CFW1: truncated file");
    return v;
}

}  // namespace

void save_weights(const std::string& path, const std::vector<NamedTensor>& tensors) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw input_error("cannot open for writing: " + path);
    os.write("CFW1", 4);
    write_pod<uint16_t>(os, kWeightFormatVersion);
    write_pod<uint32_t>(os, static_cast<uint32_t>(tensors.size()));
    for (const auto& nt : tensors) {
        if (nt.name.size() > 0xFFFF) throw format_error("CFW1: tensor name too long");
        write_pod<uint16_t>(os, static_cast<uint16_t>(nt.name.size()));
        os.write(nt.name.data(), static_cast<std::streamsize>(nt.name.size()));
        if (nt.tensor.shape.size() > 0xFF) throw format_error("CFW1: rank too large");
        write_pod<uint8_t>(os, static_cast<uint8_t>(nt.tensor.shape.size()));
        for (int d : nt.tensor.shape) write_pod<uint32_t>(os, static_cast<uint32_t>(d));
        os.write(reinterpret_cast<const char*>(nt.tensor.values.data()),
                 static_cast<std::streamsize>(nt.tensor.values.size() * sizeof(float)));
    }
    if (!os) throw input_error("write failed: " + path);
}

std::vector<NamedTensor> load_weights(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw input_error("cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "CFW1", 4) != 0) throw format_error("CFW1: bad magic in " + path);
    const uint16_t version = read_pod<uint16_t>(is);
    if (version != kWeightFormatVersion)
        throw format_error("CFW1: unsupported version " + std::to_string(version));
    const uint32_t count = read_pod<uint32_t>(is);
    std::vector<NamedTensor> out;
    out.reserve(count);
    for (uint32_t k = 0; k < count; ++k) {
        const uint16_t name_len = read_pod<uint16_t>(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (!is) throw format_error("CFW1: truncated name");
        const uint8_t rank = read_pod<uint8_t>(is);
        std::vector<int> shape(rank);
        int64_t numel = 1;
        for (int i = 0; i < rank; ++i) {
            shape[i] = static_cast<int>(read_pod<uint32_t>(is));
            numel *= shape[i];
        }
        Tensor t;
        t.shape = std::move(shape);
        t.values.resize(static_cast<size_t>(numel));
        is.read(reinterpret_cast<char*>(t.values.data()),
                static_cast<std::streamsize>(t.values.size() * sizeof(float)));
        if (!is) throw format_error("CFW1: truncated payload for tensor " + name);
        out.push_back({std::move(name), std::move(t)});
    }
    return out;
}

}  // namespace cfate
