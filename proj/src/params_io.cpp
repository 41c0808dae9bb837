#include "swapdiff/params_io.hpp"

#include <cstring>
#include <fstream>

namespace swapdiff {

namespace {

void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xFF),
                          static_cast<unsigned char>((v >> 8) & 0xFF),
                          static_cast<unsigned char>((v >> 16) & 0xFF),
                          static_cast<unsigned char>((v >> 24) & 0xFF)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

void put_f64(std::ostream& os, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xFF);
    os.write(reinterpret_cast<const char*>(b), 8);
}

double get_f64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

}  // namespace

void save_params(const std::string& path, const std::string& section_tag,
                 const std::map<std::string, Tensor>& tensors) {
    if (section_tag.size() != 4) throw ContractError("save_params: section tag must be 4 bytes");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("save_params: cannot open " + path);
    os.write("SWDF", 4);
    put_u32(os, kParamsFormatVersion);
    os.write(section_tag.data(), 4);
    put_u32(os, static_cast<uint32_t>(tensors.size()));
    for (const auto& [name, tensor] : tensors) {
        put_u32(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u32(os, static_cast<uint32_t>(tensor.rank()));
        for (int d = 0; d < tensor.rank(); ++d) put_u32(os, static_cast<uint32_t>(tensor.dim(d)));
        for (double v : tensor.data()) put_f64(os, v);
    }
    if (!os) throw Error("save_params: write failed for " + path);
}

std::map<std::string, Tensor> load_params(const std::string& path, std::string* section_tag_out) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("load_params: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "SWDF", 4) != 0) {
        throw Error("load_params: " + path + " is not a SWDF parameter file");
    }
    uint32_t version = get_u32(is);
    if (version != kParamsFormatVersion) {
        throw Error("load_params: unsupported version " + std::to_string(version));
    }
    char tag[5] = {0, 0, 0, 0, 0};
    is.read(tag, 4);
    if (section_tag_out) *section_tag_out = tag;
    uint32_t count = get_u32(is);
    std::map<std::string, Tensor> out;
    for (uint32_t i = 0; i < count; ++i) {
        uint32_t name_len = get_u32(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        uint32_t rank = get_u32(is);
        std::vector<int64_t> shape(rank);
        int64_t n = 1;
        for (uint32_t d = 0; d < rank; ++d) {
            shape[d] = static_cast<int64_t>(get_u32(is));
            n *= shape[d];
        }
        std::vector<double> data(static_cast<size_t>(n));
        for (double& v : data) v = get_f64(is);
        if (!is) throw Error("load_params: truncated file " + path);
        out[name] = Tensor::from_data(std::move(shape), std::move(data));
    }
    return out;
}

uint64_t params_checksum(const std::map<std::string, Tensor>& tensors) {
    uint64_t h = 1469598103934665603ULL;
    auto mix_byte = [&h](unsigned char c) {
        h ^= c;
        h *= 1099511628211ULL;
    };
    for (const auto& [name, tensor] : tensors) {
        for (unsigned char c : name) mix_byte(c);
        for (double v : tensor.data()) {
            uint64_t bits;
            std::memcpy(&bits, &v, 8);
            for (int i = 0; i < 8; ++i) mix_byte(static_cast<unsigned char>((bits >> (8 * i)) & 0xFF));
        }
    }
    return h;
}

}  // namespace swapdiff
