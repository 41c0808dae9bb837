#include "swapdiff/image_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <vector>

namespace swapdiff {

namespace {

void put_u32_be(std::vector<unsigned char>& out, uint32_t v) {
    out.push_back(static_cast<unsigned char>((v >> 24) & 0xFF));
    out.push_back(static_cast<unsigned char>((v >> 16) & 0xFF));
    out.push_back(static_cast<unsigned char>((v >> 8) & 0xFF));
    out.push_back(static_cast<unsigned char>(v & 0xFF));
}

void write_chunk(std::ofstream& os, const char type[4], const std::vector<unsigned char>& data) {
    std::vector<unsigned char> head;
    put_u32_be(head, static_cast<uint32_t>(data.size()));
    os.write(reinterpret_cast<const char*>(head.data()), 4);
    os.write(type, 4);
    if (!data.empty()) os.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    uLong crc = crc32(0L, Z_NULL, 0);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(type), 4);
    if (!data.empty()) crc = crc32(crc, data.data(), static_cast<uInt>(data.size()));
    std::vector<unsigned char> tail;
    put_u32_be(tail, static_cast<uint32_t>(crc));
    os.write(reinterpret_cast<const char*>(tail.data()), 4);
}

unsigned char quantize(double v) {
    v = std::clamp(v, 0.0, 1.0) * 255.0;
    return static_cast<unsigned char>(std::nearbyint(v));  // round half to even
}

void write_png(const std::string& path, const unsigned char* pixels, int64_t h, int64_t w,
               int channels) {
    const int64_t stride = w * channels;
    std::vector<unsigned char> raw;
    raw.reserve(static_cast<size_t>(h * (stride + 1)));
    for (int64_t i = 0; i < h; ++i) {
        raw.push_back(0);  // filter type none
        raw.insert(raw.end(), pixels + i * stride, pixels + (i + 1) * stride);
    }
    uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
    std::vector<unsigned char> comp(comp_len);
    if (compress2(comp.data(), &comp_len, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK) {
        throw Error("write_png: deflate failed");
    }
    comp.resize(comp_len);

    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("write_png: cannot open " + path);
    static const unsigned char sig[8] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
    os.write(reinterpret_cast<const char*>(sig), 8);

    std::vector<unsigned char> ihdr;
    put_u32_be(ihdr, static_cast<uint32_t>(w));
    put_u32_be(ihdr, static_cast<uint32_t>(h));
    ihdr.push_back(8);                                        // bit depth
    ihdr.push_back(channels == 3 ? 2 : 0);                    // color type
    ihdr.push_back(0);                                        // compression
    ihdr.push_back(0);                                        // filter
    ihdr.push_back(0);                                        // interlace
    write_chunk(os, "IHDR", ihdr);
    write_chunk(os, "IDAT", comp);
    write_chunk(os, "IEND", {});
    if (!os) throw Error("write_png: write failed for " + path);
}

}  // namespace

void write_png_rgb(const std::string& path, const Tensor& image) {
    if (image.rank() != 3 || image.dim(0) != 3) {
        throw DimensionError("write_png_rgb: expects [3,H,W], got " + image.shape_str());
    }
    const int64_t h = image.dim(1), w = image.dim(2), hw = h * w;
    std::vector<unsigned char> pixels(static_cast<size_t>(hw * 3));
    for (int64_t p = 0; p < hw; ++p) {
        for (int c = 0; c < 3; ++c) {
            pixels[static_cast<size_t>(p * 3 + c)] = quantize(image.at(c * hw + p));
        }
    }
    write_png(path, pixels.data(), h, w, 3);
}

void write_png_gray(const std::string& path, const Tensor& map) {
    if (map.rank() != 2) throw DimensionError("write_png_gray: expects [H,W], got " + map.shape_str());
    const int64_t h = map.dim(0), w = map.dim(1);
    std::vector<unsigned char> pixels(static_cast<size_t>(h * w));
    for (int64_t p = 0; p < h * w; ++p) pixels[static_cast<size_t>(p)] = quantize(map.at(p));
    write_png(path, pixels.data(), h, w, 1);
}

namespace {

struct PngData {
    int64_t width = 0, height = 0;
    int bit_depth = 0, color_type = 0;
    std::vector<unsigned char> idat;
};

uint32_t read_u32_be(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return (static_cast<uint32_t>(b[0]) << 24) | (static_cast<uint32_t>(b[1]) << 16) |
           (static_cast<uint32_t>(b[2]) << 8) | static_cast<uint32_t>(b[3]);
}

PngData read_chunks(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("read_png: cannot open " + path);
    unsigned char sig[8];
    is.read(reinterpret_cast<char*>(sig), 8);
    static const unsigned char want[8] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
    if (!is || std::memcmp(sig, want, 8) != 0) throw Error("read_png: not a PNG file: " + path);

    PngData png;
    while (is) {
        uint32_t len = read_u32_be(is);
        char type[5] = {0};
        is.read(type, 4);
        if (!is) break;
        std::vector<unsigned char> data(len);
        if (len) is.read(reinterpret_cast<char*>(data.data()), len);
        is.ignore(4);  // crc
        if (std::strcmp(type, "IHDR") == 0) {
            png.width = (static_cast<int64_t>(data[0]) << 24) | (data[1] << 16) | (data[2] << 8) | data[3];
            png.height = (static_cast<int64_t>(data[4]) << 24) | (data[5] << 16) | (data[6] << 8) | data[7];
            png.bit_depth = data[8];
            png.color_type = data[9];
            if (data[12] != 0) throw Error("read_png: interlaced PNG not supported: " + path);
        } else if (std::strcmp(type, "IDAT") == 0) {
            png.idat.insert(png.idat.end(), data.begin(), data.end());
        } else if (std::strcmp(type, "IEND") == 0) {
            break;
        }
    }
    if (png.width <= 0 || png.height <= 0) throw Error("read_png: missing IHDR in " + path);
    if (png.bit_depth != 8) throw Error("read_png: only 8-bit PNGs supported: " + path);
    return png;
}

int paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

std::vector<unsigned char> decode_scanlines(const PngData& png, int channels) {
    const int64_t stride = png.width * channels;
    uLongf raw_len = static_cast<uLongf>(png.height * (stride + 1));
    std::vector<unsigned char> raw(raw_len);
    if (uncompress(raw.data(), &raw_len, png.idat.data(), static_cast<uLong>(png.idat.size())) !=
        Z_OK) {
        throw Error("read_png: inflate failed");
    }

    std::vector<unsigned char> out(static_cast<size_t>(png.height * stride));
    for (int64_t i = 0; i < png.height; ++i) {
        const unsigned char filter = raw[static_cast<size_t>(i * (stride + 1))];
        const unsigned char* src = raw.data() + i * (stride + 1) + 1;
        unsigned char* dst = out.data() + i * stride;
        const unsigned char* prev = i > 0 ? out.data() + (i - 1) * stride : nullptr;
        for (int64_t x = 0; x < stride; ++x) {
            const int left = x >= channels ? dst[x - channels] : 0;
            const int up = prev ? prev[x] : 0;
            const int ul = (prev && x >= channels) ? prev[x - channels] : 0;
            int v = src[x];
            switch (filter) {
                case 0: break;
                case 1: v += left; break;
                case 2: v += up; break;
                case 3: v += (left + up) / 2; break;
                case 4: v += paeth(left, up, ul); break;
                default: throw Error("read_png: unknown filter type");
            }
            dst[x] = static_cast<unsigned char>(v & 0xFF);
        }
    }
    return out;
}

}  // namespace

Tensor read_png_rgb(const std::string& path) {
    PngData png = read_chunks(path);
    int channels;
    switch (png.color_type) {
        case 0: channels = 1; break;
        case 2: channels = 3; break;
        case 6: channels = 4; break;
        default: throw Error("read_png: unsupported color type in " + path);
    }
    std::vector<unsigned char> pixels = decode_scanlines(png, channels);
    const int64_t hw = png.height * png.width;
    std::vector<double> data(static_cast<size_t>(3 * hw));
    for (int64_t p = 0; p < hw; ++p) {
        for (int c = 0; c < 3; ++c) {
            const int src_c = channels == 1 ? 0 : c;
            data[static_cast<size_t>(c * hw + p)] =
                static_cast<double>(pixels[static_cast<size_t>(p * channels + src_c)]) / 255.0;
        }
    }
    return Tensor::from_data({3, png.height, png.width}, std::move(data));
}

}  // namespace swapdiff
