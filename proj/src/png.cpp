#include "renderflow/png.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

namespace rf {

namespace {

std::uint32_t crc_table_entry(std::uint32_t n) {
    std::uint32_t c = n;
    for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
    return c;
}

const std::array<std::uint32_t, 256>& crc_table() {
    static const std::array<std::uint32_t, 256> t = [] {
        std::array<std::uint32_t, 256> a{};
        for (std::uint32_t n = 0; n < 256; ++n) a[n] = crc_table_entry(n);
        return a;
    }();
    return t;
}

std::uint32_t crc32(const unsigned char* data, size_t n, std::uint32_t crc = 0xffffffffu) {
    const auto& t = crc_table();
    for (size_t i = 0; i < n; ++i) crc = t[(crc ^ data[i]) & 0xff] ^ (crc >> 8);
    return crc;
}

std::uint32_t adler32(const unsigned char* data, size_t n) {
    std::uint32_t a = 1, b = 0;
    for (size_t i = 0; i < n; ++i) {
        a = (a + data[i]) % 65521u;
        b = (b + a) % 65521u;
    }
    return (b << 16) | a;
}

void put_be32(std::vector<unsigned char>& out, std::uint32_t v) {
    out.push_back(static_cast<unsigned char>(v >> 24));
    out.push_back(static_cast<unsigned char>(v >> 16));
    out.push_back(static_cast<unsigned char>(v >> 8));
    out.push_back(static_cast<unsigned char>(v));
}

void put_chunk(std::vector<unsigned char>& out, const char type[4],
               const std::vector<unsigned char>& data) {
    put_be32(out, static_cast<std::uint32_t>(data.size()));
    size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    std::uint32_t crc = crc32(out.data() + start, out.size() - start) ^ 0xffffffffu;
    put_be32(out, crc);
}

}  // namespace

void write_png(const Image& img, const std::string& path) {
    if (img.c != 3) throw std::invalid_argument("write_png: expected 3 channels");
    // raw scanlines with filter byte 0
    std::vector<unsigned char> raw;
    raw.reserve(static_cast<size_t>(img.h) * (1 + static_cast<size_t>(img.w) * 3));
    for (int y = 0; y < img.h; ++y) {
        raw.push_back(0);
        for (int x = 0; x < img.w; ++x)
            for (int ch = 0; ch < 3; ++ch) {
                float v = std::clamp(img.at(y, x, ch), 0.0f, 1.0f);
                raw.push_back(static_cast<unsigned char>(std::lround(v * 255.0f)));
            }
    }

    // zlib stream with stored deflate blocks
    std::vector<unsigned char> z;
    z.push_back(0x78);
    z.push_back(0x01);
    size_t off = 0;
    while (off < raw.size() || raw.empty()) {
        size_t len = std::min<size_t>(65535, raw.size() - off);
        bool final = (off + len == raw.size());
        z.push_back(final ? 1 : 0);
        z.push_back(static_cast<unsigned char>(len & 0xff));
        z.push_back(static_cast<unsigned char>(len >> 8));
        z.push_back(static_cast<unsigned char>(~len & 0xff));
        z.push_back(static_cast<unsigned char>((~len >> 8) & 0xff));
        z.insert(z.end(), raw.begin() + static_cast<std::ptrdiff_t>(off),
                 raw.begin() + static_cast<std::ptrdiff_t>(off + len));
        off += len;
        if (raw.empty()) break;
    }
    put_be32(z, adler32(raw.data(), raw.size()));

    std::vector<unsigned char> out;
    static const unsigned char sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    out.insert(out.end(), sig, sig + 8);
    std::vector<unsigned char> ihdr;
    put_be32(ihdr, static_cast<std::uint32_t>(img.w));
    put_be32(ihdr, static_cast<std::uint32_t>(img.h));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(2);  // RGB
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    put_chunk(out, "IHDR", ihdr);
    put_chunk(out, "IDAT", z);
    put_chunk(out, "IEND", {});

    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("write_png: cannot open " + path);
    os.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!os) throw std::runtime_error("write_png: write failed for " + path);
}

Image read_png(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("read_png: cannot open " + path);
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(is)),
                                   std::istreambuf_iterator<char>());
    static const unsigned char sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
    if (buf.size() < 8 || std::memcmp(buf.data(), sig, 8) != 0)
        throw corrupt_file_error("read_png: bad signature");

    auto be32 = [&](size_t off) -> std::uint32_t {
        return (static_cast<std::uint32_t>(buf[off]) << 24) |
               (static_cast<std::uint32_t>(buf[off + 1]) << 16) |
               (static_cast<std::uint32_t>(buf[off + 2]) << 8) |
               static_cast<std::uint32_t>(buf[off + 3]);
    };

    size_t pos = 8;
    int w = 0, h = 0;
    std::vector<unsigned char> idat;
    while (pos + 12 <= buf.size()) {
        std::uint32_t len = be32(pos);
        if (pos + 12 + len > buf.size()) throw corrupt_file_error("read_png: truncated chunk");
        const char* type = reinterpret_cast<const char*>(buf.data() + pos + 4);
        const unsigned char* data = buf.data() + pos + 8;
        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len < 13) throw corrupt_file_error("read_png: bad IHDR");
            w = static_cast<int>(be32(pos + 8));
            h = static_cast<int>(be32(pos + 12));
            if (data[8] != 8 || data[9] != 2 || data[12] != 0)
                throw corrupt_file_error("read_png: only 8-bit non-interlaced RGB supported");
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            break;
        }
        pos += 12 + len;
    }
    if (w <= 0 || h <= 0 || idat.size() < 2) throw corrupt_file_error("read_png: missing data");

    // inflate: stored blocks only
    std::vector<unsigned char> raw;
    size_t zp = 2;  // skip zlib header
    while (true) {
        if (zp >= idat.size()) throw corrupt_file_error("read_png: truncated deflate stream");
        unsigned char hdr = idat[zp++];
        if ((hdr & 0x06) != 0)
            throw corrupt_file_error("read_png: only stored deflate blocks supported");
        if (zp + 4 > idat.size()) throw corrupt_file_error("read_png: truncated block header");
        size_t len = idat[zp] | (static_cast<size_t>(idat[zp + 1]) << 8);
        zp += 4;
        if (zp + len > idat.size()) throw corrupt_file_error("read_png: truncated block");
        raw.insert(raw.end(), idat.begin() + static_cast<std::ptrdiff_t>(zp),
                   idat.begin() + static_cast<std::ptrdiff_t>(zp + len));
        zp += len;
        if (hdr & 1) break;
    }
    size_t expect = static_cast<size_t>(h) * (1 + static_cast<size_t>(w) * 3);
    if (raw.size() != expect) throw corrupt_file_error("read_png: scanline size mismatch");

    Image img(h, w, 3);
    for (int y = 0; y < h; ++y) {
        size_t row = static_cast<size_t>(y) * (1 + static_cast<size_t>(w) * 3);
        if (raw[row] != 0) throw corrupt_file_error("read_png: only filter 0 supported");
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < 3; ++ch)
                img.at(y, x, ch) = static_cast<float>(raw[row + 1 + static_cast<size_t>(x) * 3 + ch]) / 255.0f;
    }
    return img;
}

}  // namespace rf
