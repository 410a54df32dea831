#include "psp/idx.hpp"

#include <cstdio>
#include <memory>

namespace psp {

namespace {

std::uint32_t read_be32(const std::uint8_t* p) {
    return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
           (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

void write_be32(std::uint32_t v, std::vector<std::uint8_t>& out) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

}  // namespace

IdxData parse_idx(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 4) {
        throw FormatError("idx: file shorter than the 4-byte magic");
    }
    const std::uint32_t magic = read_be32(bytes.data());
    // magic layout [0, 0, type, rank]; only unsigned-byte payloads exist here
    if ((magic >> 16) != 0 || ((magic >> 8) & 0xff) != 0x08) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "0x%08x", magic);
        throw FormatError(std::string("idx: bad magic ") + buf);
    }
    const int rank = static_cast<int>(magic & 0xff);
    if (rank < 1 || rank > 4) {
        throw FormatError("idx: unsupported rank " + std::to_string(rank));
    }
    const std::size_t header_len = 4 + 4 * static_cast<std::size_t>(rank);
    if (bytes.size() < header_len) {
        throw FormatError("idx: truncated header, need " + std::to_string(header_len) +
                          " bytes, have " + std::to_string(bytes.size()));
    }
    IdxData data;
    data.header.magic = magic;
    std::size_t expect = 1;
    for (int d = 0; d < rank; ++d) {
        const std::uint32_t e = read_be32(bytes.data() + 4 + 4 * static_cast<std::size_t>(d));
        data.header.dims.push_back(static_cast<int>(e));
        expect *= e;
    }
    const std::size_t have = bytes.size() - header_len;
    if (have != expect) {
        throw FormatError("idx: payload length " + std::to_string(have) + ", dims imply " +
                          std::to_string(expect));
    }
    data.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header_len), bytes.end());
    return data;
}

std::vector<std::uint8_t> serialize_idx(const IdxData& data) {
    std::vector<std::uint8_t> out;
    out.reserve(4 + 4 * data.header.dims.size() + data.payload.size());
    write_be32(data.header.magic, out);
    for (int d : data.header.dims) {
        write_be32(static_cast<std::uint32_t>(d), out);
    }
    out.insert(out.end(), data.payload.begin(), data.payload.end());
    return out;
}

IdxData read_idx_file(const std::string& path) {
    std::unique_ptr<std::FILE, int (*)(std::FILE*)> f(std::fopen(path.c_str(), "rb"),
                                                      &std::fclose);
    if (!f) {
        throw DataError("cannot open " + path);
    }
    std::fseek(f.get(), 0, SEEK_END);
    const long len = std::ftell(f.get());
    std::fseek(f.get(), 0, SEEK_SET);
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(len));
    if (len > 0 && std::fread(bytes.data(), 1, bytes.size(), f.get()) != bytes.size()) {
        throw DataError("short read on " + path);
    }
    try {
        return parse_idx(bytes);
    } catch (const FormatError& e) {
        throw FormatError(path + ": " + e.what());
    }
}

void write_idx_file(const std::string& path, const IdxData& data) {
    const std::vector<std::uint8_t> bytes = serialize_idx(data);
    std::unique_ptr<std::FILE, int (*)(std::FILE*)> f(std::fopen(path.c_str(), "wb"),
                                                      &std::fclose);
    if (!f) {
        throw DataError("cannot write " + path);
    }
    if (std::fwrite(bytes.data(), 1, bytes.size(), f.get()) != bytes.size()) {
        throw DataError("short write on " + path);
    }
}

}  // namespace psp
