#include "fcos/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <zlib.h>

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

namespace fcos {

namespace {

constexpr char kMagic[4] = {'F', 'C', 'O', 'S'};

class Writer {
public:
    template <class T>
    void put(T v) {
        const auto* p = reinterpret_cast<const std::byte*>(&v);
        out.insert(out.end(), p, p + sizeof(T));
    }
    void put_bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::byte*>(p);
        out.insert(out.end(), b, b + n);
    }
    std::vector<std::byte> out;
};

class Reader {
public:
    explicit Reader(std::span<const std::byte> b) : bytes_(b) {}

    template <class T>
    T get(const char* what) {
        T v{};
        std::memcpy(&v, take(sizeof(T), what).data(), sizeof(T));
        return v;
    }
    std::span<const std::byte> take(std::size_t n, const char* what) {
        if (n > bytes_.size() - pos_) throw FormatError(FormatErrorKind::Truncated, std::string("truncated container while reading ") + what);
        auto s = bytes_.subspan(pos_, n);
        pos_ += n;
        return s;
    }
    std::size_t pos() const { return pos_; }

private:
    std::span<const std::byte> bytes_;
    std::size_t pos_ = 0;
};

std::uint32_t crc_of(std::span<const std::byte> b) {
    uLong crc = crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed large buffers in chunks.
    std::size_t off = 0;
    while (off < b.size()) {
        const std::size_t n = std::min<std::size_t>(b.size() - off, 1u << 30);
        crc = crc32(crc, reinterpret_cast<const Bytef*>(b.data() + off), static_cast<uInt>(n));
        off += n;
    }
    return static_cast<std::uint32_t>(crc);
}

template <class T>
std::vector<std::byte> to_bytes(std::span<const T> v) {
    std::vector<std::byte> out(v.size_bytes());
    if (!v.empty()) std::memcpy(out.data(), v.data(), v.size_bytes());
    return out;
}

template <class T>
std::vector<T> from_bytes(const Record& r, RecordType expected) {
    if (r.type != expected) throw FormatError(FormatErrorKind::Malformed, "record '" + r.name + "' has unexpected dtype");
    std::vector<T> v(r.payload.size() / sizeof(T));
    if (!v.empty()) std::memcpy(v.data(), r.payload.data(), r.payload.size());
    return v;
}

}  // namespace

std::size_t record_type_size(RecordType t) {
    switch (t) {
        case RecordType::F32: return 4;
        case RecordType::F64: return 8;
        case RecordType::I32: return 4;
        case RecordType::U8: return 1;
    }
    throw FormatError(FormatErrorKind::Malformed, "unknown record dtype");
}

Record Record::from_tensor(std::string name, const Tensor& t) {
    Record r;
    r.name = std::move(name);
    r.type = t.dtype() == DType::F64 ? RecordType::F64 : RecordType::F32;
    r.shape = t.shape();
    auto b = t.bytes();
    r.payload.assign(b.begin(), b.end());
    return r;
}

Record Record::from_i32(std::string name, Shape shape, std::span<const std::int32_t> values) {
    if (shape_numel(shape) != values.size()) throw UsageError("record shape does not match value count");
    return {std::move(name), RecordType::I32, std::move(shape), to_bytes(values)};
}

Record Record::from_u8(std::string name, Shape shape, std::span<const std::uint8_t> values) {
    if (shape_numel(shape) != values.size()) throw UsageError("record shape does not match value count");
    return {std::move(name), RecordType::U8, std::move(shape), to_bytes(values)};
}

Tensor Record::to_tensor() const {
    if (type != RecordType::F32 && type != RecordType::F64)
        throw FormatError(FormatErrorKind::Malformed, "record '" + name + "' is not floating point");
    Tensor t(shape, type == RecordType::F64 ? DType::F64 : DType::F32);
    auto dst = t.mutable_bytes();
    if (dst.size() != payload.size()) throw FormatError(FormatErrorKind::Malformed, "record '" + name + "' payload size mismatch");
    if (!payload.empty()) std::memcpy(dst.data(), payload.data(), payload.size());
    return t;
}

std::vector<std::int32_t> Record::to_i32() const { return from_bytes<std::int32_t>(*this, RecordType::I32); }
std::vector<std::uint8_t> Record::to_u8() const { return from_bytes<std::uint8_t>(*this, RecordType::U8); }

bool Container::has(const std::string& name) const {
    for (const auto& r : records)
        if (r.name == name) return true;
    return false;
}

const Record& Container::record(const std::string& name) const {
    for (const auto& r : records)
        if (r.name == name) return r;
    throw FormatError(FormatErrorKind::Malformed, "container has no record '" + name + "'");
}

std::vector<std::byte> encode_container(const Container& c) {
    Writer w;
    w.put_bytes(kMagic, 4);
    w.put<std::uint32_t>(kContainerVersion);
    const std::string json = c.descriptor.dump();
    w.put<std::uint64_t>(json.size());
    w.put_bytes(json.data(), json.size());
    w.put<std::uint32_t>(static_cast<std::uint32_t>(c.records.size()));
    for (const auto& r : c.records) {
        if (r.payload.size() != shape_numel(r.shape) * record_type_size(r.type))
            throw UsageError("record '" + r.name + "' payload does not match its shape");
        w.put<std::uint32_t>(static_cast<std::uint32_t>(r.name.size()));
        w.put_bytes(r.name.data(), r.name.size());
        w.put<std::uint8_t>(static_cast<std::uint8_t>(r.type));
        w.put<std::uint32_t>(static_cast<std::uint32_t>(r.shape.size()));
        for (auto d : r.shape) w.put<std::uint64_t>(d);
        w.put_bytes(r.payload.data(), r.payload.size());
    }
    const auto crc = crc_of(std::span(w.out).subspan(8));
    w.put<std::uint32_t>(crc);
    return std::move(w.out);
}

Container decode_container(std::span<const std::byte> bytes) {
    Reader rd(bytes);
    auto magic = rd.take(4, "magic");
    if (std::memcmp(magic.data(), kMagic, 4) != 0) throw FormatError(FormatErrorKind::BadMagic, "not an fcos container (bad magic)");
    const auto version = rd.get<std::uint32_t>("version");
    if (version != kContainerVersion)
        throw FormatError(FormatErrorKind::VersionMismatch,
                          "container version " + std::to_string(version) + " (expected " + std::to_string(kContainerVersion) + ")");

    Container c;
    const auto json_len = rd.get<std::uint64_t>("descriptor length");
    auto json = rd.take(json_len, "descriptor");
    const auto count = rd.get<std::uint32_t>("record count");
    for (std::uint32_t i = 0; i < count; ++i) {
        Record r;
        const auto name_len = rd.get<std::uint32_t>("record name length");
        auto name = rd.take(name_len, "record name");
        r.name.assign(reinterpret_cast<const char*>(name.data()), name.size());
        const auto tag = rd.get<std::uint8_t>("record dtype");
        if (tag < 1 || tag > 4) throw FormatError(FormatErrorKind::Malformed, "record '" + r.name + "' has unknown dtype " + std::to_string(tag));
        r.type = static_cast<RecordType>(tag);
        const auto rank = rd.get<std::uint32_t>("record rank");
        std::size_t n = 1;
        for (std::uint32_t k = 0; k < rank; ++k) {
            r.shape.push_back(rd.get<std::uint64_t>("record dims"));
            if (r.shape.back() != 0 && n > bytes.size() / r.shape.back()) throw FormatError(FormatErrorKind::Truncated, "record '" + r.name + "' is larger than the file");
            n *= r.shape.back();
        }
        if (n > bytes.size() / record_type_size(r.type)) throw FormatError(FormatErrorKind::Truncated, "record '" + r.name + "' is larger than the file");
        auto payload = rd.take(n * record_type_size(r.type), "record payload");
        r.payload.assign(payload.begin(), payload.end());
        c.records.push_back(std::move(r));
    }
    const std::size_t body_end = rd.pos();
    const auto stored = rd.get<std::uint32_t>("checksum");
    if (rd.pos() != bytes.size()) throw FormatError(FormatErrorKind::Malformed, "trailing bytes after checksum");
    if (crc_of(bytes.subspan(8, body_end - 8)) != stored) throw FormatError(FormatErrorKind::ChecksumMismatch, "container checksum mismatch");

    try {
        c.descriptor = nlohmann::json::parse(reinterpret_cast<const char*>(json.data()), reinterpret_cast<const char*>(json.data()) + json.size());
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(FormatErrorKind::Malformed, std::string("descriptor is not valid JSON: ") + e.what());
    }
    return c;
}

void write_container(const Container& c, const std::filesystem::path& path) {
    const auto bytes = encode_container(c);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

Container read_container(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_container(std::as_bytes(std::span(raw)));
}

}  // namespace fcos
