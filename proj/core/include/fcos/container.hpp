#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fcos/tensor.hpp"

namespace fcos {

/// Binary artifact container shared by checkpoints, datasets and prune plans.
///
/// Layout (little endian):
///   "FCOS" | u32 version | u64 json_len | json | u32 n_records |
///   n x (u32 name_len | name | u8 dtype | u32 rank | rank x u64 dim | payload) | u32 crc32
/// The CRC covers every byte after the version field and before the CRC itself.
inline constexpr std::uint32_t kContainerVersion = 1;

enum class RecordType : std::uint8_t { F32 = 1, F64 = 2, I32 = 3, U8 = 4 };

std::size_t record_type_size(RecordType t);

struct Record {
    std::string name;
    RecordType type = RecordType::F32;
    Shape shape;
    std::vector<std::byte> payload;

    static Record from_tensor(std::string name, const Tensor& t);
    static Record from_i32(std::string name, Shape shape, std::span<const std::int32_t> values);
    static Record from_u8(std::string name, Shape shape, std::span<const std::uint8_t> values);

    Tensor to_tensor() const;
    std::vector<std::int32_t> to_i32() const;
    std::vector<std::uint8_t> to_u8() const;

    friend bool operator==(const Record&, const Record&) = default;
};

struct Container {
    nlohmann::json descriptor = nlohmann::json::object();
    std::vector<Record> records;

    bool has(const std::string& name) const;
    /// Throws FormatError(Malformed) when absent.
    const Record& record(const std::string& name) const;
};

std::vector<std::byte> encode_container(const Container& c);
/// Throws FormatError with kind BadMagic, VersionMismatch, Truncated, ChecksumMismatch or Malformed.
Container decode_container(std::span<const std::byte> bytes);

/// Writes through a temporary file and renames it into place.
void write_container(const Container& c, const std::filesystem::path& path);
Container read_container(const std::filesystem::path& path);

}  // namespace fcos
