#pragma once

// Binary pool file (all integers little-endian, floats IEEE-754 binary32):
//
//   header   magic "MSAL" | version u16 | flags u16 | n_patches u64 | n_classes u16 | capacity u32
//   record   patch_id u64 | bald_max f32 | bald_min f32 | bald_mean f32 | [entropy_mean f32]
//            | presence ceil(C/8) bytes, LSB-first | gt_pixel_counts C x u32
//   trailer  checksum u64 = sum of every preceding byte mod 2^64
//
// See docs/pool_format.md for the byte table.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "misical/features.hpp"
#include "misical/patch.hpp"

namespace misical::io {

inline constexpr char kPoolMagic[4] = {'M', 'S', 'A', 'L'};
inline constexpr std::uint16_t kPoolVersion = 1;
inline constexpr std::uint16_t kFlagEntropy = 0x1;
inline constexpr std::size_t kHeaderSize = 4 + 2 + 2 + 8 + 2 + 4;
inline constexpr std::size_t kChecksumSize = 8;

enum class FormatErrc {
    bad_magic,
    unsupported_version,
    checksum_mismatch,
    invariant_violation,
    truncated,
    trailing_bytes,
    io_failure,
};

const char* to_string(FormatErrc code) noexcept;

class FormatError : public std::runtime_error {
public:
    FormatError(FormatErrc code, const std::string& what, std::optional<std::uint64_t> record_id = std::nullopt);

    FormatErrc code() const noexcept { return code_; }
    /// Id of the offending record, when the failure is tied to one.
    std::optional<std::uint64_t> record_id() const noexcept { return record_id_; }

private:
    FormatErrc code_;
    std::optional<std::uint64_t> record_id_;
};

struct PoolHeader {
    std::uint16_t version = kPoolVersion;
    std::uint16_t flags = 0;
    std::uint64_t n_patches = 0;
    std::uint16_t n_classes = 0;
    std::uint32_t patch_capacity = 0;

    bool has_entropy() const noexcept { return (flags & kFlagEntropy) != 0; }
    bool operator==(const PoolHeader&) const = default;
};

struct PoolData {
    PoolHeader header;
    std::vector<PatchRecord> records;

    bool operator==(const PoolData&) const = default;
};

/// Bytes occupied by one record under this header.
std::size_t record_size(const PoolHeader& header) noexcept;

/// Total file size for a pool of header.n_patches records.
std::size_t file_size(const PoolHeader& header) noexcept;

/// Throws FormatError(invariant_violation) naming the first offending record.
void validate_records(const PoolHeader& header, std::span<const PatchRecord> records);

/// Builds a header matching the records (n_patches, entropy flag).
PoolHeader make_header(std::uint16_t n_classes, std::uint32_t patch_capacity, std::span<const PatchRecord> records);

/// Validates everything first; nothing is written if validation fails.
void write_pool(std::ostream& out, const PoolHeader& header, std::span<const PatchRecord> records);
void write_pool_file(const std::filesystem::path& path, const PoolHeader& header,
                     std::span<const PatchRecord> records);

/// Sequential decoder. Memory use is independent of n_patches.
class PoolReader {
public:
    explicit PoolReader(std::istream& in);

    const PoolHeader& header() const noexcept { return header_; }

    /// Next record, or nullopt once every record has been read and the checksum verified.
    std::optional<PatchRecord> next();

    std::uint64_t records_read() const noexcept { return read_; }

private:
    void read_bytes(std::span<std::uint8_t> dst);
    void finish();

    std::istream& in_;
    PoolHeader header_;
    std::uint64_t checksum_ = 0;
    std::uint64_t read_ = 0;
    std::optional<std::uint64_t> last_id_;
    std::vector<std::uint8_t> scratch_;
    bool done_ = false;
};

PoolData read_pool(std::istream& in);
PoolData read_pool_file(const std::filesystem::path& path);

/// Debug export: id,bald_max,bald_min,bald_mean[,entropy_mean],p0..,g0..; floats at 6 significant digits.
void export_csv(std::ostream& out, const PoolData& pool);

/// Inverse of export_csv. The CSV carries no capacity, so it is supplied.
PoolData import_csv(std::istream& in, std::uint32_t patch_capacity);

// ---- ProbMap fixtures -------------------------------------------------------
//
//   magic "MSPM" | version u16 | reserved u16 | n_volumes u32
//   per volume: patch_id u64 | T u32 | K u32 | C u16 | T*K*C f32 ([t][k][c])
//   checksum u64 (same rule as pool files)

struct ProbMapVolume {
    std::uint64_t patch_id = 0;
    ProbMap map;
};

void write_probmap_fixture(std::ostream& out, std::span<const ProbMapVolume> volumes);
std::vector<ProbMapVolume> read_probmap_fixture(std::istream& in);

}  // namespace misical::io
