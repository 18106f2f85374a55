#include "misical/pool_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

namespace misical::io {

namespace {

class ByteSink {
public:
    void u8(std::uint8_t v) { bytes_.push_back(v); }
    void u16(std::uint16_t v) { put_le(v, 2); }
    void u32(std::uint32_t v) { put_le(v, 4); }
    void u64(std::uint64_t v) { put_le(v, 8); }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void raw(const char* p, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) u8(static_cast<std::uint8_t>(p[i]));
    }

    /// Writes the pending bytes to out and folds them into the running checksum.
    void flush(std::ostream& out, std::uint64_t& checksum) {
        for (auto b : bytes_) checksum += b;
        out.write(reinterpret_cast<const char*>(bytes_.data()), static_cast<std::streamsize>(bytes_.size()));
        bytes_.clear();
    }

private:
    void put_le(std::uint64_t v, int width) {
        for (int i = 0; i < width; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }

    std::vector<std::uint8_t> bytes_;
};

std::uint64_t get_le(std::span<const std::uint8_t> b, std::size_t off, int width) {
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(b[off + i]) << (8 * i);
    return v;
}

float get_f32(std::span<const std::uint8_t> b, std::size_t off) {
    return std::bit_cast<float>(static_cast<std::uint32_t>(get_le(b, off, 4)));
}

std::size_t presence_bytes(std::uint16_t n_classes) noexcept { return (n_classes + 7u) / 8u; }

double bald_ceiling(std::uint16_t n_classes) {
    // ln C plus slack for the binary32 rounding of values at the bound.
    return std::log(static_cast<double>(n_classes)) + 1e-6;
}

void check_record(const PoolHeader& h, const PatchRecord& r, std::optional<std::uint64_t> previous_id) {
    auto fail = [&](const std::string& why) {
        throw FormatError(FormatErrc::invariant_violation, "record " + std::to_string(r.id) + ": " + why, r.id);
    };
    if (previous_id && r.id <= *previous_id) fail("patch ids must be strictly increasing");
    if (r.gt_pixel_counts.size() != h.n_classes) fail("gt_pixel_counts length differs from n_classes");
    if (r.features.size() != kBaldFeatureCount + h.n_classes) fail("feature length differs from 3 + n_classes");
    const double ceiling = bald_ceiling(h.n_classes);
    for (std::size_t i = 0; i < kBaldFeatureCount; ++i) {
        const double v = r.features[i];
        if (!std::isfinite(v) || v < 0.0 || v > ceiling) fail("BALD feature outside [0, ln C]");
    }
    if (!(r.bald_min() <= r.bald_mean() && r.bald_mean() <= r.bald_max())) {
        fail("bald_min <= bald_mean <= bald_max violated");
    }
    for (double bit : r.presence()) {
        if (bit != 0.0 && bit != 1.0) fail("presence entries must be 0 or 1");
    }
    if (h.has_entropy() != r.entropy_mean.has_value()) fail("entropy column presence differs from header flag");
    if (r.entropy_mean) {
        const double e = *r.entropy_mean;
        if (!std::isfinite(e) || e < 0.0 || e > ceiling) fail("entropy_mean outside [0, ln C]");
    }
    std::uint64_t total = 0;
    for (auto c : r.gt_pixel_counts) total += c;
    if (total > h.patch_capacity) fail("ground-truth pixel total exceeds patch capacity");
}

void check_header(const PoolHeader& h) {
    if (h.version != kPoolVersion) {
        throw FormatError(FormatErrc::unsupported_version, "unsupported pool version " + std::to_string(h.version));
    }
    if (h.n_classes < 2) throw FormatError(FormatErrc::invariant_violation, "n_classes must be at least 2");
    if ((h.flags & ~kFlagEntropy) != 0) {
        throw FormatError(FormatErrc::invariant_violation, "unknown header flag bits set");
    }
}

void encode_header(ByteSink& sink, const PoolHeader& h) {
    sink.raw(kPoolMagic, 4);
    sink.u16(h.version);
    sink.u16(h.flags);
    sink.u64(h.n_patches);
    sink.u16(h.n_classes);
    sink.u32(h.patch_capacity);
}

void encode_record(ByteSink& sink, const PoolHeader& h, const PatchRecord& r) {
    sink.u64(r.id);
    sink.f32(static_cast<float>(r.bald_max()));
    sink.f32(static_cast<float>(r.bald_min()));
    sink.f32(static_cast<float>(r.bald_mean()));
    if (h.has_entropy()) sink.f32(static_cast<float>(*r.entropy_mean));
    const auto bits = r.presence();
    for (std::size_t byte = 0; byte < presence_bytes(h.n_classes); ++byte) {
        std::uint8_t v = 0;
        for (std::size_t bit = 0; bit < 8; ++bit) {
            const std::size_t c = byte * 8 + bit;
            if (c < bits.size() && bits[c] != 0.0) v |= static_cast<std::uint8_t>(1u << bit);
        }
        sink.u8(v);
    }
    for (auto c : r.gt_pixel_counts) sink.u32(c);
}

}  // namespace

const char* to_string(FormatErrc code) noexcept {
    switch (code) {
        case FormatErrc::bad_magic: return "bad magic";
        case FormatErrc::unsupported_version: return "unsupported version";
        case FormatErrc::checksum_mismatch: return "checksum mismatch";
        case FormatErrc::invariant_violation: return "invariant violation";
        case FormatErrc::truncated: return "truncated file";
        case FormatErrc::trailing_bytes: return "trailing bytes";
        case FormatErrc::io_failure: return "i/o failure";
    }
    return "unknown";
}

FormatError::FormatError(FormatErrc code, const std::string& what, std::optional<std::uint64_t> record_id)
    : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code), record_id_(record_id) {}

std::size_t record_size(const PoolHeader& h) noexcept {
    return 8 + 3 * 4 + (h.has_entropy() ? 4 : 0) + presence_bytes(h.n_classes) + 4u * h.n_classes;
}

std::size_t file_size(const PoolHeader& h) noexcept {
    return kHeaderSize + static_cast<std::size_t>(h.n_patches) * record_size(h) + kChecksumSize;
}

void validate_records(const PoolHeader& header, std::span<const PatchRecord> records) {
    check_header(header);
    if (records.size() != header.n_patches) {
        throw FormatError(FormatErrc::invariant_violation, "header n_patches does not match record count");
    }
    std::optional<std::uint64_t> previous;
    for (const auto& r : records) {
        check_record(header, r, previous);
        previous = r.id;
    }
}

PoolHeader make_header(std::uint16_t n_classes, std::uint32_t patch_capacity, std::span<const PatchRecord> records) {
    PoolHeader h;
    h.n_classes = n_classes;
    h.patch_capacity = patch_capacity;
    h.n_patches = records.size();
    if (!records.empty() && records.front().entropy_mean) h.flags |= kFlagEntropy;
    return h;
}

void write_pool(std::ostream& out, const PoolHeader& header, std::span<const PatchRecord> records) {
    validate_records(header, records);
    std::uint64_t checksum = 0;
    ByteSink sink;
    encode_header(sink, header);
    sink.flush(out, checksum);
    for (const auto& r : records) {
        encode_record(sink, header, r);
        sink.flush(out, checksum);
    }
    sink.u64(checksum);
    std::uint64_t ignored = 0;
    sink.flush(out, ignored);
    if (!out) throw FormatError(FormatErrc::io_failure, "write failed");
}

void write_pool_file(const std::filesystem::path& path, const PoolHeader& header,
                     std::span<const PatchRecord> records) {
    validate_records(header, records);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError(FormatErrc::io_failure, "cannot open " + path.string() + " for writing");
    write_pool(out, header, records);
}

PoolReader::PoolReader(std::istream& in) : in_(in) {
    std::uint8_t raw[kHeaderSize];
    read_bytes(raw);
    if (std::memcmp(raw, kPoolMagic, 4) != 0) throw FormatError(FormatErrc::bad_magic, "expected \"MSAL\"");
    std::span<const std::uint8_t> b(raw);
    header_.version = static_cast<std::uint16_t>(get_le(b, 4, 2));
    header_.flags = static_cast<std::uint16_t>(get_le(b, 6, 2));
    header_.n_patches = get_le(b, 8, 8);
    header_.n_classes = static_cast<std::uint16_t>(get_le(b, 16, 2));
    header_.patch_capacity = static_cast<std::uint32_t>(get_le(b, 18, 4));
    check_header(header_);
    scratch_.resize(record_size(header_));
    if (header_.n_patches == 0) finish();
}

void PoolReader::read_bytes(std::span<std::uint8_t> dst) {
    in_.read(reinterpret_cast<char*>(dst.data()), static_cast<std::streamsize>(dst.size()));
    if (static_cast<std::size_t>(in_.gcount()) != dst.size()) {
        throw FormatError(FormatErrc::truncated, "unexpected end of data after record " + std::to_string(read_));
    }
    for (auto v : dst) checksum_ += v;
}

void PoolReader::finish() {
    const std::uint64_t expected = checksum_;
    std::uint8_t raw[kChecksumSize];
    read_bytes(raw);
    const std::uint64_t stored = get_le(raw, 0, 8);
    if (stored != expected) throw FormatError(FormatErrc::checksum_mismatch, "stored checksum does not match data");
    if (in_.peek() != std::char_traits<char>::eof()) {
        throw FormatError(FormatErrc::trailing_bytes, "data continues after checksum");
    }
    done_ = true;
}

std::optional<PatchRecord> PoolReader::next() {
    if (done_) return std::nullopt;
    read_bytes(scratch_);
    std::span<const std::uint8_t> b(scratch_);
    const std::size_t C = header_.n_classes;
    PatchRecord r;
    r.id = get_le(b, 0, 8);
    r.features.resize(kBaldFeatureCount + C);
    r.features[kBaldMaxIndex] = get_f32(b, 8);
    r.features[kBaldMinIndex] = get_f32(b, 12);
    r.features[kBaldMeanIndex] = get_f32(b, 16);
    std::size_t off = 20;
    if (header_.has_entropy()) {
        r.entropy_mean = get_f32(b, off);
        off += 4;
    }
    for (std::size_t byte = 0; byte < presence_bytes(header_.n_classes); ++byte, ++off) {
        const std::uint8_t v = b[off];
        for (std::size_t bit = 0; bit < 8; ++bit) {
            const std::size_t c = byte * 8 + bit;
            const bool set = ((v >> bit) & 1u) != 0;
            if (c < C) {
                r.features[kBaldFeatureCount + c] = set ? 1.0 : 0.0;
            } else if (set) {
                throw FormatError(FormatErrc::invariant_violation,
                                  "record " + std::to_string(r.id) + ": padding presence bit set", r.id);
            }
        }
    }
    r.gt_pixel_counts.resize(C);
    for (std::size_t c = 0; c < C; ++c, off += 4) r.gt_pixel_counts[c] = static_cast<std::uint32_t>(get_le(b, off, 4));
    check_record(header_, r, last_id_);
    last_id_ = r.id;
    ++read_;
    if (read_ == header_.n_patches) finish();
    return r;
}

PoolData read_pool(std::istream& in) {
    PoolReader reader(in);
    PoolData data;
    data.header = reader.header();
    // n_patches is untrusted until the checksum passes; cap the up-front reservation.
    data.records.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(data.header.n_patches, 1u << 20)));
    while (auto r = reader.next()) data.records.push_back(std::move(*r));
    return data;
}

PoolData read_pool_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError(FormatErrc::io_failure, "cannot open " + path.string());
    return read_pool(in);
}

void export_csv(std::ostream& out, const PoolData& pool) {
    const auto& h = pool.header;
    out << "id,bald_max,bald_min,bald_mean";
    if (h.has_entropy()) out << ",entropy_mean";
    for (std::size_t c = 0; c < h.n_classes; ++c) out << ",p" << c;
    for (std::size_t c = 0; c < h.n_classes; ++c) out << ",g" << c;
    out << '\n';
    const auto old_precision = out.precision(6);
    for (const auto& r : pool.records) {
        out << r.id << ',' << r.bald_max() << ',' << r.bald_min() << ',' << r.bald_mean();
        if (h.has_entropy()) out << ',' << *r.entropy_mean;
        for (double bit : r.presence()) out << ',' << (bit != 0.0 ? 1 : 0);
        for (auto g : r.gt_pixel_counts) out << ',' << g;
        out << '\n';
    }
    out.precision(old_precision);
}

PoolData import_csv(std::istream& in, std::uint32_t patch_capacity) {
    auto split = [](const std::string& line) {
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        return cells;
    };
    std::string line;
    if (!std::getline(in, line)) throw FormatError(FormatErrc::truncated, "empty CSV");
    const auto columns = split(line);
    const bool entropy = columns.size() > 4 && columns[4] == "entropy_mean";
    const std::size_t fixed = 4 + (entropy ? 1 : 0);
    if (columns.size() < fixed || (columns.size() - fixed) % 2 != 0) {
        throw FormatError(FormatErrc::invariant_violation, "CSV header has an unexpected column count");
    }
    const std::size_t C = (columns.size() - fixed) / 2;
    PoolData pool;
    pool.header.n_classes = static_cast<std::uint16_t>(C);
    pool.header.patch_capacity = patch_capacity;
    pool.header.flags = entropy ? kFlagEntropy : 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto cells = split(line);
        if (cells.size() != columns.size()) {
            throw FormatError(FormatErrc::invariant_violation, "CSV row has " + std::to_string(cells.size()) + " cells");
        }
        PatchRecord r;
        r.id = std::stoull(cells[0]);
        r.features = {std::stod(cells[1]), std::stod(cells[2]), std::stod(cells[3])};
        if (entropy) r.entropy_mean = std::stod(cells[4]);
        for (std::size_t c = 0; c < C; ++c) r.features.push_back(std::stod(cells[fixed + c]));
        for (std::size_t c = 0; c < C; ++c) {
            r.gt_pixel_counts.push_back(static_cast<std::uint32_t>(std::stoul(cells[fixed + C + c])));
        }
        pool.records.push_back(std::move(r));
    }
    pool.header.n_patches = pool.records.size();
    return pool;
}

void write_probmap_fixture(std::ostream& out, std::span<const ProbMapVolume> volumes) {
    std::uint64_t checksum = 0;
    ByteSink sink;
    sink.raw("MSPM", 4);
    sink.u16(1);
    sink.u16(0);
    sink.u32(static_cast<std::uint32_t>(volumes.size()));
    sink.flush(out, checksum);
    for (const auto& v : volumes) {
        sink.u64(v.patch_id);
        sink.u32(static_cast<std::uint32_t>(v.map.passes()));
        sink.u32(static_cast<std::uint32_t>(v.map.pixels()));
        sink.u16(static_cast<std::uint16_t>(v.map.classes()));
        for (double p : v.map.values()) sink.f32(static_cast<float>(p));
        sink.flush(out, checksum);
    }
    sink.u64(checksum);
    std::uint64_t ignored = 0;
    sink.flush(out, ignored);
    if (!out) throw FormatError(FormatErrc::io_failure, "write failed");
}

std::vector<ProbMapVolume> read_probmap_fixture(std::istream& in) {
    std::uint64_t checksum = 0;
    auto read = [&](std::size_t n) {
        std::vector<std::uint8_t> buf(n);
        in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in.gcount()) != n) throw FormatError(FormatErrc::truncated, "probmap fixture");
        for (auto b : buf) checksum += b;
        return buf;
    };
    auto head = read(12);
    if (std::memcmp(head.data(), "MSPM", 4) != 0) throw FormatError(FormatErrc::bad_magic, "expected \"MSPM\"");
    if (get_le(head, 4, 2) != 1) throw FormatError(FormatErrc::unsupported_version, "probmap fixture version");
    const auto count = get_le(head, 8, 4);
    std::vector<ProbMapVolume> volumes;
    for (std::uint64_t i = 0; i < count; ++i) {
        auto meta = read(18);
        const auto id = get_le(meta, 0, 8);
        const auto T = static_cast<std::size_t>(get_le(meta, 8, 4));
        const auto K = static_cast<std::size_t>(get_le(meta, 12, 4));
        const auto C = static_cast<std::size_t>(get_le(meta, 16, 2));
        auto body = read(T * K * C * 4);
        std::vector<double> values(T * K * C);
        for (std::size_t j = 0; j < values.size(); ++j) values[j] = get_f32(body, 4 * j);
        volumes.push_back({id, ProbMap(T, K, C, std::move(values))});
    }
    const std::uint64_t expected = checksum;
    auto tail = read(8);
    if (get_le(tail, 0, 8) != expected) throw FormatError(FormatErrc::checksum_mismatch, "probmap fixture");
    return volumes;
}

}  // namespace misical::io
