#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>
#include <algorithm>

#include "misical/patch.hpp"
#include "misical/pool.hpp"

namespace testing {

inline std::filesystem::path fixture(const std::string& name) {
    return std::filesystem::path(MISICAL_FIXTURE_DIR) / name;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::uint64_t counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("misical_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

/// Random valid record: float-exact BALD triple in [0, ln C], random presence bits, counts within capacity.
inline misical::PatchRecord random_record(std::uint64_t id, std::size_t classes, bool entropy,
                                          std::uint32_t capacity, misical::Rng& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double ln_c = std::log(static_cast<double>(classes));
    double v[3];
    for (double& x : v) x = static_cast<float>(unit(rng) * ln_c);
    std::sort(v, v + 3);
    misical::PatchRecord r;
    r.id = id;
    r.features = {v[2], v[0], v[1]};
    for (std::size_t c = 0; c < classes; ++c) r.features.push_back(unit(rng) < 0.3 ? 1.0 : 0.0);
    r.gt_pixel_counts.assign(classes, 0);
    std::uint32_t left = capacity;
    for (std::size_t c = 0; c < classes && left > 0; ++c) {
        if (unit(rng) < 0.4) {
            const auto n = std::uniform_int_distribution<std::uint32_t>(0, left)(rng);
            r.gt_pixel_counts[c] = n;
            left -= n;
        }
    }
    if (entropy) r.entropy_mean = static_cast<float>(unit(rng) * ln_c);
    return r;
}

/// Records with ids 0..n-1 where exactly the listed ids contain `target` pixels.
inline std::vector<misical::PatchRecord> toy_records(std::size_t n, std::size_t classes, std::size_t target,
                                                     const std::vector<std::uint64_t>& target_ids) {
    std::vector<misical::PatchRecord> out;
    for (std::uint64_t i = 0; i < n; ++i) {
        misical::PatchRecord r;
        r.id = i;
        r.features = {0.3, 0.1, 0.2};
        r.features.resize(3 + classes, 0.0);
        r.gt_pixel_counts.assign(classes, 0);
        r.gt_pixel_counts[(target + 1) % classes] = 100;
        if (std::find(target_ids.begin(), target_ids.end(), i) != target_ids.end()) {
            r.gt_pixel_counts[target] = 50;
            r.features[3 + target] = 1.0;
        }
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace testing
