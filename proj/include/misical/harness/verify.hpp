#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace misical::harness {

struct SuiteResult {
    std::string name;
    bool passed = false;
    std::string detail;
    double seconds = 0.0;
};

SuiteResult verify_replay_frequencies();
/// Finite-difference check on `instances` random (network, batch) pairs.
SuiteResult verify_gradients(std::size_t instances = 20);
SuiteResult verify_nstep();
/// Fuzzed round trips and byte corruptions; when fixture is set, that file must also read cleanly.
SuiteResult verify_pool_io(const std::optional<std::filesystem::path>& fixture = std::nullopt, std::size_t pools = 100);

/// Runs every suite, printing one verdict line each. Warns when the total exceeds 120 s.
std::vector<SuiteResult> run_verify(const std::optional<std::filesystem::path>& fixture, std::ostream& out);

}  // namespace misical::harness
