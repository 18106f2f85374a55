#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "misical/agent.hpp"
#include "misical/harness/config.hpp"
#include "misical/pool_io.hpp"

namespace misical::harness {

/// Raised when an output file exists and overwriting was not forced.
class OutputExistsError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct SeedResult {
    std::uint64_t seed = 0;
    PolicyKind policy = PolicyKind::random;
    RunLog log;
    std::vector<PretrainEpoch> pretrain;
    std::size_t initial_labelled = 0;
};

/// Final-row metrics of one run, as printed in the summary.
struct FinalMetrics {
    double cumulative_reward = 0.0;
    double target_patches = 0.0;
    double labelled_count = 0.0;
    double histogram_entropy = 0.0;
    double mean_iou = 0.0;
};

FinalMetrics final_metrics(const SeedResult& result);

/// Pretraining (misical only) and exploration for one seed on a fresh copy of the pool.
SeedResult run_seed(const RunConfig& config, const io::PoolData& pool, PolicyKind policy, std::uint64_t seed);

/// Yield at the first event whose exploration acquisitions reach `acquisitions`, or the last event if never reached.
double target_patches_at(const RunLog& log, std::size_t acquisitions);

/// Main per-event CSV. Columns: event, epsilon, cumulative_reward, labelled_count, histogram_entropy,
/// dqn_loss, simulated_mean_iou, target_patches. Absent values are empty cells.
void write_run_csv(std::ostream& out, const RunLog& log);
void write_timing_csv(std::ostream& out, const RunLog& log);
void write_smoothed_csv(std::ostream& out, const RunLog& log, std::size_t window = 30);
void write_pretrain_csv(std::ostream& out, const std::vector<PretrainEpoch>& epochs);
/// Per-seed final rows, then mean and std rows computed from the printed values.
void write_summary_csv(std::ostream& out, const std::vector<SeedResult>& results);

/// Rounds through the summary's printed format.
double printed(double v);
std::string format_cell(double v, int significant = 10);

struct CommandReport {
    std::vector<std::filesystem::path> written;
};

/// Runs config.policy over config.seeds; writes per-seed CSVs, summary.csv and config.ini into config.out.
CommandReport cmd_run(const RunConfig& config, bool force, std::ostream& log);

struct CompareRow {
    PolicyKind policy;
    double yield_mean = 0.0, yield_std = 0.0;
    double iou_mean = 0.0, iou_std = 0.0;
    std::optional<double> p_value;  ///< Welch test of yield against the best policy; empty for the best row
    bool significant = false;
};

std::vector<CompareRow> compare_table(const std::vector<std::vector<SeedResult>>& per_policy);

/// Runs every policy in config.policies over shared seeds; writes per-policy runs, compare.csv and curves.csv.
CommandReport cmd_compare(const RunConfig& config, bool force, std::ostream& log);

/// Writes the synthetic pool to config.synth_out and prints its class prevalences.
CommandReport cmd_synth(const RunConfig& config, bool force, std::ostream& log);

}  // namespace misical::harness
