#pragma once

// Run configuration, end-to-end training runs with their output directory,
// and the report generated from a finished run directory.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "selfsim/error.hpp"
#include "selfsim/optimizer.hpp"
#include "selfsim/problems.hpp"

namespace selfsim {

struct RunConfig {
    std::string case_name;
    bool desk_scale = false;
    GridSizes grid;
    double tau_end = 0.0;
    MlpSpec profile;
    MlpSpec rates;
    LossWeights weights;
    LbfgsConfig lbfgs;
    std::uint64_t seed = 0;
    std::string output_dir = "run";
    CaseParams case_params;
    std::vector<double> snapshots; // tau values
};

/// Parse a JSON config and materialize every default. Unknown case names and
/// schema violations raise ConfigError with the key path as field.
RunConfig parse_run_config(std::string_view text);
RunConfig load_run_config(const std::filesystem::path &path);

/// Fully resolved config as JSON; parsing it yields the same RunConfig.
std::string resolved_json(const RunConfig &config);

/// Defaults of a case, as `parse_run_config({"case": name, ...})` would give.
RunConfig default_run_config(const std::string &case_name, bool desk_scale);

ProblemSpec build_problem(const RunConfig &config);

struct RunProgress {
    std::string phase; // "warmup" or "train"
    int iteration = 0;
    double total = 0.0;
    double grad_norm = 0.0;
};
using ProgressFn = std::function<void(const RunProgress &)>;

struct RunOutcome {
    CaseResult result;
    TrainResult training;
    double seconds = 0.0;
};

/// Train, post-process and write the run directory:
/// config.resolved, loss_history.csv, warmup_history.csv, rates.csv,
/// snapshots/, summary.json, profile.ckpt, rates.ckpt.
RunOutcome execute_run(const RunConfig &config, const ProgressFn &progress = {});

/// Files a run directory must contain for `generate_report`.
std::vector<std::string> required_run_files();

class MissingFilesError : public Error {
  public:
    explicit MissingFilesError(std::vector<std::string> files);
    [[nodiscard]] const std::vector<std::string> &files() const noexcept { return files_; }

  private:
    std::vector<std::string> files_;
};

struct Report {
    std::string table;              // plain-text comparison table
    std::vector<std::string> files; // written, relative to the run directory
};

/// Recompute the case result from the checkpoints and write report.txt and
/// plot/ (gnuplot data plus plots.gp). Throws MissingFilesError.
Report generate_report(const std::filesystem::path &run_dir);

/// Text of the comparison table for one result.
std::string format_result_table(const CaseResult &result);

} // namespace selfsim
