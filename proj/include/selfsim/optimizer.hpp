#pragma once

// L-BFGS with a strong-Wolfe line search, and the two training phases
// (warm-up on the initial condition, then the joint physics-informed fit).

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "selfsim/framework.hpp"

namespace selfsim {

struct LbfgsConfig {
    int memory = 20;
    double c1 = 1e-4;
    double c2 = 0.9;
    int max_iterations = 20000;
    double gradient_tolerance = 1e-8; // on the Euclidean gradient norm
    int max_line_search_steps = 25;
    int warmup_iterations = 2000;

    void validate() const;
};

/// Data of one accepted step, kept so the Wolfe conditions can be audited.
struct WolfeRecord {
    double f0 = 0.0;
    double f1 = 0.0;
    double slope0 = 0.0; // g(x0) . d
    double slope1 = 0.0; // g(x1) . d
    double step = 0.0;
};

struct TrainHistory {
    /// Entry 0 is the starting point (step 0); entry k the k-th accepted step.
    std::vector<LossBreakdown> losses;
    std::vector<double> grad_norms;
    std::vector<double> steps;
    std::vector<double> seconds; // wall-clock since start, not written to CSV
    std::vector<WolfeRecord> wolfe;
    int evaluations = 0;
    bool line_search_failed = false;
    std::string stop_reason;

    [[nodiscard]] int iterations() const { return static_cast<int>(steps.empty() ? 0 : steps.size() - 1); }
};

/// Returns f(x) and writes grad (resized by the callee).
using Objective = std::function<double(std::span<const double> x, std::vector<double> &grad)>;

/// Called after every accepted iterate with the history so far.
using IterationCallback = std::function<void(const TrainHistory &)>;

struct MinimizeResult {
    std::vector<double> x; // best iterate seen
    double f = 0.0;
    TrainHistory history;
};

/// Two-loop L-BFGS. `breakdown`, if given, supplies the loss components of the
/// most recent evaluation for the history (otherwise only totals are stored).
MinimizeResult minimize(const Objective &objective, std::vector<double> x0, const LbfgsConfig &config,
                        const std::function<LossBreakdown()> &breakdown = {},
                        const IterationCallback &on_iteration = {});

/// Fit the profile network to w0(x) at every collocation point for
/// config.warmup_iterations iterations; the rate parameters are untouched.
MinimizeResult warmup(const ProblemSpec &problem, const Networks &nets, const CollocationSet &collocation,
                      const LbfgsConfig &config, const IterationCallback &on_iteration = {});

struct TrainResult {
    Networks nets;
    TrainHistory warmup;
    TrainHistory history;
};

/// Warm-up followed by the joint minimisation of total_loss over all params.
TrainResult train(const ProblemSpec &problem, const CollocationSet &collocation, const LossWeights &weights,
                  const LbfgsConfig &config, Networks initial, const IterationCallback &on_warmup = {},
                  const IterationCallback &on_iteration = {});

} // namespace selfsim
