#pragma once

// Property suites behind `selfsim check`: derivative correctness, quadrature
// order, operator scaling laws, exact-solution annihilation and the Wolfe
// conditions of the optimizer.

#include <cstdint>
#include <string>
#include <vector>

#include "selfsim/framework.hpp"

namespace selfsim {

struct SuiteInfo {
    std::string name;
    std::string description;
};

struct SuiteResult {
    std::string name;
    bool passed = false;
    std::string detail;
    double seconds = 0.0;
};

/// Test fixture switches. `flip_diffusion_amplitude` negates the G w frame
/// term of the diffusion problems (a planted bug the suites must catch).
struct CheckOptions {
    bool flip_diffusion_amplitude = false;
};

const std::vector<SuiteInfo> &suite_list();

/// Throws ConfigError for an unknown suite name.
SuiteResult run_suite(const std::string &name, const CheckOptions &options = {});

/// Max relative error of L_x(B f((x - c)/A)) = A^a B^b L_y(f) over `trials`
/// random (A, B) in [0.5, 2]^2 (and random shifts where the problem is
/// translation covariant), with analytic test functions.
double scaling_law_error(const ProblemSpec &problem, std::uint64_t seed, int trials = 50);

/// Max |pde residual| of the Nagumo travelling wave with its speed.
double nagumo_annihilation_error(double a);

/// Max |pde residual| of the steady Gaussian exp(-|y|^2 / 4) with
/// G = -dim / 2, C = 1 / 2 for a diffusion problem.
double diffusion_annihilation_error(const ProblemSpec &problem);

} // namespace selfsim
