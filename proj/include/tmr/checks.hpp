#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "tmr/config.hpp"
#include "tmr/model.hpp"

namespace tmr {

struct CheckResult {
    std::string name;
    std::string detail;  // measured value vs tolerance
    bool pass = false;
};

bool all_pass(const std::vector<CheckResult>& results);
void print_results(const std::vector<CheckResult>& results);

// ---- gradient verification utilities -----------------------------------

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string worst_param;
};

/// Central finite differences (step h) against one analytic backward pass.
/// Relative error uses max(|analytic|, |numeric|, 1e-4) as the denominator.
GradCheckReport finite_difference_check(const std::vector<Parameter*>& params,
                                        const std::function<Var(Tape&)>& build_loss, double h = 1e-5);

/// Seeded 2-layer hidden-8 model with a small synthetic batch, used by the
/// gradient suites.
struct ToyFixture {
    ModelConfig config;
    std::unique_ptr<ModelParams> model;
    std::vector<MaskedExample> masked;
    std::vector<CorruptedExample> corrupted;
};
ToyFixture make_toy_fixture(std::uint64_t seed);

// ---- packaged property suites ------------------------------------------

std::vector<CheckResult> verify_sampling();
std::vector<CheckResult> verify_gradients();
std::vector<CheckResult> verify_buffer();
/// Runs the short drift experiment on cfg's corpus (start/end exact recovery).
std::vector<CheckResult> verify_drift(const Config& cfg);

}  // namespace tmr
