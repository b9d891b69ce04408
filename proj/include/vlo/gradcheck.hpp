#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace vlo {

struct GradCheckReport {
  std::string op;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

// Central finite differences (step 1e-4) against the hand-written adjoints of
// every differentiable op, plus the pose-head chain and the end-to-end loss.
// `corrupt_adjoint` deliberately biases one analytic gradient per op so the
// negative control fails.
std::vector<GradCheckReport> run_gradient_checks(uint64_t seed, bool corrupt_adjoint = false);

bool gradchecks_pass(const std::vector<GradCheckReport>& reports);
std::string format_gradcheck_report(const std::vector<GradCheckReport>& reports);

}  // namespace vlo
