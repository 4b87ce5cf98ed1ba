#pragma once

#include <functional>
#include <string>
#include <vector>

#include "stem/param_store.hpp"
#include "stem/tape.hpp"

namespace stem {

// Builds a scalar loss on the given tape (bound to the store under test).
using LossFn = std::function<Var(Tape&)>;

struct GradCheckOptions {
  double rel_tol = 1e-4;
  double abs_tol = 1e-7;
  double step = 1e-5;
};

enum class GradStatus { kPass, kFail, kSgExcluded };

struct ParamGradCheck {
  std::string name;
  GradStatus status = GradStatus::kPass;
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  // Largest |finite difference| seen; for SG-excluded parameters this shows
  // the loss does depend on them.
  double max_fd_abs = 0.0;
  double max_tape_abs = 0.0;
};

struct GradCheckReport {
  std::vector<ParamGradCheck> params;
  bool passed() const;
  const ParamGradCheck& at(const std::string& name) const;
  std::string summary() const;
};

// Compares tape gradients against central finite differences for every
// trainable scalar. A scalar passes when its relative error is within rel_tol
// or its absolute error within abs_tol. Parameters the backward pass reached
// only through blocked edges must have tape gradient exactly 0; those with a
// nonzero finite difference are reported as SG-excluded, not failures.
GradCheckReport grad_check(const LossFn& loss_fn, ParamStore& params,
                           const GradCheckOptions& opts = {});

}  // namespace stem
