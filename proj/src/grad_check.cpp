#include "stem/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "stem/errors.hpp"

namespace stem {
namespace {

double eval_loss(const LossFn& fn, ParamStore& params, const std::string& perturbed) {
  Tape tape(&params, /*record_grad=*/false);
  const double v = tape.value(fn(tape))(0, 0);
  if (!std::isfinite(v)) {
    throw NumericError("grad_check: non-finite loss while perturbing '" + perturbed + "'");
  }
  return v;
}

}  // namespace

bool GradCheckReport::passed() const {
  return std::none_of(params.begin(), params.end(),
                      [](const ParamGradCheck& p) { return p.status == GradStatus::kFail; });
}

const ParamGradCheck& GradCheckReport::at(const std::string& name) const {
  for (const auto& p : params) {
    if (p.name == name) return p;
  }
  throw ConfigError("grad_check report has no parameter '" + name + "'");
}

std::string GradCheckReport::summary() const {
  std::ostringstream out;
  for (const auto& p : params) {
    const char* status = p.status == GradStatus::kPass       ? "pass"
                         : p.status == GradStatus::kFail     ? "FAIL"
                                                             : "sg-excluded";
    out << p.name << ": " << status << " rel=" << p.max_rel_err << " abs=" << p.max_abs_err
        << " |fd|=" << p.max_fd_abs << " |tape|=" << p.max_tape_abs << "\n";
  }
  return out.str();
}

GradCheckReport grad_check(const LossFn& loss_fn, ParamStore& params,
                           const GradCheckOptions& opts) {
  params.zero_grads();
  std::set<std::string> reached;
  {
    Tape tape(&params);
    const Var loss = loss_fn(tape);
    if (!std::isfinite(tape.value(loss)(0, 0))) {
      throw NumericError("grad_check: non-finite loss at the unperturbed point");
    }
    tape.backward(loss);
    reached = tape.reached_params();
  }

  GradCheckReport report;
  for (auto& [name, entry] : params) {
    if (!entry.trainable) continue;
    ParamGradCheck pc;
    pc.name = name;
    const bool is_reached = reached.count(name) != 0;
    bool any_fail = false;
    auto values = entry.value.data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double original = values[i];
      values[i] = original + opts.step;
      const double up = eval_loss(loss_fn, params, name);
      values[i] = original - opts.step;
      const double down = eval_loss(loss_fn, params, name);
      values[i] = original;
      const double fd = (up - down) / (2.0 * opts.step);
      const double g = entry.grad.data()[i];
      pc.max_fd_abs = std::max(pc.max_fd_abs, std::abs(fd));
      pc.max_tape_abs = std::max(pc.max_tape_abs, std::abs(g));
      if (!is_reached) {
        if (g != 0.0) any_fail = true;
        continue;
      }
      const double abs_err = std::abs(g - fd);
      const double denom = std::max(std::abs(g), std::abs(fd));
      const double rel_err = denom > 0.0 ? abs_err / denom : 0.0;
      pc.max_abs_err = std::max(pc.max_abs_err, abs_err);
      if (abs_err > opts.abs_tol) pc.max_rel_err = std::max(pc.max_rel_err, rel_err);
      if (rel_err > opts.rel_tol && abs_err > opts.abs_tol) any_fail = true;
    }
    if (any_fail) {
      pc.status = GradStatus::kFail;
    } else if (!is_reached && pc.max_fd_abs > opts.abs_tol) {
      pc.status = GradStatus::kSgExcluded;
    }
    report.params.push_back(std::move(pc));
  }
  return report;
}

}  // namespace stem
