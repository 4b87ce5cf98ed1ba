#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stem/data.hpp"
#include "stem/matrix.hpp"

namespace stem {

// Latent-factor click model with a tunable cross-task preference correlation.
//
// Task 0 draws user vectors u_0 ~ N(0, I); every later task t uses
// u_t = rho * u_0 + sqrt(1 - rho^2) * eps_t with fresh eps_t. Item vectors are
// shared across tasks, so the per-pair task scores have correlation rho and
// negative rho means users systematically prefer, for one task, the items they
// reject for the other. A label is Bernoulli(sigmoid(score_t + bias_t)).
//
// Fields are (user_id, item_id, extra noise fields...). In-field ids start at
// 1; 0 stays the default feature.
struct SyntheticConfig {
  std::uint32_t num_users = 1000;
  std::uint32_t num_items = 1000;
  std::uint32_t num_extra_fields = 2;
  std::uint32_t extra_vocab = 50;
  std::uint32_t latent_dim = 8;
  double rho = 0.0;
  // Standard deviation of score_t before the bias.
  double signal_scale = 2.0;
  // When non-empty the biases are calibrated to hit these expected positive
  // ratios; otherwise task_bias is used as given.
  std::vector<double> positive_ratios;
  std::vector<double> task_bias = {0.0, 0.0};
  std::vector<std::string> task_names = {"task0", "task1"};
  std::size_t num_samples = 10000;
  std::uint64_t seed = 1;

  std::size_t num_tasks() const { return task_names.size(); }
  void validate() const;
};

struct SyntheticData {
  Dataset dataset;
  // Biases actually used (calibrated or given).
  std::vector<double> bias;
  // Bernoulli parameter per sample and task, n x T.
  Matrix probabilities;
};

SyntheticData generate_synthetic(const SyntheticConfig& cfg);

// Pearson correlation of two equally long sequences.
double pearson(std::span<const double> a, std::span<const double> b);

}  // namespace stem
