#include "stem/synthetic.hpp"

#include <cmath>

#include "stem/errors.hpp"
#include "stem/rng.hpp"

namespace stem {
namespace {

// Bias b such that mean_i sigmoid(scores_i + b) = target, by bisection.
double calibrate_bias(std::span<const double> scores, double target) {
  double lo = -60.0, hi = 60.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    double mean = 0.0;
    for (double s : scores) mean += sigmoid(s + mid);
    mean /= static_cast<double>(scores.size());
    (mean < target ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

void SyntheticConfig::validate() const {
  if (!(rho >= -1.0 && rho <= 1.0)) throw ConfigError("synthetic: rho must be in [-1, 1]");
  if (num_users < 1 || num_items < 1) throw ConfigError("synthetic: need users and items");
  if (latent_dim < 1) throw ConfigError("synthetic: latent_dim must be >= 1");
  if (num_extra_fields > 0 && extra_vocab < 1) throw ConfigError("synthetic: extra_vocab >= 1");
  if (task_names.empty()) throw ConfigError("synthetic: at least one task");
  if (num_samples < 1) throw ConfigError("synthetic: num_samples must be >= 1");
  if (!(signal_scale >= 0.0)) throw ConfigError("synthetic: signal_scale must be >= 0");
  if (!positive_ratios.empty()) {
    if (positive_ratios.size() != num_tasks()) {
      throw ConfigError("synthetic: positive_ratios needs one entry per task");
    }
    for (double r : positive_ratios) {
      if (!(r > 0.0 && r < 1.0)) throw ConfigError("synthetic: positive ratios must be in (0,1)");
    }
  } else if (task_bias.size() != num_tasks()) {
    throw ConfigError("synthetic: task_bias needs one entry per task");
  }
}

SyntheticData generate_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  const std::size_t t_count = cfg.num_tasks();
  const std::size_t d = cfg.latent_dim;
  Rng rng(cfg.seed);

  // Draw order: base user latents, item latents, per-task user noise,
  // per-sample field ids, then labels.
  Matrix users(cfg.num_users, d);
  for (double& v : users.data()) v = rng.normal();
  Matrix items(cfg.num_items, d);
  for (double& v : items.data()) v = rng.normal();
  std::vector<Matrix> task_users{users};
  const double keep = cfg.rho;
  const double fresh = std::sqrt(std::max(0.0, 1.0 - cfg.rho * cfg.rho));
  for (std::size_t t = 1; t < t_count; ++t) {
    Matrix u(cfg.num_users, d);
    for (std::size_t i = 0; i < u.size(); ++i) {
      u.data()[i] = keep * users.data()[i] + fresh * rng.normal();
    }
    task_users.push_back(std::move(u));
  }

  const std::size_t m = 2 + cfg.num_extra_fields;
  const std::size_t n = cfg.num_samples;
  std::vector<std::uint32_t> feats(n * m);
  Matrix scores(n, t_count);
  const double norm = cfg.signal_scale / std::sqrt(static_cast<double>(d));
  for (std::size_t i = 0; i < n; ++i) {
    const auto user = static_cast<std::uint32_t>(rng.below(cfg.num_users));
    const auto item = static_cast<std::uint32_t>(rng.below(cfg.num_items));
    feats[i * m] = user + 1;
    feats[i * m + 1] = item + 1;
    for (std::size_t f = 2; f < m; ++f) {
      feats[i * m + f] = static_cast<std::uint32_t>(rng.below(cfg.extra_vocab)) + 1;
    }
    for (std::size_t t = 0; t < t_count; ++t) {
      scores(i, t) = norm * dot(task_users[t].row(user), items.row(item));
    }
  }

  std::vector<double> bias(t_count);
  for (std::size_t t = 0; t < t_count; ++t) {
    if (cfg.positive_ratios.empty()) {
      bias[t] = cfg.task_bias[t];
    } else {
      std::vector<double> col(n);
      for (std::size_t i = 0; i < n; ++i) col[i] = scores(i, t);
      bias[t] = calibrate_bias(col, cfg.positive_ratios[t]);
    }
  }

  FieldSchema schema;
  schema.vocab_sizes = {cfg.num_users + 1, cfg.num_items + 1};
  for (std::size_t f = 2; f < m; ++f) schema.vocab_sizes.push_back(cfg.extra_vocab + 1);
  Dataset data(std::move(schema), cfg.task_names);
  Matrix probs(n, t_count);
  std::vector<std::uint8_t> labels(t_count);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t t = 0; t < t_count; ++t) {
      probs(i, t) = sigmoid(scores(i, t) + bias[t]);
      labels[t] = rng.uniform() < probs(i, t) ? 1 : 0;
    }
    data.add(std::span(feats).subspan(i * m, m), labels);
  }
  return SyntheticData{std::move(data), std::move(bias), std::move(probs)};
}

double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.empty()) throw ShapeError("pearson: length mismatch");
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return saa == sbb ? 1.0 : 0.0;
  return sab / std::sqrt(saa * sbb);
}

}  // namespace stem
