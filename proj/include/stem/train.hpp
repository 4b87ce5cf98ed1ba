#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stem/data.hpp"
#include "stem/metrics.hpp"
#include "stem/model.hpp"
#include "stem/param_store.hpp"
#include "stem/tape.hpp"

namespace stem {

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 256;
  std::size_t max_epochs = 10;
  std::size_t early_stop_patience = 2;
  double l2_embedding = 1e-6;
  std::uint64_t seed = 1;
  // Per task; empty means all 1.
  std::vector<double> task_loss_weights;

  void validate(std::size_t num_tasks) const;
  double task_weight(std::size_t task) const {
    return task_loss_weights.empty() ? 1.0 : task_loss_weights.at(task);
  }
};

// Sum over tasks of weighted binary cross-entropy of one sample, with
// probabilities clamped to [1e-12, 1 - 1e-12].
double bce_loss(std::span<const double> predictions, std::span<const std::uint8_t> labels,
                std::span<const double> weights = {});

// lambda * sum of squared norms of the distinct listed rows.
double l2_embedding_penalty(const Matrix& table, std::span<const std::uint32_t> rows,
                            double lambda);

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam. Dense parameters whose gradient is entirely zero are
// skipped; row-sparse tables only update the rows touched since the last
// zero_grads (lazy moments, global step count).
class Adam {
 public:
  explicit Adam(AdamOptions opts = {}) : opts_(opts) {}

  void step(ParamStore& params, double lr);
  std::uint64_t steps() const { return step_; }

 private:
  struct Moments {
    Matrix m;
    Matrix v;
  };
  AdamOptions opts_;
  std::uint64_t step_ = 0;
  std::map<std::string, Moments> moments_;
};

// Training loss of one batch: weighted per-task mean BCE plus the
// lazy L2 penalty on looked-up embedding rows. Only tasks listed in `tasks`
// contribute.
Var batch_loss(Tape& tape, const Model& model, const ForwardResult& fr, const Dataset& data,
               std::span<const std::size_t> batch, std::span<const std::uint32_t> rows,
               std::span<const std::size_t> tasks, const TrainConfig& cfg);

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  MetricsReport val;
  bool selected = false;
};

struct FitResult {
  ParamStore best;
  std::size_t best_epoch = 0;  // 0: initialization
  std::vector<EpochLog> log;
};

// Joint training with validation-average-AUC model selection and early
// stopping. Throws NumericError on a non-finite loss.
FitResult fit(const Model& model, const Dataset& train, const Dataset& val,
              const TrainConfig& cfg);

// CSV: epoch,train_loss,val_auc_task{t}...,val_avg_auc,selected
std::string training_log_csv(const FitResult& result, const Model& model);

}  // namespace stem
