#include "stem/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "stem/errors.hpp"

namespace stem {

void TrainConfig::validate(std::size_t num_tasks) const {
  if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be > 0");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (!(l2_embedding >= 0.0)) throw ConfigError("train: l2_embedding must be >= 0");
  if (!task_loss_weights.empty() && task_loss_weights.size() != num_tasks) {
    throw ConfigError("train: task_loss_weights needs one entry per task");
  }
}

double bce_loss(std::span<const double> predictions, std::span<const std::uint8_t> labels,
                std::span<const double> weights) {
  if (predictions.size() != labels.size() ||
      (!weights.empty() && weights.size() != labels.size())) {
    throw ShapeError("bce_loss: length mismatch");
  }
  double total = 0.0;
  for (std::size_t t = 0; t < predictions.size(); ++t) {
    const double p = predictions[t];
    if (!(p >= 0.0 && p <= 1.0)) {
      throw NumericError("bce_loss: prediction " + std::to_string(p) + " outside [0,1]");
    }
    const double c = std::clamp(p, 1e-12, 1.0 - 1e-12);
    const double w = weights.empty() ? 1.0 : weights[t];
    total -= w * (labels[t] != 0 ? std::log(c) : std::log(1.0 - c));
  }
  return total;
}

double l2_embedding_penalty(const Matrix& table, std::span<const std::uint32_t> rows,
                            double lambda) {
  std::vector<std::uint32_t> distinct(rows.begin(), rows.end());
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  double total = 0.0;
  for (std::uint32_t r : distinct) {
    if (r >= table.rows()) throw BoundsError("l2 penalty: row " + std::to_string(r));
    total += dot(table.row(r), table.row(r));
  }
  return lambda * total;
}

void Adam::step(ParamStore& params, double lr) {
  ++step_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(step_));
  const double b1 = opts_.beta1;
  const double b2 = opts_.beta2;
  const double eps = opts_.eps;
  auto update = [&](std::span<double> theta, std::span<const double> g, std::span<double> m,
                    std::span<double> v) {
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      theta[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  };
  for (auto& [name, e] : params) {
    if (!e.trainable) continue;
    auto it = moments_.find(name);
    if (it == moments_.end()) {
      it = moments_.emplace(name, Moments{Matrix(e.value.rows(), e.value.cols()),
                                          Matrix(e.value.rows(), e.value.cols())})
               .first;
    }
    Moments& mo = it->second;
    if (e.row_sparse) {
      for (std::size_t r : e.touched_rows) {
        for (double g : e.grad.row(r)) {
          if (!std::isfinite(g)) throw NumericError("adam: non-finite gradient in '" + name + "'");
        }
        update(e.value.row(r), e.grad.row(r), mo.m.row(r), mo.v.row(r));
      }
      continue;
    }
    bool any = false;
    for (double g : e.grad.data()) {
      if (!std::isfinite(g)) throw NumericError("adam: non-finite gradient in '" + name + "'");
      any = any || g != 0.0;
    }
    if (any) update(e.value.data(), e.grad.data(), mo.m.data(), mo.v.data());
  }
}

Var batch_loss(Tape& tape, const Model& model, const ForwardResult& fr, const Dataset& data,
               std::span<const std::size_t> batch, std::span<const std::uint32_t> rows,
               std::span<const std::size_t> tasks, const TrainConfig& cfg) {
  Var loss;
  std::vector<double> labels(batch.size());
  for (std::size_t t : tasks) {
    for (std::size_t r = 0; r < batch.size(); ++r) labels[r] = data.label(batch[r], t);
    const Var term = tape.bce(fr.predictions.at(t), labels, cfg.task_weight(t));
    loss = loss.valid() ? tape.add(loss, term) : term;
  }
  if (cfg.l2_embedding > 0.0) {
    // Rows each table served in this batch.
    const std::size_t m = model.schema().num_fields();
    std::map<std::string, std::vector<std::uint32_t>> used;
    auto collect = [&](const std::vector<std::string>& tables) {
      for (std::size_t r = 0; r < batch.size(); ++r) {
        for (std::size_t f = 0; f < m; ++f) used[tables[f]].push_back(rows[r * m + f]);
      }
    };
    collect(model.field_tables_shared());
    const auto& arch = model.arch();
    if (arch.task_tables) {
      for (std::size_t t : arch.active_tasks) collect(model.field_tables_for_task(t));
    }
    if (arch.per_expert_tables) {
      for (std::size_t j = 1; j < arch.groups[arch.mask.shared_group()].num_experts; ++j) {
        collect(std::vector<std::string>(m, expert_table(j)));
      }
    }
    for (const auto& [table, ids] : used) {
      loss = tape.add(loss, tape.l2_rows(table, ids, cfg.l2_embedding));
    }
  }
  return loss;
}

FitResult fit(const Model& model, const Dataset& train, const Dataset& val,
              const TrainConfig& cfg) {
  cfg.validate(model.config().num_tasks);
  if (!(train.schema() == model.schema()) || !(val.schema() == model.schema())) {
    throw ConfigError("fit: datasets do not match the model schema");
  }
  if (train.num_tasks() != model.config().num_tasks || val.num_tasks() != train.num_tasks()) {
    throw ConfigError("fit: dataset task count differs from the model");
  }
  const auto& tasks = model.arch().active_tasks;
  FitResult result;
  ParamStore params = model.init_params(cfg.seed);
  result.best = params;
  if (cfg.max_epochs == 0) return result;
  if (train.empty()) throw EmptyInputError("fit: empty training set");

  Adam adam;
  double best_score = -std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto batches =
        batch_iter(train.size(), cfg.batch_size, true, cfg.seed * 1000003ULL + epoch);
    double loss_sum = 0.0;
    for (const auto& batch : batches) {
      ++step;
      params.zero_grads();
      Tape tape(&params);
      const auto rows = model.rows_for(train, batch);
      const ForwardResult fr = model.forward(tape, rows);
      const Var loss = batch_loss(tape, model, fr, train, batch, rows, tasks, cfg);
      const double value = tape.value(loss)(0, 0);
      if (!std::isfinite(value)) {
        throw NumericError("fit: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                           std::to_string(step));
      }
      loss_sum += value * static_cast<double>(batch.size());
      tape.backward(loss);
      adam.step(params, cfg.learning_rate);
    }

    EpochLog log;
    log.epoch = epoch;
    log.train_loss = loss_sum / static_cast<double>(train.size());
    log.val = evaluate_predictions(model.predict(params, val), val, tasks);
    const double score = log.val.average_auc.value_or(-std::numeric_limits<double>::infinity());
    const bool improved = result.best_epoch == 0 || score > best_score;
    if (improved) {
      best_score = score;
      result.best = params;
      result.best_epoch = epoch;
      since_best = 0;
    } else {
      ++since_best;
    }
    result.log.push_back(std::move(log));
    if (since_best > cfg.early_stop_patience) break;
  }
  for (auto& l : result.log) l.selected = l.epoch == result.best_epoch;
  result.best.zero_grads();
  return result;
}

namespace {

std::string fmt(std::optional<double> v) {
  if (!v) return "NA";
  std::ostringstream s;
  s.precision(10);
  s << *v;
  return s.str();
}

}  // namespace

std::string training_log_csv(const FitResult& result, const Model& model) {
  std::ostringstream out;
  out << "epoch,train_loss";
  for (std::size_t t : model.arch().active_tasks) out << ",val_auc_task" << t;
  out << ",val_avg_auc,selected\n";
  for (const auto& l : result.log) {
    out << l.epoch << ',' << fmt(l.train_loss);
    for (std::size_t t : model.arch().active_tasks) {
      const TaskMetrics* m = l.val.find(t);
      out << ',' << fmt(m ? m->auc : std::nullopt);
    }
    out << ',' << fmt(l.val.average_auc) << ',' << (l.selected ? 1 : 0) << '\n';
  }
  return out.str();
}

}  // namespace stem
