// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance [--only 1,2,...] [--samples N] [--epochs N] [--seeds N] [--latent N]
//              [--lr X] [--batch N] [--signal X]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "stem/analysis.hpp"
#include "stem/checkpoint.hpp"
#include "stem/commands.hpp"
#include "stem/data.hpp"
#include "stem/grad_check.hpp"
#include "stem/metrics.hpp"
#include "stem/model.hpp"
#include "stem/rng.hpp"
#include "stem/synthetic.hpp"
#include "stem/tape.hpp"
#include "stem/train.hpp"

using namespace stem;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = true;
  std::string detail;
};

std::string fmt(double v, int prec = 4) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(prec);
  s << v;
  return s.str();
}

const std::vector<VariantKind> kAllVariants = {
    VariantKind::kSingleTask, VariantKind::kSharedBottom, VariantKind::kOMoE,
    VariantKind::kMMoE,       VariantKind::kPLE,          VariantKind::kMEMMoE,
    VariantKind::kMEPLE,      VariantKind::kSTEM};

ModelConfig tiny(VariantKind v, std::size_t tasks = 2) {
  ModelConfig c;
  c.variant = v;
  c.num_tasks = tasks;
  c.num_task_experts = 1;
  c.num_shared_experts = 1;
  c.embedding_dim = 4;
  c.expert_hidden = {8};
  c.tower_hidden = {8};
  return c;
}

const FieldSchema kTinySchema{{7, 6, 5}};

Dataset random_batch(const FieldSchema& schema, std::size_t tasks, std::size_t n,
                     std::uint64_t seed) {
  std::vector<std::string> names;
  for (std::size_t t = 0; t < tasks; ++t) names.push_back("task" + std::to_string(t));
  Dataset d(schema, names);
  Rng rng(seed);
  std::vector<std::uint32_t> f(schema.num_fields());
  std::vector<std::uint8_t> y(tasks);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t m = 0; m < f.size(); ++m) {
      f[m] = std::uint32_t(rng.below(schema.vocab_sizes[m]));
    }
    for (auto& v : y) v = std::uint8_t(rng.below(2));
    d.add(f, y);
  }
  return d;
}

void scatter(ParamStore& ps, std::uint64_t seed, double sd = 0.5) {
  Rng rng(seed);
  for (auto& [name, e] : ps) {
    for (double& v : e.value.data()) v = rng.normal(0.0, sd);
  }
}

bool all_zero(const Matrix& m) {
  return std::all_of(m.data().begin(), m.data().end(), [](double v) { return v == 0.0; });
}

LossFn loss_for(const Model& model, const Dataset& batch, std::vector<std::size_t> tasks,
                double l2) {
  return [&model, &batch, tasks, l2](Tape& tape) {
    std::vector<std::size_t> idx(batch.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    const auto rows = model.rows_for(batch, idx);
    const auto fr = model.forward(tape, rows);
    TrainConfig tc;
    tc.l2_embedding = l2;
    return batch_loss(tape, model, fr, batch, idx, rows, tasks, tc);
  };
}

// ---------------------------------------------------------------------------

Outcome criterion_gradients() {
  const auto t0 = Clock::now();
  Outcome o;
  double worst = 0.0;
  std::size_t checks = 0;
  for (VariantKind v : kAllVariants) {
    const Model model(tiny(v), kTinySchema);
    const bool sg = model.config().sg_enabled && v == VariantKind::kSTEM;
    for (std::uint64_t inst = 0; inst < 5; ++inst) {
      ParamStore ps = model.init_params(100 + inst);
      scatter(ps, 200 + inst);
      const Dataset batch = random_batch(kTinySchema, 2, 6, 300 + inst);
      std::vector<std::vector<std::size_t>> losses;
      if (sg) {
        for (std::size_t t : model.arch().active_tasks) losses.push_back({t});
      } else {
        losses.push_back(model.arch().active_tasks);
      }
      for (const auto& tasks : losses) {
        const auto report = grad_check(loss_for(model, batch, tasks, sg ? 0.0 : 1e-3), ps);
        ++checks;
        for (const auto& p : report.params) {
          if (p.status == GradStatus::kFail) {
            o.pass = false;
            if (o.detail.empty()) {
              o.detail = to_string(v) + " instance " + std::to_string(inst) + " " + p.name +
                         " rel " + fmt(p.max_rel_err, 8);
            }
          }
          if (p.status == GradStatus::kPass) worst = std::max(worst, std::min(p.max_rel_err, 1.0));
        }
      }
    }
  }
  const double secs = seconds_since(t0);
  if (secs >= 30.0) o.pass = false;
  if (o.detail.empty()) {
    o.detail = std::to_string(kAllVariants.size()) + " variants x 5 instances, " +
               std::to_string(checks) + " checks, " + fmt(secs, 1) + " s";
  }
  return o;
}

Outcome criterion_sg_isolation() {
  Outcome o;
  std::size_t zero_checked = 0;
  for (std::size_t tasks : {2u, 3u}) {
    const Model model(tiny(VariantKind::kSTEM, tasks), kTinySchema);
    ParamStore ps = model.init_params(7 + tasks);
    scatter(ps, 17 + tasks);
    const Dataset batch = random_batch(kTinySchema, tasks, 6, 27 + tasks);
    for (std::size_t t = 0; t < tasks; ++t) {
      const LossFn loss = loss_for(model, batch, {t}, 0.0);
      {
        Tape tape(&ps);
        ps.zero_grads();
        tape.backward(loss(tape));
        for (std::size_t other = 0; other < tasks; ++other) {
          if (other == t) continue;
          const std::string g = "task" + std::to_string(other);
          for (const auto& [name, e] : ps) {
            if (name == "emb." + g || name.rfind("expert." + g + ".", 0) == 0) {
              ++zero_checked;
              if (!all_zero(e.grad)) {
                o.pass = false;
                o.detail = "nonzero gradient on " + name;
              }
            }
          }
        }
        // Gate rows after the own and shared experts belong to other tasks.
        const Matrix& gw = ps.at(gate_name(t)).grad;
        bool cross = false;
        for (std::size_t r = 2; r < gw.rows(); ++r) {
          for (double v : gw.row(r)) cross = cross || v != 0.0;
        }
        if (!cross) {
          o.pass = false;
          o.detail = "gate entries for other-task experts got no gradient";
        }
      }
      const auto report = grad_check(loss, ps);
      for (std::size_t other = 0; other < tasks; ++other) {
        if (other == t) continue;
        for (const std::string name :
             {"emb.task" + std::to_string(other),
              expert_layer_name("task" + std::to_string(other), 0, 0, 'W')}) {
          const auto& p = report.at(name);
          if (p.status != GradStatus::kSgExcluded || p.max_tape_abs != 0.0 || p.max_fd_abs <= 0) {
            o.pass = false;
            o.detail = name + " not classified as blocked (fd " + fmt(p.max_fd_abs, 8) + ")";
          }
        }
      }
      if (!report.passed()) {
        o.pass = false;
        o.detail = report.summary();
      }
    }
  }
  if (o.pass) {
    o.detail = std::to_string(zero_checked) +
               " blocked parameter gradients exactly 0, finite differences nonzero";
  }
  return o;
}

Outcome criterion_routing() {
  Outcome o;
  std::size_t ple_cases = 0;
  {
    const Model model(tiny(VariantKind::kPLE), kTinySchema);
    for (std::uint64_t s = 0; s < 20; ++s) {
      ParamStore ps = model.init_params(s);
      scatter(ps, 1000 + s);
      const Dataset batch = random_batch(kTinySchema, 2, 8, 2000 + s);
      const Matrix before = model.predict(ps, batch);
      Rng rng(3000 + s);
      for (auto& [name, e] : ps) {
        if (name.rfind("expert.task1.", 0) == 0) {
          for (double& v : e.value.data()) v += rng.normal();
        }
      }
      const Matrix after = model.predict(ps, batch);
      for (std::size_t i = 0; i < batch.size(); ++i) {
        if (before(i, 0) != after(i, 0)) {
          o.pass = false;
          o.detail = "PLE task 0 output moved";
        }
      }
      ++ple_cases;
    }
  }
  {
    auto c = tiny(VariantKind::kMMoE);
    c.num_shared_experts = 3;
    const Model model(c, kTinySchema);
    ParamStore ps = model.init_params(4);
    scatter(ps, 5);
    const Dataset batch = random_batch(kTinySchema, 2, 8, 6);
    for (std::size_t t = 0; t < 2; ++t) {
      Tape tape(&ps);
      ps.zero_grads();
      tape.backward(loss_for(model, batch, {t}, 0.0)(tape));
      for (std::size_t j = 0; j < 3; ++j) {
        if (all_zero(ps.at(expert_layer_name("shared", j, 0, 'W')).grad)) {
          o.pass = false;
          o.detail = "MMoE task " + std::to_string(t) + " gradient missed expert " +
                     std::to_string(j);
        }
      }
    }
  }
  {
    auto oc = tiny(VariantKind::kOMoE);
    oc.num_shared_experts = 1;
    const Model sb(tiny(VariantKind::kSharedBottom), kTinySchema);
    const Model om(oc, kTinySchema);
    for (std::uint64_t s = 0; s < 100; ++s) {
      ParamStore p_sb = sb.init_params(s);
      scatter(p_sb, 5000 + s);
      ParamStore p_om = om.init_params(s);
      scatter(p_om, 6000 + s);
      for (auto& [name, e] : p_sb) p_om.at(name).value = e.value;
      const Dataset batch = random_batch(kTinySchema, 2, 4, 7000 + s);
      if (!(sb.predict(p_sb, batch) == om.predict(p_om, batch))) {
        o.pass = false;
        o.detail = "shared-bottom and one-expert OMoE differ at parameterization " +
                   std::to_string(s);
      }
    }
  }
  if (o.pass) {
    o.detail = std::to_string(ple_cases) +
               " PLE perturbations bitwise invariant; MMoE reaches all experts; "
               "100 shared-bottom/OMoE parameterizations identical";
  }
  return o;
}

double brute_auc(const std::vector<double>& s, const std::vector<std::uint8_t>& y) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[i] != 1 || y[j] != 0) continue;
      pairs += 1;
      wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  }
  return wins / pairs;
}

Outcome criterion_auc() {
  Outcome o;
  Rng rng(42);
  double worst = 0;
  for (int c = 0; c < 1000; ++c) {
    const std::size_t n = 2 + rng.below(199);
    const std::size_t levels = 2 + rng.below(30);
    std::vector<double> s(n);
    std::vector<std::uint8_t> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = double(rng.below(levels)) / double(levels);
      y[i] = std::uint8_t(rng.uniform() < 0.3);
    }
    y[rng.below(n)] = 1;
    std::size_t zero_at = rng.below(n);
    while (y[zero_at] == 1 && std::count(y.begin(), y.end(), 1) == std::ptrdiff_t(n)) {
      y[zero_at] = 0;
    }
    if (std::count(y.begin(), y.end(), 0) == 0) y[zero_at] = 0;
    if (std::count(y.begin(), y.end(), 1) == 0) continue;
    worst = std::max(worst, std::abs(*auc(s, y) - brute_auc(s, y)));
  }
  if (worst > 1e-12) o.pass = false;
  const std::vector<double> s2{0.75, 0.75};
  const std::vector<std::uint8_t> y2{1, 0};
  const double ll = logloss(s2, y2);
  const double oracle = (-std::log(0.75) - std::log(0.25)) / 2.0;
  if (std::abs(ll - oracle) > 1e-12 || std::abs(ll - 0.836988) > 1e-6) o.pass = false;
  const std::vector<double> half(6, 0.5);
  const std::vector<std::uint8_t> y6{1, 0, 1, 1, 0, 0};
  if (std::abs(logloss(half, y6) - std::log(2.0)) > 1e-12) o.pass = false;
  o.detail = "1000 tied cases, max |fast - brute| = " + fmt(worst, 16) + "; logloss " + fmt(ll, 6);
  return o;
}

Outcome criterion_buckets() {
  Outcome o;
  Rng rng(9);
  std::size_t worst_spread = 0;
  for (int c = 0; c < 200; ++c) {
    const std::size_t n = 10 + rng.below(2000);
    std::vector<double> a(n), b(n);
    const std::size_t levels = 1 + rng.below(50);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = double(rng.below(levels));
      b[i] = rng.uniform();
    }
    const auto buckets = equal_freq_buckets(a, 10);
    std::vector<std::size_t> sizes(10, 0);
    for (int x : buckets) sizes.at(x)++;
    const auto [mn, mx] = std::minmax_element(sizes.begin(), sizes.end());
    worst_spread = std::max(worst_spread, *mx - *mn);
    const auto split = subset_split(a, b);
    std::vector<int> seen(n, 0);
    for (auto s : {Subset::kBOverwhelming, Subset::kComparable, Subset::kAOverwhelming}) {
      for (std::size_t i : split.indices(s)) seen[i]++;
    }
    if (!std::all_of(seen.begin(), seen.end(), [](int v) { return v == 1; })) {
      o.pass = false;
      o.detail = "subsets do not partition a test set of " + std::to_string(n);
    }
  }
  if (worst_spread > 1) o.pass = false;
  if (classify_delta(-5, -4, 6) != Subset::kBOverwhelming ||
      classify_delta(0, -4, 6) != Subset::kComparable ||
      classify_delta(7, -4, 6) != Subset::kAOverwhelming) {
    o.pass = false;
    o.detail = "range examples misclassified";
  }
  if (o.pass) {
    o.detail = "200 random test sets, max bucket size spread " + std::to_string(worst_spread) +
               ", partitions exact, range examples hold";
  }
  return o;
}

// ---------------------------------------------------------------------------
// Synthetic experiment shared by criteria 6-8.

struct ExperimentOptions {
  std::size_t samples = 200000;
  std::size_t epochs = 14;
  std::size_t seeds = 3;
  std::uint32_t latent = 12;
  std::uint32_t users = 500;
  std::uint32_t items = 500;
  double signal = 2.5;
  double lr = 3e-3;
  std::size_t batch = 512;
  std::size_t patience = 2;
  double l2 = 1e-6;
};

struct RunMetrics {
  double avg_auc = 0;
  double focus_auc = 0;
  double comparable_focus_auc = 0;
  ParamStore params;
};

struct SeedResult {
  std::map<std::string, RunMetrics> runs;
  std::size_t comparable = 0;
  double s_dist_focus = 0;
  double s_dist_other = 0;
  std::size_t s_size = 0;
  std::size_t candidates = 0;
};

constexpr std::size_t kFocus = 1;  // sparse task
constexpr std::size_t kOther = 0;

ModelConfig desk(VariantKind v) {
  ModelConfig c;
  c.variant = v;
  c.num_tasks = 2;
  c.embedding_dim = 16;
  c.expert_hidden = {64, 64};
  c.tower_hidden = {32, 16};
  c.num_task_experts = 1;
  c.num_shared_experts = v == VariantKind::kMMoE ? 3 : 1;
  return c;
}

class Experiment {
 public:
  explicit Experiment(ExperimentOptions opts) : opts_(opts) {}

  const std::vector<SeedResult>& results() {
    if (!ran_) run();
    return results_;
  }
  double seconds() const { return seconds_; }

 private:
  void run() {
    ran_ = true;
    const auto t0 = Clock::now();
    for (std::size_t s = 1; s <= opts_.seeds; ++s) results_.push_back(run_seed(s));
    seconds_ = seconds_since(t0);
  }

  SeedResult run_seed(std::uint64_t seed) {
    SyntheticConfig sc;
    sc.num_users = opts_.users;
    sc.num_items = opts_.items;
    sc.latent_dim = opts_.latent;
    sc.signal_scale = opts_.signal;
    sc.rho = -0.8;
    sc.positive_ratios = {0.28, 0.05};
    sc.task_names = {"finish", "like"};
    sc.num_samples = opts_.samples;
    sc.seed = seed;
    const Dataset all = generate_synthetic(sc).dataset;
    const DataSplits raw = split(all, {}, seed);
    const FilterResult filtered = frequency_filter(raw.train, 10);
    const Dataset& train = filtered.filtered;
    const Dataset val = filtered.remap.apply(raw.val);
    const Dataset test = filtered.remap.apply(raw.test);

    TrainConfig tc;
    tc.learning_rate = opts_.lr;
    tc.batch_size = opts_.batch;
    tc.max_epochs = opts_.epochs;
    tc.early_stop_patience = opts_.patience;
    tc.l2_embedding = opts_.l2;
    tc.seed = seed;

    SeedResult out;
    std::map<std::string, Matrix> preds;
    auto train_one = [&](const std::string& label, ModelConfig mc) {
      const auto t0 = Clock::now();
      const Model model(mc, train.schema());
      FitResult fr = fit(model, train, val, tc);
      preds[label] = model.predict(fr.best, test);
      RunMetrics rm;
      rm.params = std::move(fr.best);
      out.runs[label] = std::move(rm);
      std::cerr << "  seed " << seed << " " << label << ": best epoch " << fr.best_epoch << ", "
                << fmt(seconds_since(t0), 1) << " s\n";
    };
    auto st = desk(VariantKind::kSingleTask);
    st.single_task = kFocus;
    train_one("single_focus", st);
    st.single_task = kOther;
    train_one("single_other", st);
    train_one("mmoe", desk(VariantKind::kMMoE));
    train_one("ple", desk(VariantKind::kPLE));
    train_one("stem", desk(VariantKind::kSTEM));
    auto nosg = desk(VariantKind::kSTEM);
    nosg.sg_enabled = false;
    train_one("stem_nosg", nosg);

    std::vector<double> fa(test.size()), fb(test.size());
    std::vector<std::uint8_t> y_focus(test.size());
    for (std::size_t i = 0; i < test.size(); ++i) {
      fa[i] = preds["single_focus"](i, kFocus);
      fb[i] = preds["single_other"](i, kOther);
      y_focus[i] = test.label(i, kFocus);
    }
    const BucketSplit buckets = subset_split(fa, fb);
    out.comparable = buckets.count(Subset::kComparable);
    for (auto& [label, rm] : out.runs) {
      if (label == "single_other") continue;
      const Matrix& p = preds[label];
      std::vector<double> focus(test.size());
      for (std::size_t i = 0; i < test.size(); ++i) focus[i] = p(i, kFocus);
      if (label.rfind("single", 0) == 0) {
        rm.focus_auc = *auc(focus, y_focus);
      } else {
        std::vector<std::size_t> tasks{0, 1};
        const auto report = evaluate_predictions(p, test, tasks);
        rm.avg_auc = *report.average_auc;
        rm.focus_auc = *report.find(kFocus)->auc;
      }
      rm.comparable_focus_auc = evaluate_subsets(focus, y_focus, buckets)[1].auc.value_or(0.0);
    }
    const PairSet cands = candidate_pairs(test);
    const auto sel = select_contradictory(cands, out.runs["single_focus"].params.at(kSharedTable).value,
                                          out.runs["single_other"].params.at(kSharedTable).value);
    out.candidates = cands.size();
    out.s_size = sel.selected.size();
    const ParamStore& stem = out.runs["stem"].params;
    out.s_dist_focus = mean_distance(sel.selected, stem.at(task_table(kFocus)).value);
    out.s_dist_other = mean_distance(sel.selected, stem.at(task_table(kOther)).value);

    const auto& r = out.runs;
    std::cerr << "  seed " << seed << " avg AUC stem " << fmt(r.at("stem").avg_auc) << " mmoe "
              << fmt(r.at("mmoe").avg_auc) << " ple " << fmt(r.at("ple").avg_auc) << " nosg "
              << fmt(r.at("stem_nosg").avg_auc)
              << " | sparse AUC stem " << fmt(r.at("stem").focus_auc) << " single "
              << fmt(r.at("single_focus").focus_auc) << " nosg "
              << fmt(r.at("stem_nosg").focus_auc) << " | comparable(" << out.comparable
              << ") stem " << fmt(r.at("stem").comparable_focus_auc) << " mmoe "
              << fmt(r.at("mmoe").comparable_focus_auc) << " single "
              << fmt(r.at("single_focus").comparable_focus_auc) << " | S " << out.s_size << "/"
              << out.candidates << " dist A " << fmt(out.s_dist_focus) << " B "
              << fmt(out.s_dist_other) << "\n";
    return out;
  }

  ExperimentOptions opts_;
  bool ran_ = false;
  double seconds_ = 0;
  std::vector<SeedResult> results_;
};

std::size_t majority(std::size_t seeds) { return seeds / 2 + 1; }

Outcome criterion_phenomenon(Experiment& ex, std::size_t seeds) {
  std::size_t a = 0, b = 0, c = 0;
  for (const auto& r : ex.results()) {
    const auto& m = r.runs;
    a += m.at("stem").avg_auc > m.at("mmoe").avg_auc && m.at("stem").avg_auc > m.at("ple").avg_auc;
    b += m.at("stem").focus_auc >= m.at("single_focus").focus_auc;
    c += m.at("stem").comparable_focus_auc > m.at("mmoe").comparable_focus_auc;
  }
  const std::size_t need = majority(seeds);
  Outcome o;
  o.pass = a >= need && b >= need && c >= need && ex.seconds() < 1800.0;
  o.detail = "seeds won: avg AUC vs MMoE/PLE " + std::to_string(a) + "/" + std::to_string(seeds) +
             ", sparse AUC vs single-task " + std::to_string(b) + "/" + std::to_string(seeds) +
             ", comparable-subset sparse AUC vs MMoE " + std::to_string(c) + "/" +
             std::to_string(seeds) + "; experiment " + fmt(ex.seconds(), 0) + " s";
  return o;
}

Outcome criterion_sg_ablation(Experiment& ex, std::size_t seeds) {
  std::size_t wins = 0;
  std::string diffs;
  for (const auto& r : ex.results()) {
    const double d = r.runs.at("stem").focus_auc - r.runs.at("stem_nosg").focus_auc;
    wins += d > 0;
    diffs += (diffs.empty() ? "" : ", ") + fmt(d, 4);
  }
  Outcome o;
  o.pass = wins >= majority(seeds);
  o.detail = "stop gradient improves sparse AUC in " + std::to_string(wins) + "/" +
             std::to_string(seeds) + " seeds (deltas " + diffs + ")";
  return o;
}

Outcome criterion_contradictory(Experiment* ex, std::size_t seeds) {
  Outcome o;
  Rng rng(77);
  Matrix a(500, 16), b(500, 16);
  for (double& v : a.data()) v = rng.normal();
  for (double& v : b.data()) v = rng.normal();
  PairSet cands;
  for (std::uint32_t u = 0; u < 200; ++u) {
    for (std::uint32_t i = 0; i < 100; ++i) cands.pairs.emplace_back(u, 200 + i);
  }
  const auto sel = select_contradictory(cands, a, b);
  const bool random_ok = std::abs(sel.fraction - 0.16) <= 0.02 && cands.size() >= 10000;
  o.detail = "random tables |S|/|candidates| = " + fmt(sel.fraction, 4) + " over " +
             std::to_string(cands.size()) + " pairs";
  o.pass = random_ok;
  if (ex != nullptr) {
    std::size_t wins = 0;
    std::string dist;
    for (const auto& r : ex->results()) {
      wins += r.s_dist_focus > r.s_dist_other;
      dist += (dist.empty() ? "" : ", ") + fmt(r.s_dist_focus, 3) + ">" + fmt(r.s_dist_other, 3);
    }
    o.pass = o.pass && wins >= majority(seeds);
    o.detail += "; trained STEM task-A vs task-B table distance on S holds in " +
                std::to_string(wins) + "/" + std::to_string(seeds) + " seeds (" + dist + ")";
  }
  return o;
}

// ---------------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome criterion_determinism() {
  Outcome o;
  const fs::path dir = fs::temp_directory_path() / "stem_acceptance_determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto write = [&](const std::string& name, const std::string& text) {
    std::ofstream(dir / name) << text;
    return (dir / name).string();
  };
  const std::string synth =
      R"({"synthetic": {"num_users": 120, "num_items": 120, "num_samples": 4000, "rho": -0.8,)"
      R"( "positive_ratios": [0.28, 0.05], "task_names": ["finish", "like"]}, "min_count": 2})";
  auto cfg = [&](const std::string& data, const std::string& model) {
    return R"({"seed": 11, "data": )" + data + R"(, "model": )" + model +
           R"(, "train": {"learning_rate": 0.005, "batch_size": 128, "max_epochs": 2},)"
           R"( "eval": {"focus_task": 1, "other_task": 0, "buckets": true}})";
  };
  const std::string m_stem =
      R"({"variant": "stem", "embedding_dim": 4, "expert_hidden": [8], "tower_hidden": [4]})";
  auto m_single = [](int t) {
    return R"({"variant": "single_task", "single_task": )" + std::to_string(t) +
           R"(, "embedding_dim": 4, "expert_hidden": [8], "tower_hidden": [4]})";
  };
  std::ostringstream sink;
  auto run = [&](std::vector<std::string> args) {
    const int rc = run_cli(args, sink, sink);
    if (rc != 0) {
      o.pass = false;
      o.detail = args.front() + " exited with " + std::to_string(rc) + ": " + sink.str();
    }
  };
  const std::string gen = write("gen.json", cfg(synth, m_stem));
  std::size_t compared = 0;
  auto same = [&](const fs::path& a, const fs::path& b) {
    ++compared;
    if (!fs::exists(a) || slurp(a) != slurp(b)) {
      o.pass = false;
      o.detail = a.filename().string() + " differs between runs";
    }
  };
  for (const char* r : {"1", "2"}) {
    const fs::path base = dir / (std::string("run") + r);
    const auto out = [&](const std::string& n) { return (base / n).string(); };
    fs::create_directories(base);
    run({"gen-data", "--config", gen, "--out", out("data")});
    const std::string data = R"({"dir": ")" + out("data") + R"("})";
    const std::string tag(r);
    const std::string stem_cfg = write("stem" + tag + ".json", cfg(data, m_stem));
    const std::string st0 = write("st0" + tag + ".json", cfg(data, m_single(0)));
    const std::string st1 = write("st1" + tag + ".json", cfg(data, m_single(1)));
    run({"train", "--config", stem_cfg, "--out", out("stem")});
    run({"train", "--config", st0, "--out", out("st0")});
    run({"train", "--config", st1, "--out", out("st1")});
    run({"eval", "--config", stem_cfg, "--checkpoint", out("stem"), "--single-task", out("st0"),
         "--single-task", out("st1"), "--out", out("eval")});
    run({"bucket-split", "--config", stem_cfg, "--single-task", out("st0"), "--single-task",
         out("st1"), "--out", out("split")});
    run({"analyze", "--config", stem_cfg, "--checkpoint", out("st0"), "--checkpoint", out("st1"),
         "--checkpoint", out("stem"), "--out", out("analysis")});
  }
  if (!o.pass) return o;
  const fs::path r1 = dir / "run1";
  const fs::path r2 = dir / "run2";
  for (const char* f : {"train.csv", "val.csv", "test.csv", "remap.csv", "schema.json",
                        "manifest.txt"}) {
    same(r1 / "data" / f, r2 / "data" / f);
  }
  for (const char* m : {"stem", "st0", "st1"}) {
    for (const char* f : {"model.ckpt", "model.json", "train_log.csv"}) {
      same(r1 / m / f, r2 / m / f);
    }
  }
  for (const char* f : {"metrics.csv", "predictions.csv", "buckets.csv", "subsets.csv"}) {
    same(r1 / "eval" / f, r2 / "eval" / f);
  }
  same(r1 / "split" / "buckets.csv", r2 / "split" / "buckets.csv");
  for (const auto& e : fs::directory_iterator(r1 / "analysis")) {
    if (e.path().filename() == "config.resolved.json") continue;
    same(e.path(), r2 / "analysis" / e.path().filename());
  }
  // Checkpoint round trip reproduces the forward pass exactly.
  const LoadedModel lm = load_model_dir(dir / "run1" / "stem");
  const ParamStore reloaded = deserialize_params(serialize_params(lm.params));
  const Dataset test = load_csv(dir / "run1" / "data" / "test.csv", lm.model.schema());
  if (!(lm.model.predict(lm.params, test) == lm.model.predict(reloaded, test))) {
    o.pass = false;
    o.detail = "checkpoint round trip changed predictions";
  }
  if (o.pass) {
    o.detail = std::to_string(compared) + " output files byte-identical across reruns; "
               "checkpoint round trip preserves predictions";
    fs::remove_all(dir);
  }
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance suite"};
  std::vector<int> only;
  ExperimentOptions ex_opts;
  app.add_option("--only", only, "Criteria to run")->delimiter(',');
  app.add_option("--samples", ex_opts.samples);
  app.add_option("--epochs", ex_opts.epochs);
  app.add_option("--seeds", ex_opts.seeds);
  app.add_option("--latent", ex_opts.latent);
  app.add_option("--users", ex_opts.users);
  app.add_option("--items", ex_opts.items);
  app.add_option("--signal", ex_opts.signal);
  app.add_option("--lr", ex_opts.lr);
  app.add_option("--batch", ex_opts.batch);
  app.add_option("--patience", ex_opts.patience);
  app.add_option("--l2", ex_opts.l2);
  CLI11_PARSE(app, argc, argv);

  auto wanted = [&](int c) { return only.empty() || std::count(only.begin(), only.end(), c); };
  Experiment experiment(ex_opts);
  const bool experiment_wanted = wanted(6) || wanted(7) || wanted(8);

  const std::vector<std::pair<int, std::function<Outcome()>>> criteria = {
      {1, criterion_gradients},
      {2, criterion_sg_isolation},
      {3, criterion_routing},
      {4, criterion_auc},
      {5, criterion_buckets},
      {6, [&] { return criterion_phenomenon(experiment, ex_opts.seeds); }},
      {7, [&] { return criterion_sg_ablation(experiment, ex_opts.seeds); }},
      {8, [&] {
         return criterion_contradictory(experiment_wanted ? &experiment : nullptr, ex_opts.seeds);
       }},
      {9, criterion_determinism},
  };
  const char* names[] = {"",
                         "gradient correctness",
                         "stop-gradient isolation",
                         "routing conformance",
                         "AUC and logloss oracles",
                         "bucket protocol",
                         "negative-transfer phenomenon",
                         "stop-gradient ablation",
                         "contradictory-pair analysis",
                         "determinism"};
  int failed = 0;
  for (const auto& [id, fn] : criteria) {
    if (!wanted(id)) continue;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << names[id]
              << "): " << o.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
