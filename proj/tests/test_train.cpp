#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "stem/checkpoint.hpp"
#include "stem/errors.hpp"
#include "stem/grad_check.hpp"
#include "stem/model.hpp"
#include "stem/synthetic.hpp"
#include "stem/train.hpp"

using namespace stem;

namespace {

SyntheticData tiny_data(std::uint64_t seed, std::size_t n = 3000) {
  SyntheticConfig c;
  c.num_users = 60;
  c.num_items = 60;
  c.num_extra_fields = 1;
  c.extra_vocab = 5;
  c.latent_dim = 4;
  c.signal_scale = 3.0;
  c.rho = -0.5;
  c.positive_ratios = {0.3, 0.15};
  c.num_samples = n;
  c.seed = seed;
  return generate_synthetic(c);
}

ModelConfig tiny_model(VariantKind v) {
  ModelConfig c;
  c.variant = v;
  c.embedding_dim = 4;
  c.expert_hidden = {8};
  c.tower_hidden = {4};
  return c;
}

}  // namespace

TEST_CASE("bce loss") {
  const std::vector<double> half{0.5};
  const std::vector<std::uint8_t> one{1}, zero{0};
  CHECK(bce_loss(half, one) == doctest::Approx(0.693147).epsilon(1e-6));
  const std::vector<double> tiny{1e-300};
  CHECK(bce_loss(tiny, zero) < 1e-11);
  const std::vector<double> p{0.75, 0.25};
  const std::vector<std::uint8_t> y{1, 0};
  const double oracle = -std::log(0.75) - std::log(1.0 - 0.25);
  CHECK(bce_loss(p, y) == doctest::Approx(oracle).epsilon(1e-12));
  CHECK(bce_loss(p, y) == doctest::Approx(0.575364).epsilon(1e-6));
  const std::vector<double> w{2.0, 0.0};
  CHECK(bce_loss(p, y, w) == doctest::Approx(-2 * std::log(0.75)));
}

TEST_CASE("embedding l2 penalty") {
  Matrix table{{0, 0}, {3, 4}, {1, 1}};
  const std::vector<std::uint32_t> rows{1};
  CHECK(l2_embedding_penalty(table, rows, 1.0) == 25.0);
  CHECK(l2_embedding_penalty(table, rows, 0.0) == 0.0);
  const std::vector<std::uint32_t> dup{1, 1, 2};
  CHECK(l2_embedding_penalty(table, dup, 1.0) == 27.0);

  ParamStore ps;
  ps.add("emb.t", Matrix{{0.3, -0.2}, {1.5, 0.7}, {-0.4, 0.9}}, true);
  const std::vector<std::uint32_t> used{0, 2, 2};
  auto loss = [&](Tape& t) { return t.l2_rows("emb.t", used, 0.7); };
  const auto report = grad_check(loss, ps, {1e-6, 1e-9, 1e-5});
  CHECK(report.passed());
  CHECK(report.at("emb.t").max_rel_err <= 1e-6);
}

TEST_CASE("adam") {
  SUBCASE("one step matches the recurrence") {
    ParamStore ps;
    ps.add("w", Matrix{{1.0, -2.0}});
    ps.at("w").grad = Matrix{{0.5, -3.0}};
    Adam adam;
    adam.step(ps, 0.1);
    for (std::size_t j = 0; j < 2; ++j) {
      const double g = j == 0 ? 0.5 : -3.0;
      const double m = 0.1 * g, v = 0.001 * g * g;
      const double mhat = m / (1 - 0.9), vhat = v / (1 - 0.999);
      const double expect = (j == 0 ? 1.0 : -2.0) - 0.1 * mhat / (std::sqrt(vhat) + 1e-8);
      CHECK(ps.at("w").value(0, j) == doctest::Approx(expect).epsilon(1e-14));
    }
  }
  SUBCASE("zero gradient leaves parameters unchanged") {
    ParamStore ps;
    ps.add("w", Matrix{{1.0, -2.0}});
    ps.add("emb.x", Matrix{{0.1}, {0.2}}, true);
    Adam adam;
    for (int i = 0; i < 3; ++i) {
      ps.zero_grads();
      adam.step(ps, 0.1);
    }
    CHECK(ps.at("w").value == Matrix{{1.0, -2.0}});
    CHECK(ps.at("emb.x").value == Matrix{{0.1}, {0.2}});
  }
  SUBCASE("sparse table only moves touched rows") {
    ParamStore ps;
    ps.add("emb.x", Matrix{{0.1}, {0.2}, {0.3}}, true);
    ps.zero_grads();
    ps.at("emb.x").grad(1, 0) = 1.0;
    ps.at("emb.x").touch_row(1);
    Adam adam;
    adam.step(ps, 0.01);
    CHECK(ps.at("emb.x").value(0, 0) == 0.1);
    CHECK(ps.at("emb.x").value(2, 0) == 0.3);
    CHECK(ps.at("emb.x").value(1, 0) == doctest::Approx(0.19));
  }
}

TEST_CASE("fit") {
  const auto train = tiny_data(1);
  const auto val = tiny_data(2, 1000);
  const Model m(tiny_model(VariantKind::kSTEM), train.dataset.schema());
  TrainConfig tc;
  tc.learning_rate = 0.01;
  tc.batch_size = 128;
  tc.max_epochs = 4;
  tc.early_stop_patience = 4;

  SUBCASE("loss decreases and selection follows validation AUC") {
    const auto r = fit(m, train.dataset, val.dataset, tc);
    REQUIRE(r.log.size() == 4);
    CHECK(r.log.back().train_loss < r.log.front().train_loss);
    double best = -1;
    for (const auto& e : r.log) best = std::max(best, *e.val.average_auc);
    CHECK(*r.log.at(r.best_epoch - 1).val.average_auc == best);
    CHECK(r.log.at(r.best_epoch - 1).selected);
    for (const auto& [name, e] : r.best) CHECK(e.value.all_finite());
  }
  SUBCASE("identical runs are bitwise identical") {
    tc.max_epochs = 2;
    const auto a = fit(m, train.dataset, val.dataset, tc);
    const auto b = fit(m, train.dataset, val.dataset, tc);
    CHECK(a.best.same_values(b.best));
    CHECK(training_log_csv(a, m) == training_log_csv(b, m));
  }
  SUBCASE("zero epochs returns the initialization") {
    tc.max_epochs = 0;
    const auto r = fit(m, train.dataset, val.dataset, tc);
    CHECK(r.log.empty());
    CHECK(r.best_epoch == 0);
    CHECK(r.best.same_values(m.init_params(tc.seed)));
  }
  SUBCASE("patience zero stops at the first non-improving epoch") {
    tc.max_epochs = 12;
    tc.early_stop_patience = 0;
    tc.learning_rate = 0.05;
    const auto r = fit(m, train.dataset, val.dataset, tc);
    for (std::size_t i = 1; i + 1 < r.log.size(); ++i) {
      CHECK(*r.log[i].val.average_auc > *r.log[i - 1].val.average_auc);
    }
    if (r.log.size() < tc.max_epochs) {
      CHECK(*r.log.back().val.average_auc <= *r.log[r.log.size() - 2].val.average_auc);
      CHECK(r.best_epoch == r.log.size() - 1);
    }
  }
  SUBCASE("training log layout") {
    tc.max_epochs = 1;
    const auto csv = training_log_csv(fit(m, train.dataset, val.dataset, tc), m);
    CHECK(csv.rfind("epoch,train_loss,val_auc_task0,val_auc_task1,val_avg_auc,selected\n", 0) ==
          0);
  }
}

TEST_CASE("checkpoint round trip") {
  const auto d = tiny_data(3, 200);
  const Model m(tiny_model(VariantKind::kMEPLE), d.dataset.schema());
  const ParamStore ps = m.init_params(21);
  const ParamStore back = deserialize_params(serialize_params(ps));
  CHECK(back.same_values(ps));
  CHECK(back.at("emb.shared").row_sparse);
  CHECK(m.predict(back, d.dataset) == m.predict(ps, d.dataset));
  const auto path = std::filesystem::temp_directory_path() / "stem_ckpt_test.bin";
  save_checkpoint(ps, path);
  CHECK(load_checkpoint(path).same_values(ps));
  std::filesystem::remove(path);
  std::string bytes = serialize_params(ps);
  CHECK_THROWS_AS(deserialize_params(bytes.substr(0, bytes.size() - 3)), ParseError);
  bytes[0] = 'X';
  CHECK_THROWS_AS(deserialize_params(bytes), ParseError);
}

TEST_CASE("training config validation") {
  TrainConfig tc;
  tc.task_loss_weights = {1.0};
  CHECK_THROWS_AS(tc.validate(2), ConfigError);
  tc.task_loss_weights = {};
  tc.batch_size = 0;
  CHECK_THROWS_AS(tc.validate(2), ConfigError);
}

TEST_CASE("adam with zero learning rate changes nothing") {
  const auto d = tiny_data(4, 100);
  const Model m(tiny_model(VariantKind::kSTEM), d.dataset.schema());
  ParamStore ps = m.init_params(5);
  const ParamStore before = ps;
  std::vector<std::size_t> idx(32);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const auto rows = m.rows_for(d.dataset, idx);
  Tape tape(&ps);
  const auto fr = m.forward(tape, rows);
  const std::vector<std::size_t> tasks{0, 1};
  ps.zero_grads();
  tape.backward(batch_loss(tape, m, fr, d.dataset, idx, rows, tasks, TrainConfig{}));
  Adam adam;
  adam.step(ps, 0.0);
  CHECK(ps.same_values(before));
}

TEST_CASE("loss on a tiny dataset falls over the first epochs") {
  std::size_t monotone = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto d = tiny_data(seed, 32);
    const Model m(tiny_model(VariantKind::kSTEM), d.dataset.schema());
    TrainConfig tc;
    tc.learning_rate = 0.01;
    tc.batch_size = 8;
    tc.max_epochs = 5;
    tc.early_stop_patience = 5;
    tc.seed = seed;
    const auto r = fit(m, d.dataset, d.dataset, tc);
    bool ok = r.log.size() == 5;
    for (std::size_t i = 1; ok && i < r.log.size(); ++i) {
      ok = r.log[i].train_loss < r.log[i - 1].train_loss;
    }
    monotone += ok;
  }
  CHECK(monotone >= 4);
}

TEST_CASE("stem isolation holds mid-training") {
  const auto d = tiny_data(6, 600);
  const Model m(tiny_model(VariantKind::kSTEM), d.dataset.schema());
  TrainConfig tc;
  tc.learning_rate = 0.01;
  tc.batch_size = 64;
  tc.max_epochs = 2;
  tc.l2_embedding = 0.0;
  ParamStore ps = fit(m, d.dataset, d.dataset, tc).best;
  std::vector<std::size_t> idx(64);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = 100 + i;
  const auto rows = m.rows_for(d.dataset, idx);
  for (std::size_t t = 0; t < 2; ++t) {
    Tape tape(&ps);
    const auto fr = m.forward(tape, rows);
    const std::vector<std::size_t> tasks{t};
    ps.zero_grads();
    tape.backward(batch_loss(tape, m, fr, d.dataset, idx, rows, tasks, tc));
    const std::string other = "task" + std::to_string(1 - t);
    for (const auto& [name, e] : ps) {
      if (name == "emb." + other || name.rfind("expert." + other + ".", 0) == 0) {
        for (double v : e.grad.data()) CHECK(v == 0.0);
      }
    }
  }
}
