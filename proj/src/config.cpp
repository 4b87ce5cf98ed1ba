#include "stem/config.hpp"

#include <fstream>
#include <set>

#include "stem/errors.hpp"

namespace stem {
namespace {

using nlohmann::json;

void check_keys(const json& obj, const std::string& path, std::initializer_list<const char*> keys) {
  if (!obj.is_object()) throw ConfigError("config: '" + path + "' must be an object");
  std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& [k, v] : obj.items()) {
    if (!allowed.count(k)) throw ConfigError("config: unknown key '" + path + k + "'");
  }
}

template <typename T>
void read(const json& obj, const char* key, T& out, const std::string& path) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config: bad value for '" + path + key + "': " + e.what());
  }
}

SyntheticConfig synthetic_from_json(const json& j, std::uint64_t seed, bool& seed_given) {
  check_keys(j, "data.synthetic.",
             {"num_users", "num_items", "num_extra_fields", "extra_vocab", "latent_dim", "rho",
              "signal_scale", "positive_ratios", "task_bias", "task_names", "num_samples",
              "seed"});
  SyntheticConfig c;
  const std::string p = "data.synthetic.";
  read(j, "num_users", c.num_users, p);
  read(j, "num_items", c.num_items, p);
  read(j, "num_extra_fields", c.num_extra_fields, p);
  read(j, "extra_vocab", c.extra_vocab, p);
  read(j, "latent_dim", c.latent_dim, p);
  read(j, "rho", c.rho, p);
  read(j, "signal_scale", c.signal_scale, p);
  read(j, "positive_ratios", c.positive_ratios, p);
  read(j, "task_bias", c.task_bias, p);
  read(j, "task_names", c.task_names, p);
  read(j, "num_samples", c.num_samples, p);
  c.seed = seed;
  seed_given = j.contains("seed");
  read(j, "seed", c.seed, p);
  if (c.positive_ratios.empty() && !j.contains("task_bias")) {
    c.task_bias.assign(c.task_names.size(), 0.0);
  }
  c.validate();
  return c;
}

}  // namespace

json to_json(const SyntheticConfig& c) {
  json j;
  j["num_users"] = c.num_users;
  j["num_items"] = c.num_items;
  j["num_extra_fields"] = c.num_extra_fields;
  j["extra_vocab"] = c.extra_vocab;
  j["latent_dim"] = c.latent_dim;
  j["rho"] = c.rho;
  j["signal_scale"] = c.signal_scale;
  if (!c.positive_ratios.empty()) {
    j["positive_ratios"] = c.positive_ratios;
  } else {
    j["task_bias"] = c.task_bias;
  }
  j["task_names"] = c.task_names;
  j["num_samples"] = c.num_samples;
  j["seed"] = c.seed;
  return j;
}

json to_json(const ModelConfig& m) {
  json j;
  j["variant"] = to_string(m.variant);
  j["single_task"] = m.single_task;
  j["num_tasks"] = m.num_tasks;
  j["num_task_experts"] = m.num_task_experts;
  j["num_shared_experts"] = m.num_shared_experts;
  j["embedding_dim"] = m.embedding_dim;
  j["expert_hidden"] = m.expert_hidden;
  j["tower_hidden"] = m.tower_hidden;
  j["gate_input"] = to_string(m.resolved_gate_input());
  j["sg_enabled"] = m.sg_enabled;
  j["field_task_specific"] = m.field_task_specific;
  j["activation"] = to_string(m.activation);
  return j;
}

ModelConfig model_config_from_json(const json& j) {
  check_keys(j, "model.",
             {"variant", "single_task", "num_tasks", "num_task_experts", "num_shared_experts",
              "embedding_dim", "expert_hidden", "tower_hidden", "gate_input", "sg_enabled",
              "field_task_specific", "activation"});
  ModelConfig m;
  const std::string p = "model.";
  std::string s;
  if (j.contains("variant")) {
    read(j, "variant", s, p);
    m.variant = parse_variant(s);
  }
  read(j, "single_task", m.single_task, p);
  read(j, "num_tasks", m.num_tasks, p);
  read(j, "num_task_experts", m.num_task_experts, p);
  read(j, "num_shared_experts", m.num_shared_experts, p);
  read(j, "embedding_dim", m.embedding_dim, p);
  read(j, "expert_hidden", m.expert_hidden, p);
  read(j, "tower_hidden", m.tower_hidden, p);
  if (j.contains("gate_input")) {
    read(j, "gate_input", s, p);
    m.gate_input = parse_gate_input(s);
  }
  read(j, "sg_enabled", m.sg_enabled, p);
  read(j, "field_task_specific", m.field_task_specific, p);
  if (j.contains("activation")) {
    read(j, "activation", s, p);
    m.activation = parse_activation(s);
  }
  return m;
}

void RunConfig::set_seed(std::uint64_t s) {
  seed = s;
  train.seed = s;
  if (data.synthetic) data.synthetic->seed = s;
}

RunConfig parse_run_config(const json& doc) {
  check_keys(doc, "", {"seed", "out_dir", "data", "model", "train", "eval", "analysis"});
  RunConfig c;
  read(doc, "seed", c.seed, "");
  read(doc, "out_dir", c.out_dir, "");
  c.train.seed = c.seed;

  if (doc.contains("data")) {
    const json& d = doc.at("data");
    check_keys(d, "data.", {"dir", "csv", "synthetic", "split", "min_count"});
    if (d.contains("dir") && !d.at("dir").is_null()) {
      std::string s;
      read(d, "dir", s, "data.");
      c.data.dir = s;
    }
    if (d.contains("csv") && !d.at("csv").is_null()) {
      std::string s;
      read(d, "csv", s, "data.");
      c.data.csv = s;
    }
    if (d.contains("synthetic") && !d.at("synthetic").is_null()) {
      bool given = false;
      c.data.synthetic = synthetic_from_json(d.at("synthetic"), c.seed, given);
    }
    if (d.contains("split")) {
      std::vector<double> r;
      read(d, "split", r, "data.");
      if (r.size() != 3) throw ConfigError("config: data.split needs three ratios");
      c.data.split = SplitRatios{r[0], r[1], r[2]};
    }
    read(d, "min_count", c.data.min_count, "data.");
  }

  if (doc.contains("model")) {
    c.model = model_config_from_json(doc.at("model"));
    c.model_num_tasks_given = doc.at("model").contains("num_tasks");
  }

  if (doc.contains("train")) {
    const json& t = doc.at("train");
    check_keys(t, "train.",
               {"learning_rate", "batch_size", "max_epochs", "early_stop_patience",
                "l2_embedding", "seed", "task_loss_weights"});
    if (t.contains("learning_rate")) {
      if (t.at("learning_rate").is_array()) {
        read(t, "learning_rate", c.learning_rates, "train.");
        if (c.learning_rates.empty()) throw ConfigError("config: empty learning_rate grid");
      } else {
        double lr = 0;
        read(t, "learning_rate", lr, "train.");
        c.learning_rates = {lr};
      }
    }
    c.train.learning_rate = c.learning_rates.front();
    read(t, "batch_size", c.train.batch_size, "train.");
    read(t, "max_epochs", c.train.max_epochs, "train.");
    read(t, "early_stop_patience", c.train.early_stop_patience, "train.");
    read(t, "l2_embedding", c.train.l2_embedding, "train.");
    read(t, "seed", c.train.seed, "train.");
    read(t, "task_loss_weights", c.train.task_loss_weights, "train.");
    for (double lr : c.learning_rates) {
      if (!(lr > 0.0)) throw ConfigError("config: learning rates must be > 0");
    }
  }

  if (doc.contains("eval")) {
    const json& e = doc.at("eval");
    check_keys(e, "eval.", {"focus_task", "other_task", "lo", "hi", "n_buckets", "buckets"});
    read(e, "focus_task", c.eval.focus_task, "eval.");
    read(e, "other_task", c.eval.other_task, "eval.");
    read(e, "lo", c.eval.lo, "eval.");
    read(e, "hi", c.eval.hi, "eval.");
    read(e, "n_buckets", c.eval.n_buckets, "eval.");
    read(e, "buckets", c.eval.buckets, "eval.");
    if (c.eval.lo >= c.eval.hi) throw ConfigError("config: eval.lo must be < eval.hi");
    if (c.eval.focus_task == c.eval.other_task) {
      throw ConfigError("config: eval.focus_task and eval.other_task must differ");
    }
  }

  if (doc.contains("analysis")) {
    const json& a = doc.at("analysis");
    check_keys(a, "analysis.",
               {"top_frac", "bottom_frac", "bins", "user_field", "item_field", "tables"});
    read(a, "top_frac", c.analysis.top_frac, "analysis.");
    read(a, "bottom_frac", c.analysis.bottom_frac, "analysis.");
    read(a, "bins", c.analysis.bins, "analysis.");
    read(a, "user_field", c.analysis.user_field, "analysis.");
    read(a, "item_field", c.analysis.item_field, "analysis.");
    read(a, "tables", c.analysis.tables, "analysis.");
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw ConfigError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return parse_run_config(doc);
}

json to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["out_dir"] = c.out_dir;
  json d;
  d["dir"] = c.data.dir ? json(*c.data.dir) : json(nullptr);
  d["csv"] = c.data.csv ? json(*c.data.csv) : json(nullptr);
  d["synthetic"] = c.data.synthetic ? to_json(*c.data.synthetic) : json(nullptr);
  d["split"] = {c.data.split.train, c.data.split.val, c.data.split.test};
  d["min_count"] = c.data.min_count;
  j["data"] = d;
  j["model"] = to_json(c.model);
  if (!c.model_num_tasks_given) j["model"].erase("num_tasks");
  json t;
  t["learning_rate"] = c.learning_rates.size() == 1 ? json(c.learning_rates.front())
                                                    : json(c.learning_rates);
  t["batch_size"] = c.train.batch_size;
  t["max_epochs"] = c.train.max_epochs;
  t["early_stop_patience"] = c.train.early_stop_patience;
  t["l2_embedding"] = c.train.l2_embedding;
  t["seed"] = c.train.seed;
  t["task_loss_weights"] = c.train.task_loss_weights;
  j["train"] = t;
  j["eval"] = {{"focus_task", c.eval.focus_task}, {"other_task", c.eval.other_task},
               {"lo", c.eval.lo},                 {"hi", c.eval.hi},
               {"n_buckets", c.eval.n_buckets},   {"buckets", c.eval.buckets}};
  j["analysis"] = {{"top_frac", c.analysis.top_frac},     {"bottom_frac", c.analysis.bottom_frac},
                   {"bins", c.analysis.bins},             {"user_field", c.analysis.user_field},
                   {"item_field", c.analysis.item_field}, {"tables", c.analysis.tables}};
  return j;
}

}  // namespace stem
