#include "stem/model.hpp"

#include <cmath>
#include <limits>

#include "stem/errors.hpp"
#include "stem/rng.hpp"

namespace stem {

std::string to_string(VariantKind v) {
  switch (v) {
    case VariantKind::kSingleTask: return "single_task";
    case VariantKind::kSharedBottom: return "shared_bottom";
    case VariantKind::kOMoE: return "omoe";
    case VariantKind::kMMoE: return "mmoe";
    case VariantKind::kPLE: return "ple";
    case VariantKind::kMEMMoE: return "me_mmoe";
    case VariantKind::kMEPLE: return "me_ple";
    case VariantKind::kSTEM: return "stem";
  }
  return "?";
}

std::string to_string(GateInput g) {
  switch (g) {
    case GateInput::kTaskOnly: return "task_only";
    case GateInput::kSharedOnly: return "shared_only";
    case GateInput::kSum: return "sum";
  }
  return "?";
}

std::string to_string(Activation a) { return a == Activation::kRelu ? "relu" : "tanh"; }

VariantKind parse_variant(const std::string& s) {
  for (auto v : {VariantKind::kSingleTask, VariantKind::kSharedBottom, VariantKind::kOMoE,
                 VariantKind::kMMoE, VariantKind::kPLE, VariantKind::kMEMMoE, VariantKind::kMEPLE,
                 VariantKind::kSTEM}) {
    if (to_string(v) == s) return v;
  }
  throw ConfigError("unknown model variant '" + s + "'");
}

GateInput parse_gate_input(const std::string& s) {
  for (auto g : {GateInput::kTaskOnly, GateInput::kSharedOnly, GateInput::kSum}) {
    if (to_string(g) == s) return g;
  }
  throw ConfigError("unknown gate input '" + s + "'");
}

Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::kRelu;
  if (s == "tanh") return Activation::kTanh;
  throw ConfigError("unknown activation '" + s + "'");
}

std::string expert_layer_name(const std::string& group, std::size_t index, std::size_t layer,
                              char kind) {
  return "expert." + group + "." + std::to_string(index) + ".layer" + std::to_string(layer) +
         "." + kind;
}

std::string tower_layer_name(std::size_t task, std::size_t layer, char kind) {
  return "tower.task" + std::to_string(task) + ".layer" + std::to_string(layer) + "." + kind;
}

std::string gate_name(std::size_t task) { return "gate.task" + std::to_string(task) + ".W"; }
std::string task_table(std::size_t task) { return "emb.task" + std::to_string(task); }
std::string expert_table(std::size_t index) { return "emb.expert" + std::to_string(index); }

GateInput ModelConfig::resolved_gate_input() const {
  if (gate_input) return *gate_input;
  if (variant == VariantKind::kSTEM) return GateInput::kSum;
  if (variant == VariantKind::kMEPLE) return GateInput::kTaskOnly;
  return GateInput::kSharedOnly;
}

void ModelConfig::validate(std::size_t num_fields) const {
  if (num_tasks < 1) throw ConfigError("model: num_tasks must be >= 1");
  if (embedding_dim < 1) throw ConfigError("model: embedding_dim must be >= 1");
  if (expert_hidden.empty()) throw ConfigError("model: expert_hidden must be non-empty");
  for (auto h : expert_hidden) {
    if (h < 1) throw ConfigError("model: hidden sizes must be >= 1");
  }
  for (auto h : tower_hidden) {
    if (h < 1) throw ConfigError("model: hidden sizes must be >= 1");
  }
  if (variant == VariantKind::kSingleTask && single_task >= num_tasks) {
    throw ConfigError("model: single_task index out of range");
  }
  const bool needs_k1 = variant == VariantKind::kSingleTask || variant == VariantKind::kPLE ||
                        variant == VariantKind::kMEPLE || variant == VariantKind::kSTEM;
  const bool needs_k2 = variant == VariantKind::kOMoE || variant == VariantKind::kMMoE ||
                        variant == VariantKind::kPLE || variant == VariantKind::kMEMMoE ||
                        variant == VariantKind::kMEPLE || variant == VariantKind::kSTEM;
  if (needs_k1 && num_task_experts < 1) throw ConfigError("model: num_task_experts must be >= 1");
  if (needs_k2 && num_shared_experts < 1) {
    throw ConfigError("model: num_shared_experts must be >= 1");
  }
  if (!field_task_specific.empty() && field_task_specific.size() != num_fields) {
    throw ConfigError("model: field_task_specific needs one entry per field (" +
                      std::to_string(num_fields) + ")");
  }
}

Architecture routing_for(const ModelConfig& cfg) {
  const std::size_t t_count = cfg.num_tasks;
  Architecture a;
  a.mask.num_tasks = t_count;
  a.mask.forward.assign(t_count, std::vector<std::uint8_t>(t_count + 1, 0));
  a.mask.backward = a.mask.forward;
  a.groups.resize(t_count + 1);
  for (std::size_t t = 0; t < t_count; ++t) a.groups[t].name = "task" + std::to_string(t);
  const std::size_t shared = t_count;
  a.groups[shared].name = "shared";
  a.gate_input = cfg.resolved_gate_input();

  auto all_tasks = [&] {
    for (std::size_t t = 0; t < t_count; ++t) a.active_tasks.push_back(t);
  };
  auto set = [&](std::size_t t, std::size_t g, bool fwd, bool bwd) {
    a.mask.forward[t][g] = fwd ? 1 : 0;
    a.mask.backward[t][g] = bwd ? 1 : 0;
  };

  switch (cfg.variant) {
    case VariantKind::kSingleTask: {
      const std::size_t t = cfg.single_task;
      a.tables = {kSharedTable};
      a.groups[t].num_experts = cfg.num_task_experts;
      a.active_tasks = {t};
      a.gate = GateKind::kUniform;
      set(t, t, true, true);
      break;
    }
    case VariantKind::kSharedBottom:
      a.tables = {kSharedTable};
      a.groups[shared].num_experts = 1;
      all_tasks();
      a.gate = GateKind::kFixedUnit;
      for (std::size_t t = 0; t < t_count; ++t) set(t, shared, true, true);
      break;
    case VariantKind::kOMoE:
    case VariantKind::kMMoE:
    case VariantKind::kMEMMoE:
      a.groups[shared].num_experts = cfg.num_shared_experts;
      all_tasks();
      a.gate = cfg.variant == VariantKind::kOMoE ? GateKind::kSharedGate : GateKind::kPerTask;
      if (cfg.variant == VariantKind::kMEMMoE) {
        a.per_expert_tables = true;
        for (std::size_t j = 0; j < cfg.num_shared_experts; ++j) a.tables.push_back(expert_table(j));
      } else {
        a.tables = {kSharedTable};
      }
      for (std::size_t t = 0; t < t_count; ++t) set(t, shared, true, true);
      break;
    case VariantKind::kPLE:
    case VariantKind::kMEPLE:
    case VariantKind::kSTEM: {
      const bool stem = cfg.variant == VariantKind::kSTEM;
      a.tables = {kSharedTable};
      if (cfg.variant != VariantKind::kPLE) {
        a.task_tables = true;
        for (std::size_t t = 0; t < t_count; ++t) a.tables.push_back(task_table(t));
      }
      for (std::size_t t = 0; t < t_count; ++t) a.groups[t].num_experts = cfg.num_task_experts;
      a.groups[shared].num_experts = cfg.num_shared_experts;
      all_tasks();
      a.gate = GateKind::kPerTask;
      for (std::size_t t = 0; t < t_count; ++t) {
        set(t, t, true, true);
        set(t, shared, true, true);
        if (stem) {
          for (std::size_t o = 0; o < t_count; ++o) {
            if (o != t) set(t, o, true, false);
          }
        }
      }
      break;
    }
  }

  a.visible.assign(t_count, {});
  for (std::size_t t : a.active_tasks) {
    auto push_group = [&](std::size_t g) {
      if (!a.mask.forward[t][g]) return;
      for (std::size_t i = 0; i < a.groups[g].num_experts; ++i) a.visible[t].push_back({g, i});
    };
    push_group(t);
    push_group(shared);
    for (std::size_t o = 0; o < t_count; ++o) {
      if (o != t) push_group(o);
    }
  }
  return a;
}

Model::Model(ModelConfig cfg, FieldSchema schema) : cfg_(std::move(cfg)), schema_(std::move(schema)) {
  cfg_.validate(schema_.num_fields());
  if (schema_.num_fields() == 0) throw ConfigError("model: schema has no fields");
  arch_ = routing_for(cfg_);
}

namespace {

Matrix glorot(Rng& rng, std::size_t out, std::size_t in) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  Matrix w(out, in);
  for (double& v : w.data()) v = rng.uniform(-limit, limit);
  return w;
}

}  // namespace

ParamStore Model::init_params(std::uint64_t seed) const {
  Rng rng(seed);
  ParamStore store;
  const std::size_t n = schema_.total_features();
  const std::size_t k = cfg_.embedding_dim;
  for (const auto& table : arch_.tables) {
    Matrix e(n, k);
    for (double& v : e.data()) v = rng.normal(0.0, 0.01);
    store.add(table, std::move(e), /*row_sparse=*/true);
  }
  auto add_mlp = [&](auto name_of, std::size_t in, const std::vector<std::size_t>& sizes) {
    std::size_t prev = in;
    for (std::size_t l = 0; l < sizes.size(); ++l) {
      store.add(name_of(l, 'W'), glorot(rng, sizes[l], prev));
      store.add(name_of(l, 'b'), Matrix(1, sizes[l]));
      prev = sizes[l];
    }
  };
  for (std::size_t g = 0; g < arch_.groups.size(); ++g) {
    const auto& spec = arch_.groups[g];
    for (std::size_t i = 0; i < spec.num_experts; ++i) {
      add_mlp([&](std::size_t l, char kind) { return expert_layer_name(spec.name, i, l, kind); },
              input_dim(), cfg_.expert_hidden);
    }
  }
  if (arch_.gate == GateKind::kSharedGate) {
    store.add(kSharedGateName, glorot(rng, arch_.groups[arch_.mask.shared_group()].num_experts,
                                      input_dim()));
  } else if (arch_.gate == GateKind::kPerTask) {
    for (std::size_t t : arch_.active_tasks) {
      store.add(gate_name(t), glorot(rng, arch_.visible[t].size(), input_dim()));
    }
  }
  for (std::size_t t : arch_.active_tasks) {
    std::vector<std::size_t> sizes = cfg_.tower_hidden;
    sizes.push_back(1);
    add_mlp([&](std::size_t l, char kind) { return tower_layer_name(t, l, kind); }, expert_dim(),
            sizes);
  }
  return store;
}

std::vector<std::uint32_t> Model::rows_for(const Dataset& data,
                                           std::span<const std::size_t> indices) const {
  if (!(data.schema() == schema_)) throw ShapeError("dataset schema differs from model schema");
  const auto offsets = schema_.offsets();
  const std::size_t m = schema_.num_fields();
  std::vector<std::uint32_t> rows(indices.size() * m);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto feats = data.features(indices[r]);
    for (std::size_t f = 0; f < m; ++f) rows[r * m + f] = offsets[f] + feats[f];
  }
  return rows;
}

std::vector<std::string> Model::field_tables_shared() const {
  const std::string base = arch_.per_expert_tables ? expert_table(0) : kSharedTable;
  return std::vector<std::string>(schema_.num_fields(), base);
}

std::vector<std::string> Model::field_tables_for_task(std::size_t task) const {
  auto tables = field_tables_shared();
  if (!arch_.task_tables) return tables;
  for (std::size_t f = 0; f < tables.size(); ++f) {
    if (cfg_.field_task_specific.empty() || cfg_.field_task_specific[f]) {
      tables[f] = task_table(task);
    }
  }
  return tables;
}

Embeddings Model::embed(Tape& tape, std::span<const std::uint32_t> rows) const {
  Embeddings e;
  const auto shared_tables = field_tables_shared();
  e.shared = tape.embedding_lookup(shared_tables, rows);
  e.task.assign(cfg_.num_tasks, e.shared);
  if (arch_.task_tables) {
    for (std::size_t t : arch_.active_tasks) {
      const auto tables = field_tables_for_task(t);
      e.task[t] = tables == shared_tables ? e.shared : tape.embedding_lookup(tables, rows);
    }
  }
  if (arch_.per_expert_tables) {
    const std::size_t k2 = arch_.groups[arch_.mask.shared_group()].num_experts;
    e.expert.push_back(e.shared);
    for (std::size_t j = 1; j < k2; ++j) {
      const std::vector<std::string> tables(schema_.num_fields(), expert_table(j));
      e.expert.push_back(tape.embedding_lookup(tables, rows));
    }
  }
  return e;
}

Var Model::activate(Tape& tape, Var x) const {
  return cfg_.activation == Activation::kRelu ? tape.relu(x) : tape.tanh(x);
}

Var Model::mlp(Tape& tape, const std::string& prefix, Var x, std::size_t layers,
               bool activate_last) const {
  for (std::size_t l = 0; l < layers; ++l) {
    const std::string base = prefix + ".layer" + std::to_string(l) + ".";
    x = tape.affine(x, tape.param(base + "W"), tape.param(base + "b"));
    if (l + 1 < layers || activate_last) x = activate(tape, x);
  }
  return x;
}

std::vector<Var> Model::expert_forward(Tape& tape, std::size_t group,
                                       const Embeddings& emb) const {
  const auto& spec = arch_.groups.at(group);
  const bool shared = group == arch_.mask.shared_group();
  std::vector<Var> out;
  for (std::size_t i = 0; i < spec.num_experts; ++i) {
    Var input = shared ? (arch_.per_expert_tables ? emb.expert.at(i) : emb.shared)
                       : emb.task.at(group);
    if (tape.value(input).cols() != input_dim()) {
      throw ShapeError("expert input " + tape.value(input).shape_string() + " expected width " +
                       std::to_string(input_dim()));
    }
    out.push_back(mlp(tape, "expert." + spec.name + "." + std::to_string(i), input,
                      cfg_.expert_hidden.size(), /*activate_last=*/true));
  }
  return out;
}

Var Model::gate_forward(Tape& tape, std::size_t task, const Embeddings& emb) const {
  const std::size_t n = tape.value(emb.shared).rows();
  const std::size_t k = arch_.visible.at(task).size();
  switch (arch_.gate) {
    case GateKind::kUniform:
      return tape.constant(Matrix(n, k, 1.0 / static_cast<double>(k)));
    case GateKind::kFixedUnit:
      return tape.constant(Matrix(n, 1, 1.0));
    case GateKind::kSharedGate:
    case GateKind::kPerTask:
      break;
  }
  Var input;
  switch (arch_.gate_input) {
    case GateInput::kTaskOnly: input = emb.task[task]; break;
    case GateInput::kSharedOnly: input = emb.shared; break;
    case GateInput::kSum: input = tape.add(emb.task[task], emb.shared); break;
  }
  const std::string w = arch_.gate == GateKind::kSharedGate ? kSharedGateName : gate_name(task);
  const Var logits = tape.affine(input, tape.param(w), tape.constant(Matrix(1, k)));
  return tape.softmax_rows(logits);
}

Var Model::combine(Tape& tape, std::size_t task, const std::vector<std::vector<Var>>& experts,
                   Var weights) const {
  const auto& visible = arch_.visible.at(task);
  if (tape.value(weights).cols() != visible.size()) {
    throw ShapeError("combine: " + std::to_string(tape.value(weights).cols()) +
                     " gate weights for " + std::to_string(visible.size()) + " visible experts");
  }
  std::vector<Var> inputs;
  inputs.reserve(visible.size());
  for (const ExpertRef& ref : visible) {
    Var h = experts.at(ref.group).at(ref.index);
    if (cfg_.sg_enabled && arch_.mask.stop_gradient_on(task, ref.group)) h = tape.stop_gradient(h);
    inputs.push_back(h);
  }
  return tape.weighted_sum(inputs, weights);
}

Var Model::tower_forward(Tape& tape, std::size_t task, Var o) const {
  if (tape.value(o).cols() != expert_dim()) {
    throw ShapeError("tower input " + tape.value(o).shape_string() + " expected width " +
                     std::to_string(expert_dim()));
  }
  const Var logit = mlp(tape, "tower.task" + std::to_string(task), o, cfg_.tower_hidden.size() + 1,
                        /*activate_last=*/false);
  return tape.sigmoid(logit);
}

ForwardResult Model::forward(Tape& tape, std::span<const std::uint32_t> rows) const {
  ForwardResult r;
  r.embeddings = embed(tape, rows);
  r.experts.resize(arch_.groups.size());
  for (std::size_t g = 0; g < arch_.groups.size(); ++g) {
    r.experts[g] = expert_forward(tape, g, r.embeddings);
  }
  r.gates.assign(cfg_.num_tasks, Var{});
  r.combined.assign(cfg_.num_tasks, Var{});
  r.predictions.assign(cfg_.num_tasks, Var{});
  for (std::size_t t : arch_.active_tasks) {
    r.gates[t] = gate_forward(tape, t, r.embeddings);
    r.combined[t] = combine(tape, t, r.experts, r.gates[t]);
    r.predictions[t] = tower_forward(tape, t, r.combined[t]);
  }
  return r;
}

Matrix Model::predict(const ParamStore& params, const Dataset& data,
                      std::size_t batch_size) const {
  Matrix out(data.size(), cfg_.num_tasks, std::numeric_limits<double>::quiet_NaN());
  for (const auto& batch : batch_iter(data.size(), batch_size, false, 0)) {
    Tape tape(params);
    const auto rows = rows_for(data, batch);
    const ForwardResult fr = forward(tape, rows);
    for (std::size_t t : arch_.active_tasks) {
      const Matrix& p = tape.value(fr.predictions[t]);
      for (std::size_t r = 0; r < batch.size(); ++r) out(batch[r], t) = p(r, 0);
    }
  }
  return out;
}

}  // namespace stem
