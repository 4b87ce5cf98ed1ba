#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stem/data.hpp"
#include "stem/matrix.hpp"
#include "stem/param_store.hpp"
#include "stem/tape.hpp"

namespace stem {

enum class VariantKind { kSingleTask, kSharedBottom, kOMoE, kMMoE, kPLE, kMEMMoE, kMEPLE, kSTEM };
enum class GateInput { kTaskOnly, kSharedOnly, kSum };
enum class Activation { kRelu, kTanh };

std::string to_string(VariantKind v);
std::string to_string(GateInput g);
std::string to_string(Activation a);
VariantKind parse_variant(const std::string& s);
GateInput parse_gate_input(const std::string& s);
Activation parse_activation(const std::string& s);

struct ModelConfig {
  VariantKind variant = VariantKind::kSTEM;
  // Task modelled by kSingleTask.
  std::size_t single_task = 0;
  std::size_t num_tasks = 2;
  std::size_t num_task_experts = 1;    // K1, experts per task-specific group
  std::size_t num_shared_experts = 1;  // K2, experts in the shared group
  std::size_t embedding_dim = 16;
  std::vector<std::size_t> expert_hidden = {64, 64};
  std::vector<std::size_t> tower_hidden = {32, 16};
  // Unset: kSum for STEM, kTaskOnly for ME-PLE, kSharedOnly otherwise.
  std::optional<GateInput> gate_input;
  bool sg_enabled = true;
  // Per field: read the task-specific tables (true) or the shared table
  // (false) when building h_0^t. Empty means all true.
  std::vector<bool> field_task_specific;
  Activation activation = Activation::kRelu;

  GateInput resolved_gate_input() const;
  void validate(std::size_t num_fields) const;
};

// Expert groups are indexed 0..T-1 for the task-specific groups and T for the
// shared group.
struct RoutingMask {
  std::size_t num_tasks = 0;
  // [task][group] in {0,1}
  std::vector<std::vector<std::uint8_t>> forward;
  std::vector<std::vector<std::uint8_t>> backward;

  std::size_t shared_group() const { return num_tasks; }
  bool stop_gradient_on(std::size_t task, std::size_t group) const {
    return forward[task][group] != 0 && backward[task][group] == 0;
  }
};

enum class GateKind {
  kUniform,    // constant 1/k over own experts (single task)
  kFixedUnit,  // one expert with weight 1 (shared bottom)
  kSharedGate, // one softmax gate shared by all tasks (OMoE)
  kPerTask,    // softmax gate per task
};

struct ExpertRef {
  std::size_t group;
  std::size_t index;
  friend bool operator==(const ExpertRef&, const ExpertRef&) = default;
};

struct ExpertGroupSpec {
  std::size_t num_experts = 0;  // 0 when the variant has no such group
  std::string name;             // "task{t}" or "shared"
};

// Everything routing_for derives from a variant.
struct Architecture {
  RoutingMask mask;
  std::vector<std::string> tables;
  std::vector<ExpertGroupSpec> groups;  // size T + 1
  std::vector<std::size_t> active_tasks;
  GateKind gate = GateKind::kPerTask;
  GateInput gate_input = GateInput::kSharedOnly;
  // Per task: experts in gate order (own group, shared group, other task
  // groups by task index). Empty for inactive tasks.
  std::vector<std::vector<ExpertRef>> visible;
  bool per_expert_tables = false;  // ME-MMoE
  bool task_tables = false;        // STEM, ME-PLE
};

Architecture routing_for(const ModelConfig& cfg);

// Concatenated embeddings of one batch.
struct Embeddings {
  Var shared;                // h_0^S
  std::vector<Var> task;     // h_0^t (== shared for one-table variants)
  std::vector<Var> expert;   // ME-MMoE per-expert inputs
};

struct ForwardResult {
  Embeddings embeddings;
  std::vector<std::vector<Var>> experts;  // [group][index]
  std::vector<Var> gates;                 // per task, invalid when inactive
  std::vector<Var> combined;              // o^t
  std::vector<Var> predictions;           // n x 1 per task, invalid when inactive
};

class Model {
 public:
  Model(ModelConfig cfg, FieldSchema schema);

  const ModelConfig& config() const { return cfg_; }
  const FieldSchema& schema() const { return schema_; }
  const Architecture& arch() const { return arch_; }
  std::size_t input_dim() const { return schema_.num_fields() * cfg_.embedding_dim; }
  std::size_t expert_dim() const { return cfg_.expert_hidden.back(); }

  // Draws every parameter from one generator. Order: embedding tables in
  // arch().tables order, expert groups (task groups ascending, then shared),
  // gates, towers; each MLP layer W then b. MLP weights are Glorot-uniform,
  // biases zero, embeddings N(0, 0.01^2).
  ParamStore init_params(std::uint64_t seed) const;

  // n x M global embedding rows (field offset + in-field id).
  std::vector<std::uint32_t> rows_for(const Dataset& data,
                                      std::span<const std::size_t> indices) const;

  Embeddings embed(Tape& tape, std::span<const std::uint32_t> rows) const;
  std::vector<Var> expert_forward(Tape& tape, std::size_t group, const Embeddings& emb) const;
  Var gate_forward(Tape& tape, std::size_t task, const Embeddings& emb) const;
  Var combine(Tape& tape, std::size_t task, const std::vector<std::vector<Var>>& experts,
              Var weights) const;
  Var tower_forward(Tape& tape, std::size_t task, Var o) const;
  ForwardResult forward(Tape& tape, std::span<const std::uint32_t> rows) const;

  // Evaluation-only predictions, n x T; inactive task columns are NaN.
  Matrix predict(const ParamStore& params, const Dataset& data,
                 std::size_t batch_size = 1024) const;

  // Table names each field reads for h_0^t / h_0^S.
  std::vector<std::string> field_tables_for_task(std::size_t task) const;
  std::vector<std::string> field_tables_shared() const;

 private:
  Var mlp(Tape& tape, const std::string& prefix, Var x, std::size_t layers,
          bool activate_last) const;
  Var activate(Tape& tape, Var x) const;

  ModelConfig cfg_;
  FieldSchema schema_;
  Architecture arch_;
};

// Parameter name helpers.
std::string expert_layer_name(const std::string& group, std::size_t index, std::size_t layer,
                              char kind);
std::string tower_layer_name(std::size_t task, std::size_t layer, char kind);
std::string gate_name(std::size_t task);
inline constexpr const char* kSharedGateName = "gate.shared.W";
inline constexpr const char* kSharedTable = "emb.shared";
std::string task_table(std::size_t task);
std::string expert_table(std::size_t index);

}  // namespace stem
