#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "stem/matrix.hpp"
#include "stem/param_store.hpp"

namespace stem {

// Handle to a node on a Tape.
struct Var {
  static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::size_t id = kNone;
  bool valid() const noexcept { return id != kNone; }
};

// One input connection of a recorded operation. A blocked edge carries the
// forward value but contributes nothing to the input's gradient.
struct Edge {
  std::size_t node;
  bool blocked;
};

// Linear record of forward operations. backward() replays the records in
// exact reverse order, accumulating into node grads and, for parameter
// leaves, into the bound ParamStore.
//
// Every value is a matrix whose rows are independent samples; a plain vector
// is a 1-row matrix.
class Tape {
 public:
  // With record_grad = false the tape only evaluates (no backward).
  explicit Tape(ParamStore* store = nullptr, bool record_grad = true)
      : store_(store), record_grad_(record_grad) {}
  // Evaluation-only tape over a frozen store; backward() is rejected, so the
  // store is never written.
  explicit Tape(const ParamStore& store)
      : store_(const_cast<ParamStore*>(&store)), record_grad_(false) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);

  // Leaf reading the current value of a dense parameter.
  Var param(const std::string& name);

  // Concatenated embedding lookup. `rows` is n x M global row indices
  // (row-major); field m reads from table field_tables[m]. Output n x (M*K).
  Var embedding_lookup(std::span<const std::string> field_tables,
                       std::span<const std::uint32_t> rows);

  Var affine(Var x, Var w, Var b);
  Var relu(Var x);
  Var tanh(Var x);
  Var sigmoid(Var z);
  Var softmax_rows(Var z);
  // out[r] = sum_i weights[r, i] * vectors[i][r]
  Var weighted_sum(std::span<const Var> vectors, Var weights);
  Var stop_gradient(Var x);
  Var add(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var x, double c);
  // 1 x 1 sum of all entries.
  Var sum(Var x);
  // Mean binary cross-entropy over rows of an n x 1 probability column,
  // scaled by `weight`; probabilities are clamped to [1e-12, 1 - 1e-12].
  Var bce(Var probs, std::span<const double> labels, double weight = 1.0);
  // lambda * sum of squared norms of the distinct rows of `table` listed.
  Var l2_rows(const std::string& table, std::span<const std::uint32_t> rows, double lambda);

  const Matrix& value(Var v) const { return nodes_.at(v.id).value; }
  // Gradient of the last backward() target w.r.t. v (zeros if none flowed).
  Matrix grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  const std::vector<Edge>& inputs(Var v) const { return nodes_.at(v.id).inputs; }
  const std::string& op_name(Var v) const { return nodes_.at(v.id).op; }
  std::size_t size() const { return nodes_.size(); }

  // Seeds d(target)/d(target) = 1 for a 1 x 1 target and propagates.
  void backward(Var target);

  // Parameters that received gradient through at least one unblocked path in
  // the last backward().
  const std::set<std::string>& reached_params() const { return reached_; }

  // Node ids in the order backward() visited them (for traversal tests).
  const std::vector<std::size_t>& backward_order() const { return visit_order_; }

 private:
  struct Node {
    std::string op;
    Matrix value;
    Matrix grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::vector<Edge> inputs;
    std::function<void(Tape&, std::size_t)> backward;
  };

  Var push(std::string op, Matrix value, std::vector<Edge> inputs,
           std::function<void(Tape&, std::size_t)> backward, bool leaf_requires_grad = false);
  // Gradient accumulator of input `k` of node `self`, or nullptr when the edge
  // is blocked or the input needs no gradient.
  Matrix* sink(std::size_t self, std::size_t k);
  ParamStore& store();
  Node& node(Var v) { return nodes_.at(v.id); }

  ParamStore* store_;
  bool record_grad_;
  std::vector<Node> nodes_;
  std::set<std::string> reached_;
  std::vector<std::size_t> visit_order_;
};

}  // namespace stem
