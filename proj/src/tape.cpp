#include "stem/tape.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "stem/errors.hpp"

namespace stem {
namespace {

constexpr double kProbClamp = 1e-12;

void require_same_shape(const char* op, const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shapes " + a.shape_string() + " and " +
                     b.shape_string());
  }
}

void add_into(Matrix& acc, const Matrix& g) {
  axpy(1.0, g.data(), acc.data());
}

}  // namespace

ParamStore& Tape::store() {
  if (store_ == nullptr) throw ConfigError("tape has no parameter store bound");
  return *store_;
}

Var Tape::push(std::string op, Matrix value, std::vector<Edge> inputs,
               std::function<void(Tape&, std::size_t)> backward, bool leaf_requires_grad) {
  Node n;
  n.op = std::move(op);
  n.value = std::move(value);
  n.inputs = std::move(inputs);
  if (record_grad_) {
    n.requires_grad = leaf_requires_grad;
    for (const Edge& e : n.inputs) {
      if (!e.blocked && nodes_[e.node].requires_grad) n.requires_grad = true;
    }
    if (n.requires_grad) n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Matrix* Tape::sink(std::size_t self, std::size_t k) {
  const Edge e = nodes_[self].inputs[k];
  if (e.blocked) return nullptr;
  Node& in = nodes_[e.node];
  if (!in.requires_grad) return nullptr;
  if (!in.has_grad) {
    in.grad = Matrix(in.value.rows(), in.value.cols());
    in.has_grad = true;
  }
  return &in.grad;
}

Matrix Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (n.has_grad) return n.grad;
  return Matrix(n.value.rows(), n.value.cols());
}

Var Tape::constant(Matrix value) { return push("constant", std::move(value), {}, nullptr); }

Var Tape::param(const std::string& name) {
  const ParamEntry& e = store().at(name);
  const bool trainable = e.trainable;
  return push(
      "param:" + name, e.value, {},
      [name](Tape& t, std::size_t self) {
        ParamEntry& p = t.store().at(name);
        add_into(p.grad, t.nodes_[self].grad);
        t.reached_.insert(name);
      },
      trainable);
}

Var Tape::embedding_lookup(std::span<const std::string> field_tables,
                           std::span<const std::uint32_t> rows) {
  const std::size_t m = field_tables.size();
  if (m == 0) throw ShapeError("embedding_lookup: no fields");
  if (rows.size() % m != 0) {
    throw ShapeError("embedding_lookup: " + std::to_string(rows.size()) +
                     " ids not divisible by " + std::to_string(m) + " fields");
  }
  const std::size_t n = rows.size() / m;
  std::vector<const ParamEntry*> tables(m);
  std::size_t k = 0;
  bool any_trainable = false;
  for (std::size_t f = 0; f < m; ++f) {
    tables[f] = &store().at(field_tables[f]);
    if (f == 0) k = tables[f]->value.cols();
    if (tables[f]->value.cols() != k) throw ShapeError("embedding_lookup: tables differ in width");
    any_trainable = any_trainable || tables[f]->trainable;
  }
  Matrix out(n, m * k);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t f = 0; f < m; ++f) {
      const std::uint32_t id = rows[r * m + f];
      const Matrix& tv = tables[f]->value;
      if (id >= tv.rows()) {
        throw BoundsError("embedding row " + std::to_string(id) + " out of range for table '" +
                          field_tables[f] + "' with " + std::to_string(tv.rows()) + " rows");
      }
      std::copy_n(tv.row(id).begin(), k, out.row(r).begin() + f * k);
    }
  }
  std::vector<std::string> names(field_tables.begin(), field_tables.end());
  std::vector<std::uint32_t> ids(rows.begin(), rows.end());
  return push(
      "embedding_lookup", std::move(out), {},
      [names = std::move(names), ids = std::move(ids), m, k](Tape& t, std::size_t self) {
        const Matrix& g = t.nodes_[self].grad;
        const std::size_t n = g.rows();
        for (std::size_t f = 0; f < m; ++f) {
          ParamEntry& p = t.store().at(names[f]);
          if (!p.trainable) continue;
          t.reached_.insert(names[f]);
          for (std::size_t r = 0; r < n; ++r) {
            const std::uint32_t id = ids[r * m + f];
            p.touch_row(id);
            axpy(1.0, g.row(r).subspan(f * k, k), p.grad.row(id));
          }
        }
      },
      any_trainable);
}

Var Tape::affine(Var x, Var w, Var b) {
  Matrix y;
  affine_into(value(x), value(w), value(b), y);
  return push("affine", std::move(y), {{x.id, false}, {w.id, false}, {b.id, false}},
              [](Tape& t, std::size_t self) {
                const Matrix& dy = t.nodes_[self].grad;
                const auto& in = t.nodes_[self].inputs;
                const Matrix& xv = t.nodes_[in[0].node].value;
                const Matrix& wv = t.nodes_[in[1].node].value;
                const std::size_t n = dy.rows();
                const std::size_t out = dy.cols();
                if (Matrix* dx = t.sink(self, 0)) {
                  for (std::size_t r = 0; r < n; ++r) {
                    for (std::size_t o = 0; o < out; ++o) {
                      const double g = dy(r, o);
                      if (g != 0.0) axpy(g, wv.row(o), dx->row(r));
                    }
                  }
                }
                if (Matrix* dw = t.sink(self, 1)) {
                  for (std::size_t r = 0; r < n; ++r) {
                    for (std::size_t o = 0; o < out; ++o) {
                      const double g = dy(r, o);
                      if (g != 0.0) axpy(g, xv.row(r), dw->row(o));
                    }
                  }
                }
                if (Matrix* db = t.sink(self, 2)) {
                  for (std::size_t r = 0; r < n; ++r) axpy(1.0, dy.row(r), db->row(0));
                }
              });
}

Var Tape::relu(Var x) {
  Matrix y = value(x);
  for (double& v : y.data()) v = v > 0.0 ? v : 0.0;
  return push("relu", std::move(y), {{x.id, false}}, [](Tape& t, std::size_t self) {
    Matrix* dx = t.sink(self, 0);
    if (dx == nullptr) return;
    const Matrix& dy = t.nodes_[self].grad;
    const Matrix& xv = t.nodes_[t.nodes_[self].inputs[0].node].value;
    auto d = dx->data();
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (xv.data()[i] > 0.0) d[i] += dy.data()[i];
    }
  });
}

Var Tape::tanh(Var x) {
  Matrix y = value(x);
  for (double& v : y.data()) v = std::tanh(v);
  return push("tanh", std::move(y), {{x.id, false}}, [](Tape& t, std::size_t self) {
    Matrix* dx = t.sink(self, 0);
    if (dx == nullptr) return;
    const Matrix& dy = t.nodes_[self].grad;
    const Matrix& yv = t.nodes_[self].value;
    auto d = dx->data();
    for (std::size_t i = 0; i < d.size(); ++i) {
      d[i] += dy.data()[i] * (1.0 - yv.data()[i] * yv.data()[i]);
    }
  });
}

Var Tape::sigmoid(Var z) {
  Matrix y = value(z);
  for (double& v : y.data()) v = stem::sigmoid(v);
  return push("sigmoid", std::move(y), {{z.id, false}}, [](Tape& t, std::size_t self) {
    Matrix* dz = t.sink(self, 0);
    if (dz == nullptr) return;
    const Matrix& dy = t.nodes_[self].grad;
    const Matrix& yv = t.nodes_[self].value;
    auto d = dz->data();
    for (std::size_t i = 0; i < d.size(); ++i) {
      d[i] += dy.data()[i] * yv.data()[i] * (1.0 - yv.data()[i]);
    }
  });
}

Var Tape::softmax_rows(Var z) {
  Matrix y = value(z);
  if (y.cols() == 0) throw ShapeError("softmax of empty vector");
  for (std::size_t r = 0; r < y.rows(); ++r) softmax_inplace(y.row(r));
  return push("softmax", std::move(y), {{z.id, false}}, [](Tape& t, std::size_t self) {
    Matrix* dz = t.sink(self, 0);
    if (dz == nullptr) return;
    const Matrix& dy = t.nodes_[self].grad;
    const Matrix& p = t.nodes_[self].value;
    for (std::size_t r = 0; r < p.rows(); ++r) {
      const double s = dot(dy.row(r), p.row(r));
      auto out = dz->row(r);
      for (std::size_t i = 0; i < p.cols(); ++i) out[i] += p(r, i) * (dy(r, i) - s);
    }
  });
}

Var Tape::weighted_sum(std::span<const Var> vectors, Var weights) {
  const Matrix& w = value(weights);
  if (vectors.empty() || w.cols() != vectors.size()) {
    throw ShapeError("weighted_sum: " + std::to_string(vectors.size()) + " vectors, weights " +
                     w.shape_string());
  }
  const Matrix& first = value(vectors[0]);
  if (w.rows() != first.rows()) {
    throw ShapeError("weighted_sum: weights " + w.shape_string() + " vs vectors " +
                     first.shape_string());
  }
  Matrix out(first.rows(), first.cols());
  std::vector<Edge> edges;
  edges.reserve(vectors.size() + 1);
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    const Matrix& v = value(vectors[i]);
    require_same_shape("weighted_sum", first, v);
    for (std::size_t r = 0; r < out.rows(); ++r) axpy(w(r, i), v.row(r), out.row(r));
    edges.push_back({vectors[i].id, false});
  }
  edges.push_back({weights.id, false});
  return push("weighted_sum", std::move(out), std::move(edges), [](Tape& t, std::size_t self) {
    const Matrix& dy = t.nodes_[self].grad;
    const auto& in = t.nodes_[self].inputs;
    const std::size_t k = in.size() - 1;
    const Matrix& w = t.nodes_[in[k].node].value;
    Matrix* dw = t.sink(self, k);
    for (std::size_t i = 0; i < k; ++i) {
      const Matrix& v = t.nodes_[in[i].node].value;
      if (Matrix* dv = t.sink(self, i)) {
        for (std::size_t r = 0; r < dy.rows(); ++r) axpy(w(r, i), dy.row(r), dv->row(r));
      }
      if (dw != nullptr) {
        for (std::size_t r = 0; r < dy.rows(); ++r) (*dw)(r, i) += dot(v.row(r), dy.row(r));
      }
    }
  });
}

Var Tape::stop_gradient(Var x) {
  // The only edge is blocked, so the node never requires grad and its
  // backward rule is never invoked.
  return push("stop_gradient", value(x), {{x.id, true}}, nullptr);
}

Var Tape::add(Var a, Var b) {
  require_same_shape("add", value(a), value(b));
  Matrix y = value(a);
  axpy(1.0, value(b).data(), y.data());
  return push("add", std::move(y), {{a.id, false}, {b.id, false}}, [](Tape& t, std::size_t self) {
    const Matrix& dy = t.nodes_[self].grad;
    if (Matrix* da = t.sink(self, 0)) add_into(*da, dy);
    if (Matrix* db = t.sink(self, 1)) add_into(*db, dy);
  });
}

Var Tape::mul(Var a, Var b) {
  require_same_shape("mul", value(a), value(b));
  Matrix y = value(a);
  const auto bv = value(b).data();
  auto yd = y.data();
  for (std::size_t i = 0; i < yd.size(); ++i) yd[i] *= bv[i];
  return push("mul", std::move(y), {{a.id, false}, {b.id, false}}, [](Tape& t, std::size_t self) {
    const Matrix& dy = t.nodes_[self].grad;
    const auto& in = t.nodes_[self].inputs;
    const auto av = t.nodes_[in[0].node].value.data();
    const auto bv = t.nodes_[in[1].node].value.data();
    if (Matrix* da = t.sink(self, 0)) {
      auto d = da->data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy.data()[i] * bv[i];
    }
    if (Matrix* db = t.sink(self, 1)) {
      auto d = db->data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy.data()[i] * av[i];
    }
  });
}

Var Tape::scale(Var x, double c) {
  Matrix y = value(x);
  for (double& v : y.data()) v *= c;
  return push("scale", std::move(y), {{x.id, false}}, [c](Tape& t, std::size_t self) {
    if (Matrix* dx = t.sink(self, 0)) axpy(c, t.nodes_[self].grad.data(), dx->data());
  });
}

Var Tape::sum(Var x) {
  double s = 0.0;
  for (double v : value(x).data()) s += v;
  return push("sum", Matrix(1, 1, s), {{x.id, false}}, [](Tape& t, std::size_t self) {
    Matrix* dx = t.sink(self, 0);
    if (dx == nullptr) return;
    const double g = t.nodes_[self].grad(0, 0);
    for (double& v : dx->data()) v += g;
  });
}

Var Tape::bce(Var probs, std::span<const double> labels, double weight) {
  const Matrix& p = value(probs);
  if (p.cols() != 1 || p.rows() != labels.size() || p.rows() == 0) {
    throw ShapeError("bce: predictions " + p.shape_string() + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  const double n = static_cast<double>(p.rows());
  double total = 0.0;
  for (std::size_t r = 0; r < p.rows(); ++r) {
    const double y = labels[r];
    const double q = p(r, 0);
    if (!(q >= 0.0 && q <= 1.0)) {
      throw NumericError("bce: prediction " + std::to_string(q) + " outside [0,1]");
    }
    const double c = std::clamp(q, kProbClamp, 1.0 - kProbClamp);
    total -= y * std::log(c) + (1.0 - y) * std::log(1.0 - c);
  }
  std::vector<double> ys(labels.begin(), labels.end());
  return push("bce", Matrix(1, 1, weight * total / n), {{probs.id, false}},
              [ys = std::move(ys), weight](Tape& t, std::size_t self) {
                Matrix* dp = t.sink(self, 0);
                if (dp == nullptr) return;
                const double g = t.nodes_[self].grad(0, 0) * weight /
                                 static_cast<double>(ys.size());
                const Matrix& p = t.nodes_[t.nodes_[self].inputs[0].node].value;
                for (std::size_t r = 0; r < ys.size(); ++r) {
                  const double q = p(r, 0);
                  // Zero slope where the clamp is active.
                  if (q < kProbClamp || q > 1.0 - kProbClamp) continue;
                  (*dp)(r, 0) += g * (-ys[r] / q + (1.0 - ys[r]) / (1.0 - q));
                }
              });
}

Var Tape::l2_rows(const std::string& table, std::span<const std::uint32_t> rows, double lambda) {
  const ParamEntry& e = store().at(table);
  std::vector<std::uint32_t> distinct(rows.begin(), rows.end());
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  double total = 0.0;
  for (std::uint32_t r : distinct) {
    if (r >= e.value.rows()) throw BoundsError("l2_rows: row " + std::to_string(r));
    total += dot(e.value.row(r), e.value.row(r));
  }
  return push(
      "l2_rows", Matrix(1, 1, lambda * total), {},
      [table, distinct = std::move(distinct), lambda](Tape& t, std::size_t self) {
        ParamEntry& p = t.store().at(table);
        const double g = t.nodes_[self].grad(0, 0);
        t.reached_.insert(table);
        for (std::uint32_t r : distinct) {
          p.touch_row(r);
          axpy(2.0 * lambda * g, p.value.row(r), p.grad.row(r));
        }
      },
      e.trainable && lambda != 0.0);
}

void Tape::backward(Var target) {
  if (!record_grad_) throw ConfigError("backward on an evaluation-only tape");
  Node& t = node(target);
  if (t.value.size() != 1) {
    throw ShapeError("backward target must be 1x1, got " + t.value.shape_string());
  }
  reached_.clear();
  visit_order_.clear();
  for (Node& n : nodes_) {
    n.has_grad = false;
    n.grad = Matrix();
  }
  if (!t.requires_grad) return;
  t.grad = Matrix(1, 1, 1.0);
  t.has_grad = true;
  for (std::size_t i = target.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.requires_grad || !n.backward) continue;
    visit_order_.push_back(i);
    n.backward(*this, i);
  }
}

}  // namespace stem
