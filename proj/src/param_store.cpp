#include "stem/param_store.hpp"

#include <algorithm>

#include "stem/errors.hpp"

namespace stem {

ParamEntry& ParamStore::add(const std::string& name, Matrix value, bool row_sparse,
                            bool trainable) {
  if (contains(name)) throw ConfigError("duplicate parameter '" + name + "'");
  ParamEntry e;
  e.grad = Matrix(value.rows(), value.cols());
  e.touched.assign(row_sparse ? value.rows() : 0, 0);
  e.value = std::move(value);
  e.trainable = trainable;
  e.row_sparse = row_sparse;
  return entries_.emplace(name, std::move(e)).first->second;
}

ParamEntry& ParamStore::at(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second;
}

const ParamEntry& ParamStore::at(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second;
}

void ParamStore::zero_grads() {
  for (auto& [name, e] : entries_) {
    if (e.row_sparse) {
      for (std::size_t r : e.touched_rows) {
        std::fill(e.grad.row(r).begin(), e.grad.row(r).end(), 0.0);
        e.touched[r] = 0;
      }
      e.touched_rows.clear();
    } else {
      e.grad.fill(0.0);
    }
  }
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, e] : entries_) n += e.value.size();
  return n;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, e] : entries_) out.push_back(name);
  return out;
}

bool ParamStore::same_values(const ParamStore& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  auto a = entries_.begin();
  auto b = other.entries_.begin();
  for (; a != entries_.end(); ++a, ++b) {
    if (a->first != b->first || !(a->second.value == b->second.value)) return false;
  }
  return true;
}

}  // namespace stem
