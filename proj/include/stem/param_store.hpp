#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "stem/matrix.hpp"

namespace stem {

struct ParamEntry {
  Matrix value;
  Matrix grad;
  bool trainable = true;
  // Embedding tables: gradients and optimizer updates are row-sparse.
  bool row_sparse = false;
  // Rows that received gradient since the last zero_grads (row_sparse only).
  std::vector<std::uint8_t> touched;
  std::vector<std::size_t> touched_rows;

  void touch_row(std::size_t r) {
    if (!touched[r]) {
      touched[r] = 1;
      touched_rows.push_back(r);
    }
  }
};

// Named parameter matrices with accumulated gradients. Iteration order is the
// lexicographic name order, which makes checkpoints and updates deterministic.
class ParamStore {
 public:
  ParamEntry& add(const std::string& name, Matrix value, bool row_sparse = false,
                  bool trainable = true);

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  ParamEntry& at(const std::string& name);
  const ParamEntry& at(const std::string& name) const;

  void zero_grads();

  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::vector<std::string> names() const;

  // Values only; grads and optimizer bookkeeping are not compared.
  bool same_values(const ParamStore& other) const;

 private:
  std::map<std::string, ParamEntry> entries_;
};

}  // namespace stem
