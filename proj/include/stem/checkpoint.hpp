#pragma once

#include <filesystem>
#include <string>

#include "stem/param_store.hpp"

namespace stem {

// Flat archive of named matrices:
//   "STEMCKP1" | u64 count | count x (u32 name_len | name | u64 rows | u64 cols |
//   rows*cols little-endian float64)
// Entries appear in name order. Tables named "emb.*" load as row-sparse.
std::string serialize_params(const ParamStore& params);
ParamStore deserialize_params(const std::string& bytes);

void save_checkpoint(const ParamStore& params, const std::filesystem::path& path);
ParamStore load_checkpoint(const std::filesystem::path& path);

}  // namespace stem
