#pragma once

#include <filesystem>

#include "bsl/param_set.hpp"

namespace bsl {

// Layout (all integers little-endian):
//   "BSLCKPT1"
//   u32 count, then per parameter: u32 name_len, name, u32 rank, u64 dims[rank],
//       f64 values[numel]
//   the same section twice more for Adam first and second moments
//   trailer: u64 adam step, u64 FNV-1a of every value byte in file order
// Values are IEEE-754 binary64, the library's only working precision.

void save_checkpoint(const ParamSet& params, const std::filesystem::path& path);
ParamSet load_checkpoint(const std::filesystem::path& path);

}  // namespace bsl
