#pragma once

#include <memory>
#include <string>

#include "mvss/network.hpp"

namespace mvss::net {

// Flat binary container (little-endian) holding the model configuration,
// schedule state, and every named parameter and batch-norm running buffer:
//
//   magic   8 bytes  "MVSSCKPT"
//   u32     version (1)
//   u32     head kind (0 gmp, 1 gem, 2 convgem)
//   u32     k
//   u32     edge_channels
//   f64     lambda0
//   f64     gamma
//   u32     schedule total_epochs
//   u32     trained epochs
//   u64     init seed
//   u32     entry count
//   entry:  u32 name length, name bytes, u32 shape[4], f64 data[numel]
//
// Buffers are stored with shape (1, len, 1, 1). Loading rebuilds the model
// from the header and requires the entry set to match the rebuilt model's
// enumeration exactly (names and shapes), so files from a different
// architecture are rejected rather than partially applied.
void save_checkpoint(const std::string& path, MvssModel& model,
                     int trained_epochs);

struct LoadedModel {
  std::unique_ptr<MvssModel> model;
  int trained_epochs = 0;
};

// ParseError (with byte offset) on malformed or truncated files;
// IntegrityError when the entries do not match the described architecture.
LoadedModel load_checkpoint(const std::string& path);

}  // namespace mvss::net
