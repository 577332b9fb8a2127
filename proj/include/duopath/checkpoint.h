// Copyright (c) 2026 The duopath Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef DUOPATH_CHECKPOINT_H_
#define DUOPATH_CHECKPOINT_H_

#include <string>
#include <utility>
#include <vector>

#include "duopath/common.h"
#include "json.hpp"

namespace duopath {

// Self-describing binary container shared by every model.
//
//   bytes 0..3   magic "DPCK"
//   bytes 4..7   u32 format version
//   bytes 8..15  u64 header length H
//   next H bytes UTF-8 JSON: {"kind", "meta", "tensors": [{name, rows, cols}]}
//   then each tensor's rows*cols little-endian float64 values, row-major, in
//   header order.
struct Checkpoint {
  static constexpr uint32_t kVersion = 1;

  std::string kind;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Matrix>> tensors;

  void Save(const std::string& path) const;
  // Throws CheckpointMissing when the file does not exist and BadCheckpoint
  // when it is malformed or of a different kind (when `expected_kind` is set).
  static Checkpoint Load(const std::string& path,
                         const std::string& expected_kind = "");
};

}  // namespace duopath

#endif  // DUOPATH_CHECKPOINT_H_
