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

#include "duopath/checkpoint.h"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace duopath {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

void Checkpoint::Save(const std::string& path) const {
  nlohmann::json header;
  header["kind"] = kind;
  header["meta"] = meta;
  header["tensors"] = nlohmann::json::array();
  for (const auto& [name, m] : tensors) {
    header["tensors"].push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
  }
  const std::string text = header.dump();
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path);
    out.write("DPCK", 4);
    const uint32_t version = kVersion;
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    const uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, m] : tensors) {
      out.write(reinterpret_cast<const char*>(m.data()),
                static_cast<std::streamsize>(sizeof(double) * m.size()));
    }
    if (!out) throw Error(ErrorCode::kIoError, "short write to " + path);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint Checkpoint::Load(const std::string& path,
                            const std::string& expected_kind) {
  if (!std::filesystem::exists(path)) {
    throw Error(ErrorCode::kCheckpointMissing, path);
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path);
  char magic[4];
  uint32_t version = 0;
  uint64_t len = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || std::memcmp(magic, "DPCK", 4) != 0) {
    throw Error(ErrorCode::kBadCheckpoint, path + ": bad magic");
  }
  if (version != kVersion) {
    throw Error(ErrorCode::kBadCheckpoint,
                path + ": unsupported version " + std::to_string(version));
  }
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw Error(ErrorCode::kBadCheckpoint, path + ": truncated header");
  Checkpoint ckpt;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kBadCheckpoint, path + ": " + e.what());
  }
  ckpt.kind = header.at("kind").get<std::string>();
  ckpt.meta = header.at("meta");
  if (!expected_kind.empty() && ckpt.kind != expected_kind) {
    throw Error(ErrorCode::kBadCheckpoint,
                path + ": expected " + expected_kind + ", found " + ckpt.kind);
  }
  for (const auto& t : header.at("tensors")) {
    Matrix m(t.at("rows").get<Eigen::Index>(), t.at("cols").get<Eigen::Index>());
    in.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * m.size()));
    if (!in) throw Error(ErrorCode::kBadCheckpoint, path + ": truncated data");
    ckpt.tensors.emplace_back(t.at("name").get<std::string>(), std::move(m));
  }
  return ckpt;
}

}  // namespace duopath
