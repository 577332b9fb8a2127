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

#ifndef DUOPATH_CONFIG_H_
#define DUOPATH_CONFIG_H_

#include <map>
#include <string>

namespace duopath {

// Flat key/value configuration. File syntax is one `key = value` per line;
// `#` starts a comment. Values stay strings until read through a typed getter.
class Config {
 public:
  Config() = default;

  static Config FromFile(const std::string& path);
  static Config FromString(const std::string& text);

  bool Has(const std::string& key) const { return values_.count(key) > 0; }
  void Set(const std::string& key, const std::string& value) {
    values_[key] = value;
  }
  // Keys from `other` override keys in this config.
  void Merge(const Config& other);

  std::string GetString(const std::string& key, const std::string& def) const;
  int GetInt(const std::string& key, int def) const;
  double GetDouble(const std::string& key, double def) const;
  bool GetBool(const std::string& key, bool def) const;

  const std::map<std::string, std::string>& values() const { return values_; }

  // Canonical text (sorted keys); identical for any key ordering.
  std::string Canonical() const;
  // FNV-1a of Canonical(), hex encoded.
  std::string Hash() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace duopath

#endif  // DUOPATH_CONFIG_H_
