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

#ifndef DUOPATH_TESTS_FIXTURE_UTIL_H_
#define DUOPATH_TESTS_FIXTURE_UTIL_H_

#include <filesystem>
#include <memory>
#include <string>

#include "duopath/config.h"
#include "duopath/corpus.h"
#include "duopath/fixture.h"
#include "test_util.h"

namespace duopath::testing {

inline Config FixtureConfig() {
  return Config::FromFile(std::string(DUOPATH_SOURCE_DIR) + "/configs/fixture.cfg");
}

// Synthetic corpus generated and prepared once per test process.
struct PreparedFixture {
  TempDir dir{"fixture"};
  FixtureSummary summary;
  std::string data_dir;
  Manifest manifest;

  static const PreparedFixture& Get() {
    static std::unique_ptr<PreparedFixture> f = [] {
      auto p = std::make_unique<PreparedFixture>();
      p->summary = MakeFixture(p->dir / "fixture");
      p->data_dir = p->dir / "data";
      PrepareData(p->summary.corpus_dir, p->data_dir, FixtureConfig());
      p->manifest = ReadManifest(p->data_dir + "/manifest.jsonl");
      return p;
    }();
    return *f;
  }
};

}  // namespace duopath::testing

#endif  // DUOPATH_TESTS_FIXTURE_UTIL_H_
