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

// Synthetic two-regime corpus used by the tests and the quick-start.
//
// Layout written under the output directory:
//   corpus/corpus.jsonl, corpus/wav/<id>.wav   audio corpus with durations
//   text/corpus.txt                            unlabeled style pre-training text
//   text/lexicon.json                          emotion lexicon (groups form)
//   labels.tsv                                 id <TAB> regime
//   paragraph.txt                              sentences for paragraph synthesis

#ifndef DUOPATH_FIXTURE_H_
#define DUOPATH_FIXTURE_H_

#include <string>
#include <vector>

#include "duopath/common.h"

namespace duopath {

struct FixtureOptions {
  int documents = 10;
  int sentences_per_document = 5;
  int text_sentences = 200;
  uint64_t seed = 2024;
};

struct FixtureSummary {
  int utterances = 0;
  int frames = 0;
  std::string corpus_dir;
  std::string text_path;
  std::string lexicon_path;
  std::string labels_path;
  std::string paragraph_path;
};

FixtureSummary MakeFixture(const std::string& out_dir,
                           const FixtureOptions& opts = FixtureOptions());

// Regime of a fixture document: "calm" for even documents, "excited" for odd.
std::string FixtureRegime(int document);

}  // namespace duopath

#endif  // DUOPATH_FIXTURE_H_
