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

#ifndef DUOPATH_COMMON_H_
#define DUOPATH_COMMON_H_

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace duopath {

// Row-major so that a (T*F)xC feature map reshapes to Tx(F*C) for free.
using Matrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

enum class ErrorCode {
  kEmptyAudio,
  kSampleRateMismatch,
  kInvalidAudio,
  kUnknownUtterance,
  kAlignmentMismatch,
  kBadWindow,
  kEmptyCorpus,
  kContrastiveBatchTooSmall,
  kShapeMismatch,
  kUnknownPhoneme,
  kEmptyExpansion,
  kMissingTargets,
  kFrozenContractViolation,
  kCheckpointMissing,
  kBadCheckpoint,
  kStageOrderViolation,
  kPhonemizeError,
  kNoVoicedOverlap,
  kBadConfig,
  kBadManifest,
  kBadLexicon,
  kIoError,
  kNumericalError,
};

const char* ErrorCodeName(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(ErrorCodeName(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

// std::mt19937_64 output is fixed by the standard; the distributions are not,
// so sampling helpers below are hand-rolled to stay reproducible everywhere.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t Next() { return engine_(); }
  // Uniform in [0, 1).
  double Uniform() { return (engine_() >> 11) * (1.0 / 9007199254740992.0); }
  double Uniform(double lo, double hi) { return lo + (hi - lo) * Uniform(); }
  // Uniform integer in [0, n).
  size_t Index(size_t n) { return static_cast<size_t>(engine_() % n); }
  double Normal();

  std::vector<size_t> Permutation(size_t n);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Derives an independent seed from a base seed and a stream tag.
uint64_t MixSeed(uint64_t seed, uint64_t stream);

// 64-bit FNV-1a.
uint64_t Fnv1a(const void* data, size_t size, uint64_t hash = 14695981039346656037ULL);

std::string HexDigest(uint64_t value);

}  // namespace duopath

#endif  // DUOPATH_COMMON_H_
