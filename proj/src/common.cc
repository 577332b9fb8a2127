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

#include "duopath/common.h"

#include <cmath>
#include <cstdio>
#include <numeric>

namespace duopath {

const char* ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kEmptyAudio: return "EmptyAudio";
    case ErrorCode::kSampleRateMismatch: return "SampleRateMismatch";
    case ErrorCode::kInvalidAudio: return "InvalidAudio";
    case ErrorCode::kUnknownUtterance: return "UnknownUtterance";
    case ErrorCode::kAlignmentMismatch: return "AlignmentMismatch";
    case ErrorCode::kBadWindow: return "BadWindow";
    case ErrorCode::kEmptyCorpus: return "EmptyCorpus";
    case ErrorCode::kContrastiveBatchTooSmall: return "ContrastiveBatchTooSmall";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kUnknownPhoneme: return "UnknownPhoneme";
    case ErrorCode::kEmptyExpansion: return "EmptyExpansion";
    case ErrorCode::kMissingTargets: return "MissingTargets";
    case ErrorCode::kFrozenContractViolation: return "FrozenContractViolation";
    case ErrorCode::kCheckpointMissing: return "CheckpointMissing";
    case ErrorCode::kBadCheckpoint: return "BadCheckpoint";
    case ErrorCode::kStageOrderViolation: return "StageOrderViolation";
    case ErrorCode::kPhonemizeError: return "PhonemizeError";
    case ErrorCode::kNoVoicedOverlap: return "NoVoicedOverlap";
    case ErrorCode::kBadConfig: return "BadConfig";
    case ErrorCode::kBadManifest: return "BadManifest";
    case ErrorCode::kBadLexicon: return "BadLexicon";
    case ErrorCode::kIoError: return "IoError";
    case ErrorCode::kNumericalError: return "NumericalError";
  }
  return "Unknown";
}

double Rng::Normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u, v, s;
  do {
    u = Uniform(-1.0, 1.0);
    v = Uniform(-1.0, 1.0);
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double m = std::sqrt(-2.0 * std::log(s) / s);
  spare_ = v * m;
  has_spare_ = true;
  return u * m;
}

std::vector<size_t> Rng::Permutation(size_t n) {
  std::vector<size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  for (size_t i = n; i > 1; --i) {
    std::swap(perm[i - 1], perm[Index(i)]);
  }
  return perm;
}

uint64_t MixSeed(uint64_t seed, uint64_t stream) {
  // splitmix64 finalizer
  uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

uint64_t Fnv1a(const void* data, size_t size, uint64_t hash) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < size; ++i) {
    hash ^= bytes[i];
    hash *= 1099511628211ULL;
  }
  return hash;
}

std::string HexDigest(uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(value));
  return buf;
}

}  // namespace duopath
