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

// Objective metrics against reference features and the style embedding
// export with a 2-D t-SNE projection.

#ifndef DUOPATH_EVALUATION_H_
#define DUOPATH_EVALUATION_H_

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "duopath/common.h"
#include "duopath/config.h"

namespace duopath {

// (10 / ln 10) * sqrt(2): cepstral distance in dB.
inline const double kMcdScale = 10.0 / std::log(10.0) * std::sqrt(2.0);

// RMSE over frames voiced (f0 > 0) in both inputs. Raises ShapeMismatch on
// a length mismatch and NoVoicedOverlap when no frame is voiced in both.
double F0Rmse(const Vector& pred, const Vector& ref);

// RMSE over all frames; ShapeMismatch on a length mismatch or empty input.
double EnergyRmse(const Vector& pred, const Vector& ref);

// Mean squared error of per-phoneme durations in seconds.
double DurationMse(const std::vector<double>& pred, const std::vector<double>& ref);

std::vector<double> FramesToSeconds(const std::vector<int>& frames, double frame_seconds);

// Cepstrum c1..c_order of each natural-log mel frame, scaled so that
// log S_m = c0 + 2 * sum_k c_k cos(pi k (m + 1/2) / M).
Matrix MelCepstrum(const Matrix& log_mel, int order = 13);

struct DtwAlignment {
  std::vector<std::pair<int, int>> path;
  double cost = 0.0;  // sum of Euclidean frame distances along the path
};

// Alignment from (0, 0) to (Ta-1, Tb-1) with unit steps, minimizing the
// summed distance and then the path length.
DtwAlignment Dtw(const Matrix& a, const Matrix& b);

// kMcdScale times the mean frame distance along the DTW path.
double Mcd(const Matrix& a, const Matrix& b);

struct EvalRow {
  std::string id;
  double f0_rmse = 0.0;
  double energy_rmse = 0.0;
  double duration_mse = 0.0;
  double mcd = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  EvalRow mean;  // id "mean"; NaN entries are left out of each column mean
};

// Compares <pred_dir>/<id>.stb and <id>.json with the reference features of
// every utterance in `split` (all utterances when the split is empty).
// F0 and energy use the predicted frames as they are (they must match the
// reference length, i.e. teacher-forced durations); duration MSE uses the
// json "predicted_durations" when present and "durations" otherwise.
EvalReport EvaluateDir(const std::string& pred_dir, const std::string& manifest_path,
                       const Config& cfg, const std::string& split = "test");

// id,f0_rmse,energy_rmse,duration_mse,mcd with a final "mean" row.
void WriteReportCsv(const std::string& path, const EvalReport& report);

struct TsneOptions {
  double perplexity = 30.0;  // clamped to (n - 1) / 3
  int iterations = 1000;
  int exaggeration_iterations = 250;
  double exaggeration = 12.0;
  double learning_rate = 200.0;
  uint64_t seed = 0;
};

// Exact t-SNE of the rows of `x` to two dimensions.
Matrix Tsne(const Matrix& x, const TsneOptions& opts);

struct SeparabilityStats {
  double intra = 0.0;  // mean distance between distinct same-label rows
  double inter = 0.0;  // mean distance between rows of different labels
};

SeparabilityStats Separability(const Matrix& x, const std::vector<std::string>& labels);

struct EmbeddingExport {
  std::vector<std::string> ids;
  std::vector<std::string> labels;
  Matrix embeddings;  // utterances x d_style, time-mean of the style codes
  Matrix projection;  // utterances x 2
  SeparabilityStats separability;
};

struct EmbeddingOptions {
  std::string extractor_ckpt;
  std::string manifest;
  // id<TAB>label per line; falls back to the manifest label field.
  std::string labels;
  // Text style checkpoint used for the extractor conditioning; when empty it
  // is taken from the extractor run manifest, else a zero style vector.
  std::string text_ckpt;
  TsneOptions tsne;
};

// Writes embeddings.csv (id,label,e0..), tsne.csv (id,label,x,y),
// tsne.svg and summary.json into `out_dir`.
EmbeddingExport ExportStyleEmbeddings(const EmbeddingOptions& opts, const std::string& out_dir);

// Scatter plot of 2-D points, one colour per distinct label.
std::string ScatterSvg(const Matrix& points, const std::vector<std::string>& labels,
                       const std::string& title);

}  // namespace duopath

#endif  // DUOPATH_EVALUATION_H_
