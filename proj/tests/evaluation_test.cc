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

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>

#include "duopath/evaluation.h"
#include "duopath/style_extractor.h"
#include "fixture_util.h"

namespace duopath {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using testing::PreparedFixture;
using testing::RandomMatrix;
using testing::TempDir;

ErrorCode CodeOf(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no duopath::Error raised";
  return ErrorCode::kNumericalError;
}

// Independent reference implementations written from the metric
// definitions with plain loops.
double BruteRmse(const std::vector<double>& a, const std::vector<double>& b, bool voiced_only) {
  double s = 0.0;
  int n = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    if (voiced_only && !(a[i] > 0 && b[i] > 0)) continue;
    s += std::pow(a[i] - b[i], 2);
    n += 1;
  }
  return std::sqrt(s / n);
}

double FrameDistance(const Matrix& a, int i, const Matrix& b, int j) {
  double s = 0.0;
  for (int k = 0; k < a.cols(); ++k) s += std::pow(a(i, k) - b(j, k), 2);
  return std::sqrt(s);
}

// Exhaustive search over every monotone path: the best (cost, length) pair.
void Enumerate(const Matrix& a, const Matrix& b, int i, int j, double cost, int len,
               double* best_cost, int* best_len) {
  cost += FrameDistance(a, i, b, j);
  len += 1;
  if (i == a.rows() - 1 && j == b.rows() - 1) {
    if (cost < *best_cost - 1e-12 || (std::abs(cost - *best_cost) <= 1e-12 && len < *best_len)) {
      *best_cost = cost;
      *best_len = len;
    }
    return;
  }
  if (i + 1 < a.rows()) Enumerate(a, b, i + 1, j, cost, len, best_cost, best_len);
  if (j + 1 < b.rows()) Enumerate(a, b, i, j + 1, cost, len, best_cost, best_len);
  if (i + 1 < a.rows() && j + 1 < b.rows()) {
    Enumerate(a, b, i + 1, j + 1, cost, len, best_cost, best_len);
  }
}

double BruteMcd(const Matrix& a, const Matrix& b) {
  double best_cost = std::numeric_limits<double>::infinity();
  int best_len = 0;
  Enumerate(a, b, 0, 0, 0.0, 0, &best_cost, &best_len);
  return 10.0 / std::log(10.0) * std::sqrt(2.0) * best_cost / best_len;
}

Vector ToVector(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

TEST(MetricTest, F0RmseExamples) {
  const Vector ref = ToVector({0, 120, 130, 0, 140});
  EXPECT_EQ(F0Rmse(ref, ref), 0.0);
  const Vector shifted = ToVector({0, 130, 140, 0, 150});
  EXPECT_NEAR(F0Rmse(shifted, ref), 10.0, 1e-12);
  // Frames voiced in only one input do not count.
  const Vector partial = ToVector({200, 130, 140, 90, 0});
  EXPECT_NEAR(F0Rmse(partial, ref), 10.0, 1e-12);
  EXPECT_EQ(CodeOf([&] { F0Rmse(ToVector({0, 0, 100}), ToVector({100, 0, 0})); }),
            ErrorCode::kNoVoicedOverlap);
  EXPECT_EQ(CodeOf([&] { F0Rmse(ref, ref.head(3)); }), ErrorCode::kShapeMismatch);
}

TEST(MetricTest, EnergyAndDurationExamples) {
  const Vector ones = Vector::Ones(6);
  EXPECT_EQ(EnergyRmse(ones, ones), 0.0);
  EXPECT_NEAR(EnergyRmse(2.0 * ones, ones), 1.0, 1e-15);
  EXPECT_EQ(CodeOf([&] { EnergyRmse(ones, Vector::Ones(5)); }), ErrorCode::kShapeMismatch);
  const std::vector<double> ref = {0.1, 0.2, 0.05};
  EXPECT_EQ(DurationMse(ref, ref), 0.0);
  EXPECT_NEAR(DurationMse({0.2, 0.3, 0.15}, ref), 0.01, 1e-15);
  EXPECT_EQ(CodeOf([&] { DurationMse({0.1}, ref); }), ErrorCode::kShapeMismatch);
  const auto secs = FramesToSeconds({1, 2, 10}, 240.0 / 16000.0);
  EXPECT_DOUBLE_EQ(secs[0], 0.015);
  EXPECT_DOUBLE_EQ(secs[2], 0.15);
}

TEST(MetricTest, RandomInputsMatchBruteForce) {
  Rng rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + static_cast<int>(rng.Index(12));
    std::vector<double> a(n), b(n);
    for (int i = 0; i < n; ++i) {
      a[i] = rng.Uniform() < 0.3 ? 0.0 : rng.Uniform(80, 300);
      b[i] = rng.Uniform() < 0.3 ? 0.0 : rng.Uniform(80, 300);
    }
    a[0] = b[0] = 150.0 + trial;
    EXPECT_NEAR(F0Rmse(ToVector(a), ToVector(b)), BruteRmse(a, b, true), 1e-9);
    EXPECT_NEAR(EnergyRmse(ToVector(a), ToVector(b)), BruteRmse(a, b, false), 1e-9);
    EXPECT_DOUBLE_EQ(EnergyRmse(ToVector(a), ToVector(b)), EnergyRmse(ToVector(b), ToVector(a)));
    double mse = 0.0;
    for (int i = 0; i < n; ++i) mse += (a[i] - b[i]) * (a[i] - b[i]) / n;
    EXPECT_NEAR(DurationMse(a, b), mse, 1e-9 * std::max(1.0, mse));
  }
}

TEST(McdTest, ClosedFormAndIdentity) {
  Matrix a = Matrix::Zero(1, 1);
  Matrix b = Matrix::Constant(1, 1, 0.7);
  EXPECT_DOUBLE_EQ(Mcd(a, b), 10.0 / std::log(10.0) * std::sqrt(2.0) * 0.7);
  Matrix c = Matrix::Zero(1, 13);
  Matrix d = c;
  d(0, 4) = -0.3;
  EXPECT_DOUBLE_EQ(Mcd(c, d), kMcdScale * 0.3);
  Rng rng(3);
  const Matrix x = RandomMatrix(9, 13, rng);
  EXPECT_EQ(Mcd(x, x), 0.0);
  EXPECT_EQ(CodeOf([&] { Mcd(Matrix(0, 13), x); }), ErrorCode::kShapeMismatch);
  EXPECT_EQ(CodeOf([&] { Mcd(x, x.leftCols(12)); }), ErrorCode::kShapeMismatch);
}

TEST(McdTest, MatchesExhaustivePathSearch) {
  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix a = RandomMatrix(5, 3, rng);
    const Matrix b = RandomMatrix(5, 3, rng);
    EXPECT_NEAR(Mcd(a, b), BruteMcd(a, b), 1e-9);
  }
  for (int trial = 0; trial < 30; ++trial) {
    const Matrix a = RandomMatrix(1 + rng.Index(6), 3, rng);
    const Matrix b = RandomMatrix(1 + rng.Index(6), 3, rng);
    EXPECT_NEAR(Mcd(a, b), BruteMcd(a, b), 1e-9);
  }
}

TEST(McdTest, SymmetricNonNegativeAndPathValid) {
  Rng rng(29);
  for (int trial = 0; trial < 40; ++trial) {
    const Matrix a = RandomMatrix(2 + rng.Index(20), 13, rng);
    const Matrix b = RandomMatrix(2 + rng.Index(20), 13, rng);
    const double ab = Mcd(a, b);
    EXPECT_GT(ab, 0.0);
    EXPECT_NEAR(ab, Mcd(b, a), 1e-12);
    const DtwAlignment al = Dtw(a, b);
    ASSERT_FALSE(al.path.empty());
    EXPECT_EQ(al.path.front(), std::make_pair(0, 0));
    EXPECT_EQ(al.path.back(), std::make_pair(static_cast<int>(a.rows() - 1),
                                             static_cast<int>(b.rows() - 1)));
    double cost = 0.0;
    for (size_t s = 0; s < al.path.size(); ++s) {
      cost += (a.row(al.path[s].first) - b.row(al.path[s].second)).norm();
      if (s == 0) continue;
      const int di = al.path[s].first - al.path[s - 1].first;
      const int dj = al.path[s].second - al.path[s - 1].second;
      EXPECT_TRUE((di == 1 || di == 0) && (dj == 1 || dj == 0) && di + dj > 0);
    }
    EXPECT_NEAR(cost, al.cost, 1e-9);
  }
}

TEST(MelCepstrumTest, CosineExpansionScaling) {
  const int m = 80;
  // Constant spectra carry no energy above c0.
  EXPECT_LT(MelCepstrum(Matrix::Constant(3, m, 2.5)).cwiseAbs().maxCoeff(), 1e-12);
  // A frame built as c0 + 2 * sum c_k cos(.) gives back c_1..c_13 exactly.
  Rng rng(2);
  const Matrix truth = RandomMatrix(4, 13, rng);
  Matrix frames = Matrix::Constant(4, m, 1.7);
  for (int r = 0; r < 4; ++r) {
    for (int n = 0; n < m; ++n) {
      for (int k = 1; k <= 13; ++k) {
        frames(r, n) += 2.0 * truth(r, k - 1) * std::cos(M_PI * k * (n + 0.5) / m);
      }
    }
  }
  const Matrix c = MelCepstrum(frames, 13);
  ASSERT_EQ(c.cols(), 13);
  EXPECT_LT((c - truth).cwiseAbs().maxCoeff(), 1e-12);
  // A cosine of amplitude a lands on a single coefficient a / 2.
  Matrix frame(1, m);
  for (int n = 0; n < m; ++n) frame(0, n) = 0.4 * std::cos(M_PI * 3 * (n + 0.5) / m);
  const Matrix one = MelCepstrum(frame, 13);
  for (int k = 0; k < 13; ++k) EXPECT_NEAR(one(0, k), k == 2 ? 0.2 : 0.0, 1e-12);
  EXPECT_EQ(CodeOf([&] { MelCepstrum(frame, m); }), ErrorCode::kShapeMismatch);
}

TEST(TsneTest, SeededAndSeparatesClusters) {
  Rng rng(4);
  Matrix x = RandomMatrix(30, 8, rng, 0.1);
  std::vector<std::string> labels;
  for (int i = 0; i < 30; ++i) {
    if (i >= 15) x.row(i).array() += 3.0;
    labels.push_back(i < 15 ? "a" : "b");
  }
  TsneOptions opts;
  opts.seed = 9;
  opts.iterations = 400;
  const Matrix y1 = Tsne(x, opts);
  const Matrix y2 = Tsne(x, opts);
  EXPECT_EQ(y1, y2);
  ASSERT_EQ(y1.rows(), 30);
  ASSERT_EQ(y1.cols(), 2);
  const SeparabilityStats s = Separability(y1, labels);
  EXPECT_GT(s.inter, 2.0 * s.intra);
  opts.seed = 10;
  EXPECT_NE(Tsne(x, opts), y1);
  EXPECT_EQ(Tsne(x.topRows(1), opts), Matrix::Zero(1, 2));
}

TEST(SeparabilityTest, HandComputed) {
  Matrix x(4, 1);
  x << 0, 1, 10, 12;
  const SeparabilityStats s = Separability(x, {"a", "a", "b", "b"});
  EXPECT_DOUBLE_EQ(s.intra, 1.5);
  EXPECT_DOUBLE_EQ(s.inter, (10 + 12 + 9 + 11) / 4.0);
  EXPECT_EQ(CodeOf([&] { Separability(x, {"a"}); }), ErrorCode::kShapeMismatch);
}

TEST(SvgTest, OneMarkerPerPointPlusLegend) {
  Matrix p(3, 2);
  p << 0, 0, 1, 2, -1, 5;
  const std::string svg = ScatterSvg(p, {"x", "y", "x"}, "a <title>");
  size_t circles = 0;
  for (size_t pos = svg.find("<circle"); pos != std::string::npos;
       pos = svg.find("<circle", pos + 1)) {
    ++circles;
  }
  EXPECT_EQ(circles, 3u + 2u);
  EXPECT_NE(svg.find("a &lt;title&gt;"), std::string::npos);
  EXPECT_EQ(svg.rfind("</svg>"), svg.size() - 7);
}

// Predictions built from the reference features themselves.
void WritePredictions(const Manifest& manifest, const std::string& dir, double energy_shift,
                      int duration_shift) {
  fs::create_directories(dir);
  for (const UtteranceRecord* r : manifest.Split("test")) {
    AcousticFeatures f = ReadFeatureCache(manifest.FeaturePath(r->id));
    f.energy.array() += energy_shift;
    WriteFeatureCache(dir + "/" + r->id + ".stb", f);
    std::vector<int> d = r->durations;
    for (int& v : d) v += duration_shift;
    std::ofstream(dir + "/" + r->id + ".json") << json{{"durations", r->durations},
                                                        {"predicted_durations", d}}.dump();
  }
}

TEST(EvaluateDirTest, PerUtteranceRowsAndMeans) {
  const auto& fx = PreparedFixture::Get();
  const Config cfg = testing::FixtureConfig();
  const std::string manifest = fx.data_dir + "/manifest.jsonl";
  TempDir dir("eval");
  WritePredictions(fx.manifest, dir / "same", 0.0, 0);
  const EvalReport same = EvaluateDir(dir / "same", manifest, cfg);
  ASSERT_EQ(same.rows.size(), fx.manifest.Split("test").size());
  ASSERT_FALSE(same.rows.empty());
  for (const EvalRow& r : same.rows) {
    EXPECT_EQ(r.f0_rmse, 0.0);
    EXPECT_EQ(r.energy_rmse, 0.0);
    EXPECT_EQ(r.duration_mse, 0.0);
    EXPECT_EQ(r.mcd, 0.0);
  }

  WritePredictions(fx.manifest, dir / "off", 0.5, 2);
  const EvalReport off = EvaluateDir(dir / "off", manifest, cfg);
  double mean_dur = 0.0;
  for (const EvalRow& r : off.rows) {
    EXPECT_NEAR(r.energy_rmse, 0.5, 1e-6);  // float32 cache
    EXPECT_NEAR(r.duration_mse, 0.03 * 0.03, 1e-15);
    EXPECT_EQ(r.f0_rmse, 0.0);
    mean_dur += r.duration_mse / off.rows.size();
  }
  EXPECT_EQ(off.mean.id, "mean");
  EXPECT_NEAR(off.mean.duration_mse, mean_dur, 1e-15);

  WriteReportCsv(dir / "report.csv", off);
  std::ifstream in(dir / "report.csv");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "id,f0_rmse,energy_rmse,duration_mse,mcd");
  size_t rows = 0;
  std::string last;
  while (std::getline(in, line)) {
    ++rows;
    last = line;
  }
  EXPECT_EQ(rows, off.rows.size() + 1);
  EXPECT_EQ(last.rfind("mean,", 0), 0u);
  WriteReportCsv(dir / "again.csv", EvaluateDir(dir / "off", manifest, cfg));
  std::ifstream a(dir / "report.csv"), b(dir / "again.csv");
  EXPECT_EQ(std::string(std::istreambuf_iterator<char>(a), {}),
            std::string(std::istreambuf_iterator<char>(b), {}));

  fs::remove(dir / ("off/" + off.rows.front().id + ".stb"));
  EXPECT_EQ(CodeOf([&] { EvaluateDir(dir / "off", manifest, cfg); }), ErrorCode::kIoError);
}

TEST(EmbeddingExportTest, CsvShapeAndSeededProjection) {
  const auto& fx = PreparedFixture::Get();
  const Config cfg = testing::FixtureConfig();
  TempDir dir("embed");
  StyleExtractorModel extractor(StyleExtractorConfig::FromConfig(cfg), fx.manifest.speakers(), 5);
  extractor.Save(dir / "extractor.ckpt");
  EmbeddingOptions opts;
  opts.extractor_ckpt = dir / "extractor.ckpt";
  opts.manifest = fx.data_dir + "/manifest.jsonl";
  opts.labels = fx.summary.labels_path;
  opts.tsne.seed = 3;
  opts.tsne.iterations = 300;
  const EmbeddingExport ex = ExportStyleEmbeddings(opts, dir / "out");
  const size_t n = fx.manifest.records().size();
  const int d = extractor.config().d_style;
  ASSERT_EQ(ex.ids.size(), n);
  EXPECT_EQ(ex.embeddings.rows(), static_cast<Eigen::Index>(n));
  EXPECT_EQ(ex.embeddings.cols(), d);

  std::ifstream in(dir / "out/embeddings.csv");
  std::string line;
  size_t rows = 0;
  bool header = true;
  while (std::getline(in, line)) {
    const size_t cols = std::count(line.begin(), line.end(), ',') + 1;
    EXPECT_EQ(cols, static_cast<size_t>(2 + d));
    if (header) {
      EXPECT_EQ(line.rfind("id,label,e0,e1,", 0), 0u);
      header = false;
    } else {
      ++rows;
    }
  }
  EXPECT_EQ(rows, n);
  EXPECT_TRUE(fs::exists(dir / "out/tsne.svg"));
  EXPECT_TRUE(fs::exists(dir / "out/summary.json"));
  for (const auto& label : ex.labels) EXPECT_TRUE(label == "calm" || label == "excited");

  const EmbeddingExport again = ExportStyleEmbeddings(opts, dir / "out2");
  EXPECT_EQ(again.projection, ex.projection);
  std::ifstream t1(dir / "out/tsne.csv"), t2(dir / "out2/tsne.csv");
  EXPECT_EQ(std::string(std::istreambuf_iterator<char>(t1), {}),
            std::string(std::istreambuf_iterator<char>(t2), {}));
}

}  // namespace
}  // namespace duopath
