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

#include "duopath/evaluation.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "duopath/corpus.h"
#include "duopath/features.h"
#include "duopath/style_extractor.h"
#include "duopath/text_style.h"
#include "duopath/training.h"
#include "json.hpp"

namespace duopath {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void RequireSameLength(Eigen::Index a, Eigen::Index b, const char* what) {
  if (a != b) {
    throw Error(ErrorCode::kShapeMismatch, std::string(what) + " lengths differ: " +
                                               std::to_string(a) + " vs " + std::to_string(b));
  }
  if (a == 0) throw Error(ErrorCode::kShapeMismatch, std::string(what) + " is empty");
}

std::string FormatDouble(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

double F0Rmse(const Vector& pred, const Vector& ref) {
  RequireSameLength(pred.size(), ref.size(), "f0");
  double sum = 0.0;
  long n = 0;
  for (Eigen::Index t = 0; t < pred.size(); ++t) {
    if (pred[t] > 0.0 && ref[t] > 0.0) {
      const double d = pred[t] - ref[t];
      sum += d * d;
      ++n;
    }
  }
  if (n == 0) throw Error(ErrorCode::kNoVoicedOverlap, "no frame is voiced in both inputs");
  return std::sqrt(sum / n);
}

double EnergyRmse(const Vector& pred, const Vector& ref) {
  RequireSameLength(pred.size(), ref.size(), "energy");
  return std::sqrt((pred - ref).squaredNorm() / pred.size());
}

double DurationMse(const std::vector<double>& pred, const std::vector<double>& ref) {
  RequireSameLength(static_cast<Eigen::Index>(pred.size()),
                    static_cast<Eigen::Index>(ref.size()), "duration");
  double sum = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) sum += (pred[i] - ref[i]) * (pred[i] - ref[i]);
  return sum / pred.size();
}

std::vector<double> FramesToSeconds(const std::vector<int>& frames, double frame_seconds) {
  std::vector<double> out;
  out.reserve(frames.size());
  for (int f : frames) out.push_back(f * frame_seconds);
  return out;
}

Matrix MelCepstrum(const Matrix& log_mel, int order) {
  const Eigen::Index m = log_mel.cols();
  if (order < 1 || order >= m) {
    throw Error(ErrorCode::kShapeMismatch, "cepstral order must lie in [1, n_mels)");
  }
  Matrix basis(m, order);
  for (int k = 1; k <= order; ++k) {
    for (Eigen::Index n = 0; n < m; ++n) {
      basis(n, k - 1) = std::cos(M_PI * k * (2.0 * n + 1.0) / (2.0 * m));
    }
  }
  return log_mel * basis / static_cast<double>(m);
}

DtwAlignment Dtw(const Matrix& a, const Matrix& b) {
  const Eigen::Index ta = a.rows(), tb = b.rows();
  if (ta == 0 || tb == 0) throw Error(ErrorCode::kShapeMismatch, "empty DTW input");
  if (a.cols() != b.cols()) throw Error(ErrorCode::kShapeMismatch, "cepstral orders differ");
  const double inf = std::numeric_limits<double>::infinity();
  Matrix cost = Matrix::Constant(ta, tb, inf);
  Eigen::MatrixXi len = Eigen::MatrixXi::Zero(ta, tb);
  Eigen::MatrixXi from = Eigen::MatrixXi::Constant(ta, tb, -1);
  // Predecessor moves, preferred in this order on exact ties.
  const int di[3] = {1, 1, 0};
  const int dj[3] = {1, 0, 1};
  for (Eigen::Index i = 0; i < ta; ++i) {
    for (Eigen::Index j = 0; j < tb; ++j) {
      const double d = (a.row(i) - b.row(j)).norm();
      if (i == 0 && j == 0) {
        cost(0, 0) = d;
        len(0, 0) = 1;
        continue;
      }
      for (int s = 0; s < 3; ++s) {
        const Eigen::Index pi = i - di[s], pj = j - dj[s];
        if (pi < 0 || pj < 0) continue;
        const double c = cost(pi, pj) + d;
        const int l = len(pi, pj) + 1;
        if (c < cost(i, j) || (c == cost(i, j) && l < len(i, j))) {
          cost(i, j) = c;
          len(i, j) = l;
          from(i, j) = s;
        }
      }
    }
  }
  DtwAlignment out;
  out.cost = cost(ta - 1, tb - 1);
  Eigen::Index i = ta - 1, j = tb - 1;
  while (true) {
    out.path.emplace_back(static_cast<int>(i), static_cast<int>(j));
    if (i == 0 && j == 0) break;
    const int s = from(i, j);
    i -= di[s];
    j -= dj[s];
  }
  std::reverse(out.path.begin(), out.path.end());
  return out;
}

double Mcd(const Matrix& a, const Matrix& b) {
  const DtwAlignment al = Dtw(a, b);
  return kMcdScale * al.cost / static_cast<double>(al.path.size());
}

EvalReport EvaluateDir(const std::string& pred_dir, const std::string& manifest_path,
                       const Config& cfg, const std::string& split) {
  const Manifest manifest = ReadManifest(manifest_path);
  const FeatureConfig fc = FeatureConfig::FromConfig(cfg);
  const int order = cfg.GetInt("eval.mcd_order", 13);
  std::vector<const UtteranceRecord*> records = manifest.Split(split);
  if (records.empty()) records = manifest.Split("");
  EvalReport report;
  for (const UtteranceRecord* r : records) {
    const std::string stem = (fs::path(pred_dir) / r->id).string();
    if (!fs::exists(stem + ".stb") || !fs::exists(stem + ".json")) {
      throw Error(ErrorCode::kIoError, "missing prediction for " + r->id + " in " + pred_dir);
    }
    const AcousticFeatures pred = ReadFeatureCache(stem + ".stb", fc.low_band);
    const AcousticFeatures ref = ReadFeatureCache(manifest.FeaturePath(r->id), fc.low_band);
    std::ifstream in(stem + ".json");
    const json meta = json::parse(in);
    const std::vector<int> pred_dur =
        meta.contains("predicted_durations") ? meta["predicted_durations"].get<std::vector<int>>()
                                             : meta["durations"].get<std::vector<int>>();
    EvalRow row;
    row.id = r->id;
    try {
      row.f0_rmse = F0Rmse(pred.f0, ref.f0);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kNoVoicedOverlap) throw;
      row.f0_rmse = std::numeric_limits<double>::quiet_NaN();
    }
    row.energy_rmse = EnergyRmse(pred.energy, ref.energy);
    row.duration_mse = DurationMse(FramesToSeconds(pred_dur, fc.FrameSeconds()),
                                   FramesToSeconds(r->durations, fc.FrameSeconds()));
    row.mcd = Mcd(MelCepstrum(pred.mel, order), MelCepstrum(ref.mel, order));
    report.rows.push_back(row);
  }
  report.mean.id = "mean";
  double EvalRow::*columns[] = {&EvalRow::f0_rmse, &EvalRow::energy_rmse,
                                &EvalRow::duration_mse, &EvalRow::mcd};
  for (auto col : columns) {
    double sum = 0.0;
    int n = 0;
    for (const EvalRow& row : report.rows) {
      if (std::isnan(row.*col)) continue;
      sum += row.*col;
      ++n;
    }
    report.mean.*col = n ? sum / n : std::numeric_limits<double>::quiet_NaN();
  }
  return report;
}

void WriteReportCsv(const std::string& path, const EvalReport& report) {
  if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path);
  out << "id,f0_rmse,energy_rmse,duration_mse,mcd\n";
  auto write = [&](const EvalRow& r) {
    out << r.id << ',' << FormatDouble(r.f0_rmse) << ',' << FormatDouble(r.energy_rmse) << ','
        << FormatDouble(r.duration_mse) << ',' << FormatDouble(r.mcd) << '\n';
  };
  for (const EvalRow& r : report.rows) write(r);
  write(report.mean);
}

namespace {

// Conditional probabilities of row i with the precision found by bisection
// so that the entropy matches log(perplexity).
void ConditionalRow(const Matrix& d2, Eigen::Index i, double log_perp, Matrix* p) {
  const Eigen::Index n = d2.rows();
  double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
  for (int it = 0; it < 100; ++it) {
    double sum = 0.0, weighted = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) {
        (*p)(i, j) = 0.0;
        continue;
      }
      (*p)(i, j) = std::exp(-d2(i, j) * beta);
      sum += (*p)(i, j);
      weighted += d2(i, j) * (*p)(i, j);
    }
    if (sum <= 0.0) sum = 1e-300;
    const double entropy = std::log(sum) + beta * weighted / sum;
    p->row(i) /= sum;
    const double diff = entropy - log_perp;
    if (std::abs(diff) < 1e-5) break;
    if (diff > 0.0) {
      lo = beta;
      beta = std::isinf(hi) ? beta * 2.0 : (beta + hi) / 2.0;
    } else {
      hi = beta;
      beta = (beta + lo) / 2.0;
    }
  }
}

}  // namespace

Matrix Tsne(const Matrix& x, const TsneOptions& opts) {
  const Eigen::Index n = x.rows();
  Matrix y = Matrix::Zero(n, 2);
  if (n < 2) return y;
  Matrix d2(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) d2(i, j) = (x.row(i) - x.row(j)).squaredNorm();
  }
  const double perp = std::max(1.0, std::min(opts.perplexity, (n - 1) / 3.0));
  Matrix p(n, n);
  for (Eigen::Index i = 0; i < n; ++i) ConditionalRow(d2, i, std::log(perp), &p);
  p = (p + p.transpose()) / (2.0 * n);
  p = p.cwiseMax(1e-12);

  Rng rng(opts.seed);
  for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] = 1e-4 * rng.Normal();
  Matrix update = Matrix::Zero(n, 2);
  Matrix gains = Matrix::Ones(n, 2);
  Matrix num(n, n), grad(n, 2);
  for (int it = 0; it < opts.iterations; ++it) {
    const double exaggeration = it < opts.exaggeration_iterations ? opts.exaggeration : 1.0;
    const double momentum = it < opts.exaggeration_iterations ? 0.5 : 0.8;
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        num(i, j) = i == j ? 0.0 : 1.0 / (1.0 + (y.row(i) - y.row(j)).squaredNorm());
        total += num(i, j);
      }
    }
    grad.setZero();
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        if (i == j) continue;
        const double q = std::max(num(i, j) / total, 1e-12);
        grad.row(i) += 4.0 * (exaggeration * p(i, j) - q) * num(i, j) * (y.row(i) - y.row(j));
      }
    }
    for (Eigen::Index k = 0; k < grad.size(); ++k) {
      double& g = gains.data()[k];
      const bool same_sign = (grad.data()[k] > 0.0) == (update.data()[k] > 0.0);
      g = same_sign ? std::max(g * 0.8, 0.01) : g + 0.2;
      update.data()[k] = momentum * update.data()[k] - opts.learning_rate * g * grad.data()[k];
    }
    y += update;
    y.rowwise() -= y.colwise().mean();
  }
  return y;
}

SeparabilityStats Separability(const Matrix& x, const std::vector<std::string>& labels) {
  if (static_cast<Eigen::Index>(labels.size()) != x.rows()) {
    throw Error(ErrorCode::kShapeMismatch, "one label per embedding row is required");
  }
  SeparabilityStats s;
  double intra = 0.0, inter = 0.0;
  long n_intra = 0, n_inter = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < x.rows(); ++j) {
      const double d = (x.row(i) - x.row(j)).norm();
      if (labels[i] == labels[j]) {
        intra += d;
        ++n_intra;
      } else {
        inter += d;
        ++n_inter;
      }
    }
  }
  s.intra = n_intra ? intra / n_intra : 0.0;
  s.inter = n_inter ? inter / n_inter : 0.0;
  return s;
}

namespace {

std::string XmlEscape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::map<std::string, std::string> ReadLabels(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open labels " + path);
  std::map<std::string, std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const size_t tab = line.find('\t');
    if (tab == std::string::npos) continue;
    out[line.substr(0, tab)] = line.substr(tab + 1);
  }
  return out;
}

}  // namespace

std::string ScatterSvg(const Matrix& points, const std::vector<std::string>& labels,
                       const std::string& title) {
  static const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                   "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  const double w = 640, h = 480, margin = 40;
  std::vector<std::string> distinct;
  for (const auto& l : labels) {
    if (std::find(distinct.begin(), distinct.end(), l) == distinct.end()) distinct.push_back(l);
  }
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (points.rows() > 0) {
    x0 = points.col(0).minCoeff();
    x1 = points.col(0).maxCoeff();
    y0 = points.col(1).minCoeff();
    y1 = points.col(1).maxCoeff();
  }
  const double sx = (w - 2 * margin) / std::max(x1 - x0, 1e-12);
  const double sy = (h - 2 * margin) / std::max(y1 - y0, 1e-12);
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
      << "\" viewBox=\"0 0 " << w << ' ' << h << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << margin << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">"
      << XmlEscape(title) << "</text>\n";
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const size_t c = labels.empty() ? 0
                                    : std::find(distinct.begin(), distinct.end(), labels[i]) -
                                          distinct.begin();
    svg << "<circle cx=\"" << FormatDouble(margin + (points(i, 0) - x0) * sx) << "\" cy=\""
        << FormatDouble(h - margin - (points(i, 1) - y0) * sy) << "\" r=\"4\" fill=\""
        << kPalette[c % 10] << "\" fill-opacity=\"0.8\"/>\n";
  }
  for (size_t c = 0; c < distinct.size(); ++c) {
    const double y = margin + 16.0 * c;
    svg << "<circle cx=\"" << w - 120 << "\" cy=\"" << y << "\" r=\"4\" fill=\""
        << kPalette[c % 10] << "\"/>\n"
        << "<text x=\"" << w - 110 << "\" y=\"" << y + 4
        << "\" font-family=\"sans-serif\" font-size=\"12\">"
        << XmlEscape(distinct[c].empty() ? "(none)" : distinct[c]) << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

EmbeddingExport ExportStyleEmbeddings(const EmbeddingOptions& opts, const std::string& out_dir) {
  if (!fs::exists(opts.extractor_ckpt)) {
    throw Error(ErrorCode::kCheckpointMissing, "no extractor checkpoint " + opts.extractor_ckpt);
  }
  StyleExtractorModel extractor = StyleExtractorModel::Load(opts.extractor_ckpt);
  extractor.SetFrozen(true);
  const std::string text_path =
      opts.text_ckpt.empty() ? TextCheckpointForExtractor(opts.extractor_ckpt) : opts.text_ckpt;
  std::unique_ptr<TextStyleModel> text;
  if (!text_path.empty()) text = std::make_unique<TextStyleModel>(TextStyleModel::Load(text_path));
  const Manifest manifest = ReadManifest(opts.manifest);
  const ProsodyStats stats = ReadStats(manifest.StatsPath());
  std::map<std::string, std::string> label_map;
  if (!opts.labels.empty()) label_map = ReadLabels(opts.labels);

  const int d = extractor.config().d_style;
  EmbeddingExport ex;
  ex.embeddings.resize(static_cast<Eigen::Index>(manifest.records().size()), d);
  for (const UtteranceRecord& r : manifest.records()) {
    const AcousticFeatures f = ReadFeatureCache(manifest.FeaturePath(r.id),
                                                extractor.config().low_band);
    const NormalizedProsody p = NormalizeProsody(f, stats, r.speaker_id);
    const RowVector h_s = text ? text->EncodeStyle(r.text) : RowVector(RowVector::Zero(d));
    const Matrix h_se = extractor.ExtractStyle(f.mel20, p.f0, p.energy, h_s);
    ex.embeddings.row(static_cast<Eigen::Index>(ex.ids.size())) = h_se.colwise().mean();
    ex.ids.push_back(r.id);
    const auto it = label_map.find(r.id);
    ex.labels.push_back(it != label_map.end() ? it->second : r.label);
  }
  ex.projection = Tsne(ex.embeddings, opts.tsne);
  ex.separability = Separability(ex.embeddings, ex.labels);

  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  std::ofstream emb(dir / "embeddings.csv");
  emb << "id,label";
  for (int k = 0; k < d; ++k) emb << ",e" << k;
  emb << '\n';
  std::ofstream proj(dir / "tsne.csv");
  proj << "id,label,x,y\n";
  for (size_t i = 0; i < ex.ids.size(); ++i) {
    emb << ex.ids[i] << ',' << ex.labels[i];
    for (int k = 0; k < d; ++k) emb << ',' << FormatDouble(ex.embeddings(i, k));
    emb << '\n';
    proj << ex.ids[i] << ',' << ex.labels[i] << ',' << FormatDouble(ex.projection(i, 0)) << ','
         << FormatDouble(ex.projection(i, 1)) << '\n';
  }
  std::ofstream(dir / "tsne.svg") << ScatterSvg(ex.projection, ex.labels,
                                                "t-SNE of utterance style embeddings");
  json summary = {{"utterances", ex.ids.size()},
                  {"d_style", d},
                  {"text_ckpt", text_path.empty() ? json(nullptr) : json(text_path)},
                  {"tsne_seed", opts.tsne.seed},
                  {"tsne_perplexity", opts.tsne.perplexity},
                  {"intra_class_distance", ex.separability.intra},
                  {"inter_class_distance", ex.separability.inter}};
  std::ofstream(dir / "summary.json") << summary.dump(2) << '\n';
  return ex;
}

}  // namespace duopath
