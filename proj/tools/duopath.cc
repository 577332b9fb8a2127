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

// Command line front end: data preparation, the three training stages,
// synthesis and evaluation.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "duopath/corpus.h"
#include "duopath/evaluation.h"
#include "duopath/fixture.h"
#include "duopath/style_extractor.h"
#include "duopath/synthesis.h"
#include "duopath/training.h"
#include "json.hpp"

namespace {

namespace fs = std::filesystem;
using duopath::Config;
using duopath::Error;
using duopath::ErrorCode;
using nlohmann::json;

struct CommonOptions {
  std::string config;
  std::vector<std::string> overrides;

  Config Load() const {
    Config cfg = config.empty() ? Config() : Config::FromFile(config);
    for (const std::string& kv : overrides) {
      const size_t eq = kv.find('=');
      if (eq == std::string::npos || eq == 0) {
        throw Error(ErrorCode::kBadConfig, "--set expects KEY=VALUE, got " + kv);
      }
      cfg.Set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    return cfg;
  }
};

CLI::App* AddVerb(CLI::App& app, const std::string& name, const std::string& help,
                  CommonOptions& common) {
  CLI::App* sub = app.add_subcommand(name, help);
  sub->add_option("--config", common.config, "key = value configuration file");
  sub->add_option("--set", common.overrides, "configuration override KEY=VALUE")
      ->take_all();
  return sub;
}

void Print(const json& j) { std::cout << j.dump(2) << std::endl; }

std::vector<std::string> ReadLines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") != std::string::npos) out.push_back(line);
  }
  return out;
}

std::string StemOf(const std::string& wav) {
  const fs::path p(wav);
  return p.extension() == ".wav" ? (p.parent_path() / p.stem()).string() : wav;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"duopath: context-aware expressive speech synthesis"};
  app.require_subcommand(1);
  CommonOptions common;

  // make-fixture
  std::string fixture_out;
  duopath::FixtureOptions fixture_opts;
  auto* make_fixture = AddVerb(app, "make-fixture", "write the synthetic two-regime corpus",
                               common);
  make_fixture->add_option("--out", fixture_out, "output directory")->required();
  make_fixture->add_option("--documents", fixture_opts.documents);
  make_fixture->add_option("--sentences-per-document", fixture_opts.sentences_per_document);
  make_fixture->add_option("--seed", fixture_opts.seed);
  make_fixture->callback([&] {
    const auto s = duopath::MakeFixture(fixture_out, fixture_opts);
    Print({{"utterances", s.utterances},
           {"frames", s.frames},
           {"corpus_dir", s.corpus_dir},
           {"text", s.text_path},
           {"lexicon", s.lexicon_path},
           {"labels", s.labels_path},
           {"paragraph", s.paragraph_path}});
  });

  // prepare-data
  std::string corpus_dir, data_out;
  auto* prepare = AddVerb(app, "prepare-data", "extract features and write the manifest",
                          common);
  prepare->add_option("--corpus", corpus_dir, "corpus directory")->required();
  prepare->add_option("--out", data_out, "output directory")->required();
  prepare->callback([&] {
    const auto s = duopath::PrepareData(corpus_dir, data_out, common.Load());
    Print({{"utterances", s.utterances},
           {"total_frames", s.total_frames},
           {"adjusted_durations", s.adjusted_durations},
           {"uniform_durations", s.uniform_durations},
           {"manifest", s.manifest_path}});
  });

  // Training stages.
  duopath::StageInputs in;
  std::string ablation;
  auto add_resume = [&](CLI::App* sub) {
    sub->add_flag("--resume", in.resume, "continue from last.ckpt / last.optim");
    sub->add_option("--max-steps", in.max_steps, "stop after this many updates in total");
  };
  auto run_stage = [&](duopath::Stage stage) {
    Config cfg = common.Load();
    if (!ablation.empty()) cfg.Set("tts.ablation", ablation);
    const duopath::RunManifest m = duopath::RunStage(stage, cfg, in);
    Print(m.ToJson());
  };

  auto* stage1 = AddVerb(app, "pretrain-style-encoder",
                         "stage i: contrastive and clustering text style pre-training", common);
  stage1->add_option("--text", in.text_corpus, "one sentence per line")->required();
  stage1->add_option("--lexicon", in.lexicon, "emotion lexicon file");
  stage1->add_option("--out", in.out, "checkpoint path")->required();
  add_resume(stage1);
  stage1->callback([&] { run_stage(duopath::Stage::kTextStyle); });

  auto* stage2 = AddVerb(app, "pretrain-style-extractor",
                         "stage ii: VQ-VAE style extractor pre-training", common);
  stage2->add_option("--manifest", in.manifest)->required();
  stage2->add_option("--text-ckpt", in.text_ckpt)->required();
  stage2->add_option("--out", in.out, "checkpoint path")->required();
  add_resume(stage2);
  stage2->callback([&] { run_stage(duopath::Stage::kStyleExtractor); });

  auto* stage3 = AddVerb(app, "train-tts", "stage iii: acoustic model with frozen teachers",
                         common);
  stage3->add_option("--manifest", in.manifest)->required();
  stage3->add_option("--text-ckpt", in.text_ckpt)->required();
  stage3->add_option("--extractor-ckpt", in.extractor_ckpt)->required();
  stage3->add_option("--out", in.out, "run directory")->required();
  stage3->add_option("--ablation", ablation, "none|no_style_encoder|no_style_decoder|"
                                             "no_style_extractor");
  add_resume(stage3);
  stage3->callback([&] { run_stage(duopath::Stage::kTts); });

  // export-codes
  std::string codes_ckpt, codes_manifest, codes_out, codes_text;
  auto* export_codes = AddVerb(app, "export-codes", "dump per-utterance codebook indices",
                               common);
  export_codes->add_option("--ckpt", codes_ckpt, "style extractor checkpoint")->required();
  export_codes->add_option("--manifest", codes_manifest)->required();
  export_codes->add_option("--out", codes_out, "output directory")->required();
  export_codes->add_option("--text-ckpt", codes_text,
                           "text style checkpoint (default: from the extractor run)");
  export_codes->callback([&] {
    std::string text_path =
        codes_text.empty() ? duopath::TextCheckpointForExtractor(codes_ckpt) : codes_text;
    if (text_path.empty()) {
      throw Error(ErrorCode::kCheckpointMissing,
                  "pass --text-ckpt; the extractor run does not name one");
    }
    auto extractor = duopath::StyleExtractorModel::Load(codes_ckpt);
    extractor.SetFrozen(true);
    const auto text = duopath::TextStyleModel::Load(text_path);
    const int n = duopath::ExportCodes(extractor, duopath::ReadManifest(codes_manifest), text,
                                       codes_out);
    Print({{"utterances", n}, {"out", codes_out}});
  });

  // synthesize
  std::string syn_text, syn_context, ckpt_dir, syn_out;
  auto* synthesize = AddVerb(app, "synthesize", "text plus context to a wav file", common);
  synthesize->add_option("--text", syn_text)->required();
  synthesize->add_option("--context", syn_context,
                         "JSON {\"past\": [...], \"future\": [...]} or a 2k+1 array");
  synthesize->add_option("--ckpt-dir", ckpt_dir, "train-tts run directory")->required();
  synthesize->add_option("--out", syn_out, "output wav")->required();
  synthesize->callback([&] {
    const auto synth = duopath::Synthesizer::FromDir(ckpt_dir, common.Load());
    const duopath::SynthesisContext ctx =
        syn_context.empty() ? duopath::SynthesisContext() : duopath::ReadContextFile(syn_context);
    const auto window = duopath::MakeWindow(syn_text, ctx, synth.context_k());
    const std::string stem = StemOf(syn_out);
    const auto r = synth.SynthesizeToFiles(syn_text, window, stem);
    Print({{"wav", stem + ".wav"},
           {"features", stem + ".stb"},
           {"frames", r.acoustic.mel.rows()},
           {"phonemes", r.phonemes.size()}});
  });

  // synthesize-paragraph
  std::string sentences_file, par_out;
  bool no_concat = false;
  auto* paragraph = AddVerb(app, "synthesize-paragraph",
                            "one wav per sentence with sliding context windows", common);
  paragraph->add_option("--sentences", sentences_file, "one sentence per line")->required();
  paragraph->add_option("--ckpt-dir", ckpt_dir)->required();
  paragraph->add_option("--out-dir", par_out)->required();
  paragraph->add_flag("--no-concat", no_concat, "skip paragraph.wav");
  paragraph->callback([&] {
    const auto synth = duopath::Synthesizer::FromDir(ckpt_dir, common.Load());
    const auto paths = synth.SynthesizeParagraph(ReadLines(sentences_file), par_out, !no_concat);
    json j = {{"wavs", paths}};
    if (!no_concat) j["paragraph"] = (fs::path(par_out) / "paragraph.wav").string();
    Print(j);
  });

  // synthesize-manifest
  std::string man_path, man_out, man_split = "test";
  bool free_running = false;
  auto* from_manifest = AddVerb(app, "synthesize-manifest",
                                "synthesize manifest utterances for evaluation", common);
  from_manifest->add_option("--manifest", man_path)->required();
  from_manifest->add_option("--ckpt-dir", ckpt_dir)->required();
  from_manifest->add_option("--out-dir", man_out)->required();
  from_manifest->add_option("--split", man_split, "manifest split, empty for all");
  from_manifest->add_flag("--free-running", free_running,
                          "use predicted instead of reference durations");
  from_manifest->callback([&] {
    const auto synth = duopath::Synthesizer::FromDir(ckpt_dir, common.Load());
    const int n = duopath::SynthesizeManifest(synth, duopath::ReadManifest(man_path), man_out,
                                              man_split, !free_running);
    Print({{"utterances", n}, {"out_dir", man_out}, {"teacher_forced", !free_running}});
  });

  // evaluate
  std::string pred_dir, ref_manifest, report_out, eval_split = "test";
  auto* evaluate = AddVerb(app, "evaluate", "objective metrics against the references", common);
  evaluate->add_option("--pred-dir", pred_dir)->required();
  evaluate->add_option("--ref-manifest", ref_manifest)->required();
  evaluate->add_option("--out", report_out, "report csv")->required();
  evaluate->add_option("--split", eval_split, "manifest split, empty for all");
  evaluate->callback([&] {
    const auto report = duopath::EvaluateDir(pred_dir, ref_manifest, common.Load(), eval_split);
    duopath::WriteReportCsv(report_out, report);
    Print({{"report", report_out},
           {"utterances", report.rows.size()},
           {"f0_rmse", report.mean.f0_rmse},
           {"energy_rmse", report.mean.energy_rmse},
           {"duration_mse", report.mean.duration_mse},
           {"mcd", report.mean.mcd}});
  });

  // export-embeddings
  duopath::EmbeddingOptions emb;
  std::string emb_out;
  auto* embeddings = AddVerb(app, "export-embeddings",
                             "utterance style embeddings with a t-SNE scatter plot", common);
  embeddings->add_option("--ckpt", emb.extractor_ckpt, "style extractor checkpoint")->required();
  embeddings->add_option("--manifest", emb.manifest)->required();
  embeddings->add_option("--labels", emb.labels, "id<TAB>label file");
  embeddings->add_option("--text-ckpt", emb.text_ckpt);
  embeddings->add_option("--out", emb_out, "output directory")->required();
  embeddings->add_option("--perplexity", emb.tsne.perplexity);
  embeddings->add_option("--iterations", emb.tsne.iterations);
  embeddings->add_option("--seed", emb.tsne.seed);
  embeddings->callback([&] {
    const auto ex = duopath::ExportStyleEmbeddings(emb, emb_out);
    Print({{"out", emb_out},
           {"utterances", ex.ids.size()},
           {"intra_class_distance", ex.separability.intra},
           {"inter_class_distance", ex.separability.inter}});
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 3;
  }
  return 0;
}
