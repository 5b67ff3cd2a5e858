// signkit: command-line front end for the pose-sequence sign language
// recognition toolkit. Subcommands: synth, train, eval, occlude, analyze.
// Exit codes: 0 success, 1 data/runtime error, 2 usage error.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "signkit/dataset.hpp"
#include "signkit/diagnostics.hpp"
#include "signkit/features.hpp"
#include "signkit/io_util.hpp"
#include "signkit/models.hpp"
#include "signkit/synthetic.hpp"
#include "signkit/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct SynthArgs {
  std::string out;
  int classes = 10;
  int samples = 50;
  int signers = 6;
  std::uint64_t seed = 7;
  double noise = 0.008;
  int frames_min = 16;
  int frames_max = 24;
};

int run_synth(const SynthArgs& a) {
  signkit::synth::SynthesisConfig cfg;
  cfg.classes = a.classes;
  cfg.samples_per_class = a.samples;
  cfg.signers = signkit::synth::default_signers(a.signers, a.noise, a.seed);
  cfg.frames_min = a.frames_min;
  cfg.frames_max = a.frames_max;
  cfg.seed = a.seed;
  const auto samples = signkit::synth::generate_dataset(cfg);
  const std::string manifest = signkit::save_dataset(a.out, samples);
  std::printf("wrote %zu samples, manifest %s\n", samples.size(),
              manifest.c_str());
  return 0;
}

struct TrainArgs {
  std::string manifest;
  std::string model;
  std::string out;
  int epochs = 30;
  int batch = 512;
  double lr = 1e-3;
  std::uint64_t seed = 7;
  std::string flip = "all";
  double train_fraction = 0.8;
  // bilstm dims
  int projection_dim = 512;
  int lstm_hidden = 256;
  int lstm_layers = 2;
  double dropout = 0.2;
  // transformer dims
  int d_model = 128;
  int heads = 8;
  int blocks = 2;
  int ff_dim = 256;
  double tf_dropout = 0.1;
  int beam_width = 5;
};

signkit::train::FlipMode parse_flip(const std::string& s) {
  if (s == "all") return signkit::train::FlipMode::All;
  if (s == "left-handed") return signkit::train::FlipMode::DetectedLeftHanded;
  return signkit::train::FlipMode::Off;
}

void write_history(const std::string& path,
                   const std::vector<signkit::train::HistoryRecord>& history) {
  std::ostringstream out;
  for (const auto& h : history) {
    json j = {{"epoch", h.epoch},
              {"split", h.split},
              {"loss", h.loss},
              {"accuracy", h.accuracy}};
    out << j.dump() << "\n";
  }
  signkit::write_file_text(path, out.str());
}

int run_train(const TrainArgs& a) {
  const auto dataset = signkit::load_dataset(a.manifest);
  if (dataset.empty()) throw signkit::EmptyDataset("manifest lists no samples");
  int classes = 0;
  for (const auto& s : dataset) {
    if (s.label < 0)
      throw signkit::LabelOutOfRange("sample " + s.sample_id +
                                     " has negative label");
    classes = std::max(classes, s.label + 1);
  }

  const auto split =
      signkit::signer_disjoint_split(dataset, a.train_fraction, a.seed);
  const auto& mirror = signkit::default_layout().mirror;
  const signkit::train::FlipMode flip = parse_flip(a.flip);
  const bool need_flip = flip != signkit::train::FlipMode::Off;

  std::vector<signkit::LabeledSample> train_samples, val_samples;
  for (auto i : split.train) train_samples.push_back(dataset[i]);
  for (auto i : split.validation) val_samples.push_back(dataset[i]);
  const auto train_prep = signkit::prepare_samples(
      train_samples, signkit::NormalizationSpec{}, mirror, need_flip);
  const auto val_prep = signkit::prepare_samples(
      val_samples, signkit::NormalizationSpec{}, mirror, false);
  const int input_dim = static_cast<int>(train_prep.front().features.dim(1));

  signkit::train::TrainConfig tcfg;
  tcfg.batch_size = a.batch;
  tcfg.epochs = a.epochs;
  tcfg.seed = a.seed;
  tcfg.learning_rate = a.lr;
  tcfg.flip_mode = flip;

  fs::create_directories(a.out);
  const std::string ckpt = (fs::path(a.out) / "checkpoint.bin").string();
  const std::string hist = (fs::path(a.out) / "history.ndjson").string();

  signkit::Rng rng(a.seed);
  signkit::train::TrainResult result;
  if (a.model == "bilstm") {
    signkit::models::BiLstmConfig cfg;
    cfg.input_dim = input_dim;
    cfg.projection_dim = a.projection_dim;
    cfg.lstm_hidden = a.lstm_hidden;
    cfg.lstm_layers = a.lstm_layers;
    cfg.dropout = a.dropout;
    cfg.classes = classes;
    signkit::models::BiLstmModel model(cfg, rng);
    result = signkit::train::fit(model, train_prep,
                                 val_prep.empty() ? nullptr : &val_prep, tcfg);
    signkit::models::save_checkpoint(ckpt, model.params(),
                                     json{{"model", "bilstm"},
                                          {"config", cfg}});
  } else {
    signkit::models::TransformerCtcConfig cfg;
    cfg.input_dim = input_dim;
    cfg.d_model = a.d_model;
    cfg.heads = a.heads;
    cfg.blocks = a.blocks;
    cfg.ff_dim = a.ff_dim;
    cfg.dropout = a.tf_dropout;
    cfg.classes = classes;
    cfg.beam_width = a.beam_width;
    signkit::models::TransformerCtcModel model(cfg, rng);
    result = signkit::train::fit(model, train_prep,
                                 val_prep.empty() ? nullptr : &val_prep, tcfg);
    signkit::models::save_checkpoint(ckpt, model.params(),
                                     json{{"model", "transformer-ctc"},
                                          {"config", cfg}});
  }
  write_history(hist, result.history);
  std::printf("final train accuracy: %.4f\n",
              result.final_accuracy("train"));
  if (!val_prep.empty())
    std::printf("final validation accuracy: %.4f\n",
                result.final_accuracy("val"));
  return 0;
}

struct EvalArgs {
  std::string manifest;
  std::string checkpoint;
  std::string out;
};

int run_eval(const EvalArgs& a) {
  const auto ckpt = signkit::models::read_checkpoint(a.checkpoint);
  const auto dataset = signkit::load_dataset(a.manifest);
  if (dataset.empty()) throw signkit::EmptyDataset("manifest lists no samples");
  const auto prep = signkit::prepare_samples(
      dataset, signkit::NormalizationSpec{}, signkit::default_layout().mirror,
      false);

  signkit::train::EvalResult ev;
  const std::string kind = ckpt.meta.at("model").get<std::string>();
  signkit::Rng rng(0);
  if (kind == "bilstm") {
    auto cfg = ckpt.meta.at("config").get<signkit::models::BiLstmConfig>();
    signkit::models::BiLstmModel model(cfg, rng);
    signkit::models::load_parameters(model.params(), ckpt);
    ev = signkit::train::evaluate(model, prep);
  } else if (kind == "transformer-ctc") {
    auto cfg =
        ckpt.meta.at("config").get<signkit::models::TransformerCtcConfig>();
    signkit::models::TransformerCtcModel model(cfg, rng);
    signkit::models::load_parameters(model.params(), ckpt);
    ev = signkit::train::evaluate(model, prep);
  } else {
    throw signkit::IoError("unknown model kind in checkpoint: " + kind);
  }

  fs::create_directories(a.out);
  signkit::write_outcomes_csv((fs::path(a.out) / "outcomes.csv").string(),
                              ev.outcomes);
  std::printf("accuracy: %.4f\n", ev.accuracy);
  return 0;
}

struct OccludeArgs {
  std::string manifest;
  std::string out;
  std::string mode = "random-drop";
  std::string target = "dominant";
  double fraction = 0.5;
  std::uint64_t seed = 7;
};

int run_occlude(const OccludeArgs& a) {
  auto dataset = signkit::load_dataset(a.manifest);
  signkit::synth::OcclusionSpec spec;
  spec.mode = a.mode == "hand-face"
                  ? signkit::synth::OcclusionMode::HandFace
                  : (a.mode == "hands-interaction"
                         ? signkit::synth::OcclusionMode::HandsInteraction
                         : signkit::synth::OcclusionMode::RandomDrop);
  spec.target = a.target == "both" ? signkit::synth::OcclusionTarget::Both
                                   : signkit::synth::OcclusionTarget::Dominant;
  spec.fraction = a.fraction;
  signkit::parallel_for(dataset.size(), [&](std::size_t i) {
    signkit::synth::OcclusionSpec s = spec;
    s.seed = signkit::derive_seed(a.seed, i);
    dataset[i].pose = signkit::synth::apply_occlusion(dataset[i].pose, s);
  });
  const std::string manifest = signkit::save_dataset(a.out, dataset);
  std::printf("wrote %zu occluded samples, manifest %s\n", dataset.size(),
              manifest.c_str());
  return 0;
}

struct AnalyzeArgs {
  std::string outcomes;
  std::string out;
  int bins = 10;
};

int run_analyze(const AnalyzeArgs& a) {
  const auto outcomes = signkit::read_outcomes_csv(a.outcomes);
  if (outcomes.empty())
    throw signkit::EmptyGroup("outcomes file has no rows; nothing to analyze");
  const auto report = signkit::stats::analysis_report(
      outcomes, static_cast<std::size_t>(a.bins));
  fs::create_directories(a.out);
  const json j = report;
  signkit::write_file_text((fs::path(a.out) / "report.json").string(),
                           j.dump(2) + "\n");
  signkit::stats::write_histogram_csv((fs::path(a.out) / "hist.csv").string(),
                                      report.histogram);
  std::fputs(signkit::stats::render_report_text(report).c_str(), stdout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pose-sequence sign language recognition toolkit"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* synth_cmd =
      app.add_subcommand("synth", "generate a synthetic labeled dataset");
  synth_cmd->add_option("--out", synth.out, "output directory")->required();
  synth_cmd->add_option("--classes", synth.classes, "number of sign classes")
      ->check(CLI::Range(2, 1000));
  synth_cmd->add_option("--samples", synth.samples, "samples per class")
      ->check(CLI::PositiveNumber);
  synth_cmd->add_option("--signers", synth.signers, "number of signers (>=2)")
      ->check(CLI::Range(2, 1000));
  synth_cmd->add_option("--seed", synth.seed, "generation seed");
  synth_cmd->add_option("--noise", synth.noise, "coordinate noise sd")
      ->check(CLI::NonNegativeNumber);
  synth_cmd->add_option("--frames-min", synth.frames_min, "min frames")
      ->check(CLI::Range(2, 100000));
  synth_cmd->add_option("--frames-max", synth.frames_max, "max frames")
      ->check(CLI::Range(2, 100000));

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "train a recognition model");
  train_cmd->add_option("--manifest", train.manifest, "dataset manifest.csv")
      ->required();
  train_cmd->add_option("--model", train.model, "architecture")
      ->required()
      ->check(CLI::IsMember({"bilstm", "transformer-ctc"}));
  train_cmd->add_option("--out", train.out, "output directory")->required();
  train_cmd->add_option("--epochs", train.epochs, "training epochs")
      ->check(CLI::PositiveNumber);
  train_cmd->add_option("--batch", train.batch, "batch size")
      ->check(CLI::Range(2, 1 << 20));
  train_cmd->add_option("--lr", train.lr, "Adam learning rate")
      ->check(CLI::PositiveNumber);
  train_cmd->add_option("--seed", train.seed, "training seed");
  train_cmd->add_option("--flip", train.flip, "flip augmentation mode")
      ->check(CLI::IsMember({"all", "left-handed", "off"}));
  train_cmd
      ->add_option("--train-fraction", train.train_fraction,
                   "signer-disjoint train fraction")
      ->check(CLI::Range(0.0, 1.0));
  train_cmd->add_option("--projection-dim", train.projection_dim,
                        "bilstm projection size");
  train_cmd->add_option("--lstm-hidden", train.lstm_hidden,
                        "bilstm hidden size");
  train_cmd->add_option("--lstm-layers", train.lstm_layers, "bilstm layers");
  train_cmd->add_option("--dropout", train.dropout, "bilstm input dropout")
      ->check(CLI::Range(0.0, 0.999));
  train_cmd->add_option("--d-model", train.d_model, "transformer model dim");
  train_cmd->add_option("--heads", train.heads, "attention heads");
  train_cmd->add_option("--blocks", train.blocks, "transformer blocks");
  train_cmd->add_option("--ff-dim", train.ff_dim, "feed-forward dim");
  train_cmd
      ->add_option("--tf-dropout", train.tf_dropout, "transformer dropout")
      ->check(CLI::Range(0.0, 0.999));
  train_cmd->add_option("--beam-width", train.beam_width, "CTC beam width")
      ->check(CLI::PositiveNumber);

  EvalArgs eval;
  auto* eval_cmd =
      app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  eval_cmd->add_option("--manifest", eval.manifest, "dataset manifest.csv")
      ->required();
  eval_cmd->add_option("--checkpoint", eval.checkpoint, "checkpoint.bin")
      ->required();
  eval_cmd->add_option("--out", eval.out, "output directory")->required();

  OccludeArgs occlude;
  auto* occlude_cmd = app.add_subcommand(
      "occlude", "write an occluded copy of a dataset");
  occlude_cmd
      ->add_option("--manifest", occlude.manifest, "source manifest.csv")
      ->required();
  occlude_cmd->add_option("--out", occlude.out, "output directory")
      ->required();
  occlude_cmd->add_option("--mode", occlude.mode, "occlusion mode")
      ->check(CLI::IsMember({"random-drop", "hand-face", "hands-interaction"}));
  occlude_cmd->add_option("--target", occlude.target, "which hand to occlude")
      ->check(CLI::IsMember({"dominant", "both"}));
  occlude_cmd
      ->add_option("--fraction", occlude.fraction, "fraction of frames")
      ->check(CLI::Range(0.0, 1.0));
  occlude_cmd->add_option("--seed", occlude.seed, "frame-selection seed");

  AnalyzeArgs analyze;
  auto* analyze_cmd = app.add_subcommand(
      "analyze", "hand-presence failure analysis of an outcomes file");
  analyze_cmd->add_option("--outcomes", analyze.outcomes, "outcomes.csv")
      ->required();
  analyze_cmd->add_option("--out", analyze.out, "output directory")
      ->required();
  analyze_cmd->add_option("--bins", analyze.bins, "histogram bins")
      ->check(CLI::Range(1, 100));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (synth_cmd->parsed()) return run_synth(synth);
    if (train_cmd->parsed()) return run_train(train);
    if (eval_cmd->parsed()) return run_eval(eval);
    if (occlude_cmd->parsed()) return run_occlude(occlude);
    if (analyze_cmd->parsed()) return run_analyze(analyze);
  } catch (const signkit::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
