// histo: patch extraction, augmentation, baseline CNN training, voting and
// evaluation for 4-class histology image classification.
//
// Exit codes: 0 success, 1 data/validation error, 2 internal error.

#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "histo/commands.hpp"

namespace {

namespace fs = std::filesystem;
using namespace histo;

std::string join_args(int argc, char** argv) {
  std::string s;
  for (int i = 0; i < argc; ++i) s += (i ? " " : "") + std::string(argv[i]);
  return s;
}

CommitteeMode parse_mode(const std::string& s) {
  if (s == "flat") return CommitteeMode::Flat;
  if (s == "per-model") return CommitteeMode::PerModel;
  throw Error(ErrorKind::InvalidArgument, "unknown committee mode '" + s + "'");
}

TieBreak parse_tie(const std::string& s) {
  if (s == "lowest") return TieBreak::LowestIndex;
  if (s == "prob-sum") return TieBreak::ProbabilitySum;
  throw Error(ErrorKind::InvalidArgument, "unknown tie-break '" + s + "'");
}

void add_vote_flags(CLI::App* sub, VoteOptions& v, std::string& mode, std::string& tie) {
  sub->add_option("--patches", v.patch_count, "Patches per image")->check(CLI::PositiveNumber);
  sub->add_option("--mode", mode, "Committee pooling: flat | per-model")->capture_default_str();
  sub->add_option("--tie-break", tie, "Tie-break: lowest | prob-sum")->capture_default_str();
  sub->add_option("--committee-id", v.committee_id, "model_id for committee decisions")
      ->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Histology patch pipeline: patch, augment, train, predict, vote, eval"};
  app.require_subcommand(1);
  const std::string command_line = join_args(argc, argv);

  // patch
  cmd::PatchOptions patch_opt;
  std::string patch_format = "ppm";
  auto* patch = app.add_subcommand("patch", "Tile manifest images into grid patches");
  patch->add_option("--manifest", patch_opt.manifest, "Manifest CSV (image_id,path,label)")->required();
  patch->add_option("--cols", patch_opt.grid.cols, "Grid columns")->capture_default_str();
  patch->add_option("--rows", patch_opt.grid.rows, "Grid rows")->capture_default_str();
  patch->add_option("--format", patch_format, "ppm | png")->capture_default_str();
  patch->add_option("--out", patch_opt.out_dir, "Output directory")->required();

  // augment
  cmd::AugmentOptions aug_opt;
  std::string aug_config, aug_log, aug_format = "ppm";
  bool no_stochastic = false;
  auto* augment = app.add_subcommand("augment", "Dihedral expansion and seeded stochastic augmentation");
  augment->add_option("--patches", aug_opt.patch_dir, "Patch directory")->required();
  augment->add_option("--config", aug_config, "key=value augmentation config");
  augment->add_option("--seed", aug_opt.seed, "Master seed")->capture_default_str();
  augment->add_option("--epoch", aug_opt.epoch, "Epoch number")->capture_default_str();
  augment->add_option("--workers", aug_opt.workers, "Worker threads")->capture_default_str();
  augment->add_flag("--expand8", aug_opt.expand8, "Emit the 8 rotation/flip variants of every patch");
  augment->add_flag("--no-stochastic", no_stochastic, "Disable all stochastic stages");
  augment->add_option("--draw-log", aug_log, "Write one line per parameter draw");
  augment->add_option("--format", aug_format, "ppm | png")->capture_default_str();
  augment->add_option("--out", aug_opt.out_dir, "Output directory")->required();

  // train
  cmd::TrainOptions train_opt;
  std::string train_aug, train_split, train_metrics;
  auto* train = app.add_subcommand("train", "Train the baseline CNN; prints epoch,loss,patch_acc");
  train->add_option("--index", train_opt.index, "Patch index.csv with labels")->required();
  train->add_option("--split", train_split, "Split file; only train images are used");
  train->add_option("--side", train_opt.arch.input_side, "Input side in pixels")->capture_default_str();
  train->add_option("--c1", train_opt.arch.c1)->capture_default_str();
  train->add_option("--c2", train_opt.arch.c2)->capture_default_str();
  train->add_option("--c3", train_opt.arch.c3)->capture_default_str();
  train->add_option("--fc", train_opt.arch.fc_units, "Hidden dense units")->capture_default_str();
  train->add_option("--lr", train_opt.train.learning_rate)->capture_default_str();
  train->add_option("--momentum", train_opt.train.momentum)->capture_default_str();
  train->add_option("--batch", train_opt.train.batch_size)->capture_default_str();
  train->add_option("--epochs", train_opt.train.epochs)->capture_default_str();
  train->add_option("--seed", train_opt.train.seed)->capture_default_str();
  train->add_option("--workers", train_opt.train.workers)->capture_default_str();
  train->add_option("--augment-config", train_aug, "Re-augment every epoch with this config");
  train->add_option("--metrics", train_metrics, "Also write the metrics CSV here");
  train->add_option("--out", train_opt.checkpoint, "Checkpoint file")->required();

  // predict
  cmd::PredictOptions pred_opt;
  auto* predict = app.add_subcommand("predict", "Write per-patch predictions");
  predict->add_option("--checkpoint", pred_opt.checkpoint)->required();
  predict->add_option("--patches", pred_opt.patch_dir, "Patch directory")->required();
  predict->add_option("--model-id", pred_opt.model_id)->capture_default_str();
  predict->add_option("--out", pred_opt.out, "Prediction CSV")->required();

  // vote
  cmd::VoteCommandOptions vote_opt;
  std::string vote_mode = "flat", vote_tie = "lowest";
  std::vector<std::string> vote_models;
  auto* vote = app.add_subcommand("vote", "Majority vote patch predictions into image decisions");
  vote->add_option("--model", vote_models, "Prediction file (repeat for a committee)")->required();
  add_vote_flags(vote, vote_opt.vote, vote_mode, vote_tie);
  vote->add_option("--out", vote_opt.out, "Decision CSV")->required();

  // eval
  cmd::EvalOptions eval_opt;
  std::string eval_split, eval_mode = "flat", eval_tie = "lowest";
  std::vector<std::string> eval_preds, eval_decisions;
  auto* eval = app.add_subcommand("eval", "Accuracy tables from predictions and decisions");
  eval->add_option("--manifest", eval_opt.manifest, "Manifest CSV with true labels")->required();
  eval->add_option("--split", eval_split, "Split file");
  eval->add_option("--predictions", eval_preds, "Patch prediction files");
  eval->add_option("--decisions", eval_decisions, "Image decision files");
  eval->add_flag("--committee", eval_opt.committee, "Add a committee row over all prediction files");
  add_vote_flags(eval, eval_opt.vote, eval_mode, eval_tie);
  eval->add_option("--out", eval_opt.out_dir, "Report directory")->required();

  // split
  cmd::SplitOptions split_opt;
  auto* split = app.add_subcommand("split", "Seeded train/test split of a manifest");
  split->add_option("--manifest", split_opt.manifest)->required();
  split->add_option("--seed", split_opt.seed)->capture_default_str();
  split->add_option("--test-count", split_opt.test_count)->capture_default_str();
  split->add_flag("--stratified", split_opt.stratified, "Equal test count per class");
  split->add_option("--out", split_opt.out, "Split CSV")->required();

  // filters
  std::string filt_ckpt, filt_out;
  auto* filters = app.add_subcommand("filters", "Render first-layer filters as an image");
  filters->add_option("--checkpoint", filt_ckpt)->required();
  filters->add_option("--out", filt_out, "Output .ppm or .png")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*patch) {
      patch_opt.format = format_from_name(patch_format);
      patch_opt.command_line = command_line;
      std::cout << cmd::cmd_patch(patch_opt) << " patches written\n";
    } else if (*augment) {
      if (!aug_config.empty()) aug_opt.config = aug_config;
      if (!aug_log.empty()) aug_opt.draw_log = aug_log;
      aug_opt.stochastic = !no_stochastic;
      aug_opt.format = format_from_name(aug_format);
      aug_opt.command_line = command_line;
      std::cout << cmd::cmd_augment(aug_opt) << " patches written\n";
    } else if (*train) {
      if (!train_aug.empty()) train_opt.augment_config = train_aug;
      if (!train_split.empty()) train_opt.split = train_split;
      train_opt.command_line = command_line;
      if (!train_metrics.empty()) train_opt.metrics_file = train_metrics;
      cmd::cmd_train(train_opt, std::cout);
    } else if (*predict) {
      pred_opt.command_line = command_line;
      std::cout << cmd::cmd_predict(pred_opt).size() << " predictions written\n";
    } else if (*vote) {
      for (const auto& m : vote_models) vote_opt.models.emplace_back(m);
      vote_opt.vote.mode = parse_mode(vote_mode);
      vote_opt.vote.tie = parse_tie(vote_tie);
      vote_opt.command_line = command_line;
      for (const auto& d : cmd::cmd_vote(vote_opt)) {
        std::cout << d.image_id << ',' << d.model_id << ',' << to_string(d.label) << '\n';
      }
    } else if (*eval) {
      if (!eval_split.empty()) eval_opt.split = eval_split;
      for (const auto& p : eval_preds) eval_opt.predictions.emplace_back(p);
      for (const auto& d : eval_decisions) eval_opt.decisions.emplace_back(d);
      eval_opt.vote.mode = parse_mode(eval_mode);
      eval_opt.vote.tie = parse_tie(eval_tie);
      eval_opt.command_line = command_line;
      std::cout << cmd::cmd_eval(eval_opt).text;
    } else if (*split) {
      split_opt.command_line = command_line;
      const auto s = cmd::cmd_split(split_opt);
      std::cout << s.train_ids.size() << " train, " << s.test_ids.size() << " test\n";
    } else if (*filters) {
      cmd::cmd_filters(filt_ckpt, filt_out);
    }
  } catch (const histo::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
