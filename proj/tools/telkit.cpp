// telkit command-line front end.
#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "telkit/telkit.hpp"

namespace fs = std::filesystem;
using namespace telkit;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool out_required = true) {
  cmd->add_option("--config", c.config, "run configuration (JSON)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "overrides the configured seed");
  auto* o = cmd->add_option("--out", c.out, "output path");
  if (out_required) o->required();
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_run_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"telkit: temporal event localization toolkit"};
  app.require_subcommand(1);

  Common synth_c, train_c, infer_c, propose_c, eval_c, diag_c, selfsim_c;
  std::string data_dir, checkpoint, annotations, features_dir, split = "test";
  std::string gt, det, iou = "0.3:0.7:0.1", mode = "fix";
  double dist_alpha = 0.5;

  auto* synth = app.add_subcommand("synth", "generate a synthetic multi-shot dataset");
  add_common(synth, synth_c);

  auto* train = app.add_subcommand("train", "train the proposal scorer and detector");
  add_common(train, train_c);
  train->add_option("--data", data_dir, "dataset directory (train.json, features/)")
      ->required();

  auto* infer = app.add_subcommand("infer", "run detection over a split");
  add_common(infer, infer_c);
  auto* propose = app.add_subcommand("propose", "write ranked proposals for a split");
  add_common(propose, propose_c);
  for (auto* cmd : {infer, propose}) {
    cmd->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
    cmd->add_option("--data", data_dir, "dataset directory")->required();
    cmd->add_option("--split", split, "annotation file <data>/<split>.json");
    cmd->add_option("--annotations", annotations, "annotation file (overrides --split)");
  }

  auto* eval = app.add_subcommand("eval", "mAP over an IoU grid, stratified by shots");
  add_common(eval, eval_c);
  eval->add_option("--gt", gt)->required()->check(CLI::ExistingFile);
  eval->add_option("--det", det)->required()->check(CLI::ExistingFile);
  eval->add_option("--iou", iou, "lo:hi:step or comma list");

  auto* diag = app.add_subcommand("diagnose", "false-positive analysis");
  add_common(diag, diag_c);
  diag->add_option("--gt", gt)->required()->check(CLI::ExistingFile);
  diag->add_option("--det", det)->required()->check(CLI::ExistingFile);
  diag->add_option("--iou", iou, "lo:hi:step or comma list");
  diag->add_option("--alpha", dist_alpha, "IoU threshold for the error distribution");
  diag->add_option("--mode", mode, "error resolution: fix or delete")
      ->check(CLI::IsMember({"fix", "delete"}));

  auto* selfsim = app.add_subcommand("selfsim", "intra-instance self-similarity");
  add_common(selfsim, selfsim_c);
  selfsim->add_option("--gt", gt)->required()->check(CLI::ExistingFile);
  selfsim->add_option("--features", features_dir)->required()->check(CLI::ExistingDirectory);
  std::string images_dir;
  selfsim->add_option("--images", images_dir, "also write per-instance similarity matrices (PGM)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      const auto cfg = resolve(synth_c);
      const auto data = cmd_synth(cfg, synth_c.out);
      std::cout << "wrote " << data.train.videos.size() << " train and "
                << data.test.videos.size() << " test videos to " << synth_c.out << '\n';
    } else if (train->parsed()) {
      const auto cfg = resolve(train_c);
      const fs::path d = data_dir;
      const auto res = cmd_train(cfg, d / "train.json", d / "features", train_c.out, &std::cerr);
      std::cout << "final scorer loss " << res.final_scorer_loss
                << ", detector loss " << res.final_detector_loss << '\n';
    } else if (infer->parsed() || propose->parsed()) {
      const bool detect = infer->parsed();
      const auto& c = detect ? infer_c : propose_c;
      const auto cfg = resolve(c);
      const fs::path d = data_dir;
      const fs::path ann = annotations.empty() ? d / (split + ".json") : fs::path(annotations);
      if (detect) {
        const auto dets = cmd_infer(cfg, checkpoint, d / "features", ann, c.out);
        std::size_t n = 0;
        for (const auto& [id, v] : dets) n += v.size();
        std::cout << "wrote " << n << " detections for " << dets.size() << " videos\n";
      } else {
        const auto props = cmd_propose(cfg, checkpoint, d / "features", ann, c.out);
        std::cout << "wrote proposals for " << props.size() << " videos\n";
      }
    } else if (eval->parsed()) {
      const auto rep = cmd_eval(gt, det, parse_iou_grid(iou), eval_c.out);
      std::cout << to_table(rep);
    } else if (diag->parsed()) {
      DiagnosisOptions opt;
      opt.alphas = parse_iou_grid(iou);
      opt.distribution_alpha = dist_alpha;
      opt.mode = mode == "delete" ? ResolveMode::DeleteOnly : ResolveMode::Fix;
      const auto rep = cmd_diagnose(gt, det, opt, diag_c.out);
      for (const auto& im : rep.impacts) {
        std::cout << to_string(im.type) << " impact " << im.average << '\n';
      }
    } else if (selfsim->parsed()) {
      const auto rep = cmd_selfsim(gt, features_dir, selfsim_c.out, images_dir);
      std::cout << "average self-similarity std " << rep.average_std << " over "
                << rep.instances.size() << " instances\n";
    }
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
