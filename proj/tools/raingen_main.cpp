#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "raingen/config.hpp"
#include "raingen/gradsuite.hpp"
#include "raingen/synthdata.hpp"
#include "raingen/trainer.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  int64_t seed = -1;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool config_required) {
  auto* opt = cmd->add_option("--config", args.config_path,
                              "flat key = value configuration file");
  if (config_required) opt->required();
  cmd->add_option("--set", args.overrides, "override a config key, key=value");
  cmd->add_option("--seed", args.seed, "override the seed config key");
}

std::map<std::string, std::string> merged_kv(const CommonArgs& args) {
  std::map<std::string, std::string> kv;
  if (!args.config_path.empty())
    kv = raingen::harness::parse_kv_file(args.config_path);
  raingen::harness::apply_overrides(kv, args.overrides);
  if (args.seed >= 0) kv["seed"] = std::to_string(args.seed);
  return kv;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"unpaired clear-to-rainy image translation at desk scale"};
  app.require_subcommand(1);

  CommonArgs gen_args, train_args, translate_args, eval_args, ablate_args, grad_args;

  auto* gen_cmd = app.add_subcommand("gen-data", "write a synthetic unpaired dataset");
  add_common(gen_cmd, gen_args, false);

  auto* train_cmd = app.add_subcommand("train", "train a translator from a manifest");
  add_common(train_cmd, train_args, true);

  auto* translate_cmd =
      app.add_subcommand("translate", "run a checkpoint over an image folder");
  add_common(translate_cmd, translate_args, true);
  std::string ckpt_path, in_folder, out_folder;
  translate_cmd->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  translate_cmd->add_option("--input", in_folder, "input image folder")->required();
  translate_cmd->add_option("--output", out_folder, "output image folder")->required();

  auto* eval_cmd = app.add_subcommand("evaluate", "score a checkpoint on the test split");
  add_common(eval_cmd, eval_args, true);
  std::string eval_ckpt, report_path;
  eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  eval_cmd->add_option("--report", report_path, "report output path (default: beside the checkpoint)");

  auto* ablate_cmd = app.add_subcommand("ablate", "train and score several variants");
  add_common(ablate_cmd, ablate_args, true);
  std::vector<std::string> variant_list;
  std::string table_path;
  ablate_cmd->add_option("--variants", variant_list, "variant ids (default M1..M7)");
  ablate_cmd->add_option("--table", table_path, "table output path (default: out_dir/ablation.tsv)");

  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient suites");
  add_common(grad_cmd, grad_args, false);
  int grad_seeds = 20;
  grad_cmd->add_option("--seeds", grad_seeds, "seeds per case (default 20)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen_cmd) {
      auto cfg = raingen::harness::gen_config_from_kv(merged_kv(gen_args));
      auto manifest = raingen::synth::build_dataset(cfg.build);
      std::cout << "wrote " << manifest.entries.size() << " image/segmap pairs under "
                << cfg.build.root.string() << "\n";
    } else if (*train_cmd) {
      auto cfg = raingen::harness::train_config_from_kv(merged_kv(train_args));
      auto result = raingen::harness::train(cfg);
      std::cout << "checkpoint: " << result.checkpoint_path.string() << "\n"
                << "log: " << result.log_path.string() << "\n";
    } else if (*translate_cmd) {
      auto cfg = raingen::harness::train_config_from_kv(merged_kv(translate_args));
      raingen::harness::translate(cfg, ckpt_path, in_folder, out_folder);
      std::cout << "translated images written to " << out_folder << "\n";
    } else if (*eval_cmd) {
      auto cfg = raingen::harness::train_config_from_kv(merged_kv(eval_args));
      const std::filesystem::path report =
          report_path.empty() ? cfg.out_dir / "report.jsonl"
                              : std::filesystem::path(report_path);
      auto r = raingen::harness::evaluate(cfg, eval_ckpt, report);
      std::cout << "mmd2(generated, rainy) = " << r.mmd2_gen_rainy << "\n"
                << "mmd2(clear, rainy)     = " << r.mmd2_clear_rainy << "\n"
                << "report: " << report.string() << "\n";
    } else if (*ablate_cmd) {
      auto cfg = raingen::harness::train_config_from_kv(merged_kv(ablate_args));
      if (variant_list.empty())
        variant_list = {"M1", "M2", "M3", "M4", "M5", "M6", "M7"};
      const std::filesystem::path table =
          table_path.empty() ? cfg.out_dir / "ablation.tsv"
                             : std::filesystem::path(table_path);
      std::filesystem::create_directories(cfg.out_dir);
      auto rows = raingen::harness::ablate(cfg, variant_list, table);
      std::cout << "wrote " << rows.size() << " rows to " << table.string() << "\n";
    } else if (*grad_cmd) {
      auto report = raingen::harness::run_gradient_suite(grad_seeds);
      for (const auto& c : report.cases)
        std::printf("[%s] %-22s max rel err %.3e (tol %.1e)\n",
                    c.pass ? "PASS" : "FAIL", c.name.c_str(), c.max_rel_err,
                    c.tolerance);
      if (!report.all_pass()) {
        std::cerr << "gradient suite FAILED\n";
        return 1;
      }
      std::cout << "gradient suite passed (" << report.cases.size() << " cases, "
                << grad_seeds << " seeds each)\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
