// mipl: experiment runner for the neighborhood membership-inference lab.
//
// Subcommands: gen-data, eval, attack, game, verify, dsi.
// Exit codes: 0 success, 2 configuration error, 3 runtime failure,
// 4 verification-check failure (verify only).

#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "mipl/pipeline.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int jobs = 0;
};

void attach_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "experiment config file (JSON)");
  cmd->add_option("--out", args.out_dir, "output directory (overrides config)");
  cmd->add_option("--seed", args.seed, "experiment seed (overrides config)")
      ->each([&args](const std::string&) { args.seed_set = true; });
  cmd->add_option("--jobs", args.jobs, "worker threads (overrides config)");
}

mipl::ExperimentConfig resolve_config(const CommonArgs& args) {
  mipl::ExperimentConfig cfg =
      args.config_path.empty() ? mipl::ExperimentConfig{} : mipl::load_config_file(args.config_path);
  if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
  if (args.seed_set) cfg.seed = args.seed;
  if (args.jobs > 0) cfg.jobs = args.jobs;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"neighborhood membership-inference and dataset-poisoning lab"};
  app.require_subcommand(1);

  CommonArgs gen_args, eval_args, attack_args, game_args, verify_args, dsi_args;
  std::string eval_poisoned, dsi_poisoned;

  CLI::App* gen = app.add_subcommand("gen-data", "generate corpus files");
  attach_common(gen, gen_args);
  CLI::App* eval_cmd =
      app.add_subcommand("eval", "score the eval set; emits ScoreTable/ROC CSVs and summary.json");
  attach_common(eval_cmd, eval_args);
  eval_cmd->add_option("--poisoned", eval_poisoned,
                       "poisoned train dataset; adds side-by-side poisoned columns");
  CLI::App* attack_cmd =
      app.add_subcommand("attack", "run PoisonM over the configured neighborhoods");
  attach_common(attack_cmd, attack_args);
  CLI::App* game_cmd =
      app.add_subcommand("game", "run the challenger/adversary/arbiter game and robust metrics");
  attach_common(game_cmd, game_args);
  CLI::App* verify_cmd =
      app.add_subcommand("verify", "numerical checks of the advantage identity and the trade-off bound");
  attach_common(verify_cmd, verify_args);
  CLI::App* dsi_cmd = app.add_subcommand("dsi", "dataset inference p-values, natural vs poisoned");
  attach_common(dsi_cmd, dsi_args);
  dsi_cmd->add_option("--poisoned", dsi_poisoned,
                      "poisoned train dataset (default: run the attack in-process)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      mipl::cmd_gen_data(resolve_config(gen_args));
      return 0;
    }
    if (eval_cmd->parsed()) {
      const mipl::ExperimentConfig cfg = resolve_config(eval_args);
      const mipl::EvalRun run = mipl::cmd_run_eval(cfg, eval_poisoned);
      for (const mipl::EvalCell& c : run.cells) {
        std::cout << c.spec_name << " " << mipl::test_name(c.test)
                  << " natural_auc=" << c.natural_auc;
        if (c.poisoned_auc) std::cout << " poisoned_auc=" << *c.poisoned_auc;
        std::cout << "\n";
      }
      return 0;
    }
    if (attack_cmd->parsed()) {
      const mipl::ExperimentConfig cfg = resolve_config(attack_args);
      const auto runs = mipl::cmd_run_attack(cfg);
      for (const mipl::AttackRun& r : runs) {
        std::cout << r.spec.name() << " poisons=" << r.result.records.size()
                  << " members=" << r.n_member_targets
                  << " non_members=" << r.n_non_member_targets << "\n";
      }
      return 0;
    }
    if (game_cmd->parsed()) {
      const mipl::ExperimentConfig cfg = resolve_config(game_args);
      const mipl::GameRun run = mipl::cmd_run_game(cfg);
      std::cout << "gamma=" << run.gamma << " win_rate=" << run.win_rate
                << " trials=" << run.transcripts.size()
                << " attack_failures=" << run.robust.attack_failures << "\n";
      return 0;
    }
    if (verify_cmd->parsed()) {
      const mipl::ExperimentConfig cfg = resolve_config(verify_args);
      const mipl::VerifyRun run = mipl::cmd_run_verify(cfg);
      for (std::size_t i = 0; i < run.lemma1_reports.size(); ++i) {
        const auto& r = run.lemma1_reports[i];
        std::cout << "lemma1 pair " << i << ": gap=" << r.gap
                  << (r.passed ? " PASS" : " FAIL") << "\n";
      }
      std::cout << "lemma1 real-score table: gap=" << run.lemma1_real_scores.gap
                << (run.lemma1_real_scores.passed ? " PASS" : " FAIL") << "\n";
      std::cout << "theorem1: clean=" << run.tradeoff.clean_advantage
                << " robust=" << run.tradeoff.robust_advantage
                << " delta_star=" << run.tradeoff.delta_star << " slack=" << run.tradeoff.slack
                << (run.tradeoff.passed ? " PASS" : " FAIL") << "\n";
      return run.all_passed ? 0 : 4;
    }
    if (dsi_cmd->parsed()) {
      const mipl::ExperimentConfig cfg = resolve_config(dsi_args);
      const mipl::DsiRun run = mipl::cmd_run_dsi(cfg, dsi_poisoned);
      std::cout << run.spec_name << " natural: member_p=" << run.natural.member.p_value
                << " non_member_p=" << run.natural.non_member.p_value << "\n";
      std::cout << run.spec_name << " poisonm: member_p=" << run.poisoned.member.p_value
                << " non_member_p=" << run.poisoned.non_member.p_value << "\n";
      return 0;
    }
  } catch (const mipl::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const mipl::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
