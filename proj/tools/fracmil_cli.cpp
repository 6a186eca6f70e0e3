// Command-line front end: each pipeline stage is its own subcommand so a
// fold can be re-run piecewise; run-all chains them for every fold.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fracmil/experiment.hpp"
#include "fracmil/report.hpp"

namespace {

using fracmil::Experiment;
using fracmil::ExperimentConfig;
using fracmil::Method;

struct Common {
  std::string config;
  std::string out_dir = "runs";
  std::optional<std::uint64_t> seed_override;
  std::optional<int> fold;
  std::vector<std::string> methods;
};

void add_common(CLI::App* cmd, Common& c, bool fold, bool method) {
  cmd->add_option("--config", c.config, "JSON experiment config (defaults when omitted)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--out-dir", c.out_dir, "Output root; results go to <out-dir>/<config hash>")
      ->capture_default_str();
  cmd->add_option("--seed-override", c.seed_override, "Replace the global seed");
  if (fold) cmd->add_option("--fold", c.fold, "Fold index");
  if (method) cmd->add_option("--method", c.methods, "Method name (repeatable for run-all)");
}

Experiment make_experiment(const Common& c) {
  ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : fracmil::load_config(c.config);
  if (c.seed_override) cfg.seed = *c.seed_override;
  Experiment exp(std::move(cfg), c.out_dir);
  exp.write_resolved_config();
  return exp;
}

int require_fold(const Common& c) {
  if (!c.fold) throw fracmil::ConfigError("--fold is required for this subcommand");
  return *c.fold;
}

Method single_method(const Common& c, Method fallback) {
  if (c.methods.size() > 1) throw fracmil::ConfigError("give at most one --method");
  return c.methods.empty() ? fallback : fracmil::method_from_string(c.methods.front());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fracmil: weakly supervised two-stage fracture classification"};
  app.require_subcommand(1);
  Common c;

  auto* gen = app.add_subcommand("generate-data", "Write the configured dataset to <root>/data");
  auto* train1 = app.add_subcommand("train-stage1", "Train stage 1 (or a baseline via --method)");
  auto* calib = app.add_subcommand("calibrate", "Calibrate the mining threshold on the train split");
  auto* train2 = app.add_subcommand("train-stage2", "Mine ROIs and train stage 2");
  auto* infer = app.add_subcommand("infer", "Score the test split");
  auto* eval = app.add_subcommand("eval", "Compute metrics and curves from test scores");
  auto* report = app.add_subcommand("report", "Aggregate folds and write plots and a summary");
  auto* run_all = app.add_subcommand("run-all", "Every stage for every fold and method");

  add_common(gen, c, false, false);
  add_common(train1, c, true, true);
  add_common(calib, c, true, false);
  add_common(train2, c, true, false);
  add_common(infer, c, true, true);
  add_common(eval, c, true, true);
  add_common(report, c, false, false);
  add_common(run_all, c, true, true);

  CLI11_PARSE(app, argc, argv);

  try {
    Experiment exp = make_experiment(c);
    if (gen->parsed()) {
      exp.write_data();
      std::cout << (exp.root() / "data").string() << '\n';
    } else if (train1->parsed()) {
      exp.train(require_fold(c), single_method(c, Method::kSingleStage));
    } else if (calib->parsed()) {
      const auto r = exp.calibrate(require_fold(c));
      std::printf("threshold %.10g achieved_sensitivity %.6f\n", r.threshold, r.achieved_sensitivity);
    } else if (train2->parsed()) {
      exp.train_stage2(require_fold(c));
    } else if (infer->parsed()) {
      exp.infer(require_fold(c), single_method(c, Method::kTwoStage));
    } else if (eval->parsed()) {
      std::cout << exp.eval(require_fold(c), single_method(c, Method::kTwoStage)).dump(2) << '\n';
    } else if (report->parsed()) {
      exp.aggregate();
      for (const auto& p : fracmil::write_report(exp.root())) std::cout << p.string() << '\n';
    } else if (run_all->parsed()) {
      std::vector<int> folds;
      if (c.fold) {
        exp.fold_dir(*c.fold);  // range check
        folds.push_back(*c.fold);
      } else {
        for (int k = 0; k < exp.config().folds; ++k) folds.push_back(k);
      }
      std::vector<Method> methods;
      for (const auto& m : c.methods) methods.push_back(fracmil::method_from_string(m));
      if (methods.empty()) methods = exp.config().methods;
      const int failed = exp.run_all(folds, methods);
      fracmil::write_report(exp.root());
      std::cout << exp.root().string() << '\n';
      if (failed) {
        std::fprintf(stderr, "%d fold(s) failed; see fold_<k>/error.txt\n", failed);
        return 3;
      }
    }
  } catch (const fracmil::ConfigError& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
