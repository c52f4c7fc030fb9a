// laser: train, evaluate, vote and diagnose the self-rewarding addition policy.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "laser/app.hpp"
#include "laser/parallel.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Joint reasoning and last-token self-rewarding on single-digit addition"};
  app.require_subcommand(1);
  int threads = laser::threads_from_env();
  app.add_option("--threads", threads, "Worker threads (default: LASER_THREADS or hardware)")
      ->check(CLI::PositiveNumber);

  laser::TrainArgs train;
  std::string train_mode;
  std::uint64_t train_seed = 0;
  std::string train_resume;
  auto* t = app.add_subcommand("train", "Run RL training from a config file");
  t->add_option("--config", train.config, "Config file (key = value)")->required();
  t->add_option("--out", train.out, "Output directory")->required();
  auto* seed_opt = t->add_option("--seed", train_seed, "Override run_seed");
  auto* mode_opt = t->add_option("--mode", train_mode, "Override mode (grpo, laser, ...)");
  auto* resume_opt = t->add_option("--resume", train_resume, "Checkpoint to resume from");

  laser::EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on held-out problems");
  e->add_option("--checkpoint", eval.checkpoint, "Checkpoint file")->required();
  e->add_option("--out", eval.out, "Output directory")->required();
  e->add_option("--n-problems", eval.n_problems, "Held-out problems");
  e->add_option("--k", eval.k, "Samples per problem");
  e->add_option("--seed", eval.seed, "Evaluation seed");

  laser::VoteArgs vote;
  auto* v = app.add_subcommand("vote", "Maj@K and RM@K over a rollout log");
  v->add_option("--rollouts", vote.rollouts, "Rollout JSONL")->required();
  v->add_option("--out", vote.out, "Output directory")->required();
  v->add_option("--k", vote.ks, "K values")->delimiter(',');

  laser::DiagnoseArgs diag;
  auto* d = app.add_subcommand("diagnose", "Run one diagnostic on a checkpoint");
  d->add_option("--checkpoint", diag.checkpoint, "Checkpoint file")->required();
  d->add_option("--out", diag.out, "Output directory")->required();
  d->add_option("--which", diag.which, "partition | implicit | refstats | gradcheck")
      ->required();
  d->add_option("--samples", diag.samples, "Sampled responses");
  d->add_option("--seed", diag.seed, "Sampling seed");

  laser::ProblemsArgs probs;
  auto* p = app.add_subcommand("problems", "Export held-out problems as JSONL");
  p->add_option("--n", probs.n, "Number of problems");
  p->add_option("--seed", probs.seed, "Evaluation seed");
  p->add_option("--out", probs.out, "Output file (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? laser::kExitOk : laser::kExitUsage;
  }

  if (t->parsed()) {
    if (*seed_opt) train.seed = train_seed;
    if (*mode_opt) train.mode = train_mode;
    if (*resume_opt) train.resume = train_resume;
    train.threads = threads;
    return laser::cmd_train(train, std::cout, std::cerr);
  }
  if (e->parsed()) {
    eval.threads = threads;
    return laser::cmd_eval(eval, std::cout, std::cerr);
  }
  if (v->parsed()) return laser::cmd_vote(vote, std::cout, std::cerr);
  if (d->parsed()) return laser::cmd_diagnose(diag, std::cout, std::cerr);
  return laser::cmd_problems(probs, std::cout, std::cerr);
}
