#include <CLI11.hpp>

#include <iostream>

#include "dtvae/commands.hpp"

int main(int argc, char** argv) {
  using namespace dtvae;
  CLI::App app{"VAE with a dyadic (identity plus low-rank) posterior transform"};
  app.require_subcommand(1);

  TrainOptions train;
  auto* train_cmd = app.add_subcommand("train", "train a model and write checkpoint + metrics.csv");
  train_cmd->add_option("--data-dir", train.data_dir, "directory holding the MNIST IDX files")->required();
  train_cmd->add_option("--out", train.out_dir, "output directory")->required();
  train_cmd->add_option("--latent", train.latent, "latent dimension n")->capture_default_str();
  train_cmd->add_option("--rank", train.rank, "rank k of the transform, 0 for the plain VAE")->capture_default_str();
  train_cmd->add_option("--epsilon", train.epsilon, "transform scale")->capture_default_str();
  train_cmd->add_option("--batch", train.batch, "minibatch size")->capture_default_str();
  train_cmd->add_option("--epochs", train.epochs, "total epochs")->capture_default_str();
  train_cmd->add_option("--lr", train.lr, "Adam learning rate")->capture_default_str();
  train_cmd->add_option("--seed", train.seed, "run seed")->capture_default_str();
  train_cmd->add_option("--hidden", train.hidden, "hidden layer width")->capture_default_str();
  train_cmd->add_option("--subset", train.subset, "train on the first COUNT images only");
  train_cmd->add_flag("--validate", train.validate, "hold out the last 10,000 training images");
  train_cmd->add_option("--eval-samples", train.eval_samples, "samples per image for validation")->capture_default_str();
  train_cmd->add_option("--resume", train.resume, "continue from this checkpoint");
  train_cmd->add_flag("--zero-init", train.zero_init, "start from all-zero weights");

  EvalOptions eval;
  auto* eval_cmd = app.add_subcommand("eval", "print the test-set ELBO of a checkpoint");
  eval_cmd->add_option("--checkpoint", eval.checkpoint)->required();
  eval_cmd->add_option("--data-dir", eval.data_dir)->required();
  eval_cmd->add_option("--samples", eval.samples, "samples per test image")->capture_default_str();
  eval_cmd->add_option("--seed", eval.seed)->capture_default_str();
  eval_cmd->add_option("--subset", eval.subset, "evaluate the first COUNT test images only");

  GradcheckOptions grad;
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference check of every parameter block");
  grad_cmd->add_option("--seed", grad.seed)->capture_default_str();
  grad_cmd->add_option("--latent", grad.latent)->capture_default_str();
  grad_cmd->add_option("--rank", grad.rank)->capture_default_str();
  grad_cmd->add_option("--hidden", grad.hidden)->capture_default_str();
  grad_cmd->add_option("--epsilon", grad.epsilon)->capture_default_str();
  grad_cmd->add_option("--step", grad.step)->capture_default_str();
  grad_cmd->add_option("--tolerance", grad.tolerance)->capture_default_str();
  grad_cmd->add_option("--corrupt-block", grad.corrupt_block)->group("");  // test hook

  SelftestOptions self;
  auto* self_cmd = app.add_subcommand("selftest", "run the dense-oracle checks");
  self_cmd->add_option("--seed", self.seed)->capture_default_str();

  SampleOptions samp;
  auto* samp_cmd = app.add_subcommand("sample", "decode prior draws to PGM images");
  samp_cmd->add_option("--checkpoint", samp.checkpoint)->required();
  samp_cmd->add_option("--count", samp.count)->capture_default_str();
  samp_cmd->add_option("--seed", samp.seed)->capture_default_str();
  samp_cmd->add_option("--out", samp.out_dir)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  if (*train_cmd) return cmd_train(train, std::cout, std::cerr);
  if (*eval_cmd) return cmd_eval(eval, std::cout, std::cerr);
  if (*grad_cmd) return cmd_gradcheck(grad, std::cout, std::cerr);
  if (*self_cmd) return cmd_selftest(self, std::cout, std::cerr);
  if (*samp_cmd) return cmd_sample(samp, std::cout, std::cerr);
  return kExitUsage;
}
