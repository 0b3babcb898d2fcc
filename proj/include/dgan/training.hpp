#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dgan/checkpoint.hpp"
#include "dgan/losses.hpp"
#include "dgan/metrics.hpp"
#include "dgan/networks.hpp"
#include "dgan/tensor.hpp"

namespace dgan {

// ---- optimizer --------------------------------------------------------------

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.0;
  double beta2 = 0.99;
  double eps = 1e-8;
  std::size_t step = 0;
  std::map<std::string, std::vector<double>> m;
  std::map<std::string, std::vector<double>> v;
};

/// Gradients keyed by parameter name. Parameters the graph never reached get
/// zeros.
std::map<std::string, Tensor> named_grads(const ParamSet& params, const GradientMap& grads);

/// One bias-corrected Adam update. Returns fresh leaves (same requires_grad
/// flags) and advances `state`. Names in `grads` must exist in `params`;
/// missing names count as zero gradients.
ParamSet adam_step(const ParamSet& params, const std::map<std::string, Tensor>& grads,
                   AdamState& state);

// ---- configuration ----------------------------------------------------------

struct TrainConfig {
  std::size_t iterations = 2000;
  std::size_t batch_size = 8;
  double lr = 0.002;
  /// Step at which the learning rate switches to `lr_decayed`; 0 disables.
  std::size_t lr_decay_step = 0;
  double lr_decayed = 0.0002;
  double adam_beta1 = 0.0;
  double adam_beta2 = 0.99;
  double adam_eps = 1e-8;
  LossWeights weights;
  /// (step, lambda) points; from each step on, the DS weight becomes lambda.
  std::vector<std::pair<std::size_t, double>> lambda_schedule;
  std::uint64_t seed = 1;
  /// Checkpoint every this many steps (and always after the last); 0 writes
  /// only the final checkpoint.
  std::size_t checkpoint_interval = 0;
  bool flip_augment = true;
  bool freeze_generator = false;

  // Encoder training for inversion.
  double invert_lr = 0.001;
  std::size_t invert_lr_decay_step = 0;
  double invert_lr_decayed = 0.0001;
  double invert_beta1 = 0.9;
  double invert_beta2 = 0.999;

  /// Throws ValidationError naming the offending field.
  void validate() const;
  double effective_lambda(std::size_t step) const;
  double lr_at(std::size_t step) const;
  double invert_lr_at(std::size_t step) const;
};

struct TrainOutput {
  /// When non-empty, checkpoints go to {run_dir}/{step}.dgan and the loss
  /// curve to {run_dir}/loss.csv.
  std::string run_dir;
  std::function<void(std::size_t step, const std::string& csv_row)> on_step;
};

// ---- GAN training -----------------------------------------------------------

struct LossRow {
  std::size_t step = 0;
  double loss_g = 0, loss_d = 0, loss_ds = 0, r1 = 0, effective_lambda = 0;
};

std::string loss_csv_header();
std::string to_csv(const LossRow& row);

struct GanTrainResult {
  GeneratorSpec gen_spec;
  EncoderSpec disc_spec;
  ParamSet generator;
  ParamSet discriminator;
  std::vector<LossRow> log;

  Checkpoint checkpoint() const;
  GeneratorModel model() const;
};

/// Fresh generator and discriminator for a spec, from the config seed.
GanTrainResult init_gan(const GeneratorSpec& spec, const TrainConfig& config);

/// `labels` may be empty for a single-domain spec.
GanTrainResult train_gan(const GeneratorSpec& spec, const TrainConfig& config,
                         const Tensor& images, const std::vector<std::size_t>& labels,
                         const TrainOutput& output = {});
/// Continues from `state` for config.iterations steps.
GanTrainResult train_gan(GanTrainResult state, const TrainConfig& config, const Tensor& images,
                         const std::vector<std::size_t>& labels, const TrainOutput& output = {});

// ---- inversion --------------------------------------------------------------

struct InversionLossRow {
  std::size_t step = 0;
  double loss_latent = 0, loss_encoder = 0, loss_disc = 0, mse = 0;
  double lambda_lat = 0, lambda_adv = 0;
};

std::string inversion_csv_header();
std::string to_csv(const InversionLossRow& row);

struct InversionTrainResult {
  InversionEncoders encoders;
  EncoderSpec disc_spec;
  ParamSet discriminator;
  std::vector<InversionLossRow> log;

  Checkpoint checkpoint() const;
};

InversionEncoders load_encoders(const Checkpoint& ckpt);

/// Trains style/content encoders and a fresh discriminator against a frozen
/// generator.
InversionTrainResult train_inversion(const GeneratorModel& generator, const TrainConfig& config,
                                     const Tensor& images, const std::vector<std::size_t>& labels,
                                     const FeatureExtractor& fx, const TrainOutput& output = {});

struct LatentOptConfig {
  std::size_t steps = 100;
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double lambda_reg = kDefaultLambdaReg;
};

struct LatentOptResult {
  Tensor s, c;
  /// Loss before each update; length equals the step count.
  std::vector<double> trace;
  double initial_mse = 0;
  double final_mse = 0;
};

/// Starts from the encoder outputs (or from `init_s`/`init_c` when given) and
/// runs Adam on the latent-regularized reconstruction loss.
LatentOptResult optimize_latents(const Tensor& x_real, std::size_t domain,
                                 const GeneratorModel& generator,
                                 const InversionEncoders& encoders, const LatentOptConfig& config,
                                 const FeatureExtractor& fx, const Tensor& init_s = {},
                                 const Tensor& init_c = {});

}  // namespace dgan
