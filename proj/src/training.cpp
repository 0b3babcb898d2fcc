#include "dgan/training.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dgan/error.hpp"
#include "dgan/synth.hpp"

namespace dgan {

namespace {

const std::string kDiscPrefix = "d";
const std::string kInvDiscPrefix = "di";
const std::string kStyleEncKey = "meta.style_encoder_spec";
const std::string kContentEncKey = "meta.content_encoder_spec";
const std::string kInvDiscKey = "meta.inversion_discriminator_spec";

void check_finite(const Tensor& t, const char* term, const char* where, std::size_t step) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(where) + ": non-finite " + term + " at step " +
                         std::to_string(step));
    }
  }
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::vector<std::size_t> checked_labels(const std::vector<std::size_t>& labels, std::size_t n,
                                        std::size_t domains, const char* where) {
  if (labels.empty()) {
    if (domains != 1) {
      throw ContractError(std::string(where) + ": labels are required for multi-domain specs");
    }
    return std::vector<std::size_t>(n, 0);
  }
  if (labels.size() != n) {
    throw ContractError(std::string(where) + ": one label per image is required");
  }
  for (std::size_t y : labels) {
    if (y >= domains) {
      throw ContractError(std::string(where) + ": label " + std::to_string(y) +
                          " has no domain head");
    }
  }
  return labels;
}

void check_images(const Tensor& images, std::size_t resolution, const char* where) {
  if (images.rank() != 4 || images.dim(0) == 0 || images.dim(1) != 3 ||
      images.dim(2) != resolution || images.dim(3) != resolution) {
    throw ContractError(std::string(where) + ": expected a nonempty [N,3," +
                        std::to_string(resolution) + "," + std::to_string(resolution) +
                        "] dataset, got " + shape_str(images.shape()));
  }
}

struct Batch {
  Tensor images;
  std::vector<std::size_t> labels;
};

Batch draw_batch(const Tensor& images, const std::vector<std::size_t>& labels, std::size_t size,
                 bool flip, Rng& rng) {
  const std::size_t n = images.dim(0), plane = images.numel() / n;
  std::vector<double> out(size * plane);
  Batch b;
  b.labels.resize(size);
  std::vector<bool> flags(size, false);
  auto src = images.data();
  for (std::size_t k = 0; k < size; ++k) {
    const std::size_t i = rng.index(n);
    std::copy_n(src.begin() + static_cast<long>(i * plane), plane,
                out.begin() + static_cast<long>(k * plane));
    b.labels[k] = labels[i];
    if (flip) flags[k] = rng.coin();
  }
  Shape shape = images.shape();
  shape[0] = size;
  b.images = Tensor::from(std::move(shape), std::move(out));
  if (flip) b.images = flip_horizontal(b.images, flags);
  return b;
}

std::vector<std::size_t> sample_domains(std::size_t n, std::size_t domains, Rng& rng) {
  std::vector<std::size_t> out(n);
  for (auto& y : out) y = rng.index(domains);
  return out;
}

class CsvLog {
 public:
  CsvLog(const TrainOutput& output, const std::string& header) : output_(output) {
    if (output_.run_dir.empty()) return;
    std::filesystem::create_directories(output_.run_dir);
    path_ = output_.run_dir + "/loss.csv";
    std::ofstream out(path_, std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path_ + "'");
    out << header << '\n';
  }

  void row(std::size_t step, const std::string& line) {
    if (!path_.empty()) {
      std::ofstream out(path_, std::ios::app);
      out << line << '\n';
      if (!out) throw IoError("failed writing '" + path_ + "'");
    }
    if (output_.on_step) output_.on_step(step, line);
  }

  bool writes_files() const { return !path_.empty(); }
  std::string checkpoint_path(std::size_t step) const {
    return output_.run_dir + "/" + std::to_string(step) + ".dgan";
  }

 private:
  const TrainOutput& output_;
  std::string path_;
};

bool checkpoint_due(std::size_t step, std::size_t last, std::size_t interval) {
  return step == last || (interval > 0 && step % interval == 0);
}

}  // namespace

// ---- optimizer --------------------------------------------------------------

std::map<std::string, Tensor> named_grads(const ParamSet& params, const GradientMap& grads) {
  std::map<std::string, Tensor> out;
  for (const auto& [name, p] : params) {
    auto it = grads.find(p.id());
    out[name] = it != grads.end() ? it->second : Tensor::zeros(p.shape());
  }
  return out;
}

ParamSet adam_step(const ParamSet& params, const std::map<std::string, Tensor>& grads,
                   AdamState& state) {
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end()) throw ContractError("adam_step: gradient for unknown parameter '" + name + "'");
    if (g.shape() != it->second.shape()) {
      throw DimensionError("adam_step: gradient of '" + name + "' has shape " + shape_str(g.shape()) +
                           ", parameter has " + shape_str(it->second.shape()));
    }
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  ParamSet out;
  for (const auto& [name, p] : params) {
    const std::size_t n = p.numel();
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.size() != n) m.assign(n, 0.0);
    if (v.size() != n) v.assign(n, 0.0);
    auto git = grads.find(name);
    std::span<const double> g;
    if (git != grads.end()) g = git->second.data();
    std::vector<double> next = p.to_vector();
    for (std::size_t i = 0; i < n; ++i) {
      const double gi = g.empty() ? 0.0 : g[i];
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
      const double mhat = bc1 > 0 ? m[i] / bc1 : m[i];
      const double vhat = v[i] / bc2;
      next[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
    out[name] = Tensor::from(p.shape(), std::move(next), p.requires_grad());
  }
  return out;
}

// ---- configuration ----------------------------------------------------------

void TrainConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ValidationError(field + ": " + why);
  };
  if (iterations == 0) fail("iterations", "must be positive");
  if (batch_size == 0) fail("batch_size", "must be positive");
  if (!(lr >= 0) || !std::isfinite(lr)) fail("lr", "must be finite and >= 0");
  if (!(lr_decayed >= 0) || !std::isfinite(lr_decayed)) fail("lr_decayed", "must be finite and >= 0");
  if (!(adam_beta1 >= 0 && adam_beta1 < 1)) fail("adam_beta1", "must lie in [0,1)");
  if (!(adam_beta2 >= 0 && adam_beta2 < 1)) fail("adam_beta2", "must lie in [0,1)");
  if (!(adam_eps > 0)) fail("adam_eps", "must be positive");
  if (!(invert_lr >= 0) || !std::isfinite(invert_lr)) fail("invert_lr", "must be finite and >= 0");
  if (!(invert_lr_decayed >= 0) || !std::isfinite(invert_lr_decayed)) {
    fail("invert_lr_decayed", "must be finite and >= 0");
  }
  if (!(invert_beta1 >= 0 && invert_beta1 < 1)) fail("invert_beta1", "must lie in [0,1)");
  if (!(invert_beta2 >= 0 && invert_beta2 < 1)) fail("invert_beta2", "must lie in [0,1)");
  weights.validate();
  for (std::size_t i = 0; i < lambda_schedule.size(); ++i) {
    const auto& [step, lambda] = lambda_schedule[i];
    if (!(lambda >= 0) || !std::isfinite(lambda)) fail("lambda_schedule", "lambda must be finite and >= 0");
    if (i > 0 && step <= lambda_schedule[i - 1].first) {
      fail("lambda_schedule", "steps must be strictly increasing");
    }
  }
}

double TrainConfig::effective_lambda(std::size_t step) const {
  double lambda = weights.lambda_ds;
  for (const auto& [at, value] : lambda_schedule) {
    if (step >= at) lambda = value;
  }
  return lambda;
}

double TrainConfig::lr_at(std::size_t step) const {
  return lr_decay_step > 0 && step >= lr_decay_step ? lr_decayed : lr;
}

double TrainConfig::invert_lr_at(std::size_t step) const {
  return invert_lr_decay_step > 0 && step >= invert_lr_decay_step ? invert_lr_decayed : invert_lr;
}

// ---- GAN training -----------------------------------------------------------

std::string loss_csv_header() { return "step,loss_g,loss_d,loss_ds,r1,effective_lambda"; }

std::string to_csv(const LossRow& r) {
  return std::to_string(r.step) + "," + fmt(r.loss_g) + "," + fmt(r.loss_d) + "," + fmt(r.loss_ds) +
         "," + fmt(r.r1) + "," + fmt(r.effective_lambda);
}

Checkpoint GanTrainResult::checkpoint() const {
  return make_gan_checkpoint(gen_spec, generator, disc_spec, discriminator);
}

GeneratorModel GanTrainResult::model() const {
  return GeneratorModel(gen_spec, as_leaves(generator, false));
}

GanTrainResult init_gan(const GeneratorSpec& spec, const TrainConfig& config) {
  spec.validate();
  GanTrainResult r;
  r.gen_spec = spec;
  r.disc_spec = EncoderSpec::mirror(spec, spec.num_style_domains, 1);
  Rng root(derive_seed(config.seed, "init"));
  Rng g_rng = root.child("generator");
  Rng d_rng = root.child("discriminator");
  r.generator = init_generator(spec, g_rng);
  r.discriminator = init_encoder(r.disc_spec, kDiscPrefix, d_rng);
  return r;
}

GanTrainResult train_gan(const GeneratorSpec& spec, const TrainConfig& config,
                         const Tensor& images, const std::vector<std::size_t>& labels,
                         const TrainOutput& output) {
  config.validate();
  return train_gan(init_gan(spec, config), config, images, labels, output);
}

GanTrainResult train_gan(GanTrainResult state, const TrainConfig& config, const Tensor& images,
                         const std::vector<std::size_t>& labels, const TrainOutput& output) {
  config.validate();
  const GeneratorSpec& spec = state.gen_spec;
  spec.validate();
  check_images(images, spec.output_resolution(), "train_gan");
  const auto all_labels = checked_labels(labels, images.dim(0), spec.num_style_domains, "train_gan");
  const std::size_t domains = spec.num_style_domains;
  const std::size_t bsz = config.batch_size;
  const double gamma = config.weights.gamma_r1;

  ParamSet gen = as_leaves(state.generator, true);
  ParamSet disc = as_leaves(state.discriminator, true);
  AdamState g_opt{config.lr, config.adam_beta1, config.adam_beta2, config.adam_eps, 0, {}, {}};
  AdamState d_opt = g_opt;
  CsvLog log(output, loss_csv_header());
  const std::size_t first = state.log.empty() ? 1 : state.log.back().step + 1;
  const std::size_t last = first + config.iterations - 1;

  for (std::size_t step = first; step <= last; ++step) {
    Rng rng(derive_seed(config.seed, "step", step));
    Rng data_rng = rng.child("data");
    Rng z_rng = rng.child("latent");
    Rng noise_rng = rng.child("noise");
    Batch batch = draw_batch(images, all_labels, bsz, config.flip_augment, data_rng);
    const auto fake_domains = sample_domains(bsz, domains, z_rng);
    Tensor z_s = Tensor::from({bsz, spec.dim_z_s}, z_rng.normal_vector(bsz * spec.dim_z_s));
    Tensor z_c1 = Tensor::from({bsz, spec.dim_z_c}, z_rng.normal_vector(bsz * spec.dim_z_c));
    Tensor z_c2 = Tensor::from({bsz, spec.dim_z_c}, z_rng.normal_vector(bsz * spec.dim_z_c));
    GeneratorOptions opt1, opt2;
    if (spec.use_pixel_noise) {
      opt1.noise = sample_noise(spec, bsz, noise_rng);
      opt2.noise = sample_noise(spec, bsz, noise_rng);
    }
    const double lr = config.lr_at(step);
    const double lambda = config.effective_lambda(step);
    LossRow row;
    row.step = step;
    row.effective_lambda = lambda;

    // Discriminator step.
    {
      Tensor fake;
      {
        NoGradGuard no_grad;
        Tensor s = map_style(spec, gen, z_s, fake_domains);
        Tensor c = map_content(spec, gen, z_c1);
        fake = generator_forward(spec, gen, LayerCodes::uniform(s, c, spec.num_layers()), opt1);
      }
      Tensor real = batch.images.as_leaf(gamma > 0);
      Tensor real_score = discriminator_forward(state.disc_spec, disc, kDiscPrefix, real, batch.labels);
      Tensor fake_score = discriminator_forward(state.disc_spec, disc, kDiscPrefix, fake, fake_domains);
      DiscriminatorLoss dl = adv_loss_d(real_score, fake_score, real, gamma);
      check_finite(dl.data_term, "discriminator adversarial loss", "train_gan", step);
      check_finite(dl.r1, "R1 penalty", "train_gan", step);
      GradientMap grads = backward(dl.total);
      d_opt.lr = lr;
      disc = adam_step(disc, named_grads(disc, grads), d_opt);
      row.loss_d = dl.total.item();
      row.r1 = dl.r1.item();
    }

    // Generator step.
    {
      ParamSet frozen_disc = as_leaves(disc, false);
      Tensor s = map_style(spec, gen, z_s, fake_domains);
      Tensor c1 = map_content(spec, gen, z_c1);
      Tensor x1 = generator_forward(spec, gen, LayerCodes::uniform(s, c1, spec.num_layers()), opt1);
      Tensor adv = adv_loss_g(
          discriminator_forward(state.disc_spec, frozen_disc, kDiscPrefix, x1, fake_domains));
      Tensor ds = Tensor::scalar(0.0);
      if (lambda > 0) {
        Tensor c2 = map_content(spec, gen, z_c2);
        Tensor x2 = generator_forward(spec, gen, LayerCodes::uniform(s, c2, spec.num_layers()), opt2);
        ds = ds_loss(x1, x2, lambda);
      }
      check_finite(adv, "generator adversarial loss", "train_gan", step);
      check_finite(ds, "DS loss", "train_gan", step);
      Tensor total = total_loss_g(adv, ds);
      if (!config.freeze_generator) {
        GradientMap grads = backward(total);
        g_opt.lr = lr;
        gen = adam_step(gen, named_grads(gen, grads), g_opt);
      }
      row.loss_g = total.item();
      row.loss_ds = ds.item();
    }

    state.log.push_back(row);
    log.row(step, to_csv(row));
    if (log.writes_files() && checkpoint_due(step, last, config.checkpoint_interval)) {
      state.generator = gen;
      state.discriminator = disc;
      save_checkpoint(state.checkpoint(), log.checkpoint_path(step));
    }
  }
  state.generator = as_leaves(gen, false);
  state.discriminator = as_leaves(disc, false);
  return state;
}

// ---- inversion --------------------------------------------------------------

std::string inversion_csv_header() {
  return "step,loss_latent,loss_encoder,loss_disc,mse,lambda_lat,lambda_adv";
}

std::string to_csv(const InversionLossRow& r) {
  return std::to_string(r.step) + "," + fmt(r.loss_latent) + "," + fmt(r.loss_encoder) + "," +
         fmt(r.loss_disc) + "," + fmt(r.mse) + "," + fmt(r.lambda_lat) + "," + fmt(r.lambda_adv);
}

Checkpoint InversionTrainResult::checkpoint() const {
  Checkpoint ckpt;
  for (const auto& [k, v] : encoders.params) ckpt.tensors[k] = v.detach();
  for (const auto& [k, v] : discriminator) ckpt.tensors[k] = v.detach();
  auto put = [&](const std::string& key, const std::vector<double>& v) {
    ckpt.tensors[key] = Tensor::from({v.size()}, v);
  };
  put(kStyleEncKey, encoders.style_spec.to_vector());
  put(kContentEncKey, encoders.content_spec.to_vector());
  put(kInvDiscKey, disc_spec.to_vector());
  return ckpt;
}

InversionEncoders load_encoders(const Checkpoint& ckpt) {
  InversionEncoders enc;
  try {
    enc.style_spec = EncoderSpec::from_vector(ckpt.get(kStyleEncKey).to_vector());
    enc.content_spec = EncoderSpec::from_vector(ckpt.get(kContentEncKey).to_vector());
    enc.style_spec.validate();
    enc.content_spec.validate();
  } catch (const ValidationError& e) {
    throw FormatError(std::string("checkpoint: invalid encoder spec: ") + e.what());
  }
  enc.params = select_prefix(ckpt.tensors, "se.");
  enc.params.merge(select_prefix(ckpt.tensors, "ce."));
  Rng probe(0);
  auto check = [&](const EncoderSpec& spec, const std::string& prefix) {
    for (const auto& [k, v] : init_encoder(spec, prefix, probe)) {
      auto it = enc.params.find(k);
      if (it == enc.params.end()) throw FormatError("checkpoint: missing encoder tensor '" + k + "'");
      if (it->second.shape() != v.shape()) {
        throw FormatError("checkpoint: tensor '" + k + "' has shape " + shape_str(it->second.shape()) +
                          ", expected " + shape_str(v.shape()));
      }
    }
  };
  check(enc.style_spec, "se");
  check(enc.content_spec, "ce");
  enc.params = as_leaves(enc.params, false);
  return enc;
}

InversionTrainResult train_inversion(const GeneratorModel& generator, const TrainConfig& config,
                                     const Tensor& images, const std::vector<std::size_t>& labels,
                                     const FeatureExtractor& fx, const TrainOutput& output) {
  config.validate();
  const GeneratorSpec& spec = generator.spec();
  check_images(images, spec.output_resolution(), "train_inversion");
  const std::size_t domains = spec.num_style_domains;
  const auto all_labels = checked_labels(labels, images.dim(0), domains, "train_inversion");
  const GeneratorModel frozen(spec, as_leaves(generator.params(), false));
  const std::size_t bsz = config.batch_size;
  const double gamma = config.weights.gamma_r1;
  const LossWeights& w = config.weights;

  InversionTrainResult r;
  Rng root(derive_seed(config.seed, "inversion-init"));
  Rng enc_rng = root.child("encoders");
  Rng disc_rng = root.child("discriminator");
  r.encoders = InversionEncoders::init(spec, enc_rng);
  r.encoders.params = as_leaves(r.encoders.params, true);
  r.disc_spec = EncoderSpec::mirror(spec, domains, 1);
  ParamSet disc = as_leaves(init_encoder(r.disc_spec, kInvDiscPrefix, disc_rng), true);
  AdamState e_opt{config.invert_lr, config.invert_beta1, config.invert_beta2, config.adam_eps, 0, {}, {}};
  AdamState d_opt{config.invert_lr, config.adam_beta1, config.adam_beta2, config.adam_eps, 0, {}, {}};
  CsvLog log(output, inversion_csv_header());

  for (std::size_t step = 1; step <= config.iterations; ++step) {
    Rng rng(derive_seed(config.seed, "invert-step", step));
    Rng data_rng = rng.child("data");
    Rng z_rng = rng.child("latent");
    Batch batch = draw_batch(images, all_labels, bsz, config.flip_augment, data_rng);
    const auto y = sample_domains(bsz, domains, z_rng);
    InversionLossRow row;
    row.step = step;
    row.lambda_lat = w.lambda_lat;
    row.lambda_adv = w.lambda_adv;
    const double lr = config.invert_lr_at(step);

    // (b) codes -> fake image -> encoders.
    Tensor s, c, x_fake;
    {
      NoGradGuard no_grad;
      Tensor z_s = Tensor::from({bsz, spec.dim_z_s}, z_rng.normal_vector(bsz * spec.dim_z_s));
      Tensor z_c = Tensor::from({bsz, spec.dim_z_c}, z_rng.normal_vector(bsz * spec.dim_z_c));
      s = map_style(spec, frozen.params(), z_s, y);
      c = map_content(spec, frozen.params(), z_c);
      x_fake = frozen.render(s, c);
    }
    Tensor latent = inversion_latent_loss(s, r.encoders.encode_style(x_fake, y), c,
                                          r.encoders.encode_content(x_fake), w.latent_squared);

    // (c) real image -> encoders -> reconstruction.
    Tensor s_e = r.encoders.encode_style(batch.images, batch.labels);
    Tensor c_e = r.encoders.encode_content(batch.images);
    Tensor x_rec = frozen.render(s_e, c_e);
    Tensor rec_score = discriminator_forward(r.disc_spec, as_leaves(disc, false), kInvDiscPrefix,
                                             x_rec, batch.labels);
    Tensor enc_loss = inversion_encoder_loss(batch.images, x_rec, latent, rec_score, w, fx);
    check_finite(latent, "latent loss", "train_inversion", step);
    check_finite(enc_loss, "encoder loss", "train_inversion", step);
    GradientMap enc_grads = backward(enc_loss);
    e_opt.lr = lr;
    r.encoders.params = adam_step(r.encoders.params, named_grads(r.encoders.params, enc_grads), e_opt);
    row.loss_latent = latent.item();
    row.loss_encoder = enc_loss.item();
    row.mse = mse(batch.images, x_rec).item();

    // Discriminator on real vs reconstruction.
    Tensor real = batch.images.as_leaf(gamma > 0);
    Tensor real_score = discriminator_forward(r.disc_spec, disc, kInvDiscPrefix, real, batch.labels);
    Tensor fake_score = discriminator_forward(r.disc_spec, disc, kInvDiscPrefix, x_rec.detach(),
                                              batch.labels);
    DiscriminatorLoss dl = adv_loss_d(real_score, fake_score, real, gamma);
    check_finite(dl.total, "discriminator loss", "train_inversion", step);
    GradientMap d_grads = backward(dl.total);
    d_opt.lr = lr;
    disc = adam_step(disc, named_grads(disc, d_grads), d_opt);
    row.loss_disc = dl.total.item();

    r.log.push_back(row);
    log.row(step, to_csv(row));
    if (log.writes_files() && checkpoint_due(step, config.iterations, config.checkpoint_interval)) {
      r.discriminator = disc;
      save_checkpoint(r.checkpoint(), log.checkpoint_path(step));
    }
  }
  r.encoders.params = as_leaves(r.encoders.params, false);
  r.discriminator = as_leaves(disc, false);
  return r;
}

LatentOptResult optimize_latents(const Tensor& x_real, std::size_t domain,
                                 const GeneratorModel& generator,
                                 const InversionEncoders& encoders, const LatentOptConfig& config,
                                 const FeatureExtractor& fx, const Tensor& init_s,
                                 const Tensor& init_c) {
  const GeneratorSpec& spec = generator.spec();
  const std::size_t res = spec.output_resolution();
  Tensor target = x_real.rank() == 3 ? reshape(x_real, {1, 3, x_real.dim(1), x_real.dim(2)}) : x_real;
  if (target.rank() != 4 || target.dim(1) != 3 || target.dim(2) != res || target.dim(3) != res) {
    throw ContractError("optimize_latents: image shape " + shape_str(x_real.shape()) +
                        " does not match the generator resolution " + std::to_string(res));
  }
  if (domain >= spec.num_style_domains) {
    throw ContractError("optimize_latents: domain " + std::to_string(domain) + " has no head");
  }
  if (!(config.lr >= 0) || config.lambda_reg < 0) {
    throw ContractError("optimize_latents: lr and lambda_reg must be >= 0");
  }
  target = target.detach();
  const std::vector<std::size_t> domains(target.dim(0), domain);
  const GeneratorModel frozen(spec, as_leaves(generator.params(), false));
  InversionEncoders enc = encoders;
  enc.params = as_leaves(enc.params, false);

  ParamSet codes;
  {
    NoGradGuard no_grad;
    codes["c"] = init_c.defined() ? init_c.detach() : enc.encode_content(target);
    codes["s"] = init_s.defined() ? init_s.detach() : enc.encode_style(target, domains);
  }
  auto recon_mse = [&](const ParamSet& p) {
    NoGradGuard no_grad;
    return mse(target, frozen.render(p.at("s"), p.at("c"))).item();
  };
  LatentOptResult out;
  out.initial_mse = recon_mse(codes);
  codes = as_leaves(codes, true);
  AdamState opt{config.lr, config.beta1, config.beta2, 1e-8, 0, {}, {}};
  for (std::size_t step = 0; step < config.steps; ++step) {
    Tensor loss = latent_opt_loss(codes.at("s"), codes.at("c"), target, frozen, enc, domains,
                                  config.lambda_reg, fx);
    const double value = loss.item();
    if (!std::isfinite(value)) {
      throw NumericError("optimize_latents: non-finite loss at step " + std::to_string(step));
    }
    out.trace.push_back(value);
    GradientMap grads = backward(loss);
    codes = adam_step(codes, named_grads(codes, grads), opt);
  }
  out.s = codes.at("s").detach();
  out.c = codes.at("c").detach();
  out.final_mse = recon_mse(codes);
  return out;
}

}  // namespace dgan
