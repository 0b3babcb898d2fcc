#include "dgan/cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "dgan/checkpoint.hpp"
#include "dgan/config.hpp"
#include "dgan/error.hpp"
#include "dgan/image_io.hpp"
#include "dgan/metrics.hpp"
#include "dgan/synth.hpp"
#include "dgan/training.hpp"

namespace dgan {

namespace {

namespace fs = std::filesystem;

constexpr std::size_t kMeanStyleSamples = 1000;

// Every command draws its randomness from one root seed. Image i of a sample
// grid uses style z from derive_seed(seed, "style", i) and content z from
// derive_seed(seed, "content", i).
Tensor style_z(const GeneratorModel& m, std::uint64_t seed, std::size_t i) {
  Rng rng(derive_seed(seed, "style", i));
  return m.sample_z_style(rng, 1);
}

Tensor content_z(const GeneratorModel& m, std::uint64_t seed, std::size_t i) {
  Rng rng(derive_seed(seed, "content", i));
  return m.sample_z_content(rng, 1);
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
  Shape shape = rows.front().shape();
  const std::size_t per = rows.front().numel() / shape[0];
  std::vector<double> out;
  out.reserve(per * rows.size());
  for (const auto& r : rows) out.insert(out.end(), r.data().begin(), r.data().end());
  shape[0] = out.size() / per;
  return Tensor::from(std::move(shape), std::move(out));
}

void require_file(const std::string& path, const char* what) {
  if (!fs::is_regular_file(path)) throw IoError(std::string(what) + " '" + path + "' does not exist");
}

void require_parent(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty() && !fs::is_directory(parent)) {
    throw IoError("output directory '" + parent.string() + "' does not exist");
  }
}

void require_domain(const GeneratorModel& m, std::size_t domain) {
  if (domain >= m.spec().num_style_domains) {
    throw ContractError("domain " + std::to_string(domain) + " has no style head (model has " +
                        std::to_string(m.spec().num_style_domains) + ")");
  }
}

/// Style codes of one domain with the truncation trick applied.
class StyleSampler {
 public:
  StyleSampler(const GeneratorModel& m, std::size_t domain, double psi, std::uint64_t seed)
      : model_(m), domain_(domain), psi_(psi) {
    if (!(psi >= 0 && psi <= 1)) throw ContractError("psi must lie in [0,1]");
    if (psi < 1) {
      mean_ = mean_style(m.spec(), m.params(), domain, kMeanStyleSamples,
                         derive_seed(seed, "style-mean"));
    }
  }

  Tensor operator()(const Tensor& z) const {
    Tensor s = model_.style_codes(z, domain_);
    return psi_ < 1 ? truncate(s, psi_, mean_) : s;
  }

 private:
  const GeneratorModel& model_;
  std::size_t domain_;
  double psi_;
  Tensor mean_;
};

LabConfig config_from(const std::string& path) {
  if (path.empty()) return LabConfig{};
  require_file(path, "config");
  return load_config(path);
}

LabeledImages dataset_for(const std::string& data_path, const LabConfig& cfg) {
  if (!data_path.empty()) return dataset_from_checkpoint(load_checkpoint(data_path));
  SynthDataset ds = synth_dataset(cfg.data);
  return {ds.images, ds.labels()};
}

Tensor attention_override(const std::string& spec, std::size_t h, std::size_t w) {
  std::vector<double> v(h * w, 0.0);
  auto fill = [&](auto pred) {
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) v[i * w + j] = pred(i, j) ? 1.0 : 0.0;
    }
  };
  if (spec.rfind("const:", 0) == 0) {
    double value = 0;
    try {
      std::size_t used = 0;
      value = std::stod(spec.substr(6), &used);
      if (used != spec.size() - 6) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ContractError("attention map '" + spec + "': expected const:<number>");
    }
    std::fill(v.begin(), v.end(), value);
  } else if (spec == "left-half") {
    fill([&](std::size_t, std::size_t j) { return 2 * j < w; });
  } else if (spec == "right-half") {
    fill([&](std::size_t, std::size_t j) { return 2 * j >= w; });
  } else if (spec == "top-half") {
    fill([&](std::size_t i, std::size_t) { return 2 * i < h; });
  } else if (spec == "bottom-half") {
    fill([&](std::size_t i, std::size_t) { return 2 * i >= h; });
  } else {
    require_file(spec, "attention map");
    Tensor img = image_read(spec);
    if (img.dim(1) != h || img.dim(2) != w) {
      throw ContractError("attention map '" + spec + "' is " + std::to_string(img.dim(1)) + "x" +
                          std::to_string(img.dim(2)) + ", layer expects " + std::to_string(h) +
                          "x" + std::to_string(w));
    }
    auto px = img.data();
    for (std::size_t p = 0; p < h * w; ++p) {
      v[p] = (px[p] + px[h * w + p] + px[2 * h * w + p]) / 3.0;
    }
  }
  for (double x : v) {
    if (!(x >= 0.0 && x <= 1.0)) throw ContractError("attention map values must lie in [0,1]");
  }
  return Tensor::from({h, w}, std::move(v));
}

std::size_t parse_layer_space(const std::string& space, std::size_t layers) {
  if (space.rfind("layer:", 0) != 0) {
    throw ContractError("space must be 'all' or 'layer:<k>', got '" + space + "'");
  }
  const std::string idx = space.substr(6);
  if (idx.empty() || idx.find_first_not_of("0123456789") != std::string::npos) {
    throw ContractError("invalid layer index in '" + space + "'");
  }
  const std::size_t k = std::stoul(idx);
  if (k >= layers) {
    throw ContractError("layer " + std::to_string(k) + " out of range (model has " +
                        std::to_string(layers) + " layers)");
  }
  return k;
}

void write_codes(const std::string& path, const Tensor& s, const Tensor& c) {
  Checkpoint ckpt;
  ckpt.tensors["codes.style"] = s.detach();
  ckpt.tensors["codes.content"] = c.detach();
  save_checkpoint(ckpt, path);
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

// ---- commands ---------------------------------------------------------------

struct Common {
  std::uint64_t seed = 1;
  bool seed_given = false;
  std::string config;
};

void cmd_synth_data(const Common& common, const std::string& out_dir, std::optional<std::size_t> n,
                    std::ostream& out) {
  LabConfig cfg = config_from(common.config);
  if (n) cfg.data.n_images = *n;
  if (common.seed_given) cfg.data.seed = common.seed;
  fs::create_directories(out_dir);
  SynthDataset ds = synth_dataset(cfg.data);
  save_checkpoint(make_dataset_checkpoint(ds.images, ds.labels()), out_dir + "/dataset.dgan");
  write_factor_table(out_dir + "/factors.csv", ds.factors);
  const std::size_t preview = std::min<std::size_t>(ds.factors.size(), 64);
  std::vector<std::size_t> idx(preview);
  for (std::size_t i = 0; i < preview; ++i) idx[i] = i;
  grid_write(ds.batch(idx), out_dir + "/preview.png");
  out << "wrote " << ds.factors.size() << " images to " << out_dir << "/dataset.dgan\n";
}

void cmd_train(const Common& common, const std::string& run, const std::string& data,
               std::ostream& out) {
  LabConfig cfg = config_from(common.config);
  if (common.seed_given) cfg.train.seed = common.seed;
  if (!data.empty()) require_file(data, "dataset");
  LabeledImages ds = dataset_for(data, cfg);
  fs::create_directories(run);
  TrainOutput output{run, [&](std::size_t step, const std::string& row) {
                       if (step % 100 == 0 || step == cfg.train.iterations) out << row << '\n';
                     }};
  out << loss_csv_header() << '\n';
  train_gan(cfg.generator, cfg.train, ds.images, ds.labels, output);
  out << "final checkpoint " << run << "/" << cfg.train.iterations << ".dgan\n";
}

void cmd_train_invert(const Common& common, const std::string& gen_path, const std::string& run,
                      const std::string& data, std::ostream& out) {
  LabConfig cfg = config_from(common.config);
  if (common.seed_given) cfg.train.seed = common.seed;
  require_file(gen_path, "generator checkpoint");
  if (!data.empty()) require_file(data, "dataset");
  GeneratorModel gen = load_generator(load_checkpoint(gen_path));
  cfg.data.resolution = gen.spec().output_resolution();
  cfg.data.num_domains = gen.spec().num_style_domains;
  LabeledImages ds = dataset_for(data, cfg);
  fs::create_directories(run);
  TrainOutput output{run, [&](std::size_t step, const std::string& row) {
                       if (step % 100 == 0 || step == cfg.train.iterations) out << row << '\n';
                     }};
  out << "lambda_lat=" << cfg.train.weights.lambda_lat << " lambda_adv=" << cfg.train.weights.lambda_adv
      << '\n'
      << inversion_csv_header() << '\n';
  train_inversion(gen, cfg.train, ds.images, ds.labels, FeatureExtractor::random_conv(), output);
  out << "final checkpoint " << run << "/" << cfg.train.iterations << ".dgan\n";
}

enum class SampleMode { VaryStyle, VaryContent, VaryBoth, Fixed };

void cmd_sample(const Common& common, const std::string& ckpt_path, std::size_t n, SampleMode mode,
                double psi, std::size_t domain, const std::string& out_path, std::ostream& out) {
  require_file(ckpt_path, "checkpoint");
  require_parent(out_path);
  if (n == 0) throw ContractError("n must be positive");
  GeneratorModel m = load_generator(load_checkpoint(ckpt_path));
  require_domain(m, domain);
  NoGradGuard no_grad;
  StyleSampler styles(m, domain, psi, common.seed);
  std::vector<Tensor> zs, zc;
  for (std::size_t i = 0; i < n; ++i) {
    const bool vary_s = mode == SampleMode::VaryStyle || mode == SampleMode::VaryBoth;
    const bool vary_c = mode == SampleMode::VaryContent || mode == SampleMode::VaryBoth;
    zs.push_back(style_z(m, common.seed, vary_s ? i : 0));
    zc.push_back(content_z(m, common.seed, vary_c ? i : 0));
  }
  Tensor images = m.render(styles(stack_rows(zs)), m.content_codes(stack_rows(zc)));
  grid_write(images, out_path);
  out << "wrote " << n << " samples to " << out_path << '\n';
}

void cmd_interpolate(const Common& common, const std::string& ckpt_path, const std::string& space,
                     std::size_t steps, double psi, std::size_t domain, const std::string& out_path,
                     std::ostream& out) {
  require_file(ckpt_path, "checkpoint");
  require_parent(out_path);
  if (steps < 2) throw ContractError("steps must be at least 2");
  GeneratorModel m = load_generator(load_checkpoint(ckpt_path));
  require_domain(m, domain);
  const std::size_t layers = m.spec().num_layers();
  std::optional<std::size_t> only;
  if (space != "all") only = parse_layer_space(space, layers);
  NoGradGuard no_grad;
  StyleSampler styles(m, domain, psi, common.seed);
  Tensor s = styles(style_z(m, common.seed, 0));
  Tensor c0 = m.content_codes(content_z(m, common.seed, 0));
  Tensor c1 = m.content_codes(content_z(m, common.seed, 1));
  std::vector<Tensor> frames;
  for (std::size_t k = 0; k < steps; ++k) {
    const double t = static_cast<double>(k) / static_cast<double>(steps - 1);
    Tensor ct = c0 * (1.0 - t) + c1 * t;
    LayerCodes codes = LayerCodes::uniform(s, c0, layers);
    for (std::size_t l = 0; l < layers; ++l) {
      if (!only || *only == l) codes.content[l] = ct;
    }
    frames.push_back(m.render(codes));
  }
  image_write(make_grid(stack_rows(frames), steps), out_path);
  out << "wrote " << steps << " frames to " << out_path << '\n';
}

void cmd_attn_edit(const Common& common, const std::string& ckpt_path, std::size_t layer,
                   const std::string& map_spec, double psi, std::size_t domain,
                   const std::string& out_path, const std::string& original_path, std::ostream& out) {
  require_file(ckpt_path, "checkpoint");
  require_parent(out_path);
  if (!original_path.empty()) require_parent(original_path);
  GeneratorModel m = load_generator(load_checkpoint(ckpt_path));
  require_domain(m, domain);
  const GeneratorSpec& spec = m.spec();
  if (layer >= spec.num_layers()) {
    throw ContractError("layer " + std::to_string(layer) + " out of range (model has " +
                        std::to_string(spec.num_layers()) + " layers)");
  }
  if (!spec.layer_has_dat(layer)) {
    throw ContractError("layer " + std::to_string(layer) + " has no attention map");
  }
  const std::size_t r = spec.layer_resolution(layer);
  Tensor map = attention_override(map_spec, r, r);
  NoGradGuard no_grad;
  StyleSampler styles(m, domain, psi, common.seed);
  Tensor s = styles(style_z(m, common.seed, 0));
  Tensor c = m.content_codes(content_z(m, common.seed, 0));
  GeneratorOptions opts;
  opts.attention_override[layer] = map;
  image_write(m.render(s, c, opts), out_path);
  if (!original_path.empty()) image_write(m.render(s, c), original_path);
  out << "wrote edited image to " << out_path << '\n';
}

void cmd_metrics(const Common& common, const std::string& ckpt_path,
                 const std::vector<std::string>& which, std::size_t budget, std::size_t domain,
                 const std::string& data, const std::string& csv_path, std::ostream& out) {
  LabConfig cfg = config_from(common.config);
  require_file(ckpt_path, "checkpoint");
  if (!data.empty()) require_file(data, "dataset");
  require_parent(csv_path);
  for (const auto& w : which) {
    if (w != "ppl-w" && w != "ppl-ws" && w != "ppl-wc" && w != "fid-proxy" && w != "diversity") {
      throw ContractError("unknown metric '" + w + "'");
    }
  }
  GeneratorModel m = load_generator(load_checkpoint(ckpt_path));
  require_domain(m, domain);
  NoGradGuard no_grad;
  ModelCodeGenerator gen(m, domain);
  const FeatureExtractor fx = FeatureExtractor::random_conv();
  std::vector<MetricRow> rows;
  for (const auto& w : which) {
    const std::uint64_t seed = derive_seed(common.seed, w);
    if (w.rfind("ppl-", 0) == 0) {
      PPLConfig pc = cfg.ppl;
      pc.mode = parse_ppl_mode(w.substr(4));
      if (budget > 0) {
        pc.n_samples = budget;
        pc.outer = std::max<std::size_t>(1, budget / pc.inner);
      }
      rows.push_back({"ppl", to_string(pc.mode), ppl(gen, pc, seed, fx), pc.total_samples(), common.seed});
    } else if (w == "fid-proxy") {
      cfg.data.resolution = m.spec().output_resolution();
      cfg.data.num_domains = m.spec().num_style_domains;
      LabeledImages ds = dataset_for(data, cfg);
      const std::size_t n = std::min(budget > 0 ? budget : std::size_t{1000}, ds.images.dim(0));
      if (n < 2) throw ContractError("fid-proxy needs at least 2 samples");
      Tensor real = Tensor::from({n, 3, ds.images.dim(2), ds.images.dim(3)},
                                 std::vector<double>(ds.images.data().begin(),
                                                     ds.images.data().begin() +
                                                         static_cast<long>(n * ds.images.numel() /
                                                                           ds.images.dim(0))));
      Rng rng(seed);
      std::vector<Tensor> fakes;
      for (std::size_t done = 0; done < n; done += 50) {
        const std::size_t b = std::min<std::size_t>(50, n - done);
        fakes.push_back(gen.synthesize(gen.sample_style(rng, b), gen.sample_content(rng, b)));
      }
      const double fd = frechet_distance(feature_stats(real, fx),
                                         feature_stats(stack_rows(fakes), fx));
      rows.push_back({"fid-proxy", "random_conv", fd, n, common.seed});
    } else {
      DiversityCounts counts = cfg.diversity;
      if (budget > 0) counts.groups = std::max<std::size_t>(1, budget / counts.per_group);
      for (DiversityMode mode : {DiversityMode::Both, DiversityMode::StyleOnly, DiversityMode::ContentOnly}) {
        rows.push_back({"diversity", to_string(mode), diversity_score(gen, mode, counts, seed, fx),
                        counts.groups * counts.per_group, common.seed});
      }
    }
  }
  append_metric_rows(csv_path, rows);
  out << metric_csv_header() << '\n';
  for (const auto& r : rows) out << to_csv(r) << '\n';
}

void cmd_invert(const LabConfig& cfg, const std::string& gen_path, const std::string& enc_path,
                const std::string& image_path, std::size_t domain, bool optimize,
                std::size_t steps, const std::string& out_dir, std::ostream& out) {
  require_file(gen_path, "generator checkpoint");
  require_file(enc_path, "encoder checkpoint");
  require_file(image_path, "image");
  GeneratorModel m = load_generator(load_checkpoint(gen_path));
  InversionEncoders enc = load_encoders(load_checkpoint(enc_path));
  require_domain(m, domain);
  Tensor img = image_read(image_path);
  const std::size_t r = m.spec().output_resolution();
  if (img.dim(1) != r || img.dim(2) != r) {
    throw ContractError("image '" + image_path + "' is " + std::to_string(img.dim(1)) + "x" +
                        std::to_string(img.dim(2)) + ", generator resolution is " + std::to_string(r));
  }
  fs::create_directories(out_dir);
  LatentOptConfig oc = cfg.invert;
  oc.steps = optimize ? steps : 0;
  LatentOptResult res = optimize_latents(img, domain, m, enc, oc, FeatureExtractor::random_conv());
  {
    NoGradGuard no_grad;
    image_write(m.render(res.s, res.c), out_dir + "/reconstruction.png");
  }
  write_codes(out_dir + "/codes.dgan", res.s, res.c);
  {
    std::ofstream trace(out_dir + "/trace.csv");
    trace << "step,loss\n";
    for (std::size_t i = 0; i < res.trace.size(); ++i) trace << i << ',' << fmt(res.trace[i]) << '\n';
    if (!trace) throw IoError("failed writing '" + out_dir + "/trace.csv'");
  }
  std::ofstream report(out_dir + "/report.csv");
  report << "mse_encoder,mse_final,steps\n"
         << fmt(res.initial_mse) << ',' << fmt(res.final_mse) << ',' << res.trace.size() << '\n';
  if (!report) throw IoError("failed writing '" + out_dir + "/report.csv'");
  out << "mse_encoder " << fmt(res.initial_mse) << "\nmse_final " << fmt(res.final_mse)
      << "\nsteps " << res.trace.size() << '\n';
}

}  // namespace

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const NumericError*>(&e)) return kExitNumeric;
  if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const FormatError*>(&e)) return kExitIo;
  if (dynamic_cast<const std::filesystem::filesystem_error*>(&e)) return kExitIo;
  if (dynamic_cast<const ValidationError*>(&e) || dynamic_cast<const ContractError*>(&e) ||
      dynamic_cast<const DimensionError*>(&e)) {
    return kExitValidation;
  }
  return 1;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Diagonal-attention GAN lab: synthetic data, training, sampling, editing, metrics, inversion",
               "dgan"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1, 1);
  app.fallthrough();

  Common common;
  app.add_option("--seed", common.seed, "Root seed for every random stream");
  app.add_option("--config", common.config, "JSON config file (flat keys)");

  // synth-data
  auto* synth = app.add_subcommand("synth-data", "Render the synthetic ellipse dataset");
  std::string synth_out;
  std::optional<std::size_t> synth_n;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--n", synth_n, "Number of images (default: data_size from the config, 2000)");

  // train
  auto* train = app.add_subcommand("train", "Train the GAN");
  std::string train_run, train_data;
  train->add_option("--run", train_run, "Run directory for {step}.dgan checkpoints and loss.csv")->required();
  train->add_option("--data", train_data, "Dataset file from synth-data (default: synthesize from config)");

  // train-invert
  auto* tinv = app.add_subcommand("train-invert", "Train inversion encoders against a frozen generator");
  std::string tinv_gen, tinv_run, tinv_data;
  tinv->add_option("--gen", tinv_gen, "Generator checkpoint")->required();
  tinv->add_option("--run", tinv_run, "Run directory")->required();
  tinv->add_option("--data", tinv_data, "Dataset file (default: synthesize from config)");

  // sample
  auto* sample = app.add_subcommand("sample", "Render a grid of samples");
  std::string sample_ckpt, sample_out;
  std::size_t sample_n = 16, sample_domain = 0;
  double sample_psi = kDefaultTruncationPsi;
  SampleMode sample_mode = SampleMode::VaryBoth;
  const std::map<std::string, SampleMode> mode_names{{"vary-style", SampleMode::VaryStyle},
                                                     {"vary-content", SampleMode::VaryContent},
                                                     {"vary-both", SampleMode::VaryBoth},
                                                     {"fixed", SampleMode::Fixed}};
  sample->add_option("--ckpt", sample_ckpt, "GAN checkpoint")->required();
  sample->add_option("--n", sample_n, "Number of images");
  sample->add_option("--mode", sample_mode, "vary-style | vary-content | vary-both | fixed")
      ->transform(CLI::CheckedTransformer(mode_names, CLI::ignore_case))
      ->option_text("MODE [vary-both]");
  sample->add_option("--psi", sample_psi, "Truncation of style codes toward their mean");
  sample->add_option("--domain", sample_domain, "Style domain");
  sample->add_option("--out", sample_out, "Output PNG grid")->required();

  // interpolate
  auto* interp = app.add_subcommand("interpolate", "Interpolate between two content codes");
  std::string interp_ckpt, interp_space = "all", interp_out;
  std::size_t interp_steps = 8, interp_domain = 0;
  double interp_psi = kDefaultTruncationPsi;
  interp->add_option("--ckpt", interp_ckpt, "GAN checkpoint")->required();
  interp->add_option("--space", interp_space, "all | layer:<k>");
  interp->add_option("--steps", interp_steps, "Frames including both endpoints");
  interp->add_option("--psi", interp_psi, "Truncation of the style code");
  interp->add_option("--domain", interp_domain, "Style domain");
  interp->add_option("--out", interp_out, "Output PNG strip")->required();

  // attn-edit
  auto* edit = app.add_subcommand("attn-edit", "Replace one layer's attention map");
  std::string edit_ckpt, edit_map, edit_out, edit_original;
  std::size_t edit_layer = 0, edit_domain = 0;
  double edit_psi = kDefaultTruncationPsi;
  edit->add_option("--ckpt", edit_ckpt, "GAN checkpoint")->required();
  edit->add_option("--layer", edit_layer, "Generator layer index");
  edit->add_option("--map", edit_map,
                   "PNG file, const:<v>, left-half, right-half, top-half or bottom-half")
      ->required();
  edit->add_option("--psi", edit_psi, "Truncation of the style code");
  edit->add_option("--domain", edit_domain, "Style domain");
  edit->add_option("--out", edit_out, "Edited image PNG")->required();
  edit->add_option("--original", edit_original, "Also write the unedited image here");

  // metrics
  auto* metrics = app.add_subcommand("metrics", "Evaluate metrics and append CSV rows");
  std::string metrics_ckpt, metrics_out, metrics_data;
  std::vector<std::string> metrics_which;
  std::size_t metrics_budget = 0, metrics_domain = 0;
  metrics->add_option("--ckpt", metrics_ckpt, "GAN checkpoint")->required();
  metrics->add_option("--which", metrics_which, "ppl-w, ppl-ws, ppl-wc, fid-proxy, diversity")
      ->required()
      ->check(CLI::IsMember({"ppl-w", "ppl-ws", "ppl-wc", "fid-proxy", "diversity"}));
  metrics->add_option("--budget", metrics_budget, "Sample budget per metric (0: config defaults)");
  metrics->add_option("--domain", metrics_domain, "Style domain");
  metrics->add_option("--data", metrics_data, "Reference dataset for fid-proxy (default: synthesize)");
  metrics->add_option("--out", metrics_out, "CSV file (appended)")->required();

  // invert
  auto* invert = app.add_subcommand("invert", "Invert an image into style and content codes");
  std::string inv_gen, inv_enc, inv_image, inv_out;
  std::size_t inv_domain = 0, inv_steps = 100;
  bool inv_optimize = true;
  invert->add_option("--gen", inv_gen, "Generator checkpoint")->required();
  invert->add_option("--enc", inv_enc, "Encoder checkpoint from train-invert")->required();
  invert->add_option("--image", inv_image, "Input PNG")->required();
  invert->add_option("--domain", inv_domain, "Style domain of the image");
  invert->add_flag("--optimize,!--no-optimize", inv_optimize, "Refine codes by latent optimization");
  invert->add_option("--steps", inv_steps, "Optimization steps");
  invert->add_option("--out", inv_out, "Output directory")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  common.seed_given = app.count("--seed") > 0;

  try {
    if (*synth) {
      cmd_synth_data(common, synth_out, synth_n, out);
    } else if (*train) {
      cmd_train(common, train_run, train_data, out);
    } else if (*tinv) {
      cmd_train_invert(common, tinv_gen, tinv_run, tinv_data, out);
    } else if (*sample) {
      cmd_sample(common, sample_ckpt, sample_n, sample_mode, sample_psi, sample_domain, sample_out, out);
    } else if (*interp) {
      cmd_interpolate(common, interp_ckpt, interp_space, interp_steps, interp_psi, interp_domain,
                      interp_out, out);
    } else if (*edit) {
      cmd_attn_edit(common, edit_ckpt, edit_layer, edit_map, edit_psi, edit_domain, edit_out,
                    edit_original, out);
    } else if (*metrics) {
      cmd_metrics(common, metrics_ckpt, metrics_which, metrics_budget, metrics_domain, metrics_data,
                  metrics_out, out);
    } else if (*invert) {
      LabConfig cfg = config_from(common.config);
      cmd_invert(cfg, inv_gen, inv_enc, inv_image, inv_domain, inv_optimize, inv_steps, inv_out, out);
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return kExitOk;
}

}  // namespace dgan
