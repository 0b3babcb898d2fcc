#include "dgan/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dgan/error.hpp"

namespace dgan {

namespace {

using json = nlohmann::json;

struct Field {
  std::function<void(const json&, LabConfig&)> read;
  std::function<json(const LabConfig&)> write;
};

[[noreturn]] void bad(const std::string& key, const std::string& why) {
  throw ValidationError(key + ": " + why);
}

std::size_t as_count(const json& v, const std::string& key) {
  if (!v.is_number_integer() || v.get<long long>() < 0) bad(key, "expected a non-negative integer");
  return v.get<std::size_t>();
}

double as_real(const json& v, const std::string& key) {
  if (!v.is_number()) bad(key, "expected a number");
  return v.get<double>();
}

bool as_bool(const json& v, const std::string& key) {
  if (!v.is_boolean()) bad(key, "expected true or false");
  return v.get<bool>();
}

std::vector<std::size_t> as_counts(const json& v, const std::string& key) {
  if (!v.is_array()) bad(key, "expected an array of non-negative integers");
  std::vector<std::size_t> out;
  for (const auto& e : v) out.push_back(as_count(e, key));
  return out;
}

#define DGAN_COUNT(key, member) \
  {key, Field{[](const json& v, LabConfig& c) { c.member = as_count(v, key); }, \
              [](const LabConfig& c) { return json(c.member); }}}
#define DGAN_REAL(key, member) \
  {key, Field{[](const json& v, LabConfig& c) { c.member = as_real(v, key); }, \
              [](const LabConfig& c) { return json(c.member); }}}
#define DGAN_BOOL(key, member) \
  {key, Field{[](const json& v, LabConfig& c) { c.member = as_bool(v, key); }, \
              [](const LabConfig& c) { return json(c.member); }}}
#define DGAN_COUNTS(key, member) \
  {key, Field{[](const json& v, LabConfig& c) { c.member = as_counts(v, key); }, \
              [](const LabConfig& c) { return json(c.member); }}}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = {
      // generator
      DGAN_COUNTS("resolutions", generator.resolutions),
      DGAN_COUNTS("channels", generator.channels),
      DGAN_COUNT("dim_z_s", generator.dim_z_s),
      DGAN_COUNT("dim_z_c", generator.dim_z_c),
      DGAN_COUNT("dim_s", generator.dim_s),
      DGAN_COUNT("dim_c", generator.dim_c),
      DGAN_COUNT("mapping_depth", generator.mapping_depth),
      DGAN_COUNT("dat_max_resolution", generator.dat_max_resolution),
      DGAN_BOOL("use_pixel_noise", generator.use_pixel_noise),
      DGAN_COUNT("num_style_domains", generator.num_style_domains),
      // training
      DGAN_COUNT("iterations", train.iterations),
      DGAN_COUNT("batch_size", train.batch_size),
      DGAN_REAL("lr", train.lr),
      DGAN_COUNT("lr_decay_step", train.lr_decay_step),
      DGAN_REAL("lr_decayed", train.lr_decayed),
      DGAN_REAL("adam_beta1", train.adam_beta1),
      DGAN_REAL("adam_beta2", train.adam_beta2),
      DGAN_REAL("adam_eps", train.adam_eps),
      DGAN_REAL("lambda_ds", train.weights.lambda_ds),
      DGAN_REAL("gamma_r1", train.weights.gamma_r1),
      DGAN_REAL("lambda_lat", train.weights.lambda_lat),
      DGAN_REAL("lambda_adv", train.weights.lambda_adv),
      DGAN_REAL("lambda_reg", train.weights.lambda_reg),
      DGAN_BOOL("latent_squared", train.weights.latent_squared),
      DGAN_COUNT("seed", train.seed),
      DGAN_COUNT("checkpoint_interval", train.checkpoint_interval),
      DGAN_BOOL("flip_augment", train.flip_augment),
      DGAN_BOOL("freeze_generator", train.freeze_generator),
      DGAN_REAL("invert_lr", train.invert_lr),
      DGAN_COUNT("invert_lr_decay_step", train.invert_lr_decay_step),
      DGAN_REAL("invert_lr_decayed", train.invert_lr_decayed),
      DGAN_REAL("invert_beta1", train.invert_beta1),
      DGAN_REAL("invert_beta2", train.invert_beta2),
      {"lambda_schedule",
       Field{[](const json& v, LabConfig& c) {
               const std::string key = "lambda_schedule";
               if (!v.is_array()) bad(key, "expected an array of [step, lambda] pairs");
               c.train.lambda_schedule.clear();
               for (const auto& e : v) {
                 if (!e.is_array() || e.size() != 2) bad(key, "expected [step, lambda] pairs");
                 c.train.lambda_schedule.emplace_back(as_count(e[0], key), as_real(e[1], key));
               }
             },
             [](const LabConfig& c) {
               json out = json::array();
               for (const auto& [s, l] : c.train.lambda_schedule) out.push_back({s, l});
               return out;
             }}},
      // data
      DGAN_COUNT("data_resolution", data.resolution),
      DGAN_COUNT("data_size", data.n_images),
      DGAN_COUNT("data_domains", data.num_domains),
      DGAN_COUNT("data_seed", data.seed),
      DGAN_REAL("data_major_fraction", data.major_fraction),
      // inference / metrics
      DGAN_REAL("psi", psi),
      DGAN_REAL("ppl_eps", ppl.eps),
      DGAN_COUNT("ppl_samples", ppl.n_samples),
      DGAN_COUNT("ppl_inner", ppl.inner),
      DGAN_COUNT("ppl_outer", ppl.outer),
      DGAN_COUNT("ppl_batch", ppl.batch),
      DGAN_COUNT("diversity_groups", diversity.groups),
      DGAN_COUNT("diversity_per_group", diversity.per_group),
      {"diversity_pairing",
       Field{[](const json& v, LabConfig& c) {
               if (v == "all") {
                 c.diversity.pairing = Pairing::AllPairs;
               } else if (v == "consecutive") {
                 c.diversity.pairing = Pairing::Consecutive;
               } else {
                 bad("diversity_pairing", "expected \"all\" or \"consecutive\"");
               }
             },
             [](const LabConfig& c) {
               return json(c.diversity.pairing == Pairing::AllPairs ? "all" : "consecutive");
             }}},
      DGAN_COUNT("invert_steps", invert.steps),
      DGAN_REAL("invert_opt_lr", invert.lr),
  };
  return table;
}

#undef DGAN_COUNT
#undef DGAN_REAL
#undef DGAN_BOOL
#undef DGAN_COUNTS

std::pair<std::size_t, std::size_t> line_col(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i + 1 < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

}  // namespace

void LabConfig::validate() const {
  generator.validate();
  train.validate();
  try {
    data.validate();
  } catch (const ContractError& e) {
    throw ValidationError(std::string("data: ") + e.what());
  }
  if (data.resolution != generator.output_resolution()) {
    throw ValidationError("data_resolution: must equal the generator output resolution " +
                          std::to_string(generator.output_resolution()));
  }
  if (data.num_domains != generator.num_style_domains) {
    throw ValidationError("data_domains: must equal num_style_domains");
  }
  try {
    ppl.validate();
  } catch (const Error& e) {
    throw ValidationError(std::string("ppl: ") + e.what());
  }
  if (!(psi >= 0.0 && psi <= 1.0)) throw ValidationError("psi: must lie in [0,1]");
  if (diversity.groups == 0) throw ValidationError("diversity_groups: must be positive");
  if (diversity.per_group < 2) throw ValidationError("diversity_per_group: must be at least 2");
  if (!(invert.lr >= 0)) throw ValidationError("invert_opt_lr: must be >= 0");
}

LabConfig parse_config(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    auto [line, col] = line_col(text, e.byte);
    throw ValidationError("config parse error at line " + std::to_string(line) + ", column " +
                          std::to_string(col) + ": " + e.what());
  }
  if (!doc.is_object()) throw ValidationError("config: top level must be a JSON object");
  LabConfig cfg;
  const auto& table = fields();
  for (const auto& [key, value] : doc.items()) {
    auto it = table.find(key);
    if (it == table.end()) throw ValidationError(key + ": unknown key");
    it->second.read(value, cfg);
  }
  if (!doc.contains("data_domains")) cfg.data.num_domains = cfg.generator.num_style_domains;
  if (!doc.contains("data_resolution") && !cfg.generator.resolutions.empty()) {
    cfg.data.resolution = cfg.generator.output_resolution();
  }
  cfg.invert.lambda_reg = cfg.train.weights.lambda_reg;
  cfg.validate();
  return cfg;
}

LabConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const ValidationError& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

std::string config_to_json(const LabConfig& config) {
  json out = json::object();
  for (const auto& [key, field] : fields()) out[key] = field.write(config);
  return out.dump(2);
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [key, field] : fields()) keys.push_back(key);
  return keys;
}

}  // namespace dgan
