#pragma once

#include <string>

#include "dgan/metrics.hpp"
#include "dgan/networks.hpp"
#include "dgan/synth.hpp"
#include "dgan/training.hpp"

namespace dgan {

/// Everything a run can be configured with. JSON configs are flat objects
/// whose keys are listed by `config_keys()`; absent keys keep these defaults.
struct LabConfig {
  GeneratorSpec generator;
  TrainConfig train;
  SynthSpec data;
  PPLConfig ppl;
  double psi = kDefaultTruncationPsi;
  DiversityCounts diversity;
  LatentOptConfig invert;

  LabConfig() { data.num_domains = generator.num_style_domains; }
  /// Throws ValidationError naming the offending field.
  void validate() const;
};

/// Parses and validates a JSON document. Syntax errors raise ValidationError
/// with the line and column; unknown keys and bad values name the key.
LabConfig parse_config(const std::string& text);
LabConfig load_config(const std::string& path);
/// Every recognised key with its current value, as pretty-printed JSON.
std::string config_to_json(const LabConfig& config);
std::vector<std::string> config_keys();

}  // namespace dgan
