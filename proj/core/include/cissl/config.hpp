#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "cissl/bacon.hpp"
#include "cissl/datagen.hpp"
#include "cissl/model.hpp"

namespace cissl {

enum class Method { fixmatch, abc, bacon };
enum class MaskCountSource { labeled, bank };

struct TrainConfig {
  Method method = Method::bacon;
  std::size_t total_iters = 20000;
  std::size_t warmup_iters = 6000;
  double lr0 = 0.03;
  double momentum = 0.0;
  double weight_decay = 0.0;
  std::size_t batch_labeled = 64;
  std::size_t uratio = 1;
  double conf_threshold = 0.95;  // pseudo-label threshold tau
  double bank_threshold = 0.98;  // memory bank threshold tau_th
  std::size_t rns_n = 3;
  double temp_base = 0.1;
  double bta_eta = 0.5;
  std::vector<std::size_t> hidden{64, 64};
  std::size_t repr_dim = 32;
  std::size_t proj_dim = 32;
  bool use_rns = true;
  BtaMode bta_mode = BtaMode::decay;
  ProjectionMode projection = ProjectionMode::linear;
  MaskCountSource mask_counts = MaskCountSource::labeled;
  std::uint64_t seed = 0;
  std::size_t eval_every = 500;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

// Everything one run needs: data spec, augmentation and training settings.
struct ExperimentConfig {
  LongTailSpec data;
  AugmentConfig augment;
  TrainConfig train;

  void validate() const;
  ModelShape model_shape() const;
  bool operator==(const ExperimentConfig&) const = default;
};

std::string to_string(Method m);
std::string to_string(BtaMode m);
std::string to_string(ProjectionMode m);
std::string to_string(MaskCountSource m);

// Text format: one "key = value" per line, '#' starts a comment, blank lines
// ignored. Unknown keys and malformed values raise ConfigError naming the key;
// missing keys keep their defaults. Lists (hidden) are comma separated,
// booleans are true/false, enums use their lowercase names.
ExperimentConfig parse_config_text(std::string_view text);
ExperimentConfig parse_config(const std::filesystem::path& path);

// Every key with its current value, in a fixed order; parses back to an equal config.
std::string emit_config(const ExperimentConfig& cfg);

// Sets one key from its text form (same rules as the file format) without
// validating the whole config.
void set_config_value(ExperimentConfig& cfg, std::string_view key, std::string_view value);
std::string get_config_value(const ExperimentConfig& cfg, std::string_view key);
std::vector<std::string> config_keys();

}  // namespace cissl
