#pragma once

#include <cstdint>
#include <string>

#include "cirl/fourier_intervention.hpp"
#include "cirl/nn/backbones.hpp"

namespace cirl::train {

// Each flag disables one module: use_cint=false drops the intervention (the
// augmented branch collapses onto the original), use_cfac=false drops the
// factorization loss, use_advm=false fixes the mask at all-ones and removes
// the second classifier and the masker from the game. All three off is plain
// ERM.
struct AblationFlags {
  bool use_cint = true;
  bool use_cfac = true;
  bool use_advm = true;
};

enum class LrSchedule {
  step_every_20,       // x0.1 every 20 epochs (digits recipe)
  step_at_80_percent,  // x0.1 once at 80% of total epochs (resnet recipe)
};

struct TrainConfig {
  nn::ModelSpec model;

  double fac_weight = 2.0;  // weight of the factorization loss
  double kappa = 0.6;       // superior-dimension ratio
  double eta = 1.0;         // amplitude-mix strength cap
  double gumbel_temperature = 0.5;
  MixStrategy mix_strategy = MixStrategy::random;

  std::size_t batch_size = 128;
  std::size_t epochs = 50;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  LrSchedule lr_schedule = LrSchedule::step_every_20;

  std::uint64_t seed = 0;
  AblationFlags ablation;
  std::string target_domain;
};

// Digits recipe: batch 128, 50 epochs, lr decayed x0.1 every 20 epochs.
TrainConfig digits_profile();

// Residual-network recipe: batch 16, 50 epochs, lr decayed once at 80%.
TrainConfig resnet_profile(nn::BackboneKind kind);

// Learning rate for a 0-based epoch index under cfg's schedule.
double lr_at_epoch(const TrainConfig& cfg, std::size_t epoch);

// Throws ConfigError on out-of-range hyperparameters.
void validate_config(const TrainConfig& cfg);

// Flat key/value config file: `key = value` lines, `#` comments, strings in
// double quotes, booleans true/false. A `profile = digits|resnet18|resnet50`
// entry applies the matching preset before any other key in the file.
// Unknown or duplicate keys raise ConfigError.
TrainConfig parse_config_file(const std::string& path);

// Applies one key/value pair (the config-file grammar, also used for CLI
// overrides). Raises ConfigError for unknown keys or unparseable values.
void apply_config_entry(TrainConfig& cfg, const std::string& key,
                        const std::string& value);

}  // namespace cirl::train
