#include "cirl/train/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "cirl/error.hpp"

namespace cirl::train {

TrainConfig digits_profile() {
  TrainConfig cfg;
  cfg.model.backbone = nn::BackboneKind::convnet_digits;
  cfg.batch_size = 128;
  cfg.epochs = 50;
  cfg.lr = 0.05;
  cfg.lr_schedule = LrSchedule::step_every_20;
  cfg.fac_weight = 2.0;
  cfg.kappa = 0.6;
  return cfg;
}

TrainConfig resnet_profile(nn::BackboneKind kind) {
  require_config(kind == nn::BackboneKind::resnet18 ||
                     kind == nn::BackboneKind::resnet50,
                 "resnet_profile: not a residual backbone");
  TrainConfig cfg;
  cfg.model.backbone = kind;
  cfg.batch_size = 16;
  cfg.epochs = 50;
  cfg.lr = 0.001;
  cfg.lr_schedule = LrSchedule::step_at_80_percent;
  return cfg;
}

double lr_at_epoch(const TrainConfig& cfg, std::size_t epoch) {
  switch (cfg.lr_schedule) {
    case LrSchedule::step_every_20:
      return cfg.lr * std::pow(0.1, static_cast<double>(epoch / 20));
    case LrSchedule::step_at_80_percent: {
      const auto boundary = static_cast<std::size_t>(
          std::floor(0.8 * static_cast<double>(cfg.epochs)));
      return epoch >= boundary ? cfg.lr * 0.1 : cfg.lr;
    }
  }
  return cfg.lr;
}

void validate_config(const TrainConfig& cfg) {
  require_config(cfg.fac_weight > 0.0, "config: fac_weight must be positive");
  require_config(cfg.kappa > 0.0 && cfg.kappa < 1.0,
                 "config: kappa must lie in (0, 1)");
  require_config(cfg.eta >= 0.0 && cfg.eta <= 1.0,
                 "config: eta must lie in [0, 1]");
  require_config(cfg.gumbel_temperature > 0.0,
                 "config: gumbel_temperature must be positive");
  require_config(cfg.batch_size >= 2, "config: batch_size must be at least 2");
  require_config(cfg.epochs >= 1, "config: epochs must be positive");
  require_config(cfg.lr > 0.0, "config: lr must be positive");
  require_config(cfg.momentum >= 0.0 && cfg.momentum < 1.0,
                 "config: momentum must lie in [0, 1)");
  require_config(cfg.weight_decay >= 0.0,
                 "config: weight_decay must be non-negative");
}

namespace {

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true") return true;
  if (value == "false") return false;
  throw ConfigError("config: key '" + key + "' expects true or false, got '" +
                    value + "'");
}

double parse_double(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  double v = 0;
  try {
    v = std::stod(value, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != value.size())
    throw ConfigError("config: key '" + key + "' expects a number, got '" +
                      value + "'");
  return v;
}

std::uint64_t parse_uint(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  std::uint64_t v = 0;
  try {
    v = std::stoull(value, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != value.size() || value.empty() || value[0] == '-')
    throw ConfigError("config: key '" + key +
                      "' expects a non-negative integer, got '" + value + "'");
  return v;
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

void apply_config_entry(TrainConfig& cfg, const std::string& key,
                        const std::string& value) {
  if (key == "profile") {
    if (value == "digits") {
      cfg = digits_profile();
    } else if (value == "resnet18" || value == "resnet50") {
      cfg = resnet_profile(nn::parse_backbone(value));
    } else {
      throw ConfigError("config: unknown profile '" + value + "'");
    }
  } else if (key == "backbone") {
    cfg.model.backbone = nn::parse_backbone(value);
  } else if (key == "feature_dim") {
    cfg.model.feature_dim = parse_uint(key, value);
  } else if (key == "num_classes") {
    cfg.model.num_classes = parse_uint(key, value);
  } else if (key == "pretrained") {
    cfg.model.pretrained = parse_bool(key, value);
  } else if (key == "weights_path") {
    cfg.model.weights_path = value;
  } else if (key == "batch_norm") {
    cfg.model.batch_norm = parse_bool(key, value);
  } else if (key == "fac_weight") {
    cfg.fac_weight = parse_double(key, value);
  } else if (key == "kappa") {
    cfg.kappa = parse_double(key, value);
  } else if (key == "eta") {
    cfg.eta = parse_double(key, value);
  } else if (key == "gumbel_temperature") {
    cfg.gumbel_temperature = parse_double(key, value);
  } else if (key == "mix_strategy") {
    cfg.mix_strategy = parse_mix_strategy(value);
  } else if (key == "batch_size") {
    cfg.batch_size = parse_uint(key, value);
  } else if (key == "epochs") {
    cfg.epochs = parse_uint(key, value);
  } else if (key == "lr") {
    cfg.lr = parse_double(key, value);
  } else if (key == "momentum") {
    cfg.momentum = parse_double(key, value);
  } else if (key == "weight_decay") {
    cfg.weight_decay = parse_double(key, value);
  } else if (key == "lr_schedule") {
    if (value == "step20") {
      cfg.lr_schedule = LrSchedule::step_every_20;
    } else if (value == "pct80") {
      cfg.lr_schedule = LrSchedule::step_at_80_percent;
    } else {
      throw ConfigError("config: lr_schedule expects step20 or pct80, got '" +
                        value + "'");
    }
  } else if (key == "seed") {
    cfg.seed = parse_uint(key, value);
  } else if (key == "use_cint") {
    cfg.ablation.use_cint = parse_bool(key, value);
  } else if (key == "use_cfac") {
    cfg.ablation.use_cfac = parse_bool(key, value);
  } else if (key == "use_advm") {
    cfg.ablation.use_advm = parse_bool(key, value);
  } else if (key == "target_domain") {
    cfg.target_domain = value;
  } else {
    throw ConfigError("config: unknown key '" + key + "'");
  }
}

TrainConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);

  std::vector<std::pair<std::string, std::string>> entries;
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = path + ":" + std::to_string(lineno);
    std::string s = trim(line);
    if (s.empty() || s[0] == '#') continue;
    const auto eq = s.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: expected 'key = value' at " + where);
    const std::string key = trim(s.substr(0, eq));
    std::string value = trim(s.substr(eq + 1));
    if (key.empty())
      throw ConfigError("config: empty key at " + where);
    if (!value.empty() && value.front() == '"') {
      const auto close = value.find('"', 1);
      if (close == std::string::npos || trim(value.substr(close + 1)) != "")
        throw ConfigError("config: unterminated string at " + where);
      value = value.substr(1, close - 1);
    } else {
      const auto hash = value.find('#');
      if (hash != std::string::npos) value = trim(value.substr(0, hash));
      if (value.empty())
        throw ConfigError("config: empty value at " + where);
    }
    if (!seen.insert(key).second)
      throw ConfigError("config: duplicate key '" + key + "' at " + where);
    entries.emplace_back(key, value);
  }

  TrainConfig cfg;
  // The profile preset is a base layer; apply it before everything else so
  // file order does not matter.
  for (const auto& [k, v] : entries)
    if (k == "profile") apply_config_entry(cfg, k, v);
  for (const auto& [k, v] : entries)
    if (k != "profile") apply_config_entry(cfg, k, v);
  validate_config(cfg);
  return cfg;
}

}  // namespace cirl::train
