#include "cirl/eval/analysis.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"

#include "cirl/error.hpp"
#include "cirl/train/trainer.hpp"

namespace cirl::eval {

ImportanceReport importance_report(const nn::Linear<float>& h1) {
  const std::size_t classes = h1.out_dim();
  const std::size_t n = h1.in_dim();
  require(classes > 0 && n > 0, "importance_report: empty classifier");

  ImportanceReport rep;
  rep.raw.resize(n, 0.0);
  const float* w = h1.w.value.data();  // {classes, n}
  for (std::size_t c = 0; c < classes; ++c)
    for (std::size_t j = 0; j < n; ++j)
      rep.raw[j] += std::abs(static_cast<double>(w[c * n + j]));
  for (double& v : rep.raw) v /= static_cast<double>(classes);

  double lo = rep.raw[0], hi = rep.raw[0];
  for (double v : rep.raw) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (!(hi > lo))
    throw NumericError(
        "importance_report: degenerate normalization, every dimension "
        "carries weight " +
        std::to_string(lo));

  rep.normalized.resize(n);
  const double inv = 1.0 / (hi - lo);
  double sum = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    rep.normalized[j] = (rep.raw[j] - lo) * inv;
    sum += rep.normalized[j];
  }
  rep.mean = sum / static_cast<double>(n);
  double var = 0.0;
  for (double v : rep.normalized) {
    const double d = v - rep.mean;
    var += d * d;
  }
  rep.stddev = std::sqrt(var / static_cast<double>(n));
  return rep;
}

std::vector<IndependencePoint> independence_curve(
    const std::string& metrics_path) {
  std::ifstream in(metrics_path, std::ios::binary);
  if (!in) throw IoError("cannot read metrics file " + metrics_path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception&) {
    throw SchemaError("malformed metrics file " + metrics_path);
  }
  if (!j.contains("epochs") || !j["epochs"].is_array())
    throw SchemaError("metrics file " + metrics_path +
                      " has no epochs array");
  std::vector<IndependencePoint> curve;
  for (const auto& e : j["epochs"]) {
    if (!e.contains("epoch") || !e.contains("independence"))
      throw SchemaError("metrics file " + metrics_path +
                        " is missing epoch/independence fields");
    IndependencePoint p;
    p.epoch = e["epoch"].get<std::size_t>();
    p.independence = e["independence"].get<double>();
    curve.push_back(p);
  }
  require(curve.size() >= 2,
          "independence_curve: need at least 2 logged epochs, got " +
              std::to_string(curve.size()));
  return curve;
}

namespace {

std::string cell_dir_name(const SweepCell& cell) {
  std::ostringstream os;
  os << cell.param << '_' << cell.value << "_s" << cell.seed;
  return os.str();
}

void run_cell(SweepCell& cell, const data::DomainDataset& ds,
              const train::TrainConfig& cfg, const std::string& out_dir) {
  try {
    auto [sources, target] = data::leave_one_domain_out(ds, cell.target_domain);
    const std::string dir =
        (std::filesystem::path(out_dir) / cell_dir_name(cell)).string();
    train::FitResult fr = train::fit(sources, cfg, dir);
    cell.accuracy = train::evaluate_checkpoint(fr.best_checkpoint, target);
  } catch (const std::exception& e) {
    cell.accuracy = std::numeric_limits<double>::quiet_NaN();
    cell.error = e.what();
  }
}

}  // namespace

std::vector<SweepCell> sensitivity_sweep(const data::DomainDataset& ds,
                                         const std::string& target_domain,
                                         const train::TrainConfig& base,
                                         const SweepGrid& grid,
                                         const std::string& out_dir) {
  require(!grid.seeds.empty(), "sensitivity_sweep: no seeds given");
  std::filesystem::create_directories(out_dir);
  std::vector<SweepCell> cells;

  auto add = [&](const std::string& param, double value,
                 const train::TrainConfig& cfg) {
    for (std::uint64_t seed : grid.seeds) {
      SweepCell cell;
      cell.param = param;
      cell.value = value;
      cell.target_domain = target_domain;
      cell.seed = seed;
      train::TrainConfig c = cfg;
      c.seed = seed;
      c.target_domain = target_domain;
      run_cell(cell, ds, c, out_dir);
      cells.push_back(std::move(cell));
    }
  };

  for (double v : grid.fac_weights) {
    train::TrainConfig c = base;
    c.fac_weight = v;
    add("fac_weight", v, c);
  }
  for (double v : grid.kappas) {
    train::TrainConfig c = base;
    c.kappa = v;
    add("kappa", v, c);
  }
  for (std::size_t v : grid.feature_dims) {
    train::TrainConfig c = base;
    c.model.feature_dim = v;
    add("feature_dim", static_cast<double>(v), c);
  }

  const std::string csv_path =
      (std::filesystem::path(out_dir) / "sweep.csv").string();
  std::ofstream out(csv_path, std::ios::binary);
  if (!out) throw IoError("cannot write " + csv_path);
  out << sweep_csv(cells);
  if (!out) throw IoError("failed writing " + csv_path);
  return cells;
}

std::string sweep_csv(const std::vector<SweepCell>& cells) {
  std::ostringstream os;
  os << "param,value,target_domain,seed,accuracy,error\n";
  for (const SweepCell& c : cells) {
    os << c.param << ',' << c.value << ',' << c.target_domain << ','
       << c.seed << ',';
    if (std::isfinite(c.accuracy)) os << c.accuracy;
    os << ',';
    // Error text goes through quoted CSV so commas and newlines survive.
    if (!c.error.empty()) {
      os << '"';
      for (char ch : c.error) {
        if (ch == '"') os << "\"\"";
        else if (ch == '\n') os << ' ';
        else os << ch;
      }
      os << '"';
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace cirl::eval
