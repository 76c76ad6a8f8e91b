#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cirl/data/dataset.hpp"
#include "cirl/nn/layers.hpp"
#include "cirl/train/config.hpp"

namespace cirl::eval {

// Per-dimension importance of the representation under a trained classifier:
// the mean absolute h1 weight a dimension carries across classes, min-max
// normalized to [0, 1].
struct ImportanceReport {
  std::vector<double> raw;         // mean_c |W(c, j)| per dimension j
  std::vector<double> normalized;  // (raw - min) / (max - min)
  double mean = 0.0;               // of normalized
  double stddev = 0.0;             // population std of normalized
};

// Raises NumericError when every dimension carries the same weight mass
// (degenerate normalization: no ranking exists).
ImportanceReport importance_report(const nn::Linear<float>& h1);

struct IndependencePoint {
  std::size_t epoch = 0;
  double independence = 0.0;
};

// Per-epoch independence trace of one run, read back from its metrics.json.
// IoError on a missing/unreadable file, SchemaError on absent fields,
// InvalidInputError with fewer than 2 logged epochs.
std::vector<IndependencePoint> independence_curve(
    const std::string& metrics_path);

// One trained-and-evaluated cell of a hyperparameter sweep.
struct SweepCell {
  std::string param;  // "fac_weight" | "kappa" | "feature_dim"
  double value = 0.0;
  std::string target_domain;
  std::uint64_t seed = 0;
  double accuracy = 0.0;  // NaN when the cell failed
  std::string error;      // failure text; empty on success
};

// Values to try per parameter; everything else stays at the base config.
struct SweepGrid {
  std::vector<double> fac_weights;
  std::vector<double> kappas;
  std::vector<std::size_t> feature_dims;
  std::vector<std::uint64_t> seeds = {0};
};

// Trains one run per (parameter, value, seed) with the given target held
// out, evaluates the best checkpoint on it, and writes <out_dir>/sweep.csv.
// A failing cell is recorded with its error text and the sweep moves on.
std::vector<SweepCell> sensitivity_sweep(const data::DomainDataset& ds,
                                         const std::string& target_domain,
                                         const train::TrainConfig& base,
                                         const SweepGrid& grid,
                                         const std::string& out_dir);

// Header line param,value,target_domain,seed,accuracy,error; one row per
// cell, in sweep order. Failed cells leave accuracy empty.
std::string sweep_csv(const std::vector<SweepCell>& cells);

}  // namespace cirl::eval
