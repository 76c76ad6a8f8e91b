// Analysis and reporting: importance ranking, independence curves, the
// sensitivity sweep, run collection/aggregation and the report writer.
// Numeric expectations are recomputed in the tests from first principles.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "cirl/data/synthetic.hpp"
#include "cirl/error.hpp"
#include "cirl/eval/analysis.hpp"
#include "cirl/eval/report.hpp"
#include "cirl/nn/layers.hpp"
#include "cirl/train/config.hpp"
#include "cirl/train/trainer.hpp"

namespace fs = std::filesystem;
using namespace cirl;

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

struct TempDir {
  fs::path path;
  explicit TempDir(const char* tag) {
    path = fs::temp_directory_path() /
           (std::string("cirl_eval_") + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

// One real (tiny) training run shared by the tests that read live output.
// Built on first use; the views point into the dataset stored alongside.
struct FitFixture {
  data::DomainDataset ds;
  train::TrainConfig cfg;
  train::FitResult fr;
  fs::path run_dir;

  FitFixture() {
    data::SyntheticSpec spec;
    spec.num_domains = 3;
    spec.classes = {"circle", "square"};
    spec.images_per_class = 10;
    spec.image_size = 32;
    spec.rng_seed = 5;
    ds = data::generate_synthetic(spec);

    cfg = train::digits_profile();
    cfg.model.num_classes = 2;
    cfg.model.feature_dim = 16;
    cfg.batch_size = 16;
    cfg.epochs = 2;
    cfg.lr = 0.005;
    cfg.fac_weight = 0.5;
    cfg.seed = 7;
    cfg.target_domain = "d0";

    run_dir = fs::temp_directory_path() /
              ("cirl_eval_fit_" + std::to_string(::getpid()));
    fs::remove_all(run_dir);
    auto [source, target] = data::leave_one_domain_out(ds, "d0");
    fr = train::fit(source, cfg, run_dir.string());
  }
  ~FitFixture() { fs::remove_all(run_dir); }
};

const FitFixture& fixture() {
  static FitFixture f;
  return f;
}

// Minimal-but-complete run directory for the reader tests: two epochs of
// plausible numbers, optional result.json with the target accuracy.
void write_run_dir(const fs::path& dir, const std::string& target,
                   const train::AblationFlags& fl, std::uint64_t seed,
                   double val0, double val1, double ind0, double ind1,
                   const double* target_acc) {
  fs::create_directories(dir);
  nlohmann::json j;
  j["target_domain"] = target;
  j["seed"] = seed;
  j["backbone"] = "convnet_digits";
  j["ablation"] = {{"use_cint", fl.use_cint},
                   {"use_cfac", fl.use_cfac},
                   {"use_advm", fl.use_advm}};
  j["best_epoch"] = val1 >= val0 ? 2 : 1;
  j["best_val_accuracy"] = std::max(val0, val1);
  nlohmann::json epochs = nlohmann::json::array();
  for (int e = 0; e < 2; ++e) {
    epochs.push_back({{"epoch", e + 1},
                      {"lr", 0.05},
                      {"l_sup", 1.0 - 0.1 * e},
                      {"l_inf", 0.9 - 0.1 * e},
                      {"l_fac", 5.0 - e},
                      {"total_model", 2.0 - 0.2 * e},
                      {"total_masker", 0.1},
                      {"val_accuracy", e ? val1 : val0},
                      {"independence", e ? ind1 : ind0}});
  }
  j["epochs"] = std::move(epochs);
  std::ofstream(dir / "metrics.json", std::ios::binary) << j.dump(1) << '\n';
  if (target_acc) {
    nlohmann::json r{{"target_accuracy_best", *target_acc}};
    std::ofstream(dir / "result.json", std::ios::binary) << r.dump(1) << '\n';
  }
}

bool has_png_signature(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) return false;
  unsigned char sig[8] = {};
  in.read(reinterpret_cast<char*>(sig), 8);
  static const unsigned char want[8] = {0x89, 'P', 'N', 'G',
                                        0x0d, 0x0a, 0x1a, 0x0a};
  return in.gcount() == 8 && std::equal(sig, sig + 8, want);
}

}  // namespace

TEST_CASE("importance report matches a hand-built oracle") {
  nn::Linear<float> h1(4, 3);
  const float w[12] = {0.5f,  -1.0f, 0.25f,  0.0f,   //
                       1.5f,  2.0f,  -0.75f, 0.75f,  //
                       -2.0f, 0.25f, 0.5f,   -1.0f};
  std::copy(w, w + 12, h1.w.value.data());

  const eval::ImportanceReport rep = eval::importance_report(h1);
  REQUIRE(rep.raw.size() == 4);
  REQUIRE(rep.normalized.size() == 4);

  // Oracle from the definition: raw is the classwise mean magnitude,
  // normalized is min-max over dimensions, stddev is the population one.
  double raw[4];
  for (int j = 0; j < 4; ++j) {
    double s = 0.0;
    for (int c = 0; c < 3; ++c) s += std::abs(static_cast<double>(w[c * 4 + j]));
    raw[j] = s / 3.0;
  }
  const double lo = *std::min_element(raw, raw + 4);
  const double hi = *std::max_element(raw, raw + 4);
  double norm[4], mean = 0.0;
  for (int j = 0; j < 4; ++j) {
    norm[j] = (raw[j] - lo) / (hi - lo);
    mean += norm[j] / 4.0;
  }
  double var = 0.0;
  for (int j = 0; j < 4; ++j) var += (norm[j] - mean) * (norm[j] - mean) / 4.0;

  for (int j = 0; j < 4; ++j) {
    CHECK(rep.raw[j] == doctest::Approx(raw[j]).epsilon(1e-12));
    CHECK(rep.normalized[j] == doctest::Approx(norm[j]).epsilon(1e-12));
  }
  CHECK(rep.mean == doctest::Approx(mean).epsilon(1e-12));
  CHECK(rep.stddev == doctest::Approx(std::sqrt(var)).epsilon(1e-12));

  // Closed-form values for this weight matrix.
  CHECK(rep.normalized[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(rep.normalized[1] == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(rep.normalized[2] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(rep.normalized[3] == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(rep.mean == doctest::Approx(0.45).epsilon(1e-12));
  CHECK(rep.stddev == doctest::Approx(std::sqrt(0.1725)).epsilon(1e-12));
}

TEST_CASE("importance report rejects flat and empty classifiers") {
  nn::Linear<float> flat(3, 2);
  const float w[6] = {0.5f, -0.5f, 0.5f, -0.5f, 0.5f, 0.5f};
  std::copy(w, w + 6, flat.w.value.data());
  bool threw = false;
  try {
    eval::importance_report(flat);
  } catch (const NumericError& e) {
    threw = true;
    CHECK(std::string(e.what()).find("degenerate normalization") !=
          std::string::npos);
  }
  CHECK(threw);

  nn::Linear<float> empty;
  CHECK_THROWS_AS(eval::importance_report(empty), InvalidInputError);
}

TEST_CASE("independence curve reads back exactly what the trainer logged") {
  const FitFixture& fx = fixture();
  REQUIRE(fx.fr.epochs.size() == 2);

  const auto curve = eval::independence_curve(fx.fr.metrics_path);
  REQUIRE(curve.size() == fx.fr.epochs.size());
  for (std::size_t i = 0; i < curve.size(); ++i) {
    CHECK(curve[i].epoch == i + 1);
    // json round-trips doubles bit-exactly, so == is the right comparison
    CHECK(curve[i].independence == fx.fr.epochs[i].independence);
    CHECK(std::isfinite(curve[i].independence));
    CHECK(curve[i].independence >= 0.0);
  }
}

TEST_CASE("independence curve failure modes") {
  TempDir tmp("curve");

  CHECK_THROWS_AS(eval::independence_curve((tmp.path / "nope.json").string()),
                  IoError);

  const auto write = [&](const char* name, const std::string& text) {
    const fs::path p = tmp.path / name;
    std::ofstream(p, std::ios::binary) << text;
    return p.string();
  };

  CHECK_THROWS_AS(eval::independence_curve(write("bad.json", "{oops")),
                  SchemaError);
  CHECK_THROWS_AS(
      eval::independence_curve(write("noep.json", R"({"seed": 1})")),
      SchemaError);
  CHECK_THROWS_AS(eval::independence_curve(write(
                      "nofield.json",
                      R"({"epochs": [{"epoch": 1}, {"epoch": 2}]})")),
                  SchemaError);
  CHECK_THROWS_AS(
      eval::independence_curve(write(
          "short.json", R"({"epochs": [{"epoch": 1, "independence": 0.5}]})")),
      InvalidInputError);
}

TEST_CASE("sweep csv escapes errors and leaves failed accuracy empty") {
  std::vector<eval::SweepCell> cells(2);
  cells[0].param = "fac_weight";
  cells[0].value = 0.25;
  cells[0].target_domain = "d0";
  cells[0].seed = 3;
  cells[0].accuracy = 0.5;
  cells[1].param = "kappa";
  cells[1].value = 1.5;
  cells[1].target_domain = "d0";
  cells[1].seed = 3;
  cells[1].accuracy = kNan;
  cells[1].error = "bad \"kappa\",\nrange";

  const std::string want =
      "param,value,target_domain,seed,accuracy,error\n"
      "fac_weight,0.25,d0,3,0.5,\n"
      "kappa,1.5,d0,3,,\"bad \"\"kappa\"\", range\"\n";
  CHECK(eval::sweep_csv(cells) == want);
  CHECK(eval::sweep_csv({}) == "param,value,target_domain,seed,accuracy,error\n");
}

TEST_CASE("sensitivity sweep trains, records failures, and is deterministic") {
  const FitFixture& fx = fixture();
  TempDir tmp("sweep");

  train::TrainConfig base = fx.cfg;
  base.epochs = 1;

  eval::SweepGrid grid;
  grid.fac_weights = {0.25};
  grid.kappas = {1.5};  // out of range: this cell must fail and be recorded
  grid.seeds = {3};

  const std::string out1 = (tmp.path / "a").string();
  const auto cells = eval::sensitivity_sweep(fx.ds, "d0", base, grid, out1);
  REQUIRE(cells.size() == 2);

  CHECK(cells[0].param == "fac_weight");
  CHECK(cells[0].value == 0.25);
  CHECK(cells[0].target_domain == "d0");
  CHECK(cells[0].seed == 3);
  CHECK(std::isfinite(cells[0].accuracy));
  CHECK(cells[0].accuracy >= 0.0);
  CHECK(cells[0].accuracy <= 1.0);
  CHECK(cells[0].error.empty());

  CHECK(cells[1].param == "kappa");
  CHECK(std::isnan(cells[1].accuracy));
  CHECK(!cells[1].error.empty());
  CHECK(cells[1].error.find("kappa") != std::string::npos);

  // The run directory of the successful cell holds a full training run.
  CHECK(fs::exists(fs::path(out1) / "fac_weight_0.25_s3" / "metrics.json"));

  // The csv on disk is exactly the serialized cells.
  std::ifstream in(fs::path(out1) / "sweep.csv", std::ios::binary);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  CHECK(ss.str() == eval::sweep_csv(cells));

  // Same dataset, same grid, fresh directory: identical accuracies.
  const auto again =
      eval::sensitivity_sweep(fx.ds, "d0", base, grid, (tmp.path / "b").string());
  REQUIRE(again.size() == 2);
  CHECK(again[0].accuracy == cells[0].accuracy);
  CHECK(std::isnan(again[1].accuracy));

  eval::SweepGrid no_seeds = grid;
  no_seeds.seeds.clear();
  CHECK_THROWS_AS(
      eval::sensitivity_sweep(fx.ds, "d0", base, no_seeds,
                              (tmp.path / "c").string()),
      InvalidInputError);
}

TEST_CASE("variant names cover every flag combination") {
  using train::AblationFlags;
  CHECK(eval::variant_name(AblationFlags{true, true, true}) == "cirl");
  CHECK(eval::variant_name(AblationFlags{false, false, false}) == "erm");
  CHECK(eval::variant_name(AblationFlags{false, true, true}) == "no_cint");
  CHECK(eval::variant_name(AblationFlags{true, false, true}) == "no_cfac");
  CHECK(eval::variant_name(AblationFlags{true, true, false}) == "no_advm");
  CHECK(eval::variant_name(AblationFlags{true, false, false}) == "custom");
  CHECK(eval::variant_name(AblationFlags{false, true, false}) == "custom");
  CHECK(eval::variant_name(AblationFlags{false, false, true}) == "custom");
}

TEST_CASE("read_run round-trips a live training run") {
  const FitFixture& fx = fixture();

  eval::RunSummary run = eval::read_run(fx.run_dir.string());
  CHECK(run.name == fx.run_dir.filename().string());
  CHECK(run.target_domain == "d0");
  CHECK(run.backbone == "convnet_digits");
  CHECK(run.seed == 7);
  CHECK(run.ablation.use_cint);
  CHECK(run.ablation.use_cfac);
  CHECK(run.ablation.use_advm);
  CHECK(run.best_epoch == fx.fr.best_epoch);
  CHECK(run.best_val_accuracy == fx.fr.best_val_accuracy);
  REQUIRE(run.epochs.size() == fx.fr.epochs.size());
  for (std::size_t i = 0; i < run.epochs.size(); ++i) {
    CHECK(run.epochs[i].epoch == fx.fr.epochs[i].epoch);
    CHECK(run.epochs[i].lr == fx.fr.epochs[i].lr);
    CHECK(run.epochs[i].l_sup == fx.fr.epochs[i].l_sup);
    CHECK(run.epochs[i].l_inf == fx.fr.epochs[i].l_inf);
    CHECK(run.epochs[i].l_fac == fx.fr.epochs[i].l_fac);
    CHECK(run.epochs[i].total_model == fx.fr.epochs[i].total_model);
    CHECK(run.epochs[i].total_masker == fx.fr.epochs[i].total_masker);
    CHECK(run.epochs[i].val_accuracy == fx.fr.epochs[i].val_accuracy);
    CHECK(run.epochs[i].independence == fx.fr.epochs[i].independence);
  }
  // No result.json yet: target accuracy is explicitly not-a-number.
  CHECK(std::isnan(run.target_accuracy));

  {
    nlohmann::json r{{"target_accuracy_best", 0.625}};
    std::ofstream(fx.run_dir / "result.json", std::ios::binary)
        << r.dump(1) << '\n';
  }
  run = eval::read_run(fx.run_dir.string());
  CHECK(run.target_accuracy == 0.625);
}

TEST_CASE("read_run and collect_runs failure modes") {
  TempDir tmp("readfail");

  fs::create_directories(tmp.path / "empty_run");
  CHECK_THROWS_AS(eval::read_run((tmp.path / "empty_run").string()), IoError);

  fs::create_directories(tmp.path / "mangled");
  std::ofstream(tmp.path / "mangled" / "metrics.json", std::ios::binary)
      << "{oops";
  CHECK_THROWS_AS(eval::read_run((tmp.path / "mangled").string()), SchemaError);

  fs::create_directories(tmp.path / "partial");
  std::ofstream(tmp.path / "partial" / "metrics.json", std::ios::binary)
      << R"({"target_domain": "d0", "seed": 1})";
  CHECK_THROWS_AS(eval::read_run((tmp.path / "partial").string()), SchemaError);

  // Valid metrics but a mangled result.json: the reader must not mask it.
  write_run_dir(tmp.path / "badresult", "d0", {}, 1, 0.5, 0.6, 4.0, 3.0,
                nullptr);
  std::ofstream(tmp.path / "badresult" / "result.json", std::ios::binary)
      << "{nope";
  CHECK_THROWS_AS(eval::read_run((tmp.path / "badresult").string()),
                  SchemaError);

  CHECK_THROWS_AS(eval::collect_runs((tmp.path / "missing").string()), IoError);
  std::ofstream(tmp.path / "file.txt", std::ios::binary) << "x";
  CHECK_THROWS_AS(eval::collect_runs((tmp.path / "file.txt").string()),
                  IoError);
}

TEST_CASE("collect_runs finds and sorts run directories") {
  TempDir tmp("collect");

  const fs::path tree = tmp.path / "tree";
  write_run_dir(tree / "run_b", "d0", {}, 2, 0.4, 0.5, 4.0, 3.0, nullptr);
  write_run_dir(tree / "run_a", "d1", {}, 1, 0.6, 0.7, 5.0, 2.0, nullptr);
  fs::create_directories(tree / "not_a_run");
  std::ofstream(tree / "stray.txt", std::ios::binary) << "x";

  const auto runs = eval::collect_runs(tree.string());
  REQUIRE(runs.size() == 2);
  CHECK(runs[0].name == "run_a");
  CHECK(runs[1].name == "run_b");
  CHECK(runs[0].target_domain == "d1");
  CHECK(runs[1].target_domain == "d0");

  // A metrics.json directly in the scanned directory counts as a run too.
  const fs::path flat = tmp.path / "flat";
  write_run_dir(flat, "d0", {}, 3, 0.5, 0.5, 1.0, 1.0, nullptr);
  write_run_dir(flat / "sub", "d0", {}, 4, 0.5, 0.5, 1.0, 1.0, nullptr);
  const auto both = eval::collect_runs(flat.string());
  REQUIRE(both.size() == 2);
  CHECK(both[0].name == "flat");
  CHECK(both[1].name == "sub");
}

TEST_CASE("aggregate_runs groups by target and variant") {
  std::vector<eval::RunSummary> runs(4);
  runs[0].target_domain = "d0";
  runs[0].ablation = {true, true, true};
  runs[0].seed = 1;
  runs[0].best_val_accuracy = 0.8;
  runs[0].target_accuracy = 0.6;
  runs[1].target_domain = "d0";
  runs[1].ablation = {true, true, true};
  runs[1].seed = 2;
  runs[1].best_val_accuracy = 0.9;
  runs[1].target_accuracy = 0.8;
  runs[2].target_domain = "d0";
  runs[2].ablation = {false, false, false};
  runs[2].best_val_accuracy = 0.7;  // target accuracy stays NaN
  runs[3].target_domain = "d1";
  runs[3].ablation = {true, true, true};
  runs[3].best_val_accuracy = 0.5;
  runs[3].target_accuracy = 0.5;

  const auto aggs = eval::aggregate_runs(runs);
  REQUIRE(aggs.size() == 3);  // ordered by (target_domain, variant)

  CHECK(aggs[0].target_domain == "d0");
  CHECK(aggs[0].variant == "cirl");
  CHECK(aggs[0].runs == 2);
  const double mean = (0.6 + 0.8) / 2.0;
  const double var =
      ((0.6 - mean) * (0.6 - mean) + (0.8 - mean) * (0.8 - mean)) / 2.0;
  CHECK(aggs[0].mean_target_accuracy == mean);
  CHECK(aggs[0].std_target_accuracy == doctest::Approx(std::sqrt(var)).epsilon(1e-12));
  CHECK(aggs[0].mean_best_val_accuracy == (0.8 + 0.9) / 2.0);

  CHECK(aggs[1].target_domain == "d0");
  CHECK(aggs[1].variant == "erm");
  CHECK(aggs[1].runs == 0);
  CHECK(std::isnan(aggs[1].mean_target_accuracy));
  CHECK(aggs[1].std_target_accuracy == 0.0);
  CHECK(aggs[1].mean_best_val_accuracy == 0.7);

  CHECK(aggs[2].target_domain == "d1");
  CHECK(aggs[2].variant == "cirl");
  CHECK(aggs[2].runs == 1);
  CHECK(aggs[2].mean_target_accuracy == 0.5);
  CHECK(aggs[2].std_target_accuracy == 0.0);

  CHECK(eval::aggregate_runs({}).empty());
}

TEST_CASE("write_report produces summary files and plots") {
  TempDir tmp("report");
  const fs::path tree = tmp.path / "runs";

  const double acc_a = 0.62, acc_b = 0.50;
  write_run_dir(tree / "run_a", "d0", {true, true, true}, 1, 0.70, 0.80, 6.0,
                2.5, &acc_a);
  write_run_dir(tree / "run_b", "d0", {false, false, false}, 1, 0.65, 0.72,
                6.0, 5.5, &acc_b);
  write_run_dir(tree / "run_c", "d0", {true, true, true}, 2, 0.68, 0.74, 5.0,
                3.0, nullptr);

  const fs::path out = tmp.path / "report";
  const eval::ReportPaths paths =
      eval::write_report(tree.string(), out.string());

  {
    std::ifstream csv(paths.summary_csv, std::ios::binary);
    REQUIRE(csv.good());
    std::string header;
    std::getline(csv, header);
    CHECK(header ==
          "name,target_domain,variant,backbone,seed,best_epoch,"
          "best_val_accuracy,target_accuracy,final_independence");
    std::size_t rows = 0;
    for (std::string line; std::getline(csv, line);)
      if (!line.empty()) ++rows;
    CHECK(rows == 3);
  }

  {
    std::ifstream jin(paths.summary_json, std::ios::binary);
    REQUIRE(jin.good());
    nlohmann::json j;
    jin >> j;
    REQUIRE(j.contains("runs"));
    REQUIRE(j.contains("aggregates"));
    CHECK(j["runs"].size() == 3);
    bool found_cirl = false;
    for (const auto& a : j["aggregates"])
      if (a["target_domain"] == "d0" && a["variant"] == "cirl") {
        found_cirl = true;
        // run_c has no result.json, so only run_a contributes.
        CHECK(a["runs"].get<std::size_t>() == 1);
        CHECK(a["mean_target_accuracy"].get<double>() == acc_a);
      }
    CHECK(found_cirl);
  }

  // One loss plot per run, the independence overlay, one bar chart for d0.
  REQUIRE(paths.plots.size() == 5);
  std::vector<std::string> names;
  for (const std::string& p : paths.plots) {
    CHECK(has_png_signature(p));
    names.push_back(fs::path(p).filename().string());
  }
  for (const char* want : {"losses_run_a.png", "losses_run_b.png",
                           "losses_run_c.png", "independence.png",
                           "accuracy_d0.png"})
    CHECK(std::find(names.begin(), names.end(), want) != names.end());

  fs::create_directories(tmp.path / "none");
  CHECK_THROWS_AS(
      eval::write_report((tmp.path / "none").string(), out.string()),
      InvalidInputError);
}

TEST_CASE("plot primitives validate input and write real PNGs") {
  TempDir tmp("plots");

  CHECK_THROWS_AS(
      eval::write_line_plot((tmp.path / "x.png").string(), "t", {}),
      InvalidInputError);
  CHECK_THROWS_AS(
      eval::write_line_plot((tmp.path / "x.png").string(), "t",
                            {{"nan", {kNan, kNan}}}),
      InvalidInputError);
  CHECK_THROWS_AS(
      eval::write_bar_chart((tmp.path / "x.png").string(), "t", {}),
      InvalidInputError);

  const fs::path one = tmp.path / "one.png";
  eval::write_line_plot(one.string(), "single point", {{"s", {1.25}}});
  CHECK(has_png_signature(one));

  // NaN entries are skipped, not drawn; the finite bar still renders.
  const fs::path bars = tmp.path / "bars.png";
  eval::write_bar_chart(bars.string(), "accuracy",
                        {{"ok", 0.75}, {"failed", kNan}});
  CHECK(has_png_signature(bars));
}
