#include "cirl/eval/report.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

#include "cirl/data/image_io.hpp"
#include "cirl/error.hpp"

namespace fs = std::filesystem;

namespace cirl::eval {

namespace {

// --------------------------------------------------------------------------
// Raster plotting: a small canvas over ImageU8 with a built-in 5x7 font.

struct Color {
  std::uint8_t r = 0, g = 0, b = 0;
};

constexpr Color kBackground{250, 250, 250};
constexpr Color kAxis{60, 60, 60};
constexpr Color kGrid{220, 220, 220};
constexpr Color kText{40, 40, 40};

constexpr Color kPalette[] = {
    {31, 119, 180}, {255, 127, 14}, {44, 160, 44},   {214, 39, 40},
    {148, 103, 189}, {140, 86, 75},  {227, 119, 194}, {127, 127, 127},
};
constexpr std::size_t kPaletteSize = sizeof(kPalette) / sizeof(kPalette[0]);

// Rows top to bottom, low 5 bits per row, bit 4 = leftmost pixel.
struct Glyph {
  char ch;
  std::uint8_t rows[7];
};

constexpr Glyph kFont[] = {
    {'0', {0x0e, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0e}},
    {'1', {0x04, 0x0c, 0x04, 0x04, 0x04, 0x04, 0x0e}},
    {'2', {0x0e, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1f}},
    {'3', {0x1f, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0e}},
    {'4', {0x02, 0x06, 0x0a, 0x12, 0x1f, 0x02, 0x02}},
    {'5', {0x1f, 0x10, 0x1e, 0x01, 0x01, 0x11, 0x0e}},
    {'6', {0x06, 0x08, 0x10, 0x1e, 0x11, 0x11, 0x0e}},
    {'7', {0x1f, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
    {'8', {0x0e, 0x11, 0x11, 0x0e, 0x11, 0x11, 0x0e}},
    {'9', {0x0e, 0x11, 0x11, 0x0f, 0x01, 0x02, 0x0c}},
    {'A', {0x0e, 0x11, 0x11, 0x1f, 0x11, 0x11, 0x11}},
    {'B', {0x1e, 0x11, 0x11, 0x1e, 0x11, 0x11, 0x1e}},
    {'C', {0x0e, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0e}},
    {'D', {0x1c, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1c}},
    {'E', {0x1f, 0x10, 0x10, 0x1e, 0x10, 0x10, 0x1f}},
    {'F', {0x1f, 0x10, 0x10, 0x1e, 0x10, 0x10, 0x10}},
    {'G', {0x0e, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0f}},
    {'H', {0x11, 0x11, 0x11, 0x1f, 0x11, 0x11, 0x11}},
    {'I', {0x0e, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0e}},
    {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0c}},
    {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}},
    {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1f}},
    {'M', {0x11, 0x1b, 0x15, 0x15, 0x11, 0x11, 0x11}},
    {'N', {0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11}},
    {'O', {0x0e, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0e}},
    {'P', {0x1e, 0x11, 0x11, 0x1e, 0x10, 0x10, 0x10}},
    {'Q', {0x0e, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0d}},
    {'R', {0x1e, 0x11, 0x11, 0x1e, 0x14, 0x12, 0x11}},
    {'S', {0x0f, 0x10, 0x10, 0x0e, 0x01, 0x01, 0x1e}},
    {'T', {0x1f, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
    {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0e}},
    {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0a, 0x04}},
    {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0a}},
    {'X', {0x11, 0x11, 0x0a, 0x04, 0x0a, 0x11, 0x11}},
    {'Y', {0x11, 0x11, 0x0a, 0x04, 0x04, 0x04, 0x04}},
    {'Z', {0x1f, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1f}},
    {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0c, 0x0c}},
    {'-', {0x00, 0x00, 0x00, 0x0e, 0x00, 0x00, 0x00}},
    {'+', {0x00, 0x04, 0x04, 0x1f, 0x04, 0x04, 0x00}},
    {'_', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1f}},
    {'/', {0x01, 0x02, 0x02, 0x04, 0x08, 0x08, 0x10}},
    {':', {0x00, 0x0c, 0x0c, 0x00, 0x0c, 0x0c, 0x00}},
    {'%', {0x18, 0x19, 0x02, 0x04, 0x08, 0x13, 0x03}},
    {'=', {0x00, 0x00, 0x1f, 0x00, 0x1f, 0x00, 0x00}},
    {'(', {0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02}},
    {')', {0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08}},
    {' ', {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00}},
};

const std::uint8_t* glyph_rows(char ch) {
  const char up = static_cast<char>(
      std::toupper(static_cast<unsigned char>(ch)));
  for (const Glyph& g : kFont)
    if (g.ch == up) return g.rows;
  return nullptr;
}

class Canvas {
 public:
  Canvas(std::size_t w, std::size_t h) {
    img_.width = w;
    img_.height = h;
    img_.rgb.resize(w * h * 3);
    for (std::size_t i = 0; i < w * h; ++i) {
      img_.rgb[i * 3 + 0] = kBackground.r;
      img_.rgb[i * 3 + 1] = kBackground.g;
      img_.rgb[i * 3 + 2] = kBackground.b;
    }
  }

  void px(long x, long y, Color c) {
    if (x < 0 || y < 0 || x >= static_cast<long>(img_.width) ||
        y >= static_cast<long>(img_.height))
      return;
    std::uint8_t* p =
        &img_.rgb[(static_cast<std::size_t>(y) * img_.width +
                   static_cast<std::size_t>(x)) *
                  3];
    p[0] = c.r;
    p[1] = c.g;
    p[2] = c.b;
  }

  void line(long x0, long y0, long x1, long y1, Color c) {
    const long dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
    const long dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
    long err = dx + dy;
    for (;;) {
      px(x0, y0, c);
      if (x0 == x1 && y0 == y1) break;
      const long e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x0 += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y0 += sy;
      }
    }
  }

  void fill_rect(long x, long y, long w, long h, Color c) {
    for (long j = 0; j < h; ++j)
      for (long i = 0; i < w; ++i) px(x + i, y + j, c);
  }

  // Top-left anchored; 6 px advance per character.
  void text(long x, long y, const std::string& s, Color c) {
    for (char ch : s) {
      if (const std::uint8_t* rows = glyph_rows(ch)) {
        for (int ry = 0; ry < 7; ++ry)
          for (int rx = 0; rx < 5; ++rx)
            if (rows[ry] & (0x10 >> rx)) px(x + rx, y + ry, c);
      }
      x += 6;
    }
  }

  const data::ImageU8& image() const { return img_; }

 private:
  data::ImageU8 img_;
};

std::string fmt_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

struct Frame {
  long x0, y0, x1, y1;  // plot rectangle, y grows downward
  double lo, hi;        // value range mapped onto [y1, y0]

  long map_y(double v) const {
    const double t = (v - lo) / (hi - lo);
    return y1 - static_cast<long>(std::lround(t * (y1 - y0)));
  }
};

// Shared axes/grid/tick scaffolding for both chart types.
Frame draw_frame(Canvas& canvas, const std::string& title, double lo,
                 double hi, long width, long height) {
  Frame f;
  f.x0 = 64;
  f.y0 = 24;
  f.x1 = width - 16;
  f.y1 = height - 32;
  if (!(hi > lo)) {
    const double pad = std::abs(lo) > 1e-12 ? std::abs(lo) * 0.1 : 1.0;
    hi = lo + pad;
    lo = lo - pad;
  }
  const double span_pad = (hi - lo) * 0.05;
  f.lo = lo - span_pad;
  f.hi = hi + span_pad;

  canvas.text(f.x0, 8, title, kText);
  for (int t = 0; t <= 4; ++t) {
    const double v = f.lo + (f.hi - f.lo) * t / 4.0;
    const long y = f.map_y(v);
    canvas.line(f.x0, y, f.x1, y, kGrid);
    const std::string label = fmt_num(v);
    canvas.text(f.x0 - 6 - static_cast<long>(label.size()) * 6, y - 3, label,
                kText);
  }
  canvas.line(f.x0, f.y0, f.x0, f.y1, kAxis);
  canvas.line(f.x0, f.y1, f.x1, f.y1, kAxis);
  return f;
}

}  // namespace

void write_line_plot(const std::string& path, const std::string& title,
                     const std::vector<PlotSeries>& series) {
  require(!series.empty(), "write_line_plot: no series");
  std::size_t n = 0;
  double lo = 0.0, hi = 0.0;
  bool any = false;
  for (const PlotSeries& s : series) {
    n = std::max(n, s.y.size());
    for (double v : s.y) {
      if (!std::isfinite(v)) continue;
      lo = any ? std::min(lo, v) : v;
      hi = any ? std::max(hi, v) : v;
      any = true;
    }
  }
  require(any && n >= 1, "write_line_plot: no finite data");

  const long width = 640, height = 400;
  Canvas canvas(width, height);
  Frame f = draw_frame(canvas, title, lo, hi, width, height);

  const auto map_x = [&](std::size_t i) {
    if (n <= 1) return (f.x0 + f.x1) / 2;
    return f.x0 + static_cast<long>(std::lround(
                      static_cast<double>(i) / (n - 1) * (f.x1 - f.x0)));
  };

  // x ticks at the first, middle and last index (1-based epoch labels)
  for (std::size_t i : {std::size_t(0), (n - 1) / 2, n - 1}) {
    const long x = map_x(i);
    canvas.line(x, f.y1, x, f.y1 + 3, kAxis);
    canvas.text(x - 3, f.y1 + 6, std::to_string(i + 1), kText);
  }

  for (std::size_t si = 0; si < series.size(); ++si) {
    const Color c = kPalette[si % kPaletteSize];
    const std::vector<double>& y = series[si].y;
    for (std::size_t i = 0; i + 1 < y.size(); ++i) {
      if (!std::isfinite(y[i]) || !std::isfinite(y[i + 1])) continue;
      canvas.line(map_x(i), f.map_y(y[i]), map_x(i + 1), f.map_y(y[i + 1]),
                  c);
    }
    const long ly = f.y0 + 4 + static_cast<long>(si) * 10;
    const long lx =
        f.x1 - 12 - static_cast<long>(series[si].label.size()) * 6;
    canvas.fill_rect(lx - 12, ly + 2, 8, 3, c);
    canvas.text(lx, ly, series[si].label, kText);
  }
  data::write_png(path, canvas.image());
}

void write_bar_chart(const std::string& path, const std::string& title,
                     const std::vector<Bar>& bars) {
  require(!bars.empty(), "write_bar_chart: no bars");
  double lo = 0.0, hi = 0.0;
  for (const Bar& b : bars) {
    if (!std::isfinite(b.value)) continue;
    lo = std::min(lo, b.value);
    hi = std::max(hi, b.value);
  }

  const long width = 640, height = 400;
  Canvas canvas(width, height);
  Frame f = draw_frame(canvas, title, lo, hi, width, height);

  const long span = f.x1 - f.x0;
  const long slot = span / static_cast<long>(bars.size());
  const long bar_w = std::max<long>(4, (slot * 3) / 5);
  const long base_y = f.map_y(0.0);
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const Bar& b = bars[i];
    const long cx = f.x0 + slot * static_cast<long>(i) + slot / 2;
    if (std::isfinite(b.value)) {
      const long vy = f.map_y(b.value);
      const long top = std::min(vy, base_y);
      const long h = std::max<long>(1, std::abs(vy - base_y));
      canvas.fill_rect(cx - bar_w / 2, top, bar_w,
                       h, kPalette[i % kPaletteSize]);
      const std::string v = fmt_num(b.value);
      canvas.text(cx - static_cast<long>(v.size()) * 3, top - 9, v, kText);
    }
    canvas.text(cx - static_cast<long>(b.label.size()) * 3, f.y1 + 6,
                b.label, kText);
  }
  data::write_png(path, canvas.image());
}

// --------------------------------------------------------------------------
// Run collection and aggregation

std::string variant_name(const train::AblationFlags& f) {
  const int on = int(f.use_cint) + int(f.use_cfac) + int(f.use_advm);
  if (on == 3) return "cirl";
  if (on == 0) return "erm";
  if (on == 2) {
    if (!f.use_cint) return "no_cint";
    if (!f.use_cfac) return "no_cfac";
    return "no_advm";
  }
  return "custom";
}

RunSummary read_run(const std::string& run_dir) {
  const std::string metrics_path =
      (fs::path(run_dir) / "metrics.json").string();
  std::ifstream in(metrics_path, std::ios::binary);
  if (!in) throw IoError("cannot read metrics file " + metrics_path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception&) {
    throw SchemaError("malformed metrics file " + metrics_path);
  }

  RunSummary run;
  run.name = fs::path(run_dir).filename().string();
  if (run.name.empty()) run.name = run_dir;
  try {
    run.target_domain = j.at("target_domain").get<std::string>();
    run.backbone = j.at("backbone").get<std::string>();
    run.seed = j.at("seed").get<std::uint64_t>();
    const nlohmann::json& fl = j.at("ablation");
    run.ablation.use_cint = fl.at("use_cint").get<bool>();
    run.ablation.use_cfac = fl.at("use_cfac").get<bool>();
    run.ablation.use_advm = fl.at("use_advm").get<bool>();
    run.best_epoch = j.at("best_epoch").get<std::size_t>();
    run.best_val_accuracy = j.at("best_val_accuracy").get<double>();
    for (const auto& e : j.at("epochs")) {
      train::EpochMetrics em;
      em.epoch = e.at("epoch").get<std::size_t>();
      em.lr = e.at("lr").get<double>();
      em.l_sup = e.at("l_sup").get<double>();
      em.l_inf = e.at("l_inf").get<double>();
      em.l_fac = e.at("l_fac").get<double>();
      em.total_model = e.at("total_model").get<double>();
      em.total_masker = e.at("total_masker").get<double>();
      em.val_accuracy = e.at("val_accuracy").get<double>();
      em.independence = e.at("independence").get<double>();
      run.epochs.push_back(em);
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("metrics file " + metrics_path +
                      " is missing fields: " + e.what());
  }

  const std::string result_path = (fs::path(run_dir) / "result.json").string();
  if (std::ifstream rin{result_path, std::ios::binary}) {
    nlohmann::json r;
    try {
      rin >> r;
      run.target_accuracy = r.at("target_accuracy_best").get<double>();
    } catch (const nlohmann::json::exception&) {
      throw SchemaError("malformed result file " + result_path);
    }
  }
  return run;
}

std::vector<RunSummary> collect_runs(const std::string& metrics_dir) {
  if (!fs::is_directory(metrics_dir))
    throw IoError("not a directory: " + metrics_dir);
  std::vector<std::string> dirs;
  if (fs::exists(fs::path(metrics_dir) / "metrics.json"))
    dirs.push_back(metrics_dir);
  for (const auto& entry : fs::directory_iterator(metrics_dir))
    if (entry.is_directory() &&
        fs::exists(entry.path() / "metrics.json"))
      dirs.push_back(entry.path().string());
  std::sort(dirs.begin(), dirs.end());
  std::vector<RunSummary> runs;
  runs.reserve(dirs.size());
  for (const std::string& d : dirs) runs.push_back(read_run(d));
  return runs;
}

std::vector<VariantAggregate> aggregate_runs(
    const std::vector<RunSummary>& runs) {
  std::map<std::pair<std::string, std::string>, std::vector<const RunSummary*>>
      groups;
  for (const RunSummary& r : runs)
    groups[{r.target_domain, variant_name(r.ablation)}].push_back(&r);

  std::vector<VariantAggregate> out;
  for (const auto& [key, members] : groups) {
    VariantAggregate a;
    a.target_domain = key.first;
    a.variant = key.second;
    double val_sum = 0.0, acc_sum = 0.0;
    std::size_t acc_n = 0;
    for (const RunSummary* r : members) {
      val_sum += r->best_val_accuracy;
      if (std::isfinite(r->target_accuracy)) {
        acc_sum += r->target_accuracy;
        ++acc_n;
      }
    }
    a.mean_best_val_accuracy = val_sum / static_cast<double>(members.size());
    a.runs = acc_n;
    if (acc_n > 0) {
      a.mean_target_accuracy = acc_sum / static_cast<double>(acc_n);
      double var = 0.0;
      for (const RunSummary* r : members)
        if (std::isfinite(r->target_accuracy)) {
          const double d = r->target_accuracy - a.mean_target_accuracy;
          var += d * d;
        }
      a.std_target_accuracy = std::sqrt(var / static_cast<double>(acc_n));
    }
    out.push_back(std::move(a));
  }
  return out;
}

ReportPaths write_report(const std::string& metrics_dir,
                         const std::string& out_dir) {
  const std::vector<RunSummary> runs = collect_runs(metrics_dir);
  require(!runs.empty(), "write_report: no runs under " + metrics_dir);
  fs::create_directories(out_dir);

  ReportPaths paths;
  paths.summary_csv = (fs::path(out_dir) / "summary.csv").string();
  paths.summary_json = (fs::path(out_dir) / "summary.json").string();

  {
    std::ofstream csv(paths.summary_csv, std::ios::binary);
    if (!csv) throw IoError("cannot write " + paths.summary_csv);
    csv << "name,target_domain,variant,backbone,seed,best_epoch,"
           "best_val_accuracy,target_accuracy,final_independence\n";
    for (const RunSummary& r : runs) {
      csv << r.name << ',' << r.target_domain << ','
          << variant_name(r.ablation) << ',' << r.backbone << ',' << r.seed
          << ',' << r.best_epoch << ',' << r.best_val_accuracy << ',';
      if (std::isfinite(r.target_accuracy)) csv << r.target_accuracy;
      csv << ',';
      if (!r.epochs.empty()) csv << r.epochs.back().independence;
      csv << '\n';
    }
    if (!csv) throw IoError("failed writing " + paths.summary_csv);
  }

  const std::vector<VariantAggregate> aggs = aggregate_runs(runs);
  {
    nlohmann::json j;
    nlohmann::json jr = nlohmann::json::array();
    for (const RunSummary& r : runs) {
      nlohmann::json e{{"name", r.name},
                       {"target_domain", r.target_domain},
                       {"variant", variant_name(r.ablation)},
                       {"backbone", r.backbone},
                       {"seed", r.seed},
                       {"best_epoch", r.best_epoch},
                       {"best_val_accuracy", r.best_val_accuracy}};
      if (std::isfinite(r.target_accuracy))
        e["target_accuracy"] = r.target_accuracy;
      if (!r.epochs.empty())
        e["final_independence"] = r.epochs.back().independence;
      jr.push_back(std::move(e));
    }
    j["runs"] = std::move(jr);
    nlohmann::json ja = nlohmann::json::array();
    for (const VariantAggregate& a : aggs) {
      nlohmann::json e{{"target_domain", a.target_domain},
                       {"variant", a.variant},
                       {"runs", a.runs},
                       {"mean_best_val_accuracy", a.mean_best_val_accuracy}};
      if (a.runs > 0) {
        e["mean_target_accuracy"] = a.mean_target_accuracy;
        e["std_target_accuracy"] = a.std_target_accuracy;
      }
      ja.push_back(std::move(e));
    }
    j["aggregates"] = std::move(ja);
    std::ofstream out(paths.summary_json, std::ios::binary);
    if (!out) throw IoError("cannot write " + paths.summary_json);
    out << j.dump(1) << '\n';
    if (!out) throw IoError("failed writing " + paths.summary_json);
  }

  for (const RunSummary& r : runs) {
    if (r.epochs.empty()) continue;
    std::vector<PlotSeries> series(4);
    series[0].label = "l_sup";
    series[1].label = "l_inf";
    series[2].label = "l_fac";
    series[3].label = "total";
    for (const train::EpochMetrics& em : r.epochs) {
      series[0].y.push_back(em.l_sup);
      series[1].y.push_back(em.l_inf);
      series[2].y.push_back(em.l_fac);
      series[3].y.push_back(em.total_model);
    }
    const std::string p =
        (fs::path(out_dir) / ("losses_" + r.name + ".png")).string();
    write_line_plot(p, "losses: " + r.name, series);
    paths.plots.push_back(p);
  }

  {
    std::vector<PlotSeries> series;
    for (const RunSummary& r : runs) {
      if (r.epochs.empty()) continue;
      PlotSeries s;
      s.label = r.name;
      for (const train::EpochMetrics& em : r.epochs)
        s.y.push_back(em.independence);
      series.push_back(std::move(s));
    }
    if (!series.empty()) {
      const std::string p = (fs::path(out_dir) / "independence.png").string();
      write_line_plot(p, "independence by epoch", series);
      paths.plots.push_back(p);
    }
  }

  {
    std::map<std::string, std::vector<Bar>> by_target;
    for (const VariantAggregate& a : aggs)
      if (a.runs > 0)
        by_target[a.target_domain].push_back(
            Bar{a.variant, a.mean_target_accuracy});
    for (const auto& [target, bars] : by_target) {
      const std::string p =
          (fs::path(out_dir) / ("accuracy_" + target + ".png")).string();
      write_bar_chart(p, "target accuracy: " + target, bars);
      paths.plots.push_back(p);
    }
  }
  return paths;
}

}  // namespace cirl::eval
