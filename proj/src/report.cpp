#include "poisonlab/report.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include "poisonlab/binary_io.hpp"
#include "poisonlab/data.hpp"
#include "poisonlab/errors.hpp"
#include "poisonlab/hashing.hpp"
#include "poisonlab/image_codec.hpp"
#include "poisonlab/trigger.hpp"

namespace poisonlab {

namespace fs = std::filesystem;

Fraction Fraction::of(std::int64_t hits, std::int64_t total) {
  if (total <= 0) throw ValidationError("fraction with non-positive denominator");
  const auto g = std::gcd(hits, total);
  return Fraction{hits / (g ? g : 1), total / (g ? g : 1)};
}

Fraction Fraction::operator+(const Fraction& o) const {
  const __int128 n = static_cast<__int128>(num) * o.den + static_cast<__int128>(o.num) * den;
  const __int128 d = static_cast<__int128>(den) * o.den;
  __int128 a = n < 0 ? -n : n, b = d;
  while (b != 0) {
    const __int128 t = a % b;
    a = b;
    b = t;
  }
  const __int128 g = a == 0 ? 1 : a;
  return Fraction{static_cast<std::int64_t>(n / g), static_cast<std::int64_t>(d / g)};
}

Fraction Fraction::divided_by(std::int64_t n) const {
  if (n <= 0) throw ValidationError("fraction divided by non-positive count");
  const __int128 d = static_cast<__int128>(den) * n;
  const auto g = std::gcd(num, static_cast<std::int64_t>(n));
  return Fraction{num / g, static_cast<std::int64_t>(d / g)};
}

std::string Fraction::str() const { return std::to_string(num) + "/" + std::to_string(den); }

namespace {

struct RateValue {
  std::int64_t hits = 0, total = 0;
};

RateValue rate_of(const nlohmann::json& j) { return {j.at("hits").get<std::int64_t>(), j.at("total").get<std::int64_t>()}; }

struct SeedPoint {
  std::uint64_t seed = 0;
  RateValue asr, asr_ex, ba;
  bool asr_ex_defined = true;
};

struct Stat {
  double mean = 0, min = 0, max = 0;
  Fraction exact;
};

Stat stat_of(const std::vector<RateValue>& rates) {
  Stat s;
  Fraction sum{0, 1};
  s.min = 1.0;
  s.max = 0.0;
  for (const auto& r : rates) {
    const Fraction f = Fraction::of(r.hits, r.total);
    sum = sum + f;
    s.min = std::min(s.min, f.value());
    s.max = std::max(s.max, f.value());
  }
  s.exact = sum.divided_by(static_cast<std::int64_t>(rates.size()));
  s.mean = s.exact.value();
  return s;
}

nlohmann::json stat_json(const std::vector<RateValue>& rates, const std::vector<std::uint64_t>& seeds) {
  nlohmann::json per = nlohmann::json::array();
  for (std::size_t i = 0; i < rates.size(); ++i) {
    per.push_back({{"seed", seeds[i]}, {"hits", rates[i].hits}, {"total", rates[i].total}});
  }
  if (rates.empty()) return {{"per_seed", per}, {"mean", nullptr}};
  const Stat s = stat_of(rates);
  return {{"per_seed", per}, {"mean", s.mean}, {"mean_exact", s.exact.str()}, {"min", s.min}, {"max", s.max}};
}

std::string fmt(double v, int digits = 3) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"};

struct Curve {
  std::string label;
  std::vector<double> x, mean, lo, hi;
};

std::string line_plot(const std::string& title, const std::string& y_label, const std::vector<Curve>& curves,
                      double y_min, double y_max, const std::optional<double>& reference,
                      const std::string& reference_label) {
  const double W = 640, H = 420, ml = 70, mr = 170, mt = 40, mb = 55;
  double x_min = 1e9, x_max = -1e9;
  for (const auto& c : curves) {
    for (double x : c.x) {
      x_min = std::min(x_min, x);
      x_max = std::max(x_max, x);
    }
  }
  if (x_min > x_max) x_min = 0, x_max = 1;
  const double pad = x_max > x_min ? 0.05 * (x_max - x_min) : 0.5 * std::max(x_min, 1e-3);
  x_min -= pad;
  x_max += pad;
  auto px = [&](double x) { return ml + (x - x_min) / (x_max - x_min) * (W - ml - mr); };
  auto py = [&](double y) { return mt + (1.0 - (y - y_min) / (y_max - y_min)) * (H - mt - mb); };

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << title << "</text>\n";
  s << "<line x1=\"" << ml << "\" y1=\"" << py(y_min) << "\" x2=\"" << W - mr << "\" y2=\"" << py(y_min)
    << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << ml << "\" y1=\"" << py(y_min) << "\" x2=\"" << ml << "\" y2=\"" << py(y_max)
    << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double y = y_min + (y_max - y_min) * i / 5.0;
    s << "<line x1=\"" << ml - 4 << "\" y1=\"" << py(y) << "\" x2=\"" << W - mr << "\" y2=\"" << py(y)
      << "\" stroke=\"#ddd\"/>\n";
    s << "<text x=\"" << ml - 8 << "\" y=\"" << py(y) + 4 << "\" text-anchor=\"end\">" << fmt(y, 2) << "</text>\n";
  }
  std::vector<double> ticks;
  for (const auto& c : curves) ticks.insert(ticks.end(), c.x.begin(), c.x.end());
  std::sort(ticks.begin(), ticks.end());
  ticks.erase(std::unique(ticks.begin(), ticks.end()), ticks.end());
  for (double x : ticks) {
    s << "<text x=\"" << px(x) << "\" y=\"" << py(y_min) + 18 << "\" text-anchor=\"middle\">" << format_exact(x)
      << "</text>\n";
  }
  s << "<text x=\"" << (ml + W - mr) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">mixing ratio r</text>\n";
  s << "<text transform=\"translate(18," << (mt + H - mb) / 2 << ") rotate(-90)\" text-anchor=\"middle\">" << y_label
    << "</text>\n";
  if (reference) {
    s << "<line x1=\"" << ml << "\" y1=\"" << py(*reference) << "\" x2=\"" << W - mr << "\" y2=\"" << py(*reference)
      << "\" stroke=\"black\" stroke-dasharray=\"6,4\"/>\n";
  }
  for (std::size_t ci = 0; ci < curves.size(); ++ci) {
    const auto& c = curves[ci];
    const char* color = kPalette[ci % std::size(kPalette)];
    std::ostringstream pts;
    for (std::size_t i = 0; i < c.x.size(); ++i) pts << px(c.x[i]) << "," << py(c.mean[i]) << " ";
    s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"" << pts.str() << "\"/>\n";
    for (std::size_t i = 0; i < c.x.size(); ++i) {
      s << "<line x1=\"" << px(c.x[i]) << "\" y1=\"" << py(c.lo[i]) << "\" x2=\"" << px(c.x[i]) << "\" y2=\""
        << py(c.hi[i]) << "\" stroke=\"" << color << "\"/>\n";
      s << "<circle cx=\"" << px(c.x[i]) << "\" cy=\"" << py(c.mean[i]) << "\" r=\"3.5\" fill=\"" << color << "\"/>\n";
    }
    const double ly = mt + 10 + 20 * ci;
    s << "<line x1=\"" << W - mr + 12 << "\" y1=\"" << ly << "\" x2=\"" << W - mr + 34 << "\" y2=\"" << ly
      << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    s << "<text x=\"" << W - mr + 40 << "\" y=\"" << ly + 4 << "\">" << c.label << "</text>\n";
  }
  if (reference) {
    const double ly = mt + 10 + 20 * curves.size();
    s << "<line x1=\"" << W - mr + 12 << "\" y1=\"" << ly << "\" x2=\"" << W - mr + 34 << "\" y2=\"" << ly
      << "\" stroke=\"black\" stroke-dasharray=\"6,4\"/>\n";
    s << "<text x=\"" << W - mr + 40 << "\" y=\"" << ly + 4 << "\">" << reference_label << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

ImageArray upscale(const ImageArray& img, int factor) {
  const Shape s = img.shape();
  ImageArray out(Shape{s.height * factor, s.width * factor, s.channels});
  for (int r = 0; r < out.shape().height; ++r) {
    for (int c = 0; c < out.shape().width; ++c) {
      for (int ch = 0; ch < s.channels; ++ch) out.at(r, c, ch) = img.at(r / factor, c / factor, ch);
    }
  }
  return out;
}

std::string embed_png(const ImageArray& img) {
  const auto png = encode_png(img);
  return "data:image/png;base64," + base64_encode(png);
}

std::string trigger_grid(const fs::path& run_dir, const nlohmann::json& manifest, std::vector<std::string>& warnings,
                         nlohmann::json& norms) {
  const auto& config = manifest.at("config");
  const auto seeds = config.at("seeds").get<std::vector<std::uint64_t>>();
  const fs::path trig_dir = run_dir / ("seed_" + std::to_string(seeds.front())) / "triggers";
  const fs::path cache = run_dir / "data" / "train.cache";
  if (!fs::is_directory(trig_dir) || !fs::exists(cache)) {
    warnings.push_back(run_dir.string() + ": no triggers or dataset cache for the image grid");
    return {};
  }
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(trig_dir)) {
    if (e.path().extension() == ".trigger") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) return {};
  std::vector<Trigger> triggers;
  for (const auto& f : files) triggers.push_back(read_trigger(f));
  const Dataset train = read_dataset_cache(cache);
  const int target = config.value("target", 0);
  const bool dirty = config.value("label_mode", std::string("dirty")) == "dirty";
  std::vector<const LabeledSample*> picks;
  for (const auto& s : train.samples) {
    if ((dirty && s.label != target) || (!dirty && s.label == target)) picks.push_back(&s);
    if (picks.size() == 4) break;
  }
  const int factor = std::max(1, 96 / std::max(train.resolution.height, 1));
  const int cell_w = train.resolution.width * factor, cell_h = train.resolution.height * factor;
  const int col_w = cell_w + 40, row_h = cell_h + 50, top = 50, left = 20;
  const int W = left * 2 + col_w * static_cast<int>(1 + triggers.size());
  const int H = top + row_h * static_cast<int>(picks.size()) + 10;
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
    << "\" font-family=\"sans-serif\" font-size=\"11\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << left + col_w / 2 << "\" y=\"30\" text-anchor=\"middle\" font-size=\"13\">original</text>\n";
  for (std::size_t t = 0; t < triggers.size(); ++t) {
    s << "<text x=\"" << left + col_w * (t + 1) + col_w / 2 << "\" y=\"30\" text-anchor=\"middle\" font-size=\"13\">"
      << files[t].stem().string() << "</text>\n";
  }
  for (std::size_t r = 0; r < picks.size(); ++r) {
    const int y = top + row_h * static_cast<int>(r);
    const ImageArray& x = picks[r]->image;
    s << "<image x=\"" << left << "\" y=\"" << y << "\" width=\"" << cell_w << "\" height=\"" << cell_h
      << "\" href=\"" << embed_png(upscale(x, factor)) << "\"/>\n";
    s << "<text x=\"" << left << "\" y=\"" << y + cell_h + 14 << "\">id " << picks[r]->id << "</text>\n";
    for (std::size_t t = 0; t < triggers.size(); ++t) {
      const ImageArray p = apply_trigger(x, triggers[t]);
      std::vector<float> diff(p.size());
      for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = p[i] - x[i];
      const double linf = max_abs(diff), l2 = l2_norm(diff);
      norms.push_back({{"trigger", files[t].stem().string()}, {"id", picks[r]->id}, {"linf", linf}, {"l2", l2}});
      const int cx = left + col_w * static_cast<int>(t + 1);
      s << "<image x=\"" << cx << "\" y=\"" << y << "\" width=\"" << cell_w << "\" height=\"" << cell_h
        << "\" href=\"" << embed_png(upscale(p, factor)) << "\"/>\n";
      s << "<text x=\"" << cx << "\" y=\"" << y + cell_h + 14 << "\">Linf " << fmt(linf, 4) << " (" << fmt(linf * 255, 2)
        << "/255)</text>\n";
      s << "<text x=\"" << cx << "\" y=\"" << y + cell_h + 28 << "\">L2 " << fmt(l2, 4) << "</text>\n";
    }
  }
  s << "</svg>\n";
  return s.str();
}

}  // namespace

ReportOutput write_report(const std::vector<fs::path>& run_dirs, const fs::path& out) {
  if (run_dirs.empty()) throw ValidationError("report: no run directories given");
  ReportOutput result;
  // mode -> attack label -> ratio -> points
  std::map<std::string, std::map<std::string, std::map<double, std::vector<SeedPoint>>>> groups;
  std::map<std::string, std::map<std::string, std::string>> names;
  std::map<std::string, std::vector<std::pair<std::uint64_t, RateValue>>> clean;
  std::vector<std::pair<fs::path, nlohmann::json>> manifests;

  for (const auto& dir : run_dirs) {
    const fs::path mpath = dir / "manifest.json";
    if (!fs::exists(mpath)) {
      result.warnings.push_back(dir.string() + ": no manifest.json, skipped");
      continue;
    }
    nlohmann::json manifest;
    try {
      manifest = nlohmann::json::parse(read_text_file(mpath));
    } catch (const nlohmann::json::exception& e) {
      result.warnings.push_back(mpath.string() + ": unreadable (" + e.what() + "), skipped");
      continue;
    }
    manifests.emplace_back(dir, manifest);
    const std::string mode = manifest.at("config").value("label_mode", std::string("dirty"));
    for (const auto& b : manifest.value("baselines", nlohmann::json::array())) {
      const fs::path metrics = dir / b.value("dir", std::string()) / "metrics.json";
      if (b.value("status", std::string()) != "ok" || !fs::exists(metrics)) {
        result.warnings.push_back(dir.string() + ": clean baseline for seed " + b.at("seed").dump() + " incomplete");
        continue;
      }
      const auto m = nlohmann::json::parse(read_text_file(metrics));
      clean[mode].emplace_back(b.at("seed").get<std::uint64_t>(), rate_of(m.at("ba")));
    }
    for (const auto& c : manifest.value("cells", nlohmann::json::array())) {
      const fs::path metrics = dir / c.value("dir", std::string()) / "metrics.json";
      if (c.value("status", std::string()) != "ok" || !fs::exists(metrics)) {
        result.warnings.push_back(dir.string() + ": cell " + c.value("dir", std::string("?")) + " incomplete, skipped");
        continue;
      }
      const auto m = nlohmann::json::parse(read_text_file(metrics));
      SeedPoint p;
      p.seed = c.at("seed").get<std::uint64_t>();
      p.asr = rate_of(m.at("asr"));
      p.ba = rate_of(m.at("ba"));
      const auto& ex = m.at("asr_excluding_naturally_misclassified");
      p.asr_ex = rate_of(ex);
      p.asr_ex_defined = p.asr_ex.total > 0;
      const std::string label = c.at("label").get<std::string>();
      groups[mode][label][c.at("ratio").get<double>()].push_back(p);
      names[mode][label] = c.at("attack").get<std::string>();
    }
  }
  if (groups.empty() && clean.empty()) throw ValidationError("report: no completed runs found");

  fs::create_directories(out);
  nlohmann::json summary;
  summary["runs"] = nlohmann::json::array();
  for (const auto& [dir, _] : manifests) summary["runs"].push_back(fs::absolute(dir).lexically_normal().string());
  summary["groups"] = nlohmann::json::array();
  summary["clean"] = nlohmann::json::array();

  std::map<std::string, std::optional<double>> clean_mean;
  for (const auto& [mode, points] : clean) {
    std::vector<RateValue> rates;
    std::vector<std::uint64_t> seeds;
    for (const auto& [seed, r] : points) {
      seeds.push_back(seed);
      rates.push_back(r);
    }
    clean_mean[mode] = stat_of(rates).mean;
    summary["clean"].push_back({{"label_mode", mode}, {"ba", stat_json(rates, seeds)}});
  }

  for (const auto& [mode, attacks] : groups) {
    std::vector<Curve> asr_curves, ba_curves;
    double ba_low = 1.0;
    for (const auto& [label, ratios] : attacks) {
      Curve ca{label, {}, {}, {}, {}}, cb{label, {}, {}, {}, {}};
      for (const auto& [ratio, points] : ratios) {
        std::vector<RateValue> asr, asr_ex, ba;
        std::vector<std::uint64_t> seeds, seeds_ex;
        for (const auto& p : points) {
          seeds.push_back(p.seed);
          asr.push_back(p.asr);
          ba.push_back(p.ba);
          if (p.asr_ex_defined) {
            asr_ex.push_back(p.asr_ex);
            seeds_ex.push_back(p.seed);
          }
        }
        summary["groups"].push_back({{"label_mode", mode},
                                     {"attack", label},
                                     {"name", names[mode][label]},
                                     {"ratio", ratio},
                                     {"asr", stat_json(asr, seeds)},
                                     {"asr_excluding_naturally_misclassified", stat_json(asr_ex, seeds_ex)},
                                     {"ba", stat_json(ba, seeds)}});
        const Stat sa = stat_of(asr), sb = stat_of(ba);
        ca.x.push_back(ratio);
        ca.mean.push_back(sa.mean);
        ca.lo.push_back(sa.min);
        ca.hi.push_back(sa.max);
        cb.x.push_back(ratio);
        cb.mean.push_back(sb.mean);
        cb.lo.push_back(sb.min);
        cb.hi.push_back(sb.max);
        ba_low = std::min(ba_low, sb.min);
      }
      asr_curves.push_back(std::move(ca));
      ba_curves.push_back(std::move(cb));
    }
    const auto asr_file = out / ("asr_" + mode + ".svg");
    write_text_file(asr_file, line_plot("ASR vs mixing ratio (" + mode + "-label)", "attack success rate", asr_curves,
                                        0.0, 1.0, std::nullopt, ""));
    result.files.push_back(asr_file);
    const auto cm = clean_mean.count(mode) ? clean_mean[mode] : std::nullopt;
    if (cm) ba_low = std::min(ba_low, *cm);
    const double lo = std::max(0.0, std::floor((ba_low - 0.02) * 20.0) / 20.0);
    const auto ba_file = out / ("ba_" + mode + ".svg");
    write_text_file(ba_file, line_plot("BA vs mixing ratio (" + mode + "-label)", "benign accuracy", ba_curves, lo,
                                       1.0, cm, "clean model"));
    result.files.push_back(ba_file);
  }

  summary["grid"] = nlohmann::json::array();
  for (const auto& [dir, manifest] : manifests) {
    const std::string grid = trigger_grid(dir, manifest, result.warnings, summary["grid"]);
    if (grid.empty()) continue;
    const auto grid_file = out / "grid.svg";
    write_text_file(grid_file, grid);
    result.files.push_back(grid_file);
    break;
  }

  summary["skipped"] = result.warnings;
  const auto summary_file = out / "summary.json";
  write_text_file(summary_file, summary.dump(2) + "\n");
  result.files.push_back(summary_file);
  result.summary = std::move(summary);
  return result;
}

}  // namespace poisonlab
