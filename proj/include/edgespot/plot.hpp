#pragma once

// Plot emission without a display: log-log SVG for bench CSVs, grayscale PGM
// for control-point density grids.

#include <cstdio>

#include "edgespot/bench.hpp"
#include "edgespot/fscrs.hpp"

namespace edgespot {

inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

/// Runtime against token count on log-log axes, one polyline per mechanism,
/// each legend entry carrying its fitted slope.
inline std::string bench_svg(const std::vector<BenchRecord>& recs) {
  if (recs.empty()) throw DataError("no bench records to plot");
  constexpr double W = 640, H = 420, L = 80, R = 20, T = 30, B = 60;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& r : recs) {
    const double x = std::log10(static_cast<double>(r.n_tokens)), y = std::log10(std::max(r.median_ns, 1.0));
    xmin = std::min(xmin, x), xmax = std::max(xmax, x), ymin = std::min(ymin, y), ymax = std::max(ymax, y);
  }
  if (xmax - xmin < 1e-9) xmin -= 0.5, xmax += 0.5;
  if (ymax - ymin < 1e-9) ymin -= 0.5, ymax += 0.5;
  ymin = std::floor(ymin), ymax = std::ceil(ymax);
  auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - ymin) / (ymax - ymin) * (H - T - B); };

  std::string s;
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"420\" viewBox=\"0 0 640 420\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<g stroke=\"black\" fill=\"none\"><line x1=\"" + fmt("%.1f", L) + "\" y1=\"" + fmt("%.1f", H - B) + "\" x2=\"" +
       fmt("%.1f", W - R) + "\" y2=\"" + fmt("%.1f", H - B) + "\"/><line x1=\"" + fmt("%.1f", L) + "\" y1=\"" +
       fmt("%.1f", T) + "\" x2=\"" + fmt("%.1f", L) + "\" y2=\"" + fmt("%.1f", H - B) + "\"/></g>\n";
  s += "<g font-family=\"sans-serif\" font-size=\"11\">\n";
  for (const auto& r : recs)
    if (r.mechanism == recs.front().mechanism) {
      const double x = px(std::log10(static_cast<double>(r.n_tokens)));
      s += "<text x=\"" + fmt("%.1f", x) + "\" y=\"" + fmt("%.1f", H - B + 16) + "\" text-anchor=\"middle\">" +
           std::to_string(r.n_tokens) + "</text>\n";
    }
  for (double e = ymin; e <= ymax + 1e-9; e += 1)
    s += "<text x=\"" + fmt("%.1f", L - 6) + "\" y=\"" + fmt("%.1f", py(e) + 4) + "\" text-anchor=\"end\">1e" +
         fmt("%.0f", e) + "</text>\n";
  s += "<text x=\"" + fmt("%.1f", (L + W - R) / 2) + "\" y=\"" + fmt("%.1f", H - 20) +
       "\" text-anchor=\"middle\">tokens N (log)</text>\n";
  s += "<text x=\"16\" y=\"" + fmt("%.1f", (T + H - B) / 2) + "\" transform=\"rotate(-90 16 " +
       fmt("%.1f", (T + H - B) / 2) + ")\" text-anchor=\"middle\">median ns (log)</text>\n";
  s += "</g>\n";

  const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};
  const auto mechs = bench_mechanisms(recs);
  for (std::size_t m = 0; m < mechs.size(); ++m) {
    const char* c = colors[m % 4];
    std::string pts;
    for (const auto& r : recs)
      if (r.mechanism == mechs[m])
        pts += fmt("%.1f", px(std::log10(static_cast<double>(r.n_tokens)))) + "," +
               fmt("%.1f", py(std::log10(std::max(r.median_ns, 1.0)))) + " ";
    s += "<polyline class=\"series\" data-mechanism=\"" + mechs[m] + "\" fill=\"none\" stroke=\"" + c +
         "\" stroke-width=\"2\" points=\"" + pts + "\"/>\n";
    const auto count = std::count_if(recs.begin(), recs.end(), [&](const auto& r) { return r.mechanism == mechs[m]; });
    const double slope = count >= 2 ? loglog_slope(recs, mechs[m]) : std::nan("");
    s += "<text class=\"slope\" x=\"" + fmt("%.1f", L + 12) + "\" y=\"" + fmt("%.1f", T + 14 + 16.0 * m) + "\" fill=\"" +
         c + "\" font-family=\"sans-serif\" font-size=\"12\">" + mechs[m] + " slope " + fmt("%.3f", slope) + "</text>\n";
  }
  s += "</svg>\n";
  return s;
}

inline bool is_bench_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  std::string line;
  while (std::getline(is, line))
    if (!line.empty() && line[0] != '#') return line == kBenchHeader;
  return false;
}

/// Renders a bench CSV as SVG or a density CSV as PGM, depending on content.
/// Returns the path written.
inline std::filesystem::path plot_csv(const std::filesystem::path& in, std::filesystem::path out) {
  if (!std::filesystem::exists(in)) throw DataError("cannot open " + in.string());
  if (is_bench_csv(in)) {
    const auto svg = bench_svg(read_bench_csv(in));
    if (out.extension() != ".svg") out += ".svg";
    std::ofstream os(out, std::ios::trunc);
    if (!os) throw DataError("cannot write " + out.string());
    os << svg;
    return out;
  }
  const auto grid = read_density_csv(in);
  if (out.extension() != ".pgm") out += ".pgm";
  write_pgm(out, density_to_image(grid));
  return out;
}

}  // namespace edgespot
