#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "efclab/common.hpp"
#include "efclab/scaling.hpp"

namespace efclab {

// ---------------------------------------------------------------------------
// Atomic file output: write to a temp sibling, then rename.
// ---------------------------------------------------------------------------

inline void atomic_write_file(const std::filesystem::path& path, const std::string& content) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) fail("invalid-config", "cannot open " + tmp.string() + " for writing");
    os << content;
    if (!os.good()) fail("invalid-config", "short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// CSV emission. Every file carries the master seed and config hash as a
// leading comment line, then a header row.
// ---------------------------------------------------------------------------

struct CsvTable {
  std::string comment;  // "# master_seed=... config_hash=..."
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::string render() const {
    std::ostringstream os;
    if (!comment.empty()) os << "# " << comment << "\n";
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (i) os << ",";
      os << header[i];
    }
    os << "\n";
    for (const auto& row : rows) {
      for (std::size_t i = 0; i < row.size(); ++i) {
        if (i) os << ",";
        os << row[i];
      }
      os << "\n";
    }
    return os.str();
  }
};

inline std::string csv_num(double v) { return fmt_num(v, 12); }

// ---------------------------------------------------------------------------
// Hand-emitted SVG line plots: failure rate vs normalized z on a log-x axis,
// observed cells as dots plus the fitted curve.
// ---------------------------------------------------------------------------

inline std::string svg_scaling_plot(const std::string& title,
                                    const std::vector<std::pair<double, double>>& points,
                                    const PowerLawFit& fit) {
  const double width = 640, height = 440;
  const double ml = 70, mr = 20, mt = 40, mb = 50;
  double zmin = 1e300, zmax = -1e300;
  for (const auto& [z, f] : points) {
    zmin = std::min(zmin, z);
    zmax = std::max(zmax, z);
  }
  if (!(zmax > zmin)) {
    zmin = 0.5;
    zmax = 2.0;
  }
  double lx0 = std::log10(zmin), lx1 = std::log10(zmax);
  if (lx1 - lx0 < 1e-9) lx1 = lx0 + 1;
  auto px = [&](double z) {
    return ml + (std::log10(z) - lx0) / (lx1 - lx0) * (width - ml - mr);
  };
  auto py = [&](double f) { return mt + (1.0 - clamp01(f)) * (height - mt - mb); };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
  os << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
  os << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\" "
        "font-family=\"sans-serif\">"
     << title << "</text>\n";
  // axes
  os << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\""
     << height - mb << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << ml << "\" y1=\"" << height - mb << "\" x2=\"" << width - mr
     << "\" y2=\"" << height - mb << "\" stroke=\"black\"/>\n";
  for (double f = 0.0; f <= 1.0001; f += 0.25) {
    os << "<line x1=\"" << ml - 4 << "\" y1=\"" << py(f) << "\" x2=\"" << ml << "\" y2=\""
       << py(f) << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << ml - 8 << "\" y=\"" << py(f) + 4
       << "\" text-anchor=\"end\" font-size=\"11\" font-family=\"sans-serif\">" << fmt_num(f, 3)
       << "</text>\n";
  }
  for (int e = static_cast<int>(std::floor(lx0)); e <= static_cast<int>(std::ceil(lx1)); ++e) {
    double z = std::pow(10.0, e);
    if (z < zmin * 0.999 || z > zmax * 1.001) continue;
    os << "<line x1=\"" << px(z) << "\" y1=\"" << height - mb << "\" x2=\"" << px(z)
       << "\" y2=\"" << height - mb + 4 << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << px(z) << "\" y=\"" << height - mb + 18
       << "\" text-anchor=\"middle\" font-size=\"11\" font-family=\"sans-serif\">1e" << e
       << "</text>\n";
  }
  os << "<text x=\"" << (ml + width - mr) / 2 << "\" y=\"" << height - 12
     << "\" text-anchor=\"middle\" font-size=\"12\" font-family=\"sans-serif\">normalized z "
        "(log)</text>\n";
  os << "<text x=\"16\" y=\"" << (mt + height - mb) / 2
     << "\" text-anchor=\"middle\" font-size=\"12\" font-family=\"sans-serif\" "
        "transform=\"rotate(-90 16 "
     << (mt + height - mb) / 2 << ")\">failure rate</text>\n";

  // fitted curve
  os << "<polyline fill=\"none\" stroke=\"#c0392b\" stroke-width=\"1.5\" points=\"";
  const int samples = 120;
  for (int i = 0; i <= samples; ++i) {
    double lz = lx0 + (lx1 - lx0) * static_cast<double>(i) / samples;
    double z = std::pow(10.0, lz);
    os << px(z) << "," << py(fit.predict(z)) << " ";
  }
  os << "\"/>\n";
  // observed cells
  for (const auto& [z, f] : points) {
    os << "<circle cx=\"" << px(z) << "\" cy=\"" << py(f)
       << "\" r=\"3\" fill=\"#2c3e50\" fill-opacity=\"0.7\"/>\n";
  }
  os << "<text x=\"" << width - mr << "\" y=\"" << mt - 6
     << "\" text-anchor=\"end\" font-size=\"12\" font-family=\"sans-serif\">R2=" << fmt_num(fit.r2, 4)
     << "  MAE=" << fmt_num(fit.mae, 4) << "</text>\n";
  os << "</svg>\n";
  return os.str();
}

}  // namespace efclab
