#include "knlab/svg.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "knlab/errors.hpp"
#include "knlab/textfmt.hpp"

namespace knlab::svg {

namespace {

std::string escape(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string num(double v) { return fmt_g(v); }

}  // namespace

std::string bar_chart(const std::vector<std::string>& labels, const std::vector<double>& values,
                      const std::string& title) {
  if (labels.size() != values.size())
    throw data_error("bar_chart: labels and values differ in length");
  const int n = static_cast<int>(values.size());
  const double band = 44.0, left = 64.0, right = 16.0, top = 32.0, bottom = 40.0;
  const double plot_h = 180.0;
  const double width = left + band * std::max(n, 1) + right;
  const double height = top + plot_h + bottom;

  double vmin = 0.0, vmax = 0.0;
  for (double v : values) {
    vmin = std::min(vmin, v);
    vmax = std::max(vmax, v);
  }
  if (vmax == vmin) vmax = vmin + 1.0;
  auto ypix = [&](double v) { return top + (vmax - v) / (vmax - vmin) * plot_h; };

  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(width) << "\" height=\""
      << num(height) << "\">\n";
  out << "<text x=\"" << num(left) << "\" y=\"20\" font-family=\"sans-serif\" font-size=\"13\">"
      << escape(title) << "</text>\n";
  // zero baseline and extremes on the value axis
  for (double v : {vmin, 0.0, vmax}) {
    out << "<line x1=\"" << num(left) << "\" y1=\"" << num(ypix(v)) << "\" x2=\""
        << num(width - right) << "\" y2=\"" << num(ypix(v))
        << "\" stroke=\"#cccccc\" stroke-width=\"1\"/>\n";
    out << "<text x=\"4\" y=\"" << num(ypix(v) + 4)
        << "\" font-family=\"sans-serif\" font-size=\"10\">" << num(v) << "</text>\n";
  }
  for (int i = 0; i < n; ++i) {
    const double v = values[i];
    const double x = left + band * i + 6.0;
    const double y0 = ypix(0.0), y1 = ypix(v);
    const char* fill = v < 0.0 ? "#b04a4a" : "#4a6fb0";
    out << "<rect class=\"bar\" x=\"" << num(x) << "\" y=\"" << num(std::min(y0, y1))
        << "\" width=\"" << num(band - 12.0) << "\" height=\"" << num(std::abs(y1 - y0))
        << "\" fill=\"" << fill << "\"><title>" << num(v) << "</title></rect>\n";
    out << "<text x=\"" << num(x + (band - 12.0) / 2.0) << "\" y=\"" << num(top + plot_h + 16.0)
        << "\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">"
        << escape(labels[i]) << "</text>\n";
  }
  out << "</svg>\n";
  return out.str();
}

std::string heatmap(const std::vector<std::vector<double>>& grid,
                    const std::vector<std::string>& row_labels,
                    const std::vector<std::string>& col_labels, const std::string& title) {
  const int rows = static_cast<int>(grid.size());
  if (rows == 0) throw data_error("heatmap: empty grid");
  const int cols = static_cast<int>(grid.front().size());
  for (const auto& r : grid)
    if (static_cast<int>(r.size()) != cols) throw data_error("heatmap: ragged grid");
  if (static_cast<int>(row_labels.size()) != rows ||
      static_cast<int>(col_labels.size()) != cols)
    throw data_error("heatmap: label counts do not match grid");

  double amax = 0.0;
  for (const auto& r : grid)
    for (double v : r) {
      if (!std::isfinite(v)) throw data_error("heatmap: non-finite cell");
      amax = std::max(amax, std::abs(v));
    }
  if (amax == 0.0) amax = 1.0;

  const double cell_w = 30.0, cell_h = 22.0, left = 120.0, top = 56.0;
  const double width = left + cell_w * cols + 16.0;
  const double height = top + cell_h * rows + 16.0;

  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(width) << "\" height=\""
      << num(height) << "\">\n";
  out << "<text x=\"8\" y=\"20\" font-family=\"sans-serif\" font-size=\"13\">" << escape(title)
      << "</text>\n";
  for (int c = 0; c < cols; ++c)
    out << "<text x=\"" << num(left + cell_w * c + cell_w / 2.0) << "\" y=\"" << num(top - 8.0)
        << "\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">"
        << escape(col_labels[c]) << "</text>\n";
  for (int r = 0; r < rows; ++r) {
    out << "<text x=\"" << num(left - 8.0) << "\" y=\"" << num(top + cell_h * r + cell_h / 2.0 + 4.0)
        << "\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"end\">"
        << escape(row_labels[r]) << "</text>\n";
    for (int c = 0; c < cols; ++c) {
      const double v = grid[r][c];
      const double mag = std::min(1.0, std::abs(v) / amax);
      // white -> red for positive, white -> blue for negative
      const int fade = static_cast<int>(std::lround(255.0 * (1.0 - mag)));
      const int rr = v >= 0.0 ? 255 : fade;
      const int bb = v >= 0.0 ? fade : 255;
      out << "<rect class=\"cell\" x=\"" << num(left + cell_w * c) << "\" y=\""
          << num(top + cell_h * r) << "\" width=\"" << num(cell_w) << "\" height=\"" << num(cell_h)
          << "\" stroke=\"#dddddd\" fill=\"rgb(" << rr << ',' << fade << ',' << bb << ")\"><title>"
          << num(v) << "</title></rect>\n";
    }
  }
  out << "</svg>\n";
  return out.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot write " + path);
  out << content;
  if (!out) throw io_error("write failed for " + path);
}

}  // namespace knlab::svg
