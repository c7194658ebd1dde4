#include "teq/plots.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "teq/common.hpp"

namespace teq {

namespace {

constexpr double kWidth = 640, kHeight = 400;
constexpr double kLeft = 70, kRight = 160, kTop = 40, kBottom = 50;
const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string fmt(double v) {
  std::ostringstream o;
  o.precision(4);
  o << v;
  return o.str();
}

void header(std::ostringstream& o, const std::string& title) {
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">"
    << escape(title) << "</text>\n";
}

}  // namespace

std::string line_chart_svg(const std::string& title, const std::string& x_label,
                           const std::string& y_label, const std::vector<Series>& series, bool log_x) {
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  auto tx = [&](double x) { return log_x ? std::log2(x) : x; };
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw Error("series x and y lengths differ");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, tx(s.x[i]));
      x1 = std::max(x1, tx(s.x[i]));
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  if (!(x0 <= x1)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  const double pad = 0.05 * (y1 - y0);
  y0 -= pad;
  y1 += pad;
  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (tx(x) - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return kTop + (1.0 - (y - y0) / (y1 - y0)) * ph; };

  std::ostringstream o;
  header(o, title);
  o << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << pw << "\" height=\"" << ph
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double yv = y0 + (y1 - y0) * i / 4.0;
    o << "<text x=\"" << kLeft - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << fmt(yv)
      << "</text>\n";
    const double xv = x0 + (x1 - x0) * i / 4.0;
    const double xr = log_x ? std::exp2(xv) : xv;
    o << "<text x=\"" << px(xr) << "\" y=\"" << kTop + ph + 16 << "\" text-anchor=\"middle\">"
      << fmt(xr) << "</text>\n";
  }
  o << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kHeight - 10 << "\" text-anchor=\"middle\">"
    << escape(x_label) << "</text>\n"
    << "<text transform=\"translate(16," << kTop + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
    << escape(y_label) << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* colour = kPalette[k % std::size(kPalette)];
    o << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (std::isfinite(s.y[i])) o << px(s.x[i]) << "," << py(s.y[i]) << " ";
    }
    o << "\"/>\n";
    if (s.x.size() <= 16) {
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        if (std::isfinite(s.y[i]))
          o << "<circle cx=\"" << px(s.x[i]) << "\" cy=\"" << py(s.y[i]) << "\" r=\"3\" fill=\""
            << colour << "\"/>\n";
      }
    }
    const double ly = kTop + 14 + 18.0 * k;
    o << "<line x1=\"" << kWidth - kRight + 10 << "\" y1=\"" << ly - 4 << "\" x2=\""
      << kWidth - kRight + 30 << "\" y2=\"" << ly - 4 << "\" stroke=\"" << colour
      << "\" stroke-width=\"2\"/>\n<text x=\"" << kWidth - kRight + 36 << "\" y=\"" << ly << "\">"
      << escape(s.name) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

std::string bar_chart_svg(const std::string& title, const std::vector<std::string>& labels,
                          const std::vector<double>& values) {
  if (labels.size() != values.size()) throw Error("bar labels and values differ in length");
  double top = 0.0;
  for (double v : values)
    if (std::isfinite(v)) top = std::max(top, v);
  if (top <= 0.0) top = 1.0;
  const double pw = kWidth - kLeft - 40, ph = kHeight - kTop - kBottom;
  const double slot = values.empty() ? pw : pw / values.size();
  std::ostringstream o;
  header(o, title);
  o << "<line x1=\"" << kLeft << "\" y1=\"" << kTop + ph << "\" x2=\"" << kLeft + pw << "\" y2=\""
    << kTop + ph << "\" stroke=\"black\"/>\n";
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double v = std::isfinite(values[i]) ? std::max(0.0, values[i]) : 0.0;
    const double h = v / top * ph;
    const double x = kLeft + slot * i + slot * 0.15;
    o << "<rect x=\"" << x << "\" y=\"" << kTop + ph - h << "\" width=\"" << slot * 0.7
      << "\" height=\"" << h << "\" fill=\"" << kPalette[0] << "\"/>\n"
      << "<text x=\"" << x + slot * 0.35 << "\" y=\"" << kTop + ph - h - 4
      << "\" text-anchor=\"middle\">" << fmt(values[i]) << "</text>\n"
      << "<text x=\"" << x + slot * 0.35 << "\" y=\"" << kTop + ph + 16
      << "\" text-anchor=\"middle\">" << escape(labels[i]) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw Error("cannot write " + path.string());
}

}  // namespace teq
