#pragma once

// Minimal static SVG charts.

#include <filesystem>
#include <string>
#include <vector>

namespace teq {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

std::string line_chart_svg(const std::string& title, const std::string& x_label,
                           const std::string& y_label, const std::vector<Series>& series,
                           bool log_x = false);

std::string bar_chart_svg(const std::string& title, const std::vector<std::string>& labels,
                          const std::vector<double>& values);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace teq
