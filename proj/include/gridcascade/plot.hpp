#pragma once

#include <span>
#include <string>
#include <vector>

namespace gridcascade::plot {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

/// Line chart with markers and a legend. Output is deterministic text.
std::string line_chart(const std::string& title, const std::string& x_label, const std::string& y_label,
                       std::span<const Series> series);

struct BarGroup {
  std::string label;
  std::vector<double> values;  // one per series
};

/// Grouped vertical bars; `series` names the bars inside each group.
std::string bar_chart(const std::string& title, const std::string& y_label,
                      std::span<const std::string> series, std::span<const BarGroup> groups);

}  // namespace gridcascade::plot
