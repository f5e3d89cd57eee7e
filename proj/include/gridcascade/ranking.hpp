#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "gridcascade/grid.hpp"

namespace gridcascade {

/// Per-line scores and their descending ranking. All vectors are indexed by
/// line position in `grid.lines()`. Equal scores rank by ascending line id.
struct Ranking {
  std::string method;
  std::vector<int> line_id;
  std::vector<double> score;
  std::vector<int> rank;            // 1 = most vulnerable
  std::vector<std::size_t> order;   // line positions, best first
  std::size_t sample_count = 0;     // exposure only

  std::size_t size() const noexcept { return score.size(); }
};

Ranking make_ranking(const PowerGrid& grid, std::vector<double> scores, std::string method);

/// Exposure rankings: line_id,exposure_score,rank. With `with_method` the
/// method name is appended as a fourth column.
void write_ranking_csv(const Ranking& r, const std::filesystem::path& path, bool with_method = false);
Ranking read_ranking_csv(const PowerGrid& grid, const std::filesystem::path& path);

}  // namespace gridcascade
