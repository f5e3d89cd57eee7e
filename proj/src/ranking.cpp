#include "gridcascade/ranking.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "gridcascade/errors.hpp"

namespace gridcascade {

Ranking make_ranking(const PowerGrid& grid, std::vector<double> scores, std::string method) {
  const std::size_t n = grid.line_count();
  if (scores.size() != n) {
    fail(ErrorCategory::kShape, fmt::format("{} scores for {} lines", scores.size(), n));
  }
  Ranking r;
  r.method = std::move(method);
  r.score = std::move(scores);
  r.line_id.resize(n);
  for (std::size_t i = 0; i < n; ++i) r.line_id[i] = grid.lines()[i].id;
  r.order.resize(n);
  std::iota(r.order.begin(), r.order.end(), std::size_t{0});
  std::sort(r.order.begin(), r.order.end(), [&](std::size_t a, std::size_t b) {
    if (r.score[a] != r.score[b]) return r.score[a] > r.score[b];
    return r.line_id[a] < r.line_id[b];
  });
  r.rank.resize(n);
  for (std::size_t k = 0; k < n; ++k) r.rank[r.order[k]] = static_cast<int>(k + 1);
  return r;
}

void write_ranking_csv(const Ranking& r, const std::filesystem::path& path, bool with_method) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  out << (with_method ? "line_id,exposure_score,rank,method\n" : "line_id,exposure_score,rank\n");
  for (std::size_t i : r.order) {
    out << fmt::format("{},{},{}", r.line_id[i], r.score[i], r.rank[i]);
    if (with_method) out << ',' << r.method;
    out << '\n';
  }
  if (!out) fail(ErrorCategory::kEvaluation, fmt::format("failed writing {}", path.string()));
}

Ranking read_ranking_csv(const PowerGrid& grid, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCategory::kMissingArtifact, fmt::format("ranking not found: {}", path.string()));
  std::string line;
  std::getline(in, line);
  std::vector<double> scores(grid.line_count(), 0.0);
  std::vector<bool> seen(grid.line_count(), false);
  std::string method = "exposure";
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string id, score, rank, m;
    std::getline(ss, id, ',');
    std::getline(ss, score, ',');
    std::getline(ss, rank, ',');
    if (std::getline(ss, m, ',')) method = m;
    try {
      const auto pos = grid.line_index(std::stoi(id));
      if (!pos) fail(ErrorCategory::kParse, fmt::format("{}:{}: unknown line {}", path.string(), row, id));
      scores[*pos] = std::stod(score);
      seen[*pos] = true;
    } catch (const std::logic_error&) {
      fail(ErrorCategory::kParse, fmt::format("{}:{}: malformed row", path.string(), row));
    }
  }
  if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
    fail(ErrorCategory::kParse, fmt::format("{}: ranking does not cover every line", path.string()));
  }
  return make_ranking(grid, std::move(scores), method);
}

}  // namespace gridcascade
