#include "gridcascade/config.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "gridcascade/errors.hpp"
#include "gridcascade/rng.hpp"
#include "json.hpp"

namespace gridcascade {

namespace toml {
namespace {

class Parser {
 public:
  Parser(const std::string& text, std::string source) : text_(text), source_(std::move(source)) {}

  Table run() {
    Table root;
    Table* current = &root;
    while (!at_end()) {
      skip_blank();
      if (at_end()) break;
      if (peek() == '[') {
        current = header(root);
      } else {
        std::string key = bare_key();
        skip_inline_space();
        expect('=');
        skip_inline_space();
        Value v = value();
        if (current->contains(key)) error(fmt::format("duplicate key '{}'", key));
        current->emplace(key, std::move(v));
      }
      end_of_line();
    }
    return root;
  }

 private:
  bool at_end() const { return pos_ >= text_.size(); }
  char peek() const { return at_end() ? '\0' : text_[pos_]; }

  [[noreturn]] void error(const std::string& what) const {
    fail(ErrorCategory::kConfig, fmt::format("{}:{}: {}", source_, line_, what));
  }

  void advance() {
    if (peek() == '\n') ++line_;
    ++pos_;
  }

  void skip_inline_space() {
    while (peek() == ' ' || peek() == '\t' || peek() == '\r') advance();
  }

  void skip_comment() {
    if (peek() == '#')
      while (!at_end() && peek() != '\n') advance();
  }

  // Whitespace, newlines and comments.
  void skip_blank() {
    for (;;) {
      skip_inline_space();
      if (peek() == '#') skip_comment();
      if (peek() == '\n') {
        advance();
        continue;
      }
      return;
    }
  }

  void end_of_line() {
    skip_inline_space();
    skip_comment();
    if (!at_end() && peek() != '\n') error(fmt::format("unexpected '{}'", peek()));
  }

  void expect(char c) {
    if (peek() != c) error(fmt::format("expected '{}'", c));
    advance();
  }

  std::string bare_key() {
    std::string key;
    while (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '_' || peek() == '-') {
      key += peek();
      advance();
    }
    if (key.empty()) error("expected a key");
    return key;
  }

  Table* header(Table& root) {
    expect('[');
    const bool array = peek() == '[';
    if (array) advance();
    std::vector<std::string> path;
    for (;;) {
      skip_inline_space();
      path.push_back(bare_key());
      skip_inline_space();
      if (peek() != '.') break;
      advance();
    }
    expect(']');
    if (array) expect(']');

    Table* t = &root;
    for (std::size_t i = 0; i + 1 < path.size(); ++i) {
      auto [it, inserted] = t->try_emplace(path[i], Value{Table{}});
      if (!it->second.is_table()) error(fmt::format("'{}' is not a table", path[i]));
      t = &std::get<Table>(it->second.data);
    }
    const std::string& last = path.back();
    if (array) {
      auto [it, inserted] = t->try_emplace(last, Value{std::vector<Table>{}});
      auto* list = std::get_if<std::vector<Table>>(&it->second.data);
      if (!list) error(fmt::format("'{}' is not an array of tables", last));
      list->emplace_back();
      return &list->back();
    }
    if (t->contains(last)) error(fmt::format("table '{}' defined twice", last));
    auto it = t->emplace(last, Value{Table{}}).first;
    return &std::get<Table>(it->second.data);
  }

  Value value() {
    const char c = peek();
    if (c == '"') return Value{string()};
    if (c == '[') return Value{array()};
    if (text_.compare(pos_, 4, "true") == 0) {
      pos_ += 4;
      return Value{true};
    }
    if (text_.compare(pos_, 5, "false") == 0) {
      pos_ += 5;
      return Value{false};
    }
    return number();
  }

  std::string string() {
    expect('"');
    std::string out;
    for (;;) {
      if (at_end() || peek() == '\n') error("unterminated string");
      char c = peek();
      advance();
      if (c == '"') break;
      if (c == '\\') {
        const char e = peek();
        advance();
        switch (e) {
          case 'n': out += '\n'; break;
          case 't': out += '\t'; break;
          case '"': out += '"'; break;
          case '\\': out += '\\'; break;
          default: error(fmt::format("unsupported escape '\\{}'", e));
        }
      } else {
        out += c;
      }
    }
    return out;
  }

  Array array() {
    expect('[');
    Array out;
    for (;;) {
      skip_blank();
      if (peek() == ']') break;
      Value v = value();
      if (v.is_table() || std::holds_alternative<Array>(v.data)) error("nested arrays are not supported");
      out.push_back(std::move(v));
      skip_blank();
      if (peek() == ',') {
        advance();
        continue;
      }
      if (peek() != ']') error("expected ',' or ']'");
    }
    advance();
    return out;
  }

  Value number() {
    std::string token;
    while (!at_end()) {
      const char c = peek();
      if (std::isalnum(static_cast<unsigned char>(c)) || c == '+' || c == '-' || c == '.' || c == '_') {
        if (c != '_') token += c;
        advance();
      } else {
        break;
      }
    }
    if (token.empty()) error("expected a value");
    const char* first = token.data();
    const char* last = token.data() + token.size();
    if (*first == '+') ++first;
    if (token.find_first_of(".eE") == std::string::npos || token == "inf" || token == "nan") {
      std::int64_t i = 0;
      auto [p, ec] = std::from_chars(first, last, i);
      if (ec == std::errc() && p == last) return Value{i};
    }
    double d = 0.0;
    auto [p, ec] = std::from_chars(first, last, d);
    if (ec != std::errc() || p != last) error(fmt::format("bad value '{}'", token));
    return Value{d};
  }

  const std::string& text_;
  std::string source_;
  std::size_t pos_ = 0;
  int line_ = 1;
};

}  // namespace

Table parse(const std::string& text, const std::string& source) { return Parser(text, source).run(); }

Table parse_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCategory::kMissingArtifact, fmt::format("config not found: {}", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

}  // namespace toml

namespace {

// Typed reads from one table with unknown-key detection.
class Reader {
 public:
  Reader(const toml::Table& t, std::string where) : t_(t), where_(std::move(where)) {}

  /// Rejects keys that were never asked for.
  void finish() const {
    for (const auto& [k, v] : t_)
      if (!seen_.contains(k)) fail(ErrorCategory::kConfig, fmt::format("unknown key '{}{}'", prefix(), k));
  }

  const toml::Value* find(const std::string& key) {
    seen_.insert(key);
    auto it = t_.find(key);
    return it == t_.end() ? nullptr : &it->second;
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    const toml::Value* v = find(key);
    if (v) out = convert<T>(*v, key);
  }

  template <typename T>
  void get_list(const std::string& key, std::vector<T>& out) {
    const toml::Value* v = find(key);
    if (!v) return;
    const auto* a = std::get_if<toml::Array>(&v->data);
    if (!a) bad(key, "an array");
    out.clear();
    for (const auto& item : *a) out.push_back(convert<T>(item, key));
  }

  std::string prefix() const { return where_.empty() ? "" : where_ + "."; }

 private:
  [[noreturn]] void bad(const std::string& key, const char* expected) const {
    fail(ErrorCategory::kConfig, fmt::format("'{}{}' must be {}", prefix(), key, expected));
  }

  template <typename T>
  T convert(const toml::Value& v, const std::string& key) const {
    if constexpr (std::is_same_v<T, bool>) {
      if (const auto* b = std::get_if<bool>(&v.data)) return *b;
      bad(key, "a boolean");
    } else if constexpr (std::is_same_v<T, std::string> || std::is_same_v<T, std::filesystem::path>) {
      if (const auto* s = std::get_if<std::string>(&v.data)) return T(*s);
      bad(key, "a string");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (const auto* d = std::get_if<double>(&v.data)) return *d;
      if (const auto* i = std::get_if<std::int64_t>(&v.data)) return static_cast<double>(*i);
      bad(key, "a number");
    } else {
      const auto* i = std::get_if<std::int64_t>(&v.data);
      if (!i) bad(key, "an integer");
      if (*i < 0 && std::is_unsigned_v<T>) bad(key, "non-negative");
      return static_cast<T>(*i);
    }
  }

  const toml::Table& t_;
  std::string where_;
  std::set<std::string> seen_;
};

const toml::Table& subtable(Reader& r, const std::string& key) {
  static const toml::Table empty;
  const toml::Value* v = r.find(key);
  if (!v) return empty;
  if (!v->is_table()) fail(ErrorCategory::kConfig, fmt::format("'{}{}' must be a table", r.prefix(), key));
  return v->table();
}

std::vector<GridSource> read_grids(const toml::Table& grids, const std::string& key,
                                   const std::filesystem::path& base_dir) {
  std::vector<GridSource> out;
  auto it = grids.find(key);
  if (it == grids.end()) return out;
  const auto* list = std::get_if<std::vector<toml::Table>>(&it->second.data);
  if (!list) fail(ErrorCategory::kConfig, fmt::format("'grids.{}' must be an array of tables ([[grids.{}]])", key, key));
  for (std::size_t i = 0; i < list->size(); ++i) {
    Reader r((*list)[i], fmt::format("grids.{}[{}]", key, i));
    GridSource g;
    std::string family = family_name(g.spec.family);
    std::string path;
    r.get("family", family);
    r.get("buses", g.spec.n_buses);
    r.get("capacity_factor", g.spec.capacity_factor);
    r.get("seed", g.spec.seed);
    r.get("name", g.spec.name);
    r.get("path", path);
    r.finish();
    g.spec.family = parse_family(family);
    if (!path.empty()) {
      std::filesystem::path p(path);
      g.path = p.is_absolute() ? p : base_dir / p;
      g.name = g.spec.name.empty() ? g.path->filename().string() : g.spec.name;
    } else {
      g.name = g.spec.name.empty()
                   ? fmt::format("{}-{}-{}", family_name(g.spec.family), g.spec.n_buses, g.spec.seed)
                   : g.spec.name;
      g.spec.name = g.name;
    }
    out.push_back(std::move(g));
  }
  return out;
}

void validate(const ExperimentConfig& c) {
  auto bad = [](const std::string& what) { fail(ErrorCategory::kConfig, what); };
  if (c.training_grids.empty()) bad("at least one training grid is required");
  if (c.evaluation_grids.empty()) bad("at least one evaluation grid is required");
  std::set<std::string> names;
  std::set<std::uint64_t> train_seeds;
  for (const auto& g : c.training_grids) {
    if (!names.insert(g.name).second) bad(fmt::format("duplicate grid name '{}'", g.name));
    if (!g.path) train_seeds.insert(g.spec.seed);
  }
  for (const auto& g : c.evaluation_grids) {
    if (!names.insert(g.name).second)
      bad(fmt::format("grid '{}' appears twice; training and evaluation grids must differ", g.name));
    if (!g.path && train_seeds.contains(g.spec.seed))
      bad(fmt::format("evaluation grid '{}' reuses a training grid seed", g.name));
  }
  for (const auto* list : {&c.training_grids, &c.evaluation_grids})
    for (const auto& g : *list)
      if (g.path && !std::filesystem::is_directory(*g.path))
        bad(fmt::format("grid directory not found: {}", g.path->string()));
  if (c.pool_per_grid == 0 || c.cap == 0) bad("dataset.pool_per_grid and dataset.cap must be positive");
  if (c.k_range.min < 1 || c.k_range.max < c.k_range.min) bad("dataset k range must satisfy 1 <= k_min <= k_max");
  if (c.holdout_size == 0) bad("dataset.holdout must be positive");
  if (c.exposure_samples == 0) bad("exposure.samples must be positive");
  if (c.threads == 0) bad("threads must be positive");
  if (c.tau_percent.empty()) bad("metrics.tau must not be empty");
  for (double t : c.tau_percent)
    if (!(t > 0.0 && t <= 100.0)) bad(fmt::format("metrics.tau value {} outside (0, 100]", t));
  for (std::size_t n : c.ns_list)
    if (n == 0 || n > c.exposure_samples)
      bad(fmt::format("metrics.ns_list value {} outside [1, exposure.samples]", n));
  c.model.validate();
}

nlohmann::ordered_json grid_json(const GridSource& g) {
  nlohmann::ordered_json j;
  j["name"] = g.name;
  if (g.path) {
    j["path"] = g.path->string();
  } else {
    j["family"] = family_name(g.spec.family);
    j["buses"] = g.spec.n_buses;
    j["capacity_factor"] = g.spec.capacity_factor;
    j["seed"] = g.spec.seed;
  }
  return j;
}

}  // namespace

std::string ExperimentConfig::canonical_json() const {
  nlohmann::ordered_json j;
  j["seed"] = seed;
  j["threads"] = threads;
  for (const auto& g : training_grids) j["grids"]["train"].push_back(grid_json(g));
  for (const auto& g : evaluation_grids) j["grids"]["eval"].push_back(grid_json(g));
  j["dataset"] = {{"pool_per_grid", pool_per_grid}, {"cap", cap},         {"k_min", k_range.min},
                  {"k_max", k_range.max},           {"depth_exponent", depth_exponent},
                  {"holdout", holdout_size}};
  j["model"] = nlohmann::ordered_json::parse(config_to_json(model));
  j["exposure"] = {{"samples", exposure_samples}, {"mask_self_loops", mask_self_loops}};
  j["metrics"] = {{"tau", tau_percent}, {"ns_list", ns_list}};
  return j.dump();
}

std::string ExperimentConfig::hash() const {
  // threads never changes results, so it stays out of the hash
  ExperimentConfig c = *this;
  c.threads = 1;
  return fmt::format("{:016x}", hash_tag(c.canonical_json()));
}

namespace {

ExperimentConfig parse_config(const std::string& text, const std::string& source,
                              const std::filesystem::path& base_dir) {
  const toml::Table root = toml::parse(text, source);
  ExperimentConfig c;
  {
    Reader r(root, "");
    r.get("seed", c.seed);
    r.get("out", c.out_dir);
    r.get("threads", c.threads);

    const toml::Table& grids = subtable(r, "grids");
    Reader g(grids, "grids");
    g.find("train");
    g.find("eval");
    g.finish();
    c.training_grids = read_grids(grids, "train", base_dir);
    c.evaluation_grids = read_grids(grids, "eval", base_dir);

    Reader d(subtable(r, "dataset"), "dataset");
    d.get("pool_per_grid", c.pool_per_grid);
    d.get("cap", c.cap);
    d.get("k_min", c.k_range.min);
    d.get("k_max", c.k_range.max);
    d.get("depth_exponent", c.depth_exponent);
    d.get("holdout", c.holdout_size);
    d.finish();

    Reader m(subtable(r, "model"), "model");
    m.get("hidden_dim", c.model.hidden_dim);
    m.get("heads", c.model.heads);
    m.get("classes", c.model.classes);
    m.get("lr", c.model.lr);
    m.get("lr_min", c.model.lr_min);
    m.get("accumulation_steps", c.model.accumulation_steps);
    m.get("max_epochs", c.model.max_epochs);
    m.get("patience", c.model.patience);
    m.get("scheduler_t0", c.model.scheduler_t0);
    m.get("scheduler_tmult", c.model.scheduler_tmult);
    m.get("validation_fraction", c.model.validation_fraction);
    m.finish();

    Reader e(subtable(r, "exposure"), "exposure");
    e.get("samples", c.exposure_samples);
    e.get("mask_self_loops", c.mask_self_loops);
    e.finish();

    Reader mt(subtable(r, "metrics"), "metrics");
    mt.get_list("tau", c.tau_percent);
    mt.get_list("ns_list", c.ns_list);
    mt.finish();
    r.finish();
  }
  validate(c);
  return c;
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& text, const std::filesystem::path& base_dir) {
  return parse_config(text, "<config>", base_dir);
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCategory::kMissingArtifact, fmt::format("config not found: {}", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string(), path.parent_path().empty() ? "." : path.parent_path());
}

}  // namespace gridcascade
