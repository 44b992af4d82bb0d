#include "naref/config.hpp"

#include "naref/error.hpp"

#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

namespace naref {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

bool valid_key(const std::string& k) {
  if (k.empty()) return false;
  for (char c : k)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.')) return false;
  return k.front() != '.' && k.back() != '.';
}

// Strips a trailing comment that is not inside a string.
std::string strip_comment(const std::string& line) {
  bool in_string = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '\\' && in_string) {
      ++i;
      continue;
    }
    if (line[i] == '"') in_string = !in_string;
    if (line[i] == '#' && !in_string) return line.substr(0, i);
  }
  return line;
}

ConfigValue parse_value(const std::string& raw) {
  const std::string v = trim(raw);
  if (v.empty()) throw std::runtime_error("missing value");
  if (v == "true") return true;
  if (v == "false") return false;
  if (v.front() == '"') {
    std::string out;
    std::size_t i = 1;
    for (; i < v.size() && v[i] != '"'; ++i) {
      if (v[i] != '\\') {
        out += v[i];
        continue;
      }
      if (++i >= v.size()) throw std::runtime_error("unterminated escape");
      switch (v[i]) {
        case 'n': out += '\n'; break;
        case 't': out += '\t'; break;
        case '"': out += '"'; break;
        case '\\': out += '\\'; break;
        default: throw std::runtime_error(std::string("unsupported escape \\") + v[i]);
      }
    }
    if (i >= v.size()) throw std::runtime_error("unterminated string");
    if (i + 1 != v.size()) throw std::runtime_error("trailing characters after string");
    return out;
  }
  if (v.front() == '[' || v.front() == '{') throw std::runtime_error("arrays and inline tables are not supported");
  std::string digits;
  for (char c : v)
    if (c != '_') digits += c;
  std::int64_t i = 0;
  const char* end = digits.data() + digits.size();
  const char* first = digits.data() + (digits.front() == '+' ? 1 : 0);
  auto [p, ec] = std::from_chars(first, end, i);
  if (ec == std::errc() && p == end) return i;
  double d = 0;
  auto [q, ec2] = std::from_chars(first, end, d);
  if (ec2 == std::errc() && q == end) return d;
  throw std::runtime_error("cannot parse value '" + v + "'");
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  std::string s = buf;
  if (s.find_first_of(".en") == std::string::npos) s += ".0";
  return s;
}

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    if (c == '\n') {
      out += "\\n";
      continue;
    }
    out += c;
  }
  return out + "\"";
}

// Calls f(section, key, field) for every configurable field.
template <typename Cfg, typename F>
void visit_fields(Cfg& c, F&& f) {
  f("run", "seed", c.seed);
  f("run", "jobs", c.jobs);
  f("scenes", "count", c.scenes.count);
  f("scenes", "width", c.scenes.width);
  f("scenes", "height", c.scenes.height);
  f("scenes", "frames", c.scenes.frames);
  f("scenes", "heldout", c.scenes.heldout);
  f("triplets", "per_target", c.triplets.per_target);
  f("triplets", "max_k", c.triplets.max_k);
  f("triplets", "max_attempts", c.triplets.max_attempts);
  f("triplets", "target_stride", c.triplets.target_stride);
  f("triplets", "scene_threshold", c.triplets.scene_threshold);
  f("triplets", "coverage_min", c.triplets.coverage_min);
  f("triplets", "coverage_max", c.triplets.coverage_max);
  f("materialize", "use_troi", c.materialize.use_troi);
  f("materialize", "feather_sigma", c.materialize.feather_sigma);
  f("flow", "levels", c.materialize.flow.levels);
  f("flow", "block", c.materialize.flow.block);
  f("flow", "coarse_radius", c.materialize.flow.coarse_radius);
  f("flow", "refine_radius", c.materialize.flow.refine_radius);
  f("filter", "scorer_a", c.filter.scorer_a);
  f("filter", "scorer_b", c.filter.scorer_b);
  f("filter", "tau_a", c.filter.tau_a);
  f("filter", "tau_b", c.filter.tau_b);
  f("train", "margin1", c.train.margin1);
  f("train", "margin2", c.train.margin2);
  f("train", "lambda1", c.train.lambda1);
  f("train", "lambda2", c.train.lambda2);
  f("train", "lambda_kl", c.train.lambda_kl);
  f("train", "t_start", c.train.t_start);
  f("train", "t_end", c.train.t_end);
  f("train", "epochs", c.train.epochs);
  f("train", "batch_size", c.train.batch_size);
  f("train", "learning_rate", c.train.learning_rate);
  f("train", "beta1", c.train.beta1);
  f("train", "beta2", c.train.beta2);
  f("train", "eps", c.train.eps);
  f("train", "weight_decay", c.train.weight_decay);
  f("train", "embedding_dim", c.train.embedding_dim);
  f("train", "patch_size", c.train.patch_size);
  f("train", "checkpoint_ring", c.train.checkpoint_ring);
  f("train", "printed_operand_order", c.train.printed_operand_order);
  f("eval", "window", c.eval.window);
  f("eval", "min_level_gap", c.eval.min_level_gap);
  f("study", "min_raters", c.study.min_raters);
  f("study", "theta", c.study.theta);
  f("study", "show_aligned", c.study.show_aligned);
  f("heatmap", "beta", c.heatmap.beta);
  f("heatmap", "eps", c.heatmap.eps);
}

template <typename T>
void assign(T& field, const ConfigValue& v, const std::string& key) {
  auto bad = [&](const char* want) {
    throw Error(ErrorKind::InvalidArgument, "config key '" + key + "' expects " + want);
  };
  if constexpr (std::is_same_v<T, bool>) {
    if (!std::holds_alternative<bool>(v)) bad("a boolean");
    field = std::get<bool>(v);
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!std::holds_alternative<std::string>(v)) bad("a string");
    field = std::get<std::string>(v);
  } else if constexpr (std::is_floating_point_v<T>) {
    if (std::holds_alternative<double>(v)) field = std::get<double>(v);
    else if (std::holds_alternative<std::int64_t>(v)) field = static_cast<double>(std::get<std::int64_t>(v));
    else bad("a number");
  } else {
    if (!std::holds_alternative<std::int64_t>(v)) bad("an integer");
    const std::int64_t i = std::get<std::int64_t>(v);
    if (i < static_cast<std::int64_t>(std::numeric_limits<T>::min()) ||
        (i > 0 && static_cast<std::uint64_t>(i) > static_cast<std::uint64_t>(std::numeric_limits<T>::max()))) {
      bad("an integer in range");
    }
    field = static_cast<T>(i);
  }
}

template <typename T>
std::string render(const T& field) {
  if constexpr (std::is_same_v<T, bool>) return field ? "true" : "false";
  else if constexpr (std::is_same_v<T, std::string>) return quote(field);
  else if constexpr (std::is_floating_point_v<T>) return format_double(field);
  else return std::to_string(field);
}

}  // namespace

ConfigTable parse_config(const std::string& text, const std::string& source) {
  ConfigTable table;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto fail = [&](const std::string& msg) {
      throw Error(ErrorKind::Parse, source + ":" + std::to_string(line_no) + ": " + msg);
    };
    const std::string body = trim(strip_comment(line));
    if (body.empty()) continue;
    if (body.front() == '[') {
      if (body.back() != ']' || body.size() < 3 || body[1] == '[') fail("malformed table header");
      section = trim(body.substr(1, body.size() - 2));
      if (!valid_key(section)) fail("invalid table name '" + section + "'");
      continue;
    }
    const std::size_t eq = body.find('=');
    if (eq == std::string::npos) fail("expected key = value");
    const std::string key = trim(body.substr(0, eq));
    if (!valid_key(key)) fail("invalid key '" + key + "'");
    const std::string full = section.empty() ? key : section + "." + key;
    ConfigValue value;
    try {
      value = parse_value(body.substr(eq + 1));
    } catch (const std::runtime_error& e) {
      fail(e.what());
    }
    if (!table.emplace(full, std::move(value)).second) fail("duplicate key '" + full + "'");
  }
  return table;
}

ConfigTable load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

RunConfig RunConfig::toy() {
  RunConfig c;
  c.seed = 7;
  c.train = TrainerConfig::toy();
  return c;
}

void RunConfig::apply(const ConfigTable& table) {
  std::map<std::string, bool> used;
  for (const auto& [k, _] : table) used[k] = false;
  visit_fields(*this, [&](const char* section, const char* key, auto& field) {
    const std::string full = std::string(section) + "." + key;
    const auto it = table.find(full);
    if (it == table.end()) return;
    assign(field, it->second, full);
    used[full] = true;
  });
  for (const auto& [k, u] : used)
    if (!u) throw Error(ErrorKind::InvalidArgument, "unknown config key '" + k + "'");
}

void RunConfig::apply_override(const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string::npos) throw Error(ErrorKind::InvalidArgument, "override must look like section.key=value: " + assignment);
  const std::string key = trim(assignment.substr(0, eq));
  const std::string raw = trim(assignment.substr(eq + 1));
  ConfigValue v;
  try {
    v = parse_value(raw);
  } catch (const std::runtime_error&) {
    v = raw;  // bare string
  }
  apply({{key, v}});
}

void RunConfig::resolve() {
  triplets.seed = seed;
  train.seed = seed;
  triplets.jobs = jobs;
  train.jobs = jobs;
  materialize.flow.jobs = jobs;
  if (jobs < 1) throw Error(ErrorKind::InvalidArgument, "jobs must be >= 1");
  if (scenes.count < 1 || scenes.heldout < 0 || scenes.heldout >= scenes.count) {
    throw Error(ErrorKind::InvalidArgument, "scenes.heldout must be in [0, scenes.count)");
  }
  if (eval.window < 1) throw Error(ErrorKind::InvalidArgument, "eval.window must be >= 1");
  train.validate();
}

std::string RunConfig::snapshot() const {
  std::ostringstream os;
  std::string current;
  visit_fields(*this, [&](const char* section, const char* key, const auto& field) {
    if (current != section) {
      if (!current.empty()) os << '\n';
      os << '[' << section << "]\n";
      current = section;
    }
    os << key << " = " << render(field) << '\n';
  });
  return os.str();
}

RunConfig load_run_config(const std::filesystem::path& file, const std::vector<std::string>& overrides) {
  RunConfig cfg;
  if (!file.empty()) cfg.apply(load_config(file));
  for (const auto& o : overrides) cfg.apply_override(o);
  cfg.resolve();
  return cfg;
}

}  // namespace naref
