#include "structkit/run_config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <sstream>

#include "structkit/errors.hpp"

namespace structkit::pipeline {

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const auto* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError("bad value '" + value + "' for " + key);
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "1" || value == "true" || value == "yes" || value == "on") return true;
  if (value == "0" || value == "false" || value == "no" || value == "off") return false;
  throw ConfigError("bad boolean '" + value + "' for " + key);
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

struct Field {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define SK_INT(expr)                                                                             \
  Field {                                                                                        \
    [](RunConfig& c, const std::string& k, const std::string& v) {                               \
      expr = parse_number<std::remove_reference_t<decltype(expr)>>(k, v);                         \
    },                                                                                           \
        [](const RunConfig& c) { return std::to_string(expr); }                                  \
  }
#define SK_REAL(expr)                                                                                   \
  Field {                                                                                               \
    [](RunConfig& c, const std::string& k, const std::string& v) { expr = parse_number<double>(k, v); }, \
        [](const RunConfig& c) { return fmt(expr); }                                                    \
  }
#define SK_BOOL(expr)                                                                           \
  Field {                                                                                       \
    [](RunConfig& c, const std::string& k, const std::string& v) { expr = parse_bool(k, v); },   \
        [](const RunConfig& c) { return std::string(expr ? "true" : "false"); }                 \
  }

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table{
      {"d_model", SK_INT(c.model.d_model)},
      {"n_enc_layers", SK_INT(c.model.n_enc_layers)},
      {"n_dec_layers", SK_INT(c.model.n_dec_layers)},
      {"n_heads", SK_INT(c.model.n_heads)},
      {"d_ff", SK_INT(c.model.d_ff)},
      {"h_max", SK_INT(c.model.h_max)},
      {"phi_buckets", SK_INT(c.model.phi_buckets)},
      {"phi_max_distance", SK_INT(c.model.phi_max_distance)},
      {"d_dfp", SK_INT(c.model.d_dfp)},
      {"d_app", SK_INT(c.model.d_app)},
      {"max_code_tokens", SK_INT(c.model.max_code_tokens)},
      {"max_leaves", SK_INT(c.model.max_leaves)},
      {"max_vars", SK_INT(c.model.max_vars)},
      {"max_target_tokens", SK_INT(c.model.max_target_tokens)},
      {"lr", SK_REAL(c.optim.lr)},
      {"beta1", SK_REAL(c.optim.beta1)},
      {"beta2", SK_REAL(c.optim.beta2)},
      {"adam_eps", SK_REAL(c.optim.eps)},
      {"weight_decay", SK_REAL(c.optim.weight_decay)},
      {"alpha_app", SK_REAL(c.loss.app)},
      {"alpha_dfp", SK_REAL(c.loss.dfp)},
      {"dfp_positive_weight", SK_REAL(c.loss.dfp_positive_weight)},
      {"use_ast", SK_BOOL(c.structure.ast)},
      {"use_dfg", SK_BOOL(c.structure.dfg)},
      {"token_corrupt_rate", SK_REAL(c.corruption.token_corrupt_rate)},
      {"span_mean", SK_REAL(c.corruption.span_mean)},
      {"structure_drop_rate", SK_REAL(c.corruption.structure_drop_rate)},
      {"op_mask", SK_REAL(c.corruption.op_mix[0])},
      {"op_random", SK_REAL(c.corruption.op_mix[1])},
      {"op_delete", SK_REAL(c.corruption.op_mix[2])},
      {"batch_size", SK_INT(c.batch_size)},
      {"steps", SK_INT(c.steps)},
      {"lr_decay", SK_BOOL(c.lr_decay)},
      {"checkpoint_every", SK_INT(c.checkpoint_every)},
      {"swap_direction", SK_BOOL(c.swap_direction)},
      {"vocab_max", SK_INT(c.vocab_max)},
  };
  return table;
}

#undef SK_INT
#undef SK_REAL
#undef SK_BOOL

}  // namespace

void RunConfig::set(const std::string& raw_key, const std::string& raw_value) {
  const std::string key = trim(raw_key), value = trim(raw_value);
  if (key == "seed") {
    seed = parse_number<std::uint64_t>(key, value);
    return;
  }
  if (key == "n_layers") {
    model.n_enc_layers = model.n_dec_layers = parse_number<int>(key, value);
    return;
  }
  for (const auto& [name, field] : fields()) {
    if (name == key) {
      field.set(*this, key, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

void RunConfig::load(std::istream& in) {
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key=value");
    set(line.substr(0, eq), line.substr(eq + 1));
  }
}

void RunConfig::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  load(in);
}

void RunConfig::validate() const {
  model.validate();
  corruption.validate();
  if (batch_size <= 0) throw ConfigError("batch_size must be positive");
  if (steps < 0) throw ConfigError("steps must be non-negative");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be non-negative");
  if (!(optim.lr > 0)) throw ConfigError("lr must be positive");
  if (loss.app < 0 || loss.dfp < 0) throw ConfigError("loss weights must be non-negative");
}

std::uint64_t RunConfig::resolved_seed() const {
  if (seed) return *seed;
  if (const char* env = std::getenv("STRUCTKIT_SEED"); env && *env) {
    return parse_number<std::uint64_t>("STRUCTKIT_SEED", env);
  }
  return 0;
}

std::vector<std::pair<std::string, std::string>> RunConfig::entries() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& [name, field] : fields()) out.emplace_back(name, field.get(*this));
  if (seed) out.emplace_back("seed", std::to_string(*seed));
  return out;
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : entries()) j[k] = v;
  return j;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig c;
  for (const auto& [k, v] : j.items()) c.set(k, v.get<std::string>());
  return c;
}

}  // namespace structkit::pipeline
