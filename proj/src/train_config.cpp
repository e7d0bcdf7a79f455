#include "scone/train_config.hpp"

#include "scone/error.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <fmt/format.h>

namespace scone {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

[[noreturn]] void bad_value(const std::string& key, std::string_view value) {
  throw ConfigError(fmt::format("invalid value '{}' for key '{}'", value, key));
}

double to_double(const std::string& key, std::string_view v) {
  try {
    std::size_t used = 0;
    const std::string s(v);
    const double d = std::stod(s, &used);
    if (used != s.size()) bad_value(key, v);
    return d;
  } catch (const std::logic_error&) {
    bad_value(key, v);
  }
}

template <typename Int>
Int to_int(const std::string& key, std::string_view v) {
  Int out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) bad_value(key, v);
  return out;
}

bool to_bool(const std::string& key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, v);
}

using Setter = std::function<void(TrainConfig&, const std::string&, std::string_view)>;

const std::map<std::string, Setter, std::less<>>& setters() {
  static const std::map<std::string, Setter, std::less<>> table = [] {
    std::map<std::string, Setter, std::less<>> t;
#define SCONE_REAL(field) t[#field] = [](TrainConfig& c, const std::string& k, std::string_view v) { c.field = to_double(k, v); }
#define SCONE_INT(field, type) t[#field] = [](TrainConfig& c, const std::string& k, std::string_view v) { c.field = to_int<type>(k, v); }
#define SCONE_BOOL(field) t[#field] = [](TrainConfig& c, const std::string& k, std::string_view v) { c.field = to_bool(k, v); }
    SCONE_REAL(lambda1);
    SCONE_REAL(lambda2);
    SCONE_REAL(tau);
    SCONE_REAL(w);
    SCONE_INT(batch_size, std::size_t);
    SCONE_REAL(learning_rate);
    SCONE_REAL(score_learning_rate);
    SCONE_INT(embed_dim, int);
    SCONE_INT(layers, int);
    SCONE_INT(max_epochs, int);
    SCONE_INT(patience, int);
    SCONE_INT(seed, std::uint64_t);
    SCONE_BOOL(use_cl);
    SCONE_BOOL(use_hard_neg);
    SCONE_REAL(init_std);
    SCONE_REAL(sigma_min);
    SCONE_REAL(sigma_max);
    SCONE_INT(total_steps, int);
    SCONE_INT(sampling_steps, int);
    SCONE_INT(score_outer_dim, int);
    SCONE_INT(score_inner_dim, int);
    SCONE_INT(time_dim, int);
    SCONE_INT(eval_k, int);
#undef SCONE_REAL
#undef SCONE_INT
#undef SCONE_BOOL
    t["cl_reduction"] = [](TrainConfig& c, const std::string& k, std::string_view v) {
      if (v == "mean") c.cl_reduction = ClReduction::mean;
      else if (v == "sum") c.cl_reduction = ClReduction::sum;
      else bad_value(k, v);
    };
    t["cl_mode"] = [](TrainConfig& c, const std::string& k, std::string_view v) {
      if (v == "separate") c.cl_mode = ClMode::separate;
      else if (v == "joint") c.cl_mode = ClMode::joint;
      else bad_value(k, v);
    };
    t["l2_scope"] = [](TrainConfig& c, const std::string& k, std::string_view v) {
      if (v == "batch") c.l2_scope = L2Scope::batch;
      else if (v == "full") c.l2_scope = L2Scope::full;
      else bad_value(k, v);
    };
    t["update_order"] = [](TrainConfig& c, const std::string& k, std::string_view v) {
      if (v == "simultaneous") c.update_order = UpdateOrder::simultaneous;
      else if (v == "phi_first") c.update_order = UpdateOrder::phi_first;
      else bad_value(k, v);
    };
    return t;
  }();
  return table;
}

struct Preset {
  std::string_view name;
  double lambda1;
  double w;
};

constexpr Preset kPresets[] = {
    {"default", 0.5, 0.8}, {"douban", 0.5, 0.9},     {"gowalla", 0.9, 0.7}, {"tmall", 2.5, 0.9},
    {"yelp2018", 0.7, 0.7}, {"amazon-cds", 0.2, 0.8}, {"ml-1m", 0.1, 0.8},
};

std::string fmt_real(double v) { return fmt::format("{}", v); }

}  // namespace

void TrainConfig::validate() const {
  auto require = [](bool ok, const char* key, const char* what) {
    if (!ok) throw ConfigError(fmt::format("config key '{}': {}", key, what));
  };
  require(lambda1 >= 0.0, "lambda1", "must be >= 0");
  require(lambda2 >= 0.0, "lambda2", "must be >= 0");
  require(tau > 0.0, "tau", "must be > 0");
  require(w >= 0.0 && w <= 1.0, "w", "must lie in [0, 1]");
  require(batch_size >= 1, "batch_size", "must be >= 1");
  require(learning_rate > 0.0, "learning_rate", "must be > 0");
  require(score_learning_rate > 0.0, "score_learning_rate", "must be > 0");
  require(embed_dim >= 1, "embed_dim", "must be >= 1");
  require(layers >= 0, "layers", "must be >= 0");
  require(max_epochs >= 1, "max_epochs", "must be >= 1");
  require(patience >= 0, "patience", "must be >= 0");
  require(init_std > 0.0, "init_std", "must be > 0");
  require(sigma_min > 0.0, "sigma_min", "must be > 0");
  require(sigma_max > sigma_min, "sigma_max", "must exceed sigma_min");
  require(total_steps >= 1, "total_steps", "must be >= 1");
  require(sampling_steps >= 0 && sampling_steps <= total_steps, "sampling_steps",
          "must lie in [0, total_steps]");
  require(score_outer_dim >= 1, "score_outer_dim", "must be >= 1");
  require(score_inner_dim >= 1, "score_inner_dim", "must be >= 1");
  require(time_dim >= 2, "time_dim", "must be >= 2");
  require(eval_k >= 1, "eval_k", "must be >= 1");
}

TrainConfig parse_config(std::string_view text, const std::string& source_name) {
  TrainConfig config;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view body = line;
    if (const auto hash = body.find('#'); hash != std::string_view::npos) body = body.substr(0, hash);
    body = trim(body);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string_view::npos) throw ParseError(source_name, line_no, "expected 'key = value'");
    const std::string key(trim(body.substr(0, eq)));
    const auto value = trim(body.substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError(fmt::format("{}:{}: unknown config key '{}'", source_name, line_no, key));
    if (value.empty()) throw ConfigError(fmt::format("{}:{}: missing value for key '{}'", source_name, line_no, key));
    it->second(config, key, value);
  }
  config.validate();
  return config;
}

std::string format_config(const TrainConfig& c) {
  std::string out;
  auto line = [&](std::string_view key, const std::string& value) {
    out += fmt::format("{} = {}\n", key, value);
  };
  line("lambda1", fmt_real(c.lambda1));
  line("lambda2", fmt_real(c.lambda2));
  line("tau", fmt_real(c.tau));
  line("w", fmt_real(c.w));
  line("batch_size", std::to_string(c.batch_size));
  line("learning_rate", fmt_real(c.learning_rate));
  line("score_learning_rate", fmt_real(c.score_learning_rate));
  line("embed_dim", std::to_string(c.embed_dim));
  line("layers", std::to_string(c.layers));
  line("max_epochs", std::to_string(c.max_epochs));
  line("patience", std::to_string(c.patience));
  line("seed", std::to_string(c.seed));
  line("use_cl", c.use_cl ? "true" : "false");
  line("use_hard_neg", c.use_hard_neg ? "true" : "false");
  line("init_std", fmt_real(c.init_std));
  line("sigma_min", fmt_real(c.sigma_min));
  line("sigma_max", fmt_real(c.sigma_max));
  line("total_steps", std::to_string(c.total_steps));
  line("sampling_steps", std::to_string(c.sampling_steps));
  line("score_outer_dim", std::to_string(c.score_outer_dim));
  line("score_inner_dim", std::to_string(c.score_inner_dim));
  line("time_dim", std::to_string(c.time_dim));
  line("eval_k", std::to_string(c.eval_k));
  line("cl_reduction", c.cl_reduction == ClReduction::mean ? "mean" : "sum");
  line("cl_mode", c.cl_mode == ClMode::separate ? "separate" : "joint");
  line("l2_scope", c.l2_scope == L2Scope::batch ? "batch" : "full");
  line("update_order", c.update_order == UpdateOrder::simultaneous ? "simultaneous" : "phi_first");
  return out;
}

std::vector<std::string> preset_names() {
  std::vector<std::string> names;
  for (const auto& p : kPresets) names.emplace_back(p.name);
  return names;
}

std::string preset_text(std::string_view name) {
  for (const auto& p : kPresets) {
    if (p.name == name) {
      return fmt::format(
          "# {} preset\n"
          "lambda1 = {}\n"
          "w = {}\n"
          "lambda2 = 0.0001\n"
          "tau = 0.2\n"
          "batch_size = 2048\n"
          "learning_rate = 0.001\n"
          "embed_dim = 64\n"
          "layers = 2\n"
          "sigma_min = 0.01\n"
          "sigma_max = 50\n"
          "total_steps = 100\n"
          "sampling_steps = 10\n"
          "score_outer_dim = 64\n"
          "score_inner_dim = 128\n",
          p.name, fmt_real(p.lambda1), fmt_real(p.w));
    }
  }
  throw ConfigError(fmt::format("unknown preset '{}'", name));
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (in) {
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path.string());
  }
  const auto name = path.filename().string();
  for (const auto& p : kPresets)
    if (p.name == name) return parse_config(preset_text(name), "preset:" + name);
  throw InputError("config file not found: " + path.string());
}

Ablation parse_ablation(std::string_view label) {
  if (label == "none") return Ablation::none;
  if (label == "no-cl") return Ablation::no_cl;
  if (label == "no-ns") return Ablation::no_ns;
  if (label == "lightgcn") return Ablation::lightgcn;
  throw ConfigError(fmt::format("unknown ablation '{}'", label));
}

void apply_ablation(TrainConfig& config, Ablation ablation) {
  switch (ablation) {
    case Ablation::none: break;
    case Ablation::no_cl: config.use_cl = false; break;
    case Ablation::no_ns: config.use_hard_neg = false; break;
    case Ablation::lightgcn:
      config.use_cl = false;
      config.use_hard_neg = false;
      break;
  }
}

}  // namespace scone
