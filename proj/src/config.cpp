#include "iwvi/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>

namespace iwvi {

using nlohmann::json;

namespace {

std::string type_name(const json& v) { return v.type_name(); }

[[noreturn]] void type_error(const std::string& key, const char* expected, const json& v) {
  throw ConfigError("config key '" + key + "': expected " + expected + ", got " + type_name(v));
}

int get_int(const std::string& key, const json& v) {
  if (!v.is_number_integer()) type_error(key, "an integer", v);
  return v.get<int>();
}

double get_double(const std::string& key, const json& v) {
  if (!v.is_number()) type_error(key, "a number", v);
  return v.get<double>();
}

bool get_bool(const std::string& key, const json& v) {
  if (!v.is_boolean()) type_error(key, "a boolean", v);
  return v.get<bool>();
}

std::string get_string(const std::string& key, const json& v) {
  if (!v.is_string()) type_error(key, "a string", v);
  return v.get<std::string>();
}

std::vector<int> get_int_list(const std::string& key, const json& v) {
  if (!v.is_array()) type_error(key, "an array of integers", v);
  std::vector<int> out;
  for (const auto& item : v) out.push_back(get_int(key, item));
  return out;
}

std::vector<double> get_double_list(const std::string& key, const json& v) {
  if (!v.is_array()) type_error(key, "an array of numbers", v);
  std::vector<double> out;
  for (const auto& item : v) out.push_back(get_double(key, item));
  return out;
}

std::vector<Family> parse_families(const std::string& name) {
  if (name == "both") return {Family::Gaussian, Family::StudentT};
  try {
    return {parse_family(name)};
  } catch (const std::invalid_argument&) {
    throw ConfigError("config key 'family': expected gaussian, student_t or both, got '" + name + "'");
  }
}

using Setter = std::function<void(ExperimentConfig&, const std::string&, const json&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"experiment", [](auto& c, auto& k, auto& v) {
         try {
           c.experiment = parse_experiment(get_string(k, v));
         } catch (const std::invalid_argument& e) {
           throw ConfigError(std::string("config key 'experiment': ") + e.what());
         }
       }},
      {"family", [](auto& c, auto& k, auto& v) { c.families = parse_families(get_string(k, v)); }},
      {"M_set", [](auto& c, auto& k, auto& v) { c.M_set = get_int_list(k, v); }},
      {"repetitions", [](auto& c, auto& k, auto& v) { c.repetitions = get_int(k, v); }},
      {"seed", [](auto& c, auto& k, auto& v) {
         const bool ok = v.is_number_unsigned() || (v.is_number_integer() && v.template get<std::int64_t>() >= 0);
         if (!ok) type_error(k, "a nonnegative integer", v);
         c.seed = v.template get<std::uint64_t>();
       }},
      {"optimize", [](auto& c, auto& k, auto& v) { c.optimize = get_bool(k, v); }},
      {"optimize_nu", [](auto& c, auto& k, auto& v) { c.optimize_nu = get_bool(k, v); }},
      {"scale0", [](auto& c, auto& k, auto& v) { c.scale0 = get_double(k, v); }},
      {"n_fixed_noise", [](auto& c, auto& k, auto& v) { c.n_fixed_noise = get_int(k, v); }},
      {"lbfgs_max_iter", [](auto& c, auto& k, auto& v) { c.lbfgs_max_iter = get_int(k, v); }},
      {"lbfgs_memory", [](auto& c, auto& k, auto& v) { c.lbfgs_memory = get_int(k, v); }},
      {"lbfgs_grad_tol", [](auto& c, auto& k, auto& v) { c.lbfgs_grad_tol = get_double(k, v); }},
      {"eval_batches", [](auto& c, auto& k, auto& v) { c.eval_batches = get_int(k, v); }},
      {"eval_samples", [](auto& c, auto& k, auto& v) { c.eval_samples = get_int(k, v); }},
      {"K", [](auto& c, auto& k, auto& v) { c.K = get_int(k, v); }},
      {"alpha_shape", [](auto& c, auto& k, auto& v) { c.alpha_shape = get_double(k, v); }},
      {"d", [](auto& c, auto& k, auto& v) { c.d = get_int(k, v); }},
      {"n_obs", [](auto& c, auto& k, auto& v) { c.n_obs = get_int(k, v); }},
      {"dataset_path", [](auto& c, auto& k, auto& v) { c.dataset_path = get_string(k, v); }},
      {"standardize", [](auto& c, auto& k, auto& v) { c.standardize = get_bool(k, v); }},
      {"add_bias", [](auto& c, auto& k, auto& v) { c.add_bias = get_bool(k, v); }},
      {"synthetic_n", [](auto& c, auto& k, auto& v) { c.synthetic_n = get_int(k, v); }},
      {"synthetic_d", [](auto& c, auto& k, auto& v) { c.synthetic_d = get_int(k, v); }},
      {"step_min", [](auto& c, auto& k, auto& v) { c.step_min = get_double(k, v); }},
      {"step_max", [](auto& c, auto& k, auto& v) { c.step_max = get_double(k, v); }},
      {"n_steps", [](auto& c, auto& k, auto& v) { c.n_steps = get_int(k, v); }},
      {"iters", [](auto& c, auto& k, auto& v) { c.iters = get_int(k, v); }},
      {"snapshot_at", [](auto& c, auto& k, auto& v) { c.snapshot_at = get_int_list(k, v); }},
      {"snapshot_batches", [](auto& c, auto& k, auto& v) { c.snapshot_batches = get_int(k, v); }},
      {"adam", [](auto& c, auto& k, auto& v) { c.adam = get_bool(k, v); }},
      {"mixture_weights", [](auto& c, auto& k, auto& v) { c.mixture_weights = get_double_list(k, v); }},
      {"mixture_means", [](auto& c, auto& k, auto& v) { c.mixture_means = get_double_list(k, v); }},
      {"mixture_sds", [](auto& c, auto& k, auto& v) { c.mixture_sds = get_double_list(k, v); }},
      {"candidate_mean_a", [](auto& c, auto& k, auto& v) { c.candidate_mean_a = get_double(k, v); }},
      {"candidate_mean_b", [](auto& c, auto& k, auto& v) { c.candidate_mean_b = get_double(k, v); }},
      {"candidate_sd", [](auto& c, auto& k, auto& v) { c.candidate_sd = get_double(k, v); }},
      {"candidate_nu", [](auto& c, auto& k, auto& v) { c.candidate_nu = get_double(k, v); }},
      {"grid_min", [](auto& c, auto& k, auto& v) { c.grid_min = get_double(k, v); }},
      {"grid_max", [](auto& c, auto& k, auto& v) { c.grid_max = get_double(k, v); }},
      {"grid_points", [](auto& c, auto& k, auto& v) { c.grid_points = get_int(k, v); }},
      {"n_inner", [](auto& c, auto& k, auto& v) { c.n_inner = get_int(k, v); }},
      {"rm_bins", [](auto& c, auto& k, auto& v) { c.rm_bins = get_int(k, v); }},
  };
  return table;
}

void require(bool ok, const std::string& key, const std::string& what) {
  if (!ok) throw ConfigError("config key '" + key + "': " + what);
}

void apply_experiment_defaults(ExperimentConfig& c, bool has_reps, bool has_M) {
  if (!has_reps) {
    switch (c.experiment) {
      case Experiment::Dirichlet:
        c.repetitions = 20;
        break;
      case Experiment::Clutter:
        c.repetitions = 50;
        break;
      default:
        c.repetitions = 1;
    }
  }
  if (!has_M) {
    switch (c.experiment) {
      case Experiment::OneD:
        c.M_set = {1, 2, 5, 10, 20, 50, 100};
        break;
      case Experiment::Dirichlet:
      case Experiment::Clutter:
        c.M_set = {1, 16, 128};
        break;
      case Experiment::LogReg:
        c.M_set = {1, 5, 20, 100};
        break;
    }
  }
}

void validate(const ExperimentConfig& c) {
  require(!c.M_set.empty(), "M_set", "must not be empty");
  for (int M : c.M_set) require(M >= 1, "M_set", "entries must be positive");
  require(!c.families.empty(), "family", "must name at least one family");
  require(c.repetitions >= 1, "repetitions", "must be positive");
  require(c.scale0 > 0.0, "scale0", "must be positive");
  require(c.n_fixed_noise >= 1, "n_fixed_noise", "must be positive");
  require(c.lbfgs_max_iter >= 0, "lbfgs_max_iter", "must be nonnegative");
  require(c.lbfgs_memory >= 0, "lbfgs_memory", "must be nonnegative");
  require(c.lbfgs_grad_tol >= 0.0, "lbfgs_grad_tol", "must be nonnegative");
  require(c.eval_batches >= 2, "eval_batches", "must be at least 2");
  require(c.eval_samples >= 2, "eval_samples", "must be at least 2");
  require(c.K >= 2, "K", "must be at least 2");
  require(c.alpha_shape > 0.0, "alpha_shape", "must be positive");
  require(c.d >= 1, "d", "must be positive");
  require(c.n_obs >= 0 && c.n_obs <= 20, "n_obs", "must lie in [0, 20]");
  require(c.synthetic_n >= 1, "synthetic_n", "must be positive");
  require(c.synthetic_d >= 1, "synthetic_d", "must be positive");
  require(c.step_min > 0.0, "step_min", "must be positive");
  require(c.step_max >= c.step_min, "step_max", "must be at least step_min");
  require(c.n_steps >= 1, "n_steps", "must be positive");
  require(c.iters >= 1, "iters", "must be positive");
  for (int s : c.snapshot_at) require(s >= 1 && s <= c.iters, "snapshot_at", "entries must lie in [1, iters]");
  require(c.snapshot_batches >= 2, "snapshot_batches", "must be at least 2");
  require(!c.mixture_weights.empty() && c.mixture_weights.size() == c.mixture_means.size() &&
              c.mixture_weights.size() == c.mixture_sds.size(),
          "mixture_weights", "mixture lists must be non-empty and of equal length");
  for (double w : c.mixture_weights) require(w > 0.0, "mixture_weights", "must be positive");
  for (double s : c.mixture_sds) require(s > 0.0, "mixture_sds", "must be positive");
  require(c.candidate_sd > 0.0, "candidate_sd", "must be positive");
  require(c.candidate_nu > 2.0, "candidate_nu", "must exceed 2");
  require(c.grid_max > c.grid_min, "grid_max", "must exceed grid_min");
  require(c.grid_points >= 3, "grid_points", "must be at least 3");
  require(c.n_inner >= 2, "n_inner", "must be at least 2");
  require(c.rm_bins >= 1, "rm_bins", "must be positive");
}

}  // namespace

std::string_view experiment_name(Experiment e) {
  switch (e) {
    case Experiment::OneD:
      return "oneD";
    case Experiment::Dirichlet:
      return "dirichlet";
    case Experiment::Clutter:
      return "clutter";
    case Experiment::LogReg:
      return "logreg";
  }
  return "unknown";
}

Experiment parse_experiment(std::string_view name) {
  if (name == "oneD") return Experiment::OneD;
  if (name == "dirichlet") return Experiment::Dirichlet;
  if (name == "clutter") return Experiment::Clutter;
  if (name == "logreg") return Experiment::LogReg;
  throw std::invalid_argument("unknown experiment '" + std::string(name) + "'");
}

ExperimentConfig parse_config(const json& doc, const ConfigOverrides& overrides) {
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  ExperimentConfig config;
  const auto& table = setters();
  for (const auto& [key, value] : doc.items()) {
    if (!table.contains(key)) throw ConfigError("unknown config key '" + key + "'");
  }
  if (overrides.experiment) {
    json name = *overrides.experiment;
    table.at("experiment")(config, "experiment", name);
    if (doc.contains("experiment") && doc["experiment"] != name) {
      throw ConfigError("config key 'experiment': file says " + doc["experiment"].dump() +
                        " but the command line asks for " + name.dump());
    }
  } else if (!doc.contains("experiment")) {
    throw ConfigError("missing required config key 'experiment'");
  }
  for (const auto& [key, value] : doc.items()) table.at(key)(config, key, value);

  if (overrides.M_set) config.M_set = *overrides.M_set;
  if (overrides.family) config.families = parse_families(*overrides.family);
  if (overrides.seed) config.seed = *overrides.seed;
  apply_experiment_defaults(config, doc.contains("repetitions"), doc.contains("M_set") || overrides.M_set);
  validate(config);
  return config;
}

ExperimentConfig load_config(const std::string& path, const ConfigOverrides& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
  }
  return parse_config(doc, overrides);
}

nlohmann::json to_json(const ExperimentConfig& c) {
  std::string family = c.families.size() == 2 ? "both" : std::string(family_name(c.families.front()));
  return json{
      {"experiment", experiment_name(c.experiment)},
      {"family", family},
      {"M_set", c.M_set},
      {"repetitions", c.repetitions},
      {"seed", c.seed},
      {"optimize", c.optimize},
      {"optimize_nu", c.optimize_nu},
      {"scale0", c.scale0},
      {"n_fixed_noise", c.n_fixed_noise},
      {"lbfgs_max_iter", c.lbfgs_max_iter},
      {"lbfgs_memory", c.lbfgs_memory},
      {"lbfgs_grad_tol", c.lbfgs_grad_tol},
      {"eval_batches", c.eval_batches},
      {"eval_samples", c.eval_samples},
      {"K", c.K},
      {"alpha_shape", c.alpha_shape},
      {"d", c.d},
      {"n_obs", c.n_obs},
      {"dataset_path", c.dataset_path},
      {"standardize", c.standardize},
      {"add_bias", c.add_bias},
      {"synthetic_n", c.synthetic_n},
      {"synthetic_d", c.synthetic_d},
      {"step_min", c.step_min},
      {"step_max", c.step_max},
      {"n_steps", c.n_steps},
      {"iters", c.iters},
      {"snapshot_at", c.snapshot_at},
      {"snapshot_batches", c.snapshot_batches},
      {"adam", c.adam},
      {"mixture_weights", c.mixture_weights},
      {"mixture_means", c.mixture_means},
      {"mixture_sds", c.mixture_sds},
      {"candidate_mean_a", c.candidate_mean_a},
      {"candidate_mean_b", c.candidate_mean_b},
      {"candidate_sd", c.candidate_sd},
      {"candidate_nu", c.candidate_nu},
      {"grid_min", c.grid_min},
      {"grid_max", c.grid_max},
      {"grid_points", c.grid_points},
      {"n_inner", c.n_inner},
      {"rm_bins", c.rm_bins},
  };
}

std::vector<int> parse_int_list(std::string_view text) {
  std::vector<int> out;
  while (!text.empty()) {
    const auto comma = text.find(',');
    const std::string_view item = text.substr(0, comma);
    int value = 0;
    auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), value);
    if (ec != std::errc() || ptr != item.data() + item.size() || item.empty())
      throw ConfigError("expected a comma-separated list of integers, got '" + std::string(item) + "'");
    out.push_back(value);
    if (comma == std::string_view::npos) break;
    text.remove_prefix(comma + 1);
  }
  if (out.empty()) throw ConfigError("empty integer list");
  return out;
}

}  // namespace iwvi
