#include "dynakf/config.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace dynakf {

using nlohmann::json;

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

json parse_toml_scalar(const std::string& raw) {
  std::string v = trim(raw);
  if (v.empty()) throw ConfigError("toml: empty value");
  if (v.front() == '"') {
    if (v.size() < 2 || v.back() != '"') throw ConfigError("toml: unterminated string " + v);
    return v.substr(1, v.size() - 2);
  }
  if (v == "true") return true;
  if (v == "false") return false;
  try {
    if (v.find_first_of(".eE") != std::string::npos &&
        v.find_first_not_of("+-0123456789.eE") == std::string::npos) {
      return std::stod(v);
    }
    size_t pos = 0;
    long long i = std::stoll(v, &pos);
    if (pos == v.size()) return i;
    return std::stod(v);
  } catch (const std::exception&) {
    throw ConfigError("toml: cannot parse value: " + v);
  }
}

json parse_toml_value(const std::string& raw) {
  std::string v = trim(raw);
  if (!v.empty() && v.front() == '[') {
    if (v.back() != ']') throw ConfigError("toml: unterminated array: " + v);
    json arr = json::array();
    std::string inner = v.substr(1, v.size() - 2);
    std::string item;
    std::istringstream is(inner);
    while (std::getline(is, item, ',')) {
      if (trim(item).empty()) continue;
      arr.push_back(parse_toml_scalar(item));
    }
    return arr;
  }
  return parse_toml_scalar(v);
}

json* section_at(json& root, const std::string& dotted) {
  json* cur = &root;
  std::istringstream is(dotted);
  std::string part;
  while (std::getline(is, part, '.')) {
    part = trim(part);
    if (part.empty()) throw ConfigError("toml: empty section name component");
    cur = &(*cur)[part];
  }
  return cur;
}

template <typename T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

std::string toml_subset_to_json(const std::string& text) {
  json root = json::object();
  json* section = &root;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigError("toml line " + std::to_string(lineno) + ": bad section header");
      }
      section = section_at(root, line.substr(1, line.size() - 2));
      continue;
    }
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("toml line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("toml line " + std::to_string(lineno) + ": empty key");
    (*section)[key] = parse_toml_value(line.substr(eq + 1));
  }
  return root.dump();
}

std::string ExperimentConfig::to_json() const {
  json j;
  j["system"] = json::parse(system.to_json());
  j["model"] = json::parse(model.to_json());
  j["train"] = {{"window", train.window},     {"batch", train.batch},
                {"lr", train.lr},             {"epochs", train.epochs},
                {"seed", train.seed},         {"val_fraction", train.val_fraction}};
  j["dataset"] = {{"episodes", episodes}, {"episode_length", episode_length}};
  j["eval"] = {{"segment_lengths", segment_lengths},
               {"pred_init", pred_init},
               {"pred_horizons", pred_horizons}};
  j["probe"] = {{"episodes", probe_episodes}, {"length", probe_length}};
  j["seed"] = seed;
  j["out_dir"] = out_dir;
  return j.dump(2);
}

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  ExperimentConfig cfg;
  try {
    if (j.contains("system")) {
      // partial sections layer over kind-appropriate defaults
      SystemSpec defaults;
      if (j.at("system").contains("kind")) {
        const std::string k = j.at("system").at("kind").get<std::string>();
        if (k == "linear") {
          defaults.kind = SystemKind::kLinear;
          defaults.latent_dim = 4;
          defaults.lin_a = Tensor::identity(4);
          defaults.lin_q_diag = Tensor::full({4}, 0.01);
        } else if (k == "pendulum") {
          defaults.kind = SystemKind::kPendulum;
          defaults.latent_dim = 3;
        }
      }
      json base = json::parse(defaults.to_json());
      for (auto& [k, v] : j.at("system").items()) base[k] = v;
      cfg.system = SystemSpec::from_json(base.dump());
    }
    if (j.contains("model")) {
      // model section may be partial; layer it over defaults
      json base = json::parse(cfg.model.to_json());
      for (auto& [k, v] : j.at("model").items()) base[k] = v;
      cfg.model = ModelConfig::from_json(base.dump());
    }
    if (j.contains("train")) {
      const json& t = j.at("train");
      maybe(t, "window", cfg.train.window);
      maybe(t, "batch", cfg.train.batch);
      maybe(t, "lr", cfg.train.lr);
      maybe(t, "epochs", cfg.train.epochs);
      maybe(t, "seed", cfg.train.seed);
      maybe(t, "val_fraction", cfg.train.val_fraction);
    }
    if (j.contains("dataset")) {
      maybe(j.at("dataset"), "episodes", cfg.episodes);
      maybe(j.at("dataset"), "episode_length", cfg.episode_length);
    }
    if (j.contains("eval")) {
      maybe(j.at("eval"), "segment_lengths", cfg.segment_lengths);
      maybe(j.at("eval"), "pred_init", cfg.pred_init);
      maybe(j.at("eval"), "pred_horizons", cfg.pred_horizons);
    }
    if (j.contains("probe")) {
      maybe(j.at("probe"), "episodes", cfg.probe_episodes);
      maybe(j.at("probe"), "length", cfg.probe_length);
    }
    maybe(j, "seed", cfg.seed);
    maybe(j, "out_dir", cfg.out_dir);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config field error: ") + e.what());
  }
  return cfg;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::ostringstream os;
  os << in.rdbuf();
  const std::string text = os.str();
  if (path.size() >= 5 && path.substr(path.size() - 5) == ".toml") {
    return from_json_text(toml_subset_to_json(text));
  }
  return from_json_text(text);
}

}  // namespace dynakf
