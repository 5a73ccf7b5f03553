#include "seqvo/config.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <vector>

#include "seqvo/errors.hpp"

namespace seqvo {

Config Config::full() { return {}; }

Config Config::desk() {
  Config c;
  c.network = net::NetworkConfig::desk();
  c.train.batch_size = 2;
  c.train.snippet_len = 9;
  c.train.iterations = 500;
  c.train.lr0 = 2e-3;
  c.train.lr_halve_every = 250;
  return c;
}

void Config::validate() const {
  network.validate();
  weights.validate();
  if (train.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (train.snippet_len < 2) throw ConfigError("snippet_len must be at least 2");
  if (weights.lambda_t > 0.0 && train.snippet_len < loss::kTcSpans.back() + 1) {
    throw ConfigError("trajectory consistency needs snippet_len >= 9");
  }
  if (!(train.lr0 > 0.0) || !(train.d_lr >= 0.0) || !(train.weight_decay >= 0.0)) {
    throw ConfigError("learning rates must be positive and weight decay nonnegative");
  }
  const auto& a = train.augment_spec;
  if (a.min_zoom > a.max_zoom || a.min_gain > a.max_gain || a.min_zoom <= 0.0) {
    throw ConfigError("augmentation ranges are inverted or non-positive");
  }
}

bool operator==(const Config& a, const Config& b) { return to_text(a) == to_text(b); }

namespace {

struct Field {
  std::function<void(Config&, const std::string&)> set;
  std::function<std::string(const Config&)> get;
};

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  std::istringstream in(v);
  T out{};
  std::string rest;
  if (!(in >> out) || (in >> rest)) throw ConfigError("invalid value for " + key + ": " + v);
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("invalid boolean for " + key + ": " + v);
}

template <class T>
Field num(T Config::*part, auto member) {
  return {[=](Config& c, const std::string& v) {
            using V = std::remove_reference_t<decltype((c.*part).*member)>;
            if constexpr (std::is_unsigned_v<V>) {
              if (v.find('-') != std::string::npos) throw ConfigError("negative value for unsigned key: " + v);
            }
            (c.*part).*member = parse_number<V>("key", v);
          },
          [=](const Config& c) {
            using V = std::remove_cvref_t<decltype((c.*part).*member)>;
            if constexpr (std::is_floating_point_v<V>) return fmt((c.*part).*member);
            else return std::to_string((c.*part).*member);
          }};
}

Field flag(bool TrainConfig::*member) {
  return {[=](Config& c, const std::string& v) { c.train.*member = parse_bool("key", v); },
          [=](const Config& c) { return std::string(c.train.*member ? "true" : "false"); }};
}

Field aug(double augment::AugmentSpec::*member) {
  return {[=](Config& c, const std::string& v) { c.train.augment_spec.*member = parse_number<double>("key", v); },
          [=](const Config& c) { return fmt(c.train.augment_spec.*member); }};
}

Field adam(double optim::AdamConfig::*member) {
  return {[=](Config& c, const std::string& v) { c.train.adam.*member = parse_number<double>("key", v); },
          [=](const Config& c) { return fmt(c.train.adam.*member); }};
}

const std::vector<std::pair<std::string, Field>>& fields() {
  using N = net::NetworkConfig;
  using W = loss::LossWeights;
  using T = TrainConfig;
  static const std::vector<std::pair<std::string, Field>> table = {
      {"input_h", num(&Config::network, &N::input_h)},
      {"input_w", num(&Config::network, &N::input_w)},
      {"base_channels", num(&Config::network, &N::base_channels)},
      {"code_dim", num(&Config::network, &N::code_dim)},
      {"num_scales", num(&Config::network, &N::num_scales)},
      {"lstm_hidden", num(&Config::network, &N::lstm_hidden)},
      {"encoder_levels", num(&Config::network, &N::encoder_levels)},
      {"lambda_a", num(&Config::weights, &W::lambda_a)},
      {"lambda_s", num(&Config::weights, &W::lambda_s)},
      {"lambda_t", num(&Config::weights, &W::lambda_t)},
      {"lambda_g", num(&Config::weights, &W::lambda_g)},
      {"alpha", num(&Config::weights, &W::alpha)},
      {"ssim_window", num(&Config::weights, &W::ssim_window)},
      {"batch_size", num(&Config::train, &T::batch_size)},
      {"snippet_len", num(&Config::train, &T::snippet_len)},
      {"iterations", num(&Config::train, &T::iterations)},
      {"lr0", num(&Config::train, &T::lr0)},
      {"lr_halve_every", num(&Config::train, &T::lr_halve_every)},
      {"weight_decay", num(&Config::train, &T::weight_decay)},
      {"d_lr", num(&Config::train, &T::d_lr)},
      {"beta1", adam(&optim::AdamConfig::beta1)},
      {"beta2", adam(&optim::AdamConfig::beta2)},
      {"adam_eps", adam(&optim::AdamConfig::eps)},
      {"seed", num(&Config::train, &T::seed)},
      {"use_code", flag(&T::use_code)},
      {"use_lstm", flag(&T::use_lstm)},
      {"augment", flag(&T::augment)},
      {"aug_rotation_deg", aug(&augment::AugmentSpec::max_rotation_deg)},
      {"aug_min_zoom", aug(&augment::AugmentSpec::min_zoom)},
      {"aug_max_zoom", aug(&augment::AugmentSpec::max_zoom)},
      {"aug_min_gain", aug(&augment::AugmentSpec::min_gain)},
      {"aug_max_gain", aug(&augment::AugmentSpec::max_gain)},
      {"ckpt_every", num(&Config::train, &T::ckpt_every)},
  };
  return table;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

}  // namespace

Config parse_config(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> items;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  Config config = Config::full();
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key == "preset") {
      if (value == "desk") config = Config::desk();
      else if (value == "full") config = Config::full();
      else throw ConfigError("line " + std::to_string(lineno) + ": unknown preset " + value);
      continue;
    }
    items.emplace_back(key, value);
  }
  for (const auto& [key, value] : items) {
    const auto& table = fields();
    auto it = std::find_if(table.begin(), table.end(), [&](const auto& f) { return f.first == key; });
    if (it == table.end()) throw ConfigError("unknown config key: " + key);
    try {
      it->second.set(config, value);
    } catch (const ConfigError&) {
      throw ConfigError("invalid value for " + key + ": " + value);
    }
  }
  config.validate();
  return config;
}

Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return parse_config(s.str());
}

std::string to_text(const Config& config) {
  std::string out;
  for (const auto& [key, field] : fields()) out += key + " = " + field.get(config) + "\n";
  return out;
}

}  // namespace seqvo
