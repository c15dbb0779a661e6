#include "iadc/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace iadc {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  // Prefer the shortest representation that round-trips.
  for (int prec = 1; prec <= 17; ++prec) {
    char probe[64];
    std::snprintf(probe, sizeof probe, "%.*g", prec, v);
    if (std::strtod(probe, nullptr) == v) return probe;
  }
  return buf;
}

template <typename U>
U parse_unsigned(const std::string& key, const std::string& value) {
  U out{};
  const auto* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError(key + ": expected a non-negative integer, got '" + value + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& value) {
  char* end = nullptr;
  const double v = std::strtod(value.c_str(), &end);
  if (value.empty() || end != value.c_str() + value.size() || !std::isfinite(v))
    throw ConfigError(key + ": expected a finite number, got '" + value + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + value + "'");
}

template <typename E>
E parse_choice(const std::string& key, const std::string& value, const std::map<std::string, E>& choices) {
  if (auto it = choices.find(value); it != choices.end()) return it->second;
  std::string allowed;
  for (const auto& [name, e] : choices) allowed += (allowed.empty() ? "" : "|") + name;
  throw ConfigError(key + ": expected one of " + allowed + ", got '" + value + "'");
}

template <typename E>
std::string choice_name(E e, const std::map<std::string, E>& choices) {
  for (const auto& [name, v] : choices)
    if (v == e) return name;
  return "?";
}

const std::map<std::string, LossKind> kLossKinds{{"l1", LossKind::l1}, {"l2", LossKind::l2}};
const std::map<std::string, MaskSource> kMaskSources{{"ground_truth", MaskSource::ground_truth},
                                                     {"file", MaskSource::file}};
const std::map<std::string, InterpMode> kInterp{{"nearest", InterpMode::nearest}, {"bilinear", InterpMode::bilinear}};
const std::map<std::string, bool> kAttention{{"on", true}, {"zero", false}};
const std::map<std::string, DepthUnits> kUnits{{"m", DepthUnits::meters}, {"cm", DepthUnits::centimeters}};

std::vector<std::size_t> parse_list(const std::string& key, const std::string& value) {
  std::vector<std::size_t> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_unsigned<std::size_t>(key, trim(item)));
  if (out.empty()) throw ConfigError(key + ": expected a comma-separated list");
  return out;
}

std::string join_list(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

struct Field {
  const char* key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

#define IADC_UINT(name, member)                                                       \
  Field {                                                                             \
    name, [](const RunConfig& c) { return std::to_string(c.member); },                \
        [](RunConfig& c, const std::string& v) {                                      \
          c.member = parse_unsigned<std::decay_t<decltype(c.member)>>(name, v);       \
        }                                                                             \
  }
#define IADC_REAL(name, member)                                                                    \
  Field {                                                                                          \
    name, [](const RunConfig& c) { return format_double(c.member); },                              \
        [](RunConfig& c, const std::string& v) { c.member = parse_double(name, v); }               \
  }
#define IADC_BOOL(name, member)                                                                    \
  Field {                                                                                          \
    name, [](const RunConfig& c) { return std::string(c.member ? "true" : "false"); },             \
        [](RunConfig& c, const std::string& v) { c.member = parse_bool(name, v); }                 \
  }
#define IADC_CHOICE(name, member, table)                                                           \
  Field {                                                                                          \
    name, [](const RunConfig& c) { return choice_name(c.member, table); },                         \
        [](RunConfig& c, const std::string& v) { c.member = parse_choice(name, v, table); }        \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table{
      IADC_UINT("height", height),
      IADC_UINT("width", width),
      IADC_UINT("batch_size", batch_size),
      IADC_REAL("learning_rate", learning_rate),
      IADC_UINT("epochs", epochs),
      IADC_UINT("steps", steps),
      IADC_UINT("seed", seed),
      IADC_REAL("keep_prob", keep_prob),
      IADC_BOOL("resample_sparsity", resample_sparsity),
      Field{"enc_channels", [](const RunConfig& c) { return join_list(c.model.enc_channels); },
            [](RunConfig& c, const std::string& v) { c.model.enc_channels = parse_list("enc_channels", v); }},
      IADC_REAL("depth_scale", model.depth_scale),
      IADC_UINT("attn_dim", model.attn_dim),
      IADC_UINT("attn_height", model.attn_height),
      IADC_UINT("attn_width", model.attn_width),
      IADC_CHOICE("attn_mask_downsample", model.attn_mask_downsample, kInterp),
      IADC_CHOICE("attention", model.attention_enabled, kAttention),
      IADC_UINT("fusion_channels", model.fusion_channels),
      IADC_UINT("se_reduction", model.se_reduction),
      IADC_UINT("head_mid_channels", model.head_mid_channels),
      IADC_REAL("lambda_init", loss_weights.lambda_init),
      IADC_REAL("lambda_obj", loss_weights.lambda_obj),
      IADC_REAL("lambda_seg", loss_weights.lambda_seg),
      IADC_CHOICE("loss", loss, kLossKinds),
      IADC_CHOICE("mask_source", mask_source, kMaskSources),
      Field{"mask_pattern", [](const RunConfig& c) { return c.mask_pattern; },
            [](RunConfig& c, const std::string& v) { c.mask_pattern = v; }},
      IADC_CHOICE("mask_resize", mask_resize, kInterp),
      IADC_UINT("log_every", log_every),
      IADC_CHOICE("units", units, kUnits),
      IADC_BOOL("val_on_train", val_on_train),
  };
  return table;
}

}  // namespace

void RunConfig::validate() const {
  if (height == 0 || width == 0) throw ConfigError("height and width must be positive");
  if (height % UNetConfig::divisor() != 0 || width % UNetConfig::divisor() != 0)
    throw ConfigError("height and width must be divisible by " + std::to_string(UNetConfig::divisor()) + ", got " +
                      std::to_string(height) + "x" + std::to_string(width));
  if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (epochs == 0 && steps == 0) throw ConfigError("one of epochs or steps must be positive");
  if (!(keep_prob >= 0.0 && keep_prob <= 1.0)) throw ConfigError("keep_prob must lie in [0, 1]");
  if (log_every == 0) throw ConfigError("log_every must be at least 1");
  if (mask_source == MaskSource::file && mask_pattern.find("{index}") == std::string::npos)
    throw ConfigError("mask_source=file requires a mask_pattern containing {index}");
  try {
    model.validate();
    loss_weights.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(*this) + "\n";
  return out;
}

RunConfig RunConfig::from_text(const std::string& text, const std::string& origin) {
  RunConfig c;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    const std::string where = origin + ":" + std::to_string(lineno) + ": ";
    const std::string body = trim(line.substr(0, line.find('#')));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    const std::string key = trim(body.substr(0, eq)), value = trim(body.substr(eq + 1));
    const auto it = std::find_if(fields().begin(), fields().end(), [&](const Field& f) { return key == f.key; });
    if (it == fields().end()) throw ConfigError(where + "unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError(where + "duplicate key '" + key + "'");
    try {
      it->set(c, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_text(ss.str(), path.string());
}

void RunConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << to_text();
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

void RunConfig::apply_preset(const std::string& name) {
  if (name == "desk") {
    height = 64;
    width = 128;
    steps = 500;
    return;
  }
  throw ConfigError("unknown preset '" + name + "' (available: desk)");
}

bool RunConfig::operator==(const RunConfig& other) const { return to_text() == other.to_text(); }

double units_per_meter(DepthUnits units) { return units == DepthUnits::centimeters ? 100.0 : 1.0; }
const char* units_name(DepthUnits units) { return units == DepthUnits::centimeters ? "cm" : "m"; }

}  // namespace iadc
