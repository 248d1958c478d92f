#include "cissl/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include "cissl/csv.hpp"
#include "cissl/errors.hpp"

namespace cissl {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view expect) {
  throw ConfigError(std::string(key) + ": invalid value '" + std::string(value) + "' (expected " +
                    std::string(expect) + ")");
}

std::size_t to_count(std::string_view key, std::string_view v) {
  try {
    const long long x = csv::parse_int(v);
    if (x < 0) bad_value(key, v, "a non-negative integer");
    return static_cast<std::size_t>(x);
  } catch (const std::invalid_argument&) {
    bad_value(key, v, "a non-negative integer");
  }
}

std::uint64_t to_u64(std::string_view key, std::string_view v) {
  std::uint64_t x = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), x);
  if (res.ec != std::errc{} || res.ptr != v.data() + v.size()) bad_value(key, v, "an unsigned integer");
  return x;
}

double to_real(std::string_view key, std::string_view v) {
  try {
    const double x = csv::parse_double(v);
    if (!std::isfinite(x)) bad_value(key, v, "a finite number");
    return x;
  } catch (const std::invalid_argument&) {
    bad_value(key, v, "a number");
  }
}

bool to_bool(std::string_view key, std::string_view v) {
  if (v == "true") return true;
  if (v == "false") return false;
  bad_value(key, v, "true or false");
}

std::string from_bool(bool b) { return b ? "true" : "false"; }

std::vector<std::size_t> to_list(std::string_view key, std::string_view v) {
  std::vector<std::size_t> out;
  if (trim(v).empty()) return out;
  for (const auto& part : csv::split(v)) out.push_back(to_count(key, trim(part)));
  return out;
}

std::string from_list(const std::vector<std::size_t>& l) {
  std::vector<std::string> parts;
  for (auto x : l) parts.push_back(std::to_string(x));
  return csv::join(parts);
}

struct Field {
  const char* key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, std::string_view)> set;
};

#define CISSL_COUNT(name, member)                                                   \
  Field {                                                                           \
    name, [](const ExperimentConfig& c) { return std::to_string(c.member); },       \
        [](ExperimentConfig& c, std::string_view v) { c.member = to_count(name, v); } \
  }
#define CISSL_REAL(name, member)                                                          \
  Field {                                                                                 \
    name, [](const ExperimentConfig& c) { return csv::format_double(c.member); },         \
        [](ExperimentConfig& c, std::string_view v) { c.member = to_real(name, v); }      \
  }
#define CISSL_BOOL(name, member)                                                     \
  Field {                                                                            \
    name, [](const ExperimentConfig& c) { return from_bool(c.member); },             \
        [](ExperimentConfig& c, std::string_view v) { c.member = to_bool(name, v); } \
  }
#define CISSL_U64(name, member)                                                     \
  Field {                                                                           \
    name, [](const ExperimentConfig& c) { return std::to_string(c.member); },       \
        [](ExperimentConfig& c, std::string_view v) { c.member = to_u64(name, v); } \
  }

template <typename E>
Field enum_field(const char* name, std::vector<E> values,
                 std::function<E&(ExperimentConfig&)> ref) {
  return Field{name,
               [ref](const ExperimentConfig& c) {
                 return to_string(ref(const_cast<ExperimentConfig&>(c)));
               },
               [ref, values, name](ExperimentConfig& c, std::string_view v) {
                 std::string options;
                 for (E e : values) {
                   if (to_string(e) == v) {
                     ref(c) = e;
                     return;
                   }
                   options += (options.empty() ? "" : "|") + to_string(e);
                 }
                 bad_value(name, v, options);
               }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f{
        // data
        CISSL_COUNT("num_classes", data.num_classes),
        CISSL_COUNT("n1_labeled", data.n1_labeled),
        CISSL_COUNT("n1_unlabeled", data.n1_unlabeled),
        CISSL_REAL("gamma_labeled", data.gamma_labeled),
        CISSL_REAL("gamma_unlabeled", data.gamma_unlabeled),
        CISSL_BOOL("invert_unlabeled", data.invert_unlabeled),
        CISSL_COUNT("input_dim", data.input_dim),
        CISSL_REAL("class_sep", data.class_sep),
        CISSL_REAL("noise_sigma", data.noise_sigma),
        CISSL_COUNT("test_per_class", data.test_per_class),
        CISSL_U64("data_seed", data.seed),
        // augmentation
        CISSL_REAL("weak_sigma_scale", augment.weak_sigma_scale),
        CISSL_REAL("strong_sigma_scale", augment.strong_sigma_scale),
        CISSL_REAL("mask_prob", augment.mask_prob),
    };
    f.push_back(enum_field<Method>("method", {Method::fixmatch, Method::abc, Method::bacon},
                                   [](ExperimentConfig& c) -> Method& { return c.train.method; }));
    std::vector<Field> rest{
        CISSL_COUNT("total_iters", train.total_iters),
        CISSL_COUNT("warmup_iters", train.warmup_iters),
        CISSL_REAL("lr0", train.lr0),
        CISSL_REAL("momentum", train.momentum),
        CISSL_REAL("weight_decay", train.weight_decay),
        CISSL_COUNT("batch_labeled", train.batch_labeled),
        CISSL_COUNT("uratio", train.uratio),
        CISSL_REAL("conf_threshold", train.conf_threshold),
        CISSL_REAL("bank_threshold", train.bank_threshold),
        CISSL_COUNT("rns_n", train.rns_n),
        CISSL_REAL("temp_base", train.temp_base),
        CISSL_REAL("bta_eta", train.bta_eta),
        Field{"hidden", [](const ExperimentConfig& c) { return from_list(c.train.hidden); },
              [](ExperimentConfig& c, std::string_view v) { c.train.hidden = to_list("hidden", v); }},
        CISSL_COUNT("repr_dim", train.repr_dim),
        CISSL_COUNT("proj_dim", train.proj_dim),
        CISSL_BOOL("use_rns", train.use_rns),
    };
    f.insert(f.end(), rest.begin(), rest.end());
    f.push_back(enum_field<BtaMode>("bta_mode", {BtaMode::off, BtaMode::naive, BtaMode::decay},
                                    [](ExperimentConfig& c) -> BtaMode& { return c.train.bta_mode; }));
    f.push_back(enum_field<ProjectionMode>(
        "projection",
        {ProjectionMode::identity, ProjectionMode::linear, ProjectionMode::nonlinear},
        [](ExperimentConfig& c) -> ProjectionMode& { return c.train.projection; }));
    f.push_back(enum_field<MaskCountSource>(
        "mask_counts", {MaskCountSource::labeled, MaskCountSource::bank},
        [](ExperimentConfig& c) -> MaskCountSource& { return c.train.mask_counts; }));
    f.push_back(CISSL_U64("seed", train.seed));
    f.push_back(CISSL_COUNT("eval_every", train.eval_every));
    return f;
  }();
  return table;
}

#undef CISSL_COUNT
#undef CISSL_REAL
#undef CISSL_BOOL
#undef CISSL_U64

const Field& find_field(std::string_view key) {
  for (const auto& f : fields()) {
    if (key == f.key) return f;
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

void require(bool ok, const char* key, const char* constraint) {
  if (!ok) throw ConfigError(std::string(key) + ": " + constraint);
}

bool unit_interval(double x) { return x > 0.0 && x <= 1.0; }

}  // namespace

std::string to_string(Method m) {
  switch (m) {
    case Method::fixmatch: return "fixmatch";
    case Method::abc: return "abc";
    case Method::bacon: return "bacon";
  }
  return "?";
}

std::string to_string(BtaMode m) {
  switch (m) {
    case BtaMode::off: return "off";
    case BtaMode::naive: return "naive";
    case BtaMode::decay: return "decay";
  }
  return "?";
}

std::string to_string(ProjectionMode m) {
  switch (m) {
    case ProjectionMode::identity: return "identity";
    case ProjectionMode::linear: return "linear";
    case ProjectionMode::nonlinear: return "nonlinear";
  }
  return "?";
}

std::string to_string(MaskCountSource m) {
  switch (m) {
    case MaskCountSource::labeled: return "labeled";
    case MaskCountSource::bank: return "bank";
  }
  return "?";
}

void TrainConfig::validate() const {
  require(warmup_iters <= total_iters, "warmup_iters", "must not exceed total_iters");
  require(lr0 > 0.0, "lr0", "must be positive");
  require(momentum >= 0.0 && momentum < 1.0, "momentum", "must lie in [0, 1)");
  require(weight_decay >= 0.0, "weight_decay", "must be non-negative");
  require(batch_labeled >= 1, "batch_labeled", "must be at least 1");
  require(uratio >= 1, "uratio", "must be at least 1");
  require(unit_interval(conf_threshold), "conf_threshold", "must lie in (0, 1]");
  require(unit_interval(bank_threshold), "bank_threshold", "must lie in (0, 1]");
  require(rns_n >= 1, "rns_n", "must be at least 1");
  require(temp_base > 0.0, "temp_base", "must be positive");
  require(bta_eta >= 0.0 && bta_eta < 1.0, "bta_eta", "must lie in [0, 1)");
  for (auto h : hidden) require(h >= 1, "hidden", "widths must be positive");
  require(repr_dim >= 1, "repr_dim", "must be positive");
  require(proj_dim >= 1, "proj_dim", "must be positive");
  require(eval_every >= 1, "eval_every", "must be at least 1");
}

void ExperimentConfig::validate() const {
  data.validate();
  train.validate();
  require(augment.weak_sigma_scale >= 0.0, "weak_sigma_scale", "must be non-negative");
  require(augment.strong_sigma_scale >= 0.0, "strong_sigma_scale", "must be non-negative");
  require(augment.mask_prob >= 0.0 && augment.mask_prob <= 1.0, "mask_prob", "must lie in [0, 1]");
}

ModelShape ExperimentConfig::model_shape() const {
  ModelShape s;
  s.input_dim = data.input_dim;
  s.hidden = train.hidden;
  s.repr_dim = train.repr_dim;
  s.num_classes = data.num_classes;
  s.proj_dim = train.proj_dim;
  s.projection = train.projection;
  return s;
}

void set_config_value(ExperimentConfig& cfg, std::string_view key, std::string_view value) {
  find_field(key).set(cfg, trim(value));
}

std::string get_config_value(const ExperimentConfig& cfg, std::string_view key) {
  return find_field(key).get(cfg);
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.emplace_back(f.key);
  return out;
}

ExperimentConfig parse_config_text(std::string_view text) {
  ExperimentConfig cfg;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    set_config_value(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig parse_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str());
}

std::string emit_config(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) {
    out += f.key;
    out += " = ";
    out += f.get(cfg);
    out += '\n';
  }
  return out;
}

}  // namespace cissl
