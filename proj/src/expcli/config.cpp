#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <sstream>

#include "micropatch/error.hpp"
#include "micropatch/experiment.hpp"

namespace micropatch {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
  throw ConfigurationError("config key '" + key + "': '" + value + "' is not " + expected);
}

double to_double(const std::string& key, const std::string& value) {
  char* end = nullptr;
  const double v = std::strtod(value.c_str(), &end);
  if (value.empty() || *end != '\0') bad_value(key, value, "a number");
  return v;
}

std::int64_t to_int(const std::string& key, const std::string& value) {
  char* end = nullptr;
  const long long v = std::strtoll(value.c_str(), &end, 10);
  if (value.empty() || *end != '\0') bad_value(key, value, "an integer");
  return v;
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  bad_value(key, value, "a boolean");
}

template <typename T, typename F>
std::vector<T> to_list(const std::string& key, const std::string& value, F convert) {
  std::vector<T> out;
  for (const auto& item : split_list(value)) out.push_back(static_cast<T>(convert(key, item)));
  return out;
}

std::string iso_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

nlohmann::json optional_json(const auto& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

}  // namespace

std::string_view version() { return MICROPATCH_VERSION; }

const std::vector<std::pair<std::string, std::string>>& config_keys() {
  static const std::vector<std::pair<std::string, std::string>> keys = {
      {"dataset", "dataset root holding manifest.csv; empty uses the synthetic generator"},
      {"synthetic.classes", "synthetic class count (1..16)"},
      {"synthetic.per_class", "samples per class: one count or one per class"},
      {"synthetic.size", "synthetic native resolution"},
      {"synthetic.difficulty", "synthetic difficulty in [0, 1]"},
      {"synthetic.seed", "synthetic generator seed"},
      {"archs", "architectures to run"},
      {"flag_limits", "per-class caps, ascending"},
      {"sigmas", "blur grid in model-resolution pixels"},
      {"schemes", "blur schemes: pre, post"},
      {"seed", "seed for sampling, splitting, augmentation and training"},
      {"train_fraction", "stratified train share"},
      {"augment", "augment the training split"},
      {"epochs", "epoch budget (default per architecture)"},
      {"batch_size", "mini-batch size"},
      {"patience", "early-stopping patience in epochs"},
      {"learning_rate", "Adam learning rate (default per architecture)"},
      {"weight_decay", "Adam weight decay (default per architecture)"},
      {"target_accuracy", "stop once validation accuracy reaches this value"},
      {"timing.runs", "measured single-sample forwards"},
      {"timing.warmup", "discarded warm-up forwards"},
      {"probe.epochs", "linear-probe epochs"},
      {"probe.learning_rate", "linear-probe learning rate"},
      {"probe.batch_size", "linear-probe batch size"},
      {"out", "output directory"},
      {"<Arch>.learning_rate|weight_decay|epochs|batch_size", "per-architecture override"},
  };
  return keys;
}

TrainConfig ExperimentConfig::train_config(Arch arch) const {
  TrainConfig t = train;
  t.seed = seed;
  if (auto it = overrides.find(arch); it != overrides.end()) {
    const auto& o = it->second;
    if (o.learning_rate) t.learning_rate = o.learning_rate;
    if (o.weight_decay) t.weight_decay = o.weight_decay;
    if (o.epochs) t.epochs = o.epochs;
    if (o.batch_size) t.batch_size = *o.batch_size;
  }
  return t.resolve(arch);
}

void ExperimentConfig::validate() const {
  if (archs.empty()) throw ConfigurationError("archs must name at least one architecture");
  if (flag_limits.empty()) throw ConfigurationError("flag_limits must not be empty");
  for (std::size_t i = 0; i < flag_limits.size(); ++i) {
    if (flag_limits[i] < 1) throw ConfigurationError("flag_limits must be positive");
    if (i > 0 && flag_limits[i] <= flag_limits[i - 1]) throw ConfigurationError("flag_limits must be strictly ascending");
  }
  for (double s : sigmas)
    if (!(s >= 0.0)) throw ConfigurationError("sigmas must be non-negative");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigurationError("train_fraction must lie in (0, 1)");
  if (timing_runs < 1 || timing_warmup < 0) throw ConfigurationError("timing.runs >= 1 and timing.warmup >= 0 required");
  if (probe.epochs < 1 || probe.batch_size < 1 || !(probe.learning_rate > 0.0))
    throw ConfigurationError("probe settings must be positive");
  if (dataset.empty() && (synthetic.num_classes < 1 || synthetic.num_classes > 16))
    throw ConfigurationError("synthetic.classes must lie in 1..16");
  train.validate();
  for (Arch a : archs) train_config(a).validate();
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json j;
  j["dataset"] = dataset.string();
  j["synthetic"] = {{"classes", synthetic.num_classes},
                    {"per_class", synthetic.per_class},
                    {"size", synthetic.size},
                    {"difficulty", synthetic.difficulty},
                    {"seed", synthetic.seed}};
  for (Arch a : archs) j["archs"].push_back(std::string(arch_name(a)));
  j["flag_limits"] = flag_limits;
  j["sigmas"] = sigmas;
  for (auto s : schemes) j["schemes"].push_back(scheme_name(s));
  j["seed"] = seed;
  j["train_fraction"] = train_fraction;
  j["augment"] = augment;
  for (Arch a : archs) j["train"][std::string(arch_name(a))] = train_config(a).to_json();
  j["timing"] = {{"runs", timing_runs}, {"warmup", timing_warmup}};
  j["probe"] = {{"epochs", probe.epochs},
                {"learning_rate", probe.learning_rate},
                {"batch_size", probe.batch_size},
                {"train_fraction", probe.train_fraction},
                {"seed", probe.seed}};
  for (const auto& [a, o] : overrides)
    j["overrides"][std::string(arch_name(a))] = {{"learning_rate", optional_json(o.learning_rate)},
                                                 {"weight_decay", optional_json(o.weight_decay)},
                                                 {"epochs", optional_json(o.epochs)},
                                                 {"batch_size", optional_json(o.batch_size)}};
  j["out"] = out.string();
  return j;
}

ExperimentConfig ExperimentConfig::parse(std::string_view text) {
  ExperimentConfig c;
  std::istringstream in{std::string(text)};
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigurationError("config line " + std::to_string(number) + ": expected 'key = value'");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));

    if (key == "dataset") c.dataset = value;
    else if (key == "synthetic.classes") c.synthetic.num_classes = static_cast<int>(to_int(key, value));
    else if (key == "synthetic.per_class") c.synthetic.per_class = to_list<std::int64_t>(key, value, to_int);
    else if (key == "synthetic.size") c.synthetic.size = static_cast<int>(to_int(key, value));
    else if (key == "synthetic.difficulty") c.synthetic.difficulty = to_double(key, value);
    else if (key == "synthetic.seed") c.synthetic.seed = static_cast<std::uint64_t>(to_int(key, value));
    else if (key == "archs") {
      c.archs.clear();
      for (const auto& name : split_list(value)) c.archs.push_back(parse_arch(name));
    } else if (key == "flag_limits") c.flag_limits = to_list<std::int64_t>(key, value, to_int);
    else if (key == "sigmas") c.sigmas = to_list<double>(key, value, to_double);
    else if (key == "schemes") {
      c.schemes.clear();
      for (const auto& name : split_list(value)) c.schemes.push_back(parse_scheme(name));
    } else if (key == "seed") c.seed = static_cast<std::uint64_t>(to_int(key, value));
    else if (key == "train_fraction") c.train_fraction = to_double(key, value);
    else if (key == "augment") c.augment = to_bool(key, value);
    else if (key == "epochs") c.train.epochs = static_cast<int>(to_int(key, value));
    else if (key == "batch_size") c.train.batch_size = static_cast<int>(to_int(key, value));
    else if (key == "patience") c.train.patience = static_cast<int>(to_int(key, value));
    else if (key == "learning_rate") c.train.learning_rate = to_double(key, value);
    else if (key == "weight_decay") c.train.weight_decay = to_double(key, value);
    else if (key == "target_accuracy") c.train.target_accuracy = to_double(key, value);
    else if (key == "timing.runs") c.timing_runs = static_cast<int>(to_int(key, value));
    else if (key == "timing.warmup") c.timing_warmup = static_cast<int>(to_int(key, value));
    else if (key == "probe.epochs") c.probe.epochs = static_cast<int>(to_int(key, value));
    else if (key == "probe.learning_rate") c.probe.learning_rate = to_double(key, value);
    else if (key == "probe.batch_size") c.probe.batch_size = static_cast<int>(to_int(key, value));
    else if (key == "out") c.out = value;
    else if (const auto dot = key.find('.'); dot != std::string::npos) {
      Arch arch;
      try {
        arch = parse_arch(key.substr(0, dot));
      } catch (const ConfigurationError&) {
        throw ConfigurationError("config line " + std::to_string(number) + ": unknown key '" + key + "'");
      }
      auto& o = c.overrides[arch];
      const std::string field = key.substr(dot + 1);
      if (field == "learning_rate") o.learning_rate = to_double(key, value);
      else if (field == "weight_decay") o.weight_decay = to_double(key, value);
      else if (field == "epochs") o.epochs = static_cast<int>(to_int(key, value));
      else if (field == "batch_size") o.batch_size = static_cast<int>(to_int(key, value));
      else throw ConfigurationError("config line " + std::to_string(number) + ": unknown key '" + key + "'");
    } else {
      throw ConfigurationError("config line " + std::to_string(number) + ": unknown key '" + key + "'");
    }
  }
  c.probe.seed = c.seed;
  c.probe.train_fraction = c.train_fraction;
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigurationError("cannot read config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

RunManifest::RunManifest(const ExperimentConfig& cfg, std::string command) {
  std::filesystem::create_directories(cfg.out);
  path_ = cfg.out / ("manifest_" + command + ".json");
  doc_["command"] = std::move(command);
  doc_["version"] = std::string(version());
  doc_["config"] = cfg.to_json();
  doc_["seeds"] = {{"sampling", cfg.seed}, {"split", cfg.seed}, {"augment", cfg.seed}, {"train", cfg.seed},
                   {"synthetic", cfg.synthetic.seed}};
  doc_["design"] = {{"monitor", "val_accuracy"},
                    {"restore_best", true},
                    {"tie_break", "earliest_epoch"},
                    {"whitening_mean", "clean resize of the training split"},
                    {"validation_augmented", false},
                    {"resize", "antialiased bicubic a=-0.5"},
                    {"blur_padding", "edge clamp"},
                    {"blur_truncation", "ceil(3 sigma), renormalized"},
                    {"slope_includes_clean", true},
                    {"se_placement", "after residual addition"},
                    {"nin_mlp_init", "xavier"},
                    {"zero_division", 0}};
  doc_["started_at"] = iso_now();
  doc_["status"] = "running";
  write();
}

void RunManifest::record(const std::string& key, nlohmann::json value) {
  doc_["records"][key] = std::move(value);
  write();
}

void RunManifest::finish(const std::string& status) {
  doc_["status"] = status;
  doc_["finished_at"] = iso_now();
  write();
}

void RunManifest::write() const {
  std::ofstream out(path_);
  if (!out) throw ConfigurationError("cannot write '" + path_.string() + "'");
  out << doc_.dump(2) << '\n';
}

}  // namespace micropatch
