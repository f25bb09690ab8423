#include "shakenorm/cli/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace shakenorm::cli {

namespace fs = std::filesystem;

namespace {

enum class Kind { kInt, kNonNegInt, kReal, kChoice, kText, kSeeds };

struct KeyInfo {
  const char* name;
  const char* fallback;
  Kind kind;
  std::vector<std::string> choices = {};
};

const std::vector<KeyInfo>& key_table() {
  static const std::vector<KeyInfo> table = {
      {"task", "image", Kind::kChoice, {"image", "adding"}},
      {"dataset", "mnist", Kind::kChoice, {"mnist", "cifar10", "blobs"}},
      {"data_dir", "data/mnist-5k", Kind::kText},
      {"train_limit", "0", Kind::kNonNegInt},
      {"blobs.classes", "3", Kind::kInt},
      {"blobs.per_class", "40", Kind::kInt},
      {"blobs.size", "8", Kind::kInt},
      {"blobs.spread", "0.3", Kind::kReal},
      {"depth", "20", Kind::kInt},
      {"cardinality", "2", Kind::kInt},
      {"width", "4", Kind::kInt},
      {"stem_width", "16", Kind::kInt},
      {"groups", "1", Kind::kInt},
      {"layout", "PreActBN", Kind::kChoice, {"PostAct", "RPreAct", "PreAct", "PreActBN", "BNShake"}},
      {"head", "softmax", Kind::kChoice, {"softmax", "ccl"}},
      {"embed_dim", "2", Kind::kNonNegInt},
      {"shake", "on", Kind::kChoice, {"on", "off"}},
      {"shake_backward", "shake", Kind::kChoice, {"shake", "even", "keep"}},
      {"granularity", "image", Kind::kChoice, {"image", "batch"}},
      {"subbands", "1", Kind::kInt},
      {"p_off", "0", Kind::kReal},
      {"gamma0", "1", Kind::kReal},
      {"epochs", "20", Kind::kNonNegInt},
      {"batch", "32", Kind::kInt},
      {"eval_batch", "250", Kind::kInt},
      {"lr", "0.1", Kind::kReal},
      {"momentum", "0.9", Kind::kReal},
      {"weight_decay", "0.0001", Kind::kReal},
      {"augment", "auto", Kind::kChoice, {"auto", "none", "crop_flip"}},
      {"seeds", "1", Kind::kSeeds},
      {"precision", "32", Kind::kChoice, {"32", "64"}},
      {"out", "runs/latest", Kind::kText},
      {"bnlstm.hidden", "32", Kind::kInt},
      {"bnlstm.gamma0", "0.1", Kind::kReal},
      {"adding.seq_len", "20", Kind::kInt},
      {"adding.steps", "2000", Kind::kInt},
      {"adding.batch", "32", Kind::kInt},
      {"adding.lr", "0.05", Kind::kReal},
      {"adding.momentum", "0.9", Kind::kReal},
  };
  return table;
}

const KeyInfo* find_key(const std::string& key) {
  for (const auto& k : key_table()) {
    if (key == k.name) return &k;
  }
  return nullptr;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool parse_long(const std::string& s, long& out) {
  const char* end = s.data() + s.size();
  auto r = std::from_chars(s.data(), end, out);
  return r.ec == std::errc() && r.ptr == end;
}

bool parse_real(const std::string& s, double& out) {
  if (s.empty()) return false;
  std::size_t used = 0;
  try {
    out = std::stod(s, &used);
  } catch (const std::exception&) {
    return false;
  }
  return used == s.size() && std::isfinite(out);
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "|" : "") + v[i];
  return out;
}

void check_value(const KeyInfo& k, const std::string& value) {
  const std::string where = std::string("config key '") + k.name + "': ";
  long l = 0;
  double d = 0.0;
  switch (k.kind) {
    case Kind::kInt:
      if (!parse_long(value, l) || l < 1) throw ConfigError(where + "expected a positive integer, got '" + value + "'");
      break;
    case Kind::kNonNegInt:
      if (!parse_long(value, l) || l < 0) {
        throw ConfigError(where + "expected a non-negative integer, got '" + value + "'");
      }
      break;
    case Kind::kReal:
      if (!parse_real(value, d)) throw ConfigError(where + "expected a number, got '" + value + "'");
      break;
    case Kind::kChoice:
      if (std::find(k.choices.begin(), k.choices.end(), value) == k.choices.end()) {
        throw ConfigError(where + "expected one of " + join(k.choices) + ", got '" + value + "'");
      }
      break;
    case Kind::kText:
      if (value.empty()) throw ConfigError(where + "empty value");
      break;
    case Kind::kSeeds: {
      auto items = split_csv(value);
      if (items.empty()) throw ConfigError(where + "expected a comma-separated list of seeds");
      for (const auto& it : items) {
        if (!parse_long(it, l) || l < 0) throw ConfigError(where + "bad seed '" + it + "'");
      }
      break;
    }
  }
}

}  // namespace

RunConfig::RunConfig() {
  for (const auto& k : key_table()) values_[k.name] = k.fallback;
}

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    for (const auto& k : key_table()) v.emplace_back(k.name);
    return v;
  }();
  return names;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const KeyInfo* info = find_key(key);
  if (info == nullptr) throw ConfigError("unknown config key '" + key + "'");
  check_value(*info, value);
  values_[key] = value;
}

void RunConfig::merge(const std::string& text, const std::string& origin) {
  std::stringstream ss(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    try {
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

RunConfig RunConfig::parse(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  cfg.merge(text, origin);
  return cfg;
}

RunConfig RunConfig::from_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.string());
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

long RunConfig::get_int(const std::string& key) const {
  long v = 0;
  if (!parse_long(get(key), v)) throw ConfigError("config key '" + key + "' is not an integer");
  return v;
}

double RunConfig::get_double(const std::string& key) const {
  double v = 0.0;
  if (!parse_real(get(key), v)) throw ConfigError("config key '" + key + "' is not a number");
  return v;
}

bool RunConfig::get_switch(const std::string& key) const { return get(key) == "on"; }

std::vector<std::uint64_t> RunConfig::seeds() const {
  std::vector<std::uint64_t> out;
  for (const auto& s : split_csv(get("seeds"))) out.push_back(std::stoull(s));
  return out;
}

std::string RunConfig::to_string() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

void RunConfig::write(const fs::path& path) const {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_string();
}

void RunConfig::validate() const {
  try {
    if (get("task") == "image") {
      network_spec(2, 1).validate();
    }
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  const double p_off = get_double("p_off");
  if (p_off < 0.0 || p_off > 1.0) throw ConfigError("config key 'p_off': must lie in [0, 1]");
  if (get_double("lr") <= 0.0 || get_double("adding.lr") <= 0.0) throw ConfigError("learning rates must be positive");
  auto s = seeds();
  std::sort(s.begin(), s.end());
  if (std::adjacent_find(s.begin(), s.end()) != s.end()) throw ConfigError("config key 'seeds': duplicate seed");
}

ShakeConfig RunConfig::shake_config() const {
  const auto n = static_cast<std::size_t>(get_int("cardinality"));
  ShakeConfig c = ShakeConfig::disabled(n);
  if (get_switch("shake")) {
    c.forward = ShakeForward::kShake;
    c.backward = parse_shake_backward(get("shake_backward"));
  }
  c.granularity = parse_granularity(get("granularity"));
  c.subbands = static_cast<std::size_t>(get_int("subbands"));
  c.p_off = get_double("p_off");
  return c;
}

NetworkSpec RunConfig::network_spec(std::size_t classes, std::size_t in_channels) const {
  NetworkSpec s;
  s.depth = static_cast<std::size_t>(get_int("depth"));
  s.cardinality = static_cast<std::size_t>(get_int("cardinality"));
  s.base_width = static_cast<std::size_t>(get_int("width"));
  s.stem_width = static_cast<std::size_t>(get_int("stem_width"));
  s.groups = static_cast<std::size_t>(get_int("groups"));
  s.in_channels = in_channels;
  s.classes = classes;
  s.layout = parse_layout(get("layout"));
  s.embed_dim = static_cast<std::size_t>(get_int("embed_dim"));
  s.head = parse_head(get("head"));
  s.shake = shake_config();
  s.gamma0 = get_double("gamma0");
  return s;
}

TrainConfig RunConfig::train_config(std::uint64_t seed) const {
  TrainConfig t;
  t.epochs = static_cast<std::size_t>(get_int("epochs"));
  t.batch = static_cast<std::size_t>(get_int("batch"));
  t.eval_batch = static_cast<std::size_t>(get_int("eval_batch"));
  t.sgd = SgdOptions{get_double("lr"), get_double("momentum"), get_double("weight_decay")};
  t.seed = seed;
  const auto& aug = get("augment");
  if (aug == "crop_flip" || (aug == "auto" && get("dataset") == "cifar10")) t.augment = Augment::kCropFlip;
  return t;
}

AddingTaskConfig RunConfig::adding_config(std::uint64_t seed) const {
  AddingTaskConfig a;
  a.seq_len = static_cast<std::size_t>(get_int("adding.seq_len"));
  a.hidden = static_cast<std::size_t>(get_int("bnlstm.hidden"));
  a.steps = static_cast<std::size_t>(get_int("adding.steps"));
  a.batch = static_cast<std::size_t>(get_int("adding.batch"));
  a.gamma0 = get_double("bnlstm.gamma0");
  a.lr = get_double("adding.lr");
  a.momentum = get_double("adding.momentum");
  a.seed = seed;
  return a;
}

namespace {

fs::path require_file(const fs::path& p) {
  if (!fs::exists(p)) throw ConfigError("missing data file " + p.string());
  return p;
}

}  // namespace

DataSplits load_data(const RunConfig& cfg) {
  DataSplits d;
  const fs::path dir = cfg.get("data_dir");
  const auto& name = cfg.get("dataset");
  if (name == "mnist") {
    d.train = load_mnist_idx(require_file(dir / "train-images-idx3-ubyte"), require_file(dir / "train-labels-idx1-ubyte"));
    d.test = load_mnist_idx(require_file(dir / "t10k-images-idx3-ubyte"), require_file(dir / "t10k-labels-idx1-ubyte"));
  } else if (name == "cifar10") {
    std::vector<fs::path> train;
    for (int i = 1; i <= 5; ++i) train.push_back(require_file(dir / ("data_batch_" + std::to_string(i) + ".bin")));
    d.train = load_cifar10_bin(train);
    d.test = load_cifar10_bin({require_file(dir / "test_batch.bin")});
  } else {
    const auto k = static_cast<std::size_t>(cfg.get_int("blobs.classes"));
    const auto n = static_cast<std::size_t>(cfg.get_int("blobs.per_class"));
    const auto s = static_cast<std::size_t>(cfg.get_int("blobs.size"));
    const double spread = cfg.get_double("blobs.spread");
    if (k < 2) throw ConfigError("config key 'blobs.classes': need at least two classes");
    // Both splits share the class centers (same seed); the test split is the tail of a larger draw.
    auto all = make_blobs(k, 2 * n, {1, s, s}, spread, 0xB10B5);
    d.train = all.slice(0, k * n);
    d.test = all.slice(k * n, k * n);
  }
  const auto limit = static_cast<std::size_t>(cfg.get_int("train_limit"));
  if (limit > 0 && limit < d.train.size()) d.train = d.train.slice(0, limit);
  const auto stats = fit_standardization(d.train);
  apply_standardization(d.train, stats);
  apply_standardization(d.test, stats);
  return d;
}

}  // namespace shakenorm::cli
