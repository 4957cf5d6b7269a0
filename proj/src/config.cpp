#include "refdrop/config.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

namespace refdrop::cli {

using nlohmann::json;

namespace {

std::string join_path(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

void reject_unknown(const json& obj, const std::set<std::string>& allowed,
                    const std::string& prefix) {
  if (!obj.is_object()) {
    throw ConfigError(prefix, "expected a JSON object");
  }
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.contains(key)) throw ConfigError(join_path(prefix, key), "unknown key");
  }
}

template <typename V>
V get_as(const json& obj, const std::string& key, const std::string& prefix) {
  try {
    return obj.at(key).get<V>();
  } catch (const json::exception& e) {
    throw ConfigError(join_path(prefix, key), std::string("wrong type: ") + e.what());
  }
}

std::size_t get_count(const json& obj, const std::string& key, const std::string& prefix,
                      std::size_t minimum) {
  const std::string path = join_path(prefix, key);
  const json& v = obj.at(key);
  if (!v.is_number_integer() || v.get<std::int64_t>() < static_cast<std::int64_t>(minimum)) {
    throw ConfigError(path, "expected an integer >= " + std::to_string(minimum));
  }
  return v.get<std::size_t>();
}

std::uint64_t get_seed(const json& obj, const std::string& key) {
  const json& v = obj.at(key);
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
    throw ConfigError(key, "expected a non-negative integer seed");
  }
  return v.get<std::uint64_t>();
}

std::vector<double> get_reals(const json& obj, const std::string& key, const std::string& prefix) {
  const json& v = obj.at(key);
  if (!v.is_array()) throw ConfigError(join_path(prefix, key), "expected an array of numbers");
  std::vector<double> out;
  for (const json& x : v) {
    if (!x.is_number()) throw ConfigError(join_path(prefix, key), "expected an array of numbers");
    out.push_back(x.get<double>());
  }
  return out;
}

std::size_t parse_dim(std::string_view text, const std::string& whole) {
  std::size_t value = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size() || value == 0) {
    throw std::invalid_argument("malformed grid '" + whole + "'");
  }
  return value;
}

std::vector<std::vector<std::size_t>> parse_dims_list(const std::string& text,
                                                      std::size_t arity) {
  std::vector<std::vector<std::size_t>> cells;
  std::stringstream items(text);
  std::string item;
  while (std::getline(items, item, ',')) {
    std::vector<std::size_t> dims;
    std::size_t start = 0;
    while (true) {
      const std::size_t x = item.find('x', start);
      dims.push_back(parse_dim(std::string_view(item).substr(start, x - start), text));
      if (x == std::string::npos) break;
      start = x + 1;
    }
    if (dims.size() != arity) throw std::invalid_argument("malformed grid '" + text + "'");
    cells.push_back(std::move(dims));
  }
  if (cells.empty()) throw std::invalid_argument("empty grid");
  return cells;
}

std::vector<oracle::GridCell> grid_from_json(const json& v, const std::string& path) {
  if (v.is_string()) {
    try {
      return parse_grid(v.get<std::string>());
    } catch (const std::invalid_argument& e) {
      throw ConfigError(path, e.what());
    }
  }
  reject_unknown(v, {"L", "d", "d_v"}, path);
  auto list = [&](const char* key) {
    if (!v.contains(key) || !v.at(key).is_array() || v.at(key).empty())
      throw ConfigError(join_path(path, key), "expected a non-empty array of positive integers");
    std::vector<std::size_t> out;
    for (const json& x : v.at(key)) {
      if (!x.is_number_integer() || x.get<std::int64_t>() < 1)
        throw ConfigError(join_path(path, key), "expected positive integers");
      out.push_back(x.get<std::size_t>());
    }
    return out;
  };
  std::vector<oracle::GridCell> grid;
  for (std::size_t l : list("L"))
    for (std::size_t d : list("d"))
      for (std::size_t dv : list("d_v")) grid.push_back({l, d, dv});
  return grid;
}

std::vector<BenchCell> bench_grid_from_json(const json& v, const std::string& path) {
  std::vector<BenchCell> grid;
  if (v.is_string()) {
    try {
      for (const auto& dims : parse_dims_list(v.get<std::string>(), 4))
        grid.push_back({dims[0], dims[1], dims[2], dims[3]});
    } catch (const std::invalid_argument& e) {
      throw ConfigError(path, e.what());
    }
    return grid;
  }
  if (!v.is_array() || v.empty()) throw ConfigError(path, "expected a non-empty array of cells");
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::string cell_path = path + "[" + std::to_string(i) + "]";
    reject_unknown(v[i], {"L", "d", "d_v", "B"}, cell_path);
    for (const char* key : {"L", "d", "d_v", "B"}) {
      if (!v[i].contains(key)) throw ConfigError(join_path(cell_path, key), "missing");
    }
    grid.push_back({get_count(v[i], "L", cell_path, 1), get_count(v[i], "d", cell_path, 1),
                    get_count(v[i], "d_v", cell_path, 1), get_count(v[i], "B", cell_path, 2)});
  }
  return grid;
}

std::string grid_to_string(const std::vector<oracle::GridCell>& grid) {
  std::string out;
  for (const auto& c : grid) {
    if (!out.empty()) out += ',';
    out += std::to_string(c.seq_len) + "x" + std::to_string(c.key_dim) + "x" +
           std::to_string(c.value_dim);
  }
  return out;
}

}  // namespace

std::string preset_name(Preset p) {
  switch (p) {
    case Preset::Consistent: return "consistent";
    case Preset::Diverse: return "diverse";
    case Preset::Temporal: return "temporal";
    case Preset::Blend: return "blend";
    case Preset::Custom: return "custom";
  }
  return "custom";
}

Preset parse_preset(const std::string& name) {
  for (Preset p : {Preset::Consistent, Preset::Diverse, Preset::Temporal, Preset::Blend,
                   Preset::Custom}) {
    if (preset_name(p) == name) return p;
  }
  throw ConfigError("preset", "unknown preset '" + name +
                                  "' (expected consistent, diverse, temporal, blend or custom)");
}

std::vector<oracle::GridCell> parse_grid(const std::string& text) {
  std::vector<oracle::GridCell> grid;
  for (const auto& dims : parse_dims_list(text, 3)) grid.push_back({dims[0], dims[1], dims[2]});
  return grid;
}

void merge_json(json& base, const json& overrides) {
  if (!base.is_object() || !overrides.is_object()) {
    base = overrides;
    return;
  }
  for (const auto& [key, value] : overrides.items()) {
    if (value.is_object() && base.contains(key) && base[key].is_object()) {
      merge_json(base[key], value);
    } else {
      base[key] = value;
    }
  }
}

json load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot open config file '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("", "malformed JSON in '" + path + "': " + e.what());
  }
}

RunConfig resolve_config(const json& doc_in) {
  const json doc = doc_in.is_null() ? json::object() : doc_in;
  reject_unknown(doc,
                 {"preset", "policy", "coefficient", "coefficients", "num_references",
                  "layer_coefficients", "seed", "noise_seed", "latent_size", "model_dim",
                  "num_blocks", "d", "d_v", "steps", "batch_size", "shared_noise", "output_dir",
                  "precision", "check", "sweep", "bench"},
                 "");
  RunConfig cfg;
  auto& p = cfg.pipeline;

  if (doc.contains("preset")) cfg.preset = parse_preset(get_as<std::string>(doc, "preset", ""));
  if (doc.contains("num_references"))
    cfg.num_references = get_count(doc, "num_references", "", 1);
  if (doc.contains("seed")) p.weight_seed = get_seed(doc, "seed");
  if (doc.contains("noise_seed")) p.noise_seed = get_seed(doc, "noise_seed");
  if (doc.contains("latent_size")) p.latent_size = get_count(doc, "latent_size", "", 1);
  if (doc.contains("model_dim")) p.model_dim = get_count(doc, "model_dim", "", 1);
  if (doc.contains("num_blocks")) p.num_blocks = get_count(doc, "num_blocks", "", 1);
  if (doc.contains("d")) p.key_dim = get_count(doc, "d", "", 1);
  if (doc.contains("d_v")) p.value_dim = get_count(doc, "d_v", "", 1);
  if (doc.contains("steps")) p.steps = get_count(doc, "steps", "", 1);
  if (doc.contains("batch_size")) p.batch_size = get_count(doc, "batch_size", "", 1);
  if (doc.contains("output_dir")) cfg.output_dir = get_as<std::string>(doc, "output_dir", "");
  if (doc.contains("precision")) {
    const auto name = get_as<std::string>(doc, "precision", "");
    if (name == "f32") {
      cfg.precision = oracle::Precision::F32;
    } else if (name == "f64") {
      cfg.precision = oracle::Precision::F64;
    } else {
      throw ConfigError("precision", "expected f32 or f64, got '" + name + "'");
    }
  }
  if (doc.contains("shared_noise")) {
    const json& v = doc.at("shared_noise");
    if (!v.is_array()) throw ConfigError("shared_noise", "expected an array of sample indices");
    for (const json& x : v) {
      if (!x.is_number_integer() || x.get<std::int64_t>() < 1)
        throw ConfigError("shared_noise", "expected sample indices >= 1");
      p.shared_noise.push_back(x.get<std::size_t>());
    }
  }

  // Policy: preset first, explicit keys override.
  std::string policy = cfg.preset == Preset::Blend ? "rfg_multi" : "rfg";
  double coefficient = kConsistentCoefficient;
  switch (cfg.preset) {
    case Preset::Diverse: coefficient = kDiverseCoefficient; break;
    case Preset::Temporal: coefficient = kTemporalCoefficient; break;
    default: break;
  }
  std::vector<double> coefficients(cfg.num_references, kBlendCoefficient);
  if (doc.contains("policy")) policy = get_as<std::string>(doc, "policy", "");
  if (doc.contains("coefficient")) {
    if (!doc.at("coefficient").is_number()) throw ConfigError("coefficient", "expected a number");
    coefficient = doc.at("coefficient").get<double>();
  }
  if (doc.contains("coefficients")) {
    coefficients = get_reals(doc, "coefficients", "");
    if (coefficients.empty()) throw ConfigError("coefficients", "needs at least one value");
    if (doc.contains("num_references") && coefficients.size() != cfg.num_references)
      throw ConfigError("coefficients", "length differs from num_references");
    cfg.num_references = coefficients.size();
  }
  if (policy == "plain") {
    p.policy = policy::Plain{};
  } else if (policy == "concat") {
    p.policy = policy::Concat{};
  } else if (policy == "cross_frame") {
    p.policy = policy::CrossFrame{};
  } else if (policy == "rfg") {
    p.policy = policy::Rfg{coefficient};
  } else if (policy == "rfg_multi") {
    p.policy = policy::RfgMulti{coefficients};
  } else if (policy == "rfg_rank1") {
    p.policy = policy::RfgRank1{};
  } else {
    throw ConfigError("policy", "unknown policy '" + policy +
                                    "' (expected plain, concat, cross_frame, rfg, rfg_multi or "
                                    "rfg_rank1)");
  }
  if (doc.contains("layer_coefficients")) {
    p.layer_coefficients = get_reals(doc, "layer_coefficients", "");
    if (!std::holds_alternative<policy::Rfg>(p.policy))
      throw ConfigError("layer_coefficients", "only valid with the rfg policy");
    if (p.layer_coefficients.size() != p.num_blocks)
      throw ConfigError("layer_coefficients", "needs one value per block (" +
                                                  std::to_string(p.num_blocks) + ")");
  }

  const std::size_t refs = reference_count(p.policy);
  if (refs > 0 && p.batch_size < refs + 1) {
    throw ConfigError("batch_size", "policy " + policy + " needs at least " +
                                        std::to_string(refs + 1) + " samples");
  }
  for (std::size_t i : p.shared_noise) {
    if (i >= p.batch_size) throw ConfigError("shared_noise", "index outside the batch");
  }

  if (doc.contains("check")) {
    const json& c = doc.at("check");
    reject_unknown(c, {"trials", "grid", "threshold", "adversarial", "inject_fault", "report"},
                   "check");
    if (c.contains("trials")) cfg.check.trials_per_cell = get_count(c, "trials", "check", 1);
    if (c.contains("grid")) cfg.check.grid = grid_from_json(c.at("grid"), "check.grid");
    if (c.contains("threshold")) {
      const double t = get_as<double>(c, "threshold", "check");
      if (!(t > 0.0)) throw ConfigError("check.threshold", "must be positive");
      cfg.check.threshold = t;
    }
    if (c.contains("adversarial")) cfg.check.adversarial = get_as<bool>(c, "adversarial", "check");
    if (c.contains("inject_fault"))
      cfg.check.inject_fault = get_as<bool>(c, "inject_fault", "check");
    if (c.contains("report")) cfg.check.report_path = get_as<std::string>(c, "report", "check");
  }
  if (doc.contains("sweep")) {
    const json& s = doc.at("sweep");
    reject_unknown(s, {"coefficients"}, "sweep");
    if (s.contains("coefficients")) {
      cfg.sweep.coefficients = get_reals(s, "coefficients", "sweep");
      if (cfg.sweep.coefficients.empty())
        throw ConfigError("sweep.coefficients", "needs at least one value");
    }
  }
  if (doc.contains("bench")) {
    const json& b = doc.at("bench");
    reject_unknown(b, {"grid", "iterations", "warmup"}, "bench");
    if (b.contains("grid")) cfg.bench.grid = bench_grid_from_json(b.at("grid"), "bench.grid");
    if (b.contains("iterations")) cfg.bench.iterations = get_count(b, "iterations", "bench", 1);
    if (b.contains("warmup")) cfg.bench.warmup = get_count(b, "warmup", "bench", 0);
  }

  try {
    pipeline::validate(p);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("", e.what());
  }
  return cfg;
}

json to_json(const RunConfig& cfg) {
  const auto& p = cfg.pipeline;
  json doc;
  doc["preset"] = preset_name(cfg.preset);
  doc["policy"] = policy_name(p.policy);
  if (const auto* r = std::get_if<policy::Rfg>(&p.policy)) doc["coefficient"] = r->coefficient;
  if (const auto* m = std::get_if<policy::RfgMulti>(&p.policy)) {
    doc["coefficients"] = m->coefficients;
    doc["num_references"] = m->coefficients.size();
  }
  if (!p.layer_coefficients.empty()) doc["layer_coefficients"] = p.layer_coefficients;
  doc["seed"] = p.weight_seed;
  doc["noise_seed"] = p.noise_seed;
  doc["latent_size"] = p.latent_size;
  doc["model_dim"] = p.model_dim;
  doc["num_blocks"] = p.num_blocks;
  doc["d"] = p.key_dim;
  doc["d_v"] = p.value_dim;
  doc["steps"] = p.steps;
  doc["batch_size"] = p.batch_size;
  doc["shared_noise"] = p.shared_noise;
  doc["output_dir"] = cfg.output_dir;
  doc["precision"] = oracle::precision_name(cfg.precision);
  json check;
  check["trials"] = cfg.check.trials_per_cell;
  check["grid"] = grid_to_string(cfg.check.grid);
  if (cfg.check.threshold) check["threshold"] = *cfg.check.threshold;
  check["adversarial"] = cfg.check.adversarial;
  check["inject_fault"] = cfg.check.inject_fault;
  if (!cfg.check.report_path.empty()) check["report"] = cfg.check.report_path;
  doc["check"] = check;
  doc["sweep"] = {{"coefficients", cfg.sweep.coefficients}};
  json grid = json::array();
  for (const auto& c : cfg.bench.grid)
    grid.push_back({{"L", c.seq_len}, {"d", c.key_dim}, {"d_v", c.value_dim}, {"B", c.batch}});
  doc["bench"] = {{"grid", grid}, {"iterations", cfg.bench.iterations},
                  {"warmup", cfg.bench.warmup}};
  return doc;
}

}  // namespace refdrop::cli
