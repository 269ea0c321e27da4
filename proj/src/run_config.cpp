#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "unida/error.hpp"
#include "unida/rng.hpp"
#include "unida/runner.hpp"

namespace unida {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

void require_object(const json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
}

void check_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  require_object(obj, where);
  for (const auto& [key, _] : obj.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
      throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

double as_double(const json& j, const std::string& where) {
  if (!j.is_number()) throw ConfigError(where + " must be a number");
  return j.get<double>();
}

std::uint64_t as_uint(const json& j, const std::string& where) {
  if (!j.is_number_unsigned()) throw ConfigError(where + " must be a non-negative integer");
  return j.get<std::uint64_t>();
}

std::size_t as_size(const json& j, const std::string& where) { return static_cast<std::size_t>(as_uint(j, where)); }

std::size_t as_positive(const json& j, const std::string& where) {
  const std::size_t v = as_size(j, where);
  if (v == 0) throw ConfigError(where + " must be positive");
  return v;
}

std::string as_string(const json& j, const std::string& where) {
  if (!j.is_string()) throw ConfigError(where + " must be a string");
  return j.get<std::string>();
}

bool as_bool(const json& j, const std::string& where) {
  if (!j.is_boolean()) throw ConfigError(where + " must be true or false");
  return j.get<bool>();
}

template <std::size_t N>
std::array<std::size_t, N> as_size_array(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != N) throw ConfigError(where + " must be a list of " + std::to_string(N) + " integers");
  std::array<std::size_t, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = as_size(j[i], where);
  return out;
}

SyntheticSpec parse_synthetic(const json& j) {
  const std::string where = "dataset.synthetic";
  check_keys(j,
             {"n_domains", "n_classes", "samples_per_class", "channels", "length", "noise", "amplitude_shift",
              "offset_shift", "warp_shift", "phase_jitter", "seed"},
             where);
  SyntheticSpec s;
  for (const auto& [k, v] : j.items()) {
    const std::string w = where + "." + k;
    if (k == "n_domains") s.n_domains = as_size(v, w);
    else if (k == "n_classes") s.n_classes = as_size(v, w);
    else if (k == "samples_per_class") s.samples_per_class = as_size(v, w);
    else if (k == "channels") s.channels = as_size(v, w);
    else if (k == "length") s.length = as_size(v, w);
    else if (k == "noise") s.noise = as_double(v, w);
    else if (k == "amplitude_shift") s.amplitude_shift = as_double(v, w);
    else if (k == "offset_shift") s.offset_shift = as_double(v, w);
    else if (k == "warp_shift") s.warp_shift = as_double(v, w);
    else if (k == "phase_jitter") s.phase_jitter = as_double(v, w);
    else if (k == "seed") s.seed = as_uint(v, w);
  }
  s.validate();
  return s;
}

json synthetic_to_json(const SyntheticSpec& s) {
  return {{"n_domains", s.n_domains},       {"n_classes", s.n_classes},
          {"samples_per_class", s.samples_per_class}, {"channels", s.channels},
          {"length", s.length},             {"noise", s.noise},
          {"amplitude_shift", s.amplitude_shift},     {"offset_shift", s.offset_shift},
          {"warp_shift", s.warp_shift},     {"phase_jitter", s.phase_jitter},
          {"seed", s.seed}};
}

const std::initializer_list<const char*> kBackboneOptionKeys = {
    "feature_dim", "cnn_widths", "cnn_kernels", "dropout", "n_fourier_modes", "fourier_width",
    "fourier_features", "n_segments", "s3_layers", "s3_temperature", "patch_size", "embed_dim",
    "tslanet_layers", "icb_hidden", "mask_temperature"};

void apply_backbone_option(BackboneConfig& b, const std::string& k, const json& v, const std::string& where) {
  const std::string w = where + "." + k;
  if (k == "feature_dim") b.feature_dim = as_size(v, w);
  else if (k == "cnn_widths") b.cnn_widths = as_size_array<2>(v, w);
  else if (k == "cnn_kernels") b.cnn_kernels = as_size_array<3>(v, w);
  else if (k == "dropout") b.dropout = as_double(v, w);
  else if (k == "n_fourier_modes") b.n_fourier_modes = as_size(v, w);
  else if (k == "fourier_width") b.fourier_width = as_size(v, w);
  else if (k == "fourier_features") b.fourier_features = as_size(v, w);
  else if (k == "n_segments") b.n_segments = as_size(v, w);
  else if (k == "s3_layers") b.s3_layers = as_size(v, w);
  else if (k == "s3_temperature") b.s3_temperature = as_double(v, w);
  else if (k == "patch_size") b.patch_size = as_size(v, w);
  else if (k == "embed_dim") b.embed_dim = as_size(v, w);
  else if (k == "tslanet_layers") b.tslanet_layers = as_size(v, w);
  else if (k == "icb_hidden") b.icb_hidden = as_size(v, w);
  else if (k == "mask_temperature") b.mask_temperature = as_double(v, w);
  else throw ConfigError("unknown key '" + k + "' in " + where);
}

json backbone_to_json(const BackboneConfig& b, const std::string& name) {
  return {{"name", name},
          {"kind", std::string(to_string(b.kind))},
          {"feature_dim", b.feature_dim},
          {"cnn_widths", b.cnn_widths},
          {"cnn_kernels", b.cnn_kernels},
          {"dropout", b.dropout},
          {"n_fourier_modes", b.n_fourier_modes},
          {"fourier_width", b.fourier_width},
          {"fourier_features", b.fourier_features},
          {"n_segments", b.n_segments},
          {"s3_layers", b.s3_layers},
          {"s3_temperature", b.s3_temperature},
          {"patch_size", b.patch_size},
          {"embed_dim", b.embed_dim},
          {"tslanet_layers", b.tslanet_layers},
          {"icb_hidden", b.icb_hidden},
          {"mask_temperature", b.mask_temperature}};
}

Hyperparams parse_hyperparams(const json& j, const std::string& where) {
  require_object(j, where);
  Hyperparams hp;
  for (const auto& [k, v] : j.items()) hp[k] = as_double(v, where + "." + k);
  return hp;
}

// Routes the values through the same code path as a trial so that unknown
// names fail at load time rather than mid-run.
void check_hyperparam_names(const Hyperparams& hp, MethodKind kind) {
  MethodConfig m;
  m.kind = kind;
  TrainConfig t;
  apply_hyperparams(hp, m, t);
}

ParamDomain parse_domain(const std::string& name, const json& j, const std::string& where) {
  require_object(j, where);
  if (j.contains("choices")) {
    check_keys(j, {"choices"}, where);
    const json& c = j.at("choices");
    if (!c.is_array()) throw ConfigError(where + ".choices must be a list");
    std::vector<double> choices;
    for (const auto& v : c) choices.push_back(as_double(v, where + ".choices"));
    return ParamDomain::categorical(name, std::move(choices));
  }
  check_keys(j, {"min", "max", "log"}, where);
  if (!j.contains("min") || !j.contains("max")) throw ConfigError(where + " needs min and max, or choices");
  const bool log = j.contains("log") && as_bool(j.at("log"), where + ".log");
  return ParamDomain::continuous(name, as_double(j.at("min"), where + ".min"), as_double(j.at("max"), where + ".max"),
                                 log);
}

json domain_to_json(const ParamDomain& d) {
  if (d.kind == ParamDomain::Kind::Categorical) return {{"choices", d.choices}};
  return {{"min", d.lo}, {"max", d.hi}, {"log", d.log_scale}};
}

std::vector<ScenarioRequest> parse_scenarios(const json& j, const std::string& where) {
  if (!j.is_array()) throw ConfigError(where + " must be a list");
  std::vector<ScenarioRequest> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string w = where + "[" + std::to_string(i) + "]";
    check_keys(j[i], {"source", "target", "removed_source", "removed_target"}, w);
    if (!j[i].contains("source") || !j[i].contains("target")) throw ConfigError(w + " needs source and target");
    ScenarioRequest r;
    r.source_id = as_string(j[i].at("source"), w + ".source");
    r.target_id = as_string(j[i].at("target"), w + ".target");
    if (j[i].contains("removed_source"))
      r.removed_source_class = static_cast<int>(as_size(j[i].at("removed_source"), w + ".removed_source"));
    if (j[i].contains("removed_target"))
      r.removed_target_class = static_cast<int>(as_size(j[i].at("removed_target"), w + ".removed_target"));
    out.push_back(std::move(r));
  }
  return out;
}

json scenarios_to_json(const std::vector<ScenarioRequest>& list) {
  json out = json::array();
  for (const auto& r : list) {
    json e = {{"source", r.source_id}, {"target", r.target_id}};
    if (r.removed_source_class) e["removed_source"] = *r.removed_source_class;
    if (r.removed_target_class) e["removed_target"] = *r.removed_target_class;
    out.push_back(std::move(e));
  }
  return out;
}

void parse_backbone_entry(const json& entry, const json& shared, RunConfig& cfg, std::size_t index) {
  const std::string where = "backbones[" + std::to_string(index) + "]";
  BackboneConfig b;
  std::string name;
  if (entry.is_string()) {
    b.kind = parse_backbone_kind(entry.get<std::string>());
  } else if (entry.is_object()) {
    if (!entry.contains("kind")) throw ConfigError(where + " needs a kind");
    b.kind = parse_backbone_kind(as_string(entry.at("kind"), where + ".kind"));
    if (entry.contains("name")) name = as_string(entry.at("name"), where + ".name");
  } else {
    throw ConfigError(where + " must be a name or an object");
  }
  for (const auto& [k, v] : shared.items()) apply_backbone_option(b, k, v, "backbone_options");
  if (entry.is_object())
    for (const auto& [k, v] : entry.items())
      if (k != "kind" && k != "name") apply_backbone_option(b, k, v, where);
  if (name.empty()) name = std::string(to_string(b.kind));
  cfg.backbones.push_back(b);
  cfg.backbone_names.push_back(name);
}

}  // namespace

Hyperparams RunConfig::hyperparams_for(MethodKind kind) const {
  Hyperparams hp = hyperparams;
  if (auto it = method_hyperparams.find(kind); it != method_hyperparams.end())
    for (const auto& [k, v] : it->second) hp[k] = v;
  return hp;
}

std::string RunConfig::canonical() const {
  json j;
  j["name"] = name;
  if (synthetic) j["dataset"] = {{"synthetic", synthetic_to_json(*synthetic)}};
  else j["dataset"] = {{"path", dataset_path ? dataset_path->generic_string() : std::string()}};
  j["methods"] = json::array();
  for (MethodKind m : methods) j["methods"].push_back(std::string(to_string(m)));
  j["backbones"] = json::array();
  for (std::size_t i = 0; i < backbones.size(); ++i) j["backbones"].push_back(backbone_to_json(backbones[i], backbone_names[i]));
  j["training"] = {{"epochs", train.epochs}, {"batch_size", train.batch_size}, {"split_ratio", train.split_ratio}};
  j["uan_score"] = std::string(to_string(uan_score));
  j["hyperparams"] = hyperparams;
  j["method_hyperparams"] = json::object();
  for (const auto& [k, hp] : method_hyperparams) j["method_hyperparams"][std::string(to_string(k))] = hp;
  j["search_space"] = json::object();
  for (const auto& d : space.params) j["search_space"][d.name] = domain_to_json(d);
  j["selection"] = {{"n_configs", n_configs},
                    {"n_val", n_val},
                    {"n_eval", n_eval},
                    {"seeds", seeds},
                    {"val_scenarios", scenarios_to_json(val_scenarios)},
                    {"eval_scenarios", scenarios_to_json(eval_scenarios)}};
  j["seed"] = seed;
  return j.dump();
}

std::string RunConfig::run_id() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(canonical())));
  return buf;
}

RunConfig parse_run_config(const std::string& text, const fs::path& base_dir) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("configuration is not valid JSON: ") + e.what());
  }
  check_keys(root,
             {"name", "dataset", "method", "methods", "backbone", "backbones", "backbone_options", "training",
              "uan_score", "hyperparams", "method_hyperparams", "search_space", "selection", "seed", "output",
              "jobs"},
             "configuration");
  RunConfig cfg;
  if (root.contains("name")) cfg.name = as_string(root.at("name"), "name");

  if (!root.contains("dataset")) throw ConfigError("configuration needs a dataset");
  const json& ds = root.at("dataset");
  check_keys(ds, {"path", "synthetic"}, "dataset");
  if (ds.contains("path") == ds.contains("synthetic")) throw ConfigError("dataset needs exactly one of path or synthetic");
  if (ds.contains("synthetic")) {
    cfg.synthetic = parse_synthetic(ds.at("synthetic"));
  } else {
    fs::path p = as_string(ds.at("path"), "dataset.path");
    if (!p.empty() && p.is_relative() && !base_dir.empty()) p = base_dir / p;
    cfg.dataset_path = p.lexically_normal();
  }

  if (root.contains("method") == root.contains("methods")) throw ConfigError("configuration needs exactly one of method or methods");
  if (root.contains("method")) {
    cfg.methods.push_back(parse_method_kind(as_string(root.at("method"), "method")));
  } else {
    const json& m = root.at("methods");
    if (m.is_string() && m.get<std::string>() == "all") {
      cfg.methods = all_method_kinds();
    } else {
      if (!m.is_array() || m.empty()) throw ConfigError("methods must be a non-empty list or \"all\"");
      for (const auto& e : m) cfg.methods.push_back(parse_method_kind(as_string(e, "methods[]")));
    }
  }
  if (std::set<MethodKind>(cfg.methods.begin(), cfg.methods.end()).size() != cfg.methods.size())
    throw ConfigError("methods must not repeat");

  const json shared = root.contains("backbone_options") ? root.at("backbone_options") : json::object();
  check_keys(shared, kBackboneOptionKeys, "backbone_options");
  if (root.contains("backbone") == root.contains("backbones"))
    throw ConfigError("configuration needs exactly one of backbone or backbones");
  if (root.contains("backbone")) {
    parse_backbone_entry(root.at("backbone"), shared, cfg, 0);
  } else {
    const json& b = root.at("backbones");
    if (!b.is_array() || b.empty()) throw ConfigError("backbones must be a non-empty list");
    for (std::size_t i = 0; i < b.size(); ++i) parse_backbone_entry(b[i], shared, cfg, i);
  }
  if (std::set<std::string>(cfg.backbone_names.begin(), cfg.backbone_names.end()).size() != cfg.backbone_names.size())
    throw ConfigError("backbone names must be unique; add a \"name\" to repeated kinds");

  if (root.contains("training")) {
    const json& t = root.at("training");
    check_keys(t, {"epochs", "batch_size", "split_ratio"}, "training");
    if (t.contains("epochs")) cfg.train.epochs = as_positive(t.at("epochs"), "training.epochs");
    if (t.contains("batch_size")) cfg.train.batch_size = as_positive(t.at("batch_size"), "training.batch_size");
    if (t.contains("split_ratio")) cfg.train.split_ratio = as_double(t.at("split_ratio"), "training.split_ratio");
    if (!(cfg.train.split_ratio > 0.0 && cfg.train.split_ratio < 1.0))
      throw ConfigError("training.split_ratio must lie in (0, 1)");
  }
  if (root.contains("uan_score")) cfg.uan_score = parse_uan_score(as_string(root.at("uan_score"), "uan_score"));

  if (root.contains("hyperparams")) cfg.hyperparams = parse_hyperparams(root.at("hyperparams"), "hyperparams");
  if (root.contains("method_hyperparams")) {
    const json& mh = root.at("method_hyperparams");
    require_object(mh, "method_hyperparams");
    for (const auto& [k, v] : mh.items()) cfg.method_hyperparams[parse_method_kind(k)] = parse_hyperparams(v, "method_hyperparams." + k);
  }
  if (root.contains("search_space")) {
    const json& sp = root.at("search_space");
    require_object(sp, "search_space");
    for (const auto& [k, v] : sp.items()) cfg.space.params.push_back(parse_domain(k, v, "search_space." + k));
    cfg.space.validate();
  }
  for (MethodKind kind : cfg.methods) {
    check_hyperparam_names(cfg.hyperparams_for(kind), kind);
    Hyperparams probe;
    for (const auto& d : cfg.space.params)
      probe[d.name] = d.kind == ParamDomain::Kind::Categorical ? d.choices.front() : d.lo;
    check_hyperparam_names(probe, kind);
  }

  if (root.contains("selection")) {
    const json& s = root.at("selection");
    check_keys(s, {"n_configs", "n_val", "n_eval", "seeds", "val_scenarios", "eval_scenarios"}, "selection");
    if (s.contains("n_configs")) cfg.n_configs = as_positive(s.at("n_configs"), "selection.n_configs");
    if (s.contains("n_val")) cfg.n_val = as_size(s.at("n_val"), "selection.n_val");
    if (s.contains("n_eval")) cfg.n_eval = as_positive(s.at("n_eval"), "selection.n_eval");
    if (s.contains("seeds")) {
      const json& sd = s.at("seeds");
      if (!sd.is_array() || sd.empty()) throw ConfigError("selection.seeds must be a non-empty list");
      cfg.seeds.clear();
      for (const auto& v : sd) cfg.seeds.push_back(as_uint(v, "selection.seeds[]"));
      if (std::set<std::uint64_t>(cfg.seeds.begin(), cfg.seeds.end()).size() != cfg.seeds.size())
        throw ConfigError("selection.seeds must not repeat");
    }
    if (s.contains("val_scenarios")) cfg.val_scenarios = parse_scenarios(s.at("val_scenarios"), "selection.val_scenarios");
    if (s.contains("eval_scenarios"))
      cfg.eval_scenarios = parse_scenarios(s.at("eval_scenarios"), "selection.eval_scenarios");
    if (!cfg.val_scenarios.empty() && cfg.eval_scenarios.empty())
      throw ConfigError("selection.val_scenarios needs selection.eval_scenarios as well");
  }
  if (root.contains("seed")) cfg.seed = as_uint(root.at("seed"), "seed");
  if (root.contains("output")) cfg.out_dir = as_string(root.at("output"), "output");
  if (root.contains("jobs")) cfg.jobs = as_positive(root.at("jobs"), "jobs");
  for (auto& b : cfg.backbones) {
    // Data-dependent sizes are filled per trial; check the rest now.
    BackboneConfig probe = b;
    probe.in_channels = 1;
    probe.seq_len = std::max<std::size_t>(probe.seq_len, cfg.synthetic ? cfg.synthetic->length : probe.seq_len);
    probe.validate();
  }
  return cfg;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read configuration file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str(), path.parent_path());
}

Dataset load_config_dataset(const RunConfig& config) {
  if (config.synthetic) return generate_synthetic(*config.synthetic);
  return load_dataset(resolve_data_dir(config.dataset_path ? config.dataset_path->string() : std::string()));
}

std::string to_json_line(const LoggedTrial& t) {
  const auto& r = t.record;
  json j = {{"run_id", t.run_id},
            {"command", t.command},
            {"phase", t.phase},
            {"method", t.method},
            {"backbone", t.backbone},
            {"method_index", t.method_index},
            {"backbone_index", t.backbone_index},
            {"config_index", t.config_index},
            {"scenario_index", t.scenario_index},
            {"seed_index", t.seed_index},
            {"scenario",
             {{"name", t.scenario_name},
              {"source", r.scenario.source_id},
              {"target", r.scenario.target_id},
              {"removed_source", r.scenario.removed_source_class},
              {"removed_target", r.scenario.removed_target_class}}},
            {"seed", r.seed},
            {"hyperparams", r.hyperparams},
            {"h_score", r.report.h_score},
            {"a_common", r.report.a_common},
            {"a_unknown", r.report.a_unknown},
            {"n_common", r.report.n_common},
            {"n_unknown", r.report.n_unknown},
            {"wall_time", r.wall_time},
            {"failed", r.failed},
            {"failure", r.failure}};
  return j.dump();
}

LoggedTrial parse_json_line(const std::string& line, std::size_t line_number) {
  const std::string where = "trial log line " + std::to_string(line_number);
  try {
    const json j = json::parse(line);
    LoggedTrial t;
    t.run_id = j.at("run_id").get<std::string>();
    t.command = j.at("command").get<std::string>();
    t.phase = j.at("phase").get<std::string>();
    t.method = j.at("method").get<std::string>();
    t.backbone = j.at("backbone").get<std::string>();
    t.method_index = j.at("method_index").get<std::size_t>();
    t.backbone_index = j.at("backbone_index").get<std::size_t>();
    t.config_index = j.at("config_index").get<std::size_t>();
    t.scenario_index = j.at("scenario_index").get<std::size_t>();
    t.seed_index = j.at("seed_index").get<std::size_t>();
    const json& sc = j.at("scenario");
    t.scenario_name = sc.at("name").get<std::string>();
    auto& r = t.record;
    r.scenario.source_id = sc.at("source").get<std::string>();
    r.scenario.target_id = sc.at("target").get<std::string>();
    r.scenario.removed_source_class = sc.at("removed_source").get<int>();
    r.scenario.removed_target_class = sc.at("removed_target").get<int>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.hyperparams = j.at("hyperparams").get<Hyperparams>();
    r.report.h_score = j.at("h_score").get<double>();
    r.report.a_common = j.at("a_common").get<double>();
    r.report.a_unknown = j.at("a_unknown").get<double>();
    r.report.n_common = j.at("n_common").get<std::size_t>();
    r.report.n_unknown = j.at("n_unknown").get<std::size_t>();
    r.wall_time = j.at("wall_time").get<double>();
    r.failed = j.at("failed").get<bool>();
    r.failure = j.at("failure").get<std::string>();
    return t;
  } catch (const json::exception& e) {
    throw FormatError(where + ": " + e.what());
  }
}

}  // namespace unida
