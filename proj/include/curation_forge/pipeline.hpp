#pragma once

// Stage registry and pipeline runner. A stage kind declares its path
// parameters (inputs that must exist, outputs it writes) and typed scalar
// parameters; everything is checked before the first stage runs. Stages are
// ordered so that every produced file is written before it is read.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "curation_forge/error.hpp"
#include "curation_forge/manifest.hpp"
#include "json.hpp"
#include "toml.hpp"

namespace curation_forge {

namespace fs = std::filesystem;

enum class ParamType { string, integer, number, boolean, integer_list, number_list, string_list, integer_or_string };

struct ParamSpec {
  std::string key;
  ParamType type = ParamType::string;
  bool required = false;
  nlohmann::json fallback = nullptr;  // merged in when absent and not required
};

enum class PathRole { input, output };

struct PathSpec {
  std::string key;
  PathRole role = PathRole::input;
  bool required = true;
  bool directory = false;
};

class StageContext {
 public:
  StageContext(nlohmann::json params, std::map<std::string, fs::path> paths, std::optional<std::uint64_t> seed)
      : params_(std::move(params)), paths_(std::move(paths)), seed_(seed) {}

  bool has_path(const std::string& key) const { return paths_.count(key) > 0; }
  std::string path(const std::string& key) const {
    const auto it = paths_.find(key);
    require(it != paths_.end(), ErrorCode::precondition, "missing path parameter '" + key + "'");
    return it->second.string();
  }

  bool has(const std::string& key) const { return params_.contains(key) && !params_[key].is_null(); }
  template <typename T>
  T get(const std::string& key) const {
    require(has(key), ErrorCode::precondition, "missing parameter '" + key + "'");
    return params_.at(key).get<T>();
  }
  const nlohmann::json& params() const { return params_; }

  std::uint64_t seed() const {
    require(seed_.has_value(), ErrorCode::precondition, "stage needs an explicit seed");
    return *seed_;
  }

  void warn(std::string w) { warnings.push_back(std::move(w)); }
  std::vector<std::string> warnings;

 private:
  nlohmann::json params_;
  std::map<std::string, fs::path> paths_;
  std::optional<std::uint64_t> seed_;
};

struct StageKind {
  std::string help;
  std::vector<PathSpec> paths;
  std::vector<ParamSpec> params;
  bool randomized = false;
  std::function<nlohmann::json(StageContext&)> run;  // returns the summary
  // Cross-parameter checks run during validation; sees scalar parameters
  // (defaults merged) and the path parameters that were given.
  std::function<void(const nlohmann::json&)> validate;
};

using StageRegistry = std::map<std::string, StageKind>;

// Raised when a stage fails after validation passed.
class StageFailure : public Error {
 public:
  StageFailure(std::string stage, const Error& cause)
      : Error(cause.code(), "stage '" + stage + "' failed: " + cause.what()), stage_(std::move(stage)) {}
  StageFailure(std::string stage, const std::string& what)
      : Error(ErrorCode::io, "stage '" + stage + "' failed: " + what), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

// ---------------------------------------------------------------------------
// Configuration

struct StageSpec {
  std::string name;
  std::string kind;
  nlohmann::json params = nlohmann::json::object();  // everything except name/kind/seed
  std::optional<std::uint64_t> seed;
};

struct PipelineConfig {
  fs::path base_dir = ".";  // relative input paths
  std::optional<std::uint64_t> seed;
  std::string manifest_dir = "manifests";  // under the work directory
  std::vector<StageSpec> stages;
};

namespace detail {

inline std::uint64_t parse_seed(const nlohmann::json& j, const std::string& where) {
  if (j.is_number_unsigned()) return j.get<std::uint64_t>();
  if (j.is_number_integer() && j.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(j.get<std::int64_t>());
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    std::size_t used = 0;
    try {
      if (!s.empty() && s[0] != '-') {
        const auto v = std::stoull(s, &used, 10);
        if (used == s.size()) return v;
      }
    } catch (const std::exception&) {
    }
  }
  fail(ErrorCode::invalid_argument, where + ": seed must be a non-negative 64-bit integer");
}

inline nlohmann::json toml_to_json(const toml::node& node, const std::string& where) {
  if (const auto* t = node.as_table()) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : *t) j[std::string(k.str())] = toml_to_json(v, where);
    return j;
  }
  if (const auto* a = node.as_array()) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& v : *a) j.push_back(toml_to_json(v, where));
    return j;
  }
  if (const auto* s = node.as_string()) return s->get();
  if (const auto* i = node.as_integer()) return i->get();
  if (const auto* f = node.as_floating_point()) return f->get();
  if (const auto* b = node.as_boolean()) return b->get();
  fail(ErrorCode::invalid_argument, where + ": dates and times are not valid parameter values");
}

}  // namespace detail

inline PipelineConfig parse_pipeline(std::string_view toml_text, const fs::path& base_dir,
                                     const std::string& source = "config") {
  toml::table tbl;
  try {
    tbl = toml::parse(toml_text, source);
  } catch (const toml::parse_error& e) {
    const auto line = static_cast<std::size_t>(e.source().begin.line);
    throw ParseError(line, std::string(e.description()));
  }
  const auto root = detail::toml_to_json(tbl, source);
  PipelineConfig cfg;
  cfg.base_dir = base_dir;
  for (const auto& [key, value] : root.items()) {
    if (key == "seed") {
      cfg.seed = detail::parse_seed(value, source);
    } else if (key == "manifest_dir") {
      require(value.is_string(), ErrorCode::invalid_argument, source + ": manifest_dir must be a string");
      cfg.manifest_dir = value.get<std::string>();
    } else if (key != "stages") {
      fail(ErrorCode::invalid_argument, source + ": unknown top-level key '" + key + "'");
    }
  }
  if (!root.contains("stages")) return cfg;
  require(root["stages"].is_array(), ErrorCode::invalid_argument, source + ": 'stages' must be an array of tables");
  std::set<std::string> names;
  for (const auto& st : root["stages"]) {
    require(st.is_object(), ErrorCode::invalid_argument, source + ": each stage must be a table");
    StageSpec spec;
    require(st.contains("kind") && st["kind"].is_string(), ErrorCode::invalid_argument,
            source + ": every stage needs a string 'kind'");
    spec.kind = st["kind"].get<std::string>();
    spec.name = st.value("name", spec.kind);
    require(names.insert(spec.name).second, ErrorCode::invalid_argument,
            source + ": duplicate stage name '" + spec.name + "'");
    for (const auto& [key, value] : st.items()) {
      if (key == "kind" || key == "name") continue;
      if (key == "seed") {
        spec.seed = detail::parse_seed(value, source + ": stage " + spec.name);
        continue;
      }
      spec.params[key] = value;
    }
    cfg.stages.push_back(std::move(spec));
  }
  return cfg;
}

inline PipelineConfig load_pipeline(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::io, "cannot open pipeline config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_pipeline(ss.str(), path.has_parent_path() ? path.parent_path() : fs::path("."), path.string());
}

// ---------------------------------------------------------------------------
// Validation

struct ResolvedStage {
  const StageSpec* spec = nullptr;
  const StageKind* kind = nullptr;
  nlohmann::json params;  // scalar parameters with defaults merged
  std::map<std::string, fs::path> paths;
  std::vector<std::string> input_keys, output_keys;
  std::optional<std::uint64_t> seed;
};

namespace detail {

inline bool type_ok(const nlohmann::json& v, ParamType t) {
  auto all = [&](auto pred) {
    if (!v.is_array()) return false;
    for (const auto& x : v)
      if (!pred(x)) return false;
    return true;
  };
  switch (t) {
    case ParamType::string: return v.is_string();
    case ParamType::integer: return v.is_number_integer();
    case ParamType::number: return v.is_number();
    case ParamType::boolean: return v.is_boolean();
    case ParamType::integer_list: return all([](const nlohmann::json& x) { return x.is_number_integer(); });
    case ParamType::number_list: return all([](const nlohmann::json& x) { return x.is_number(); });
    case ParamType::string_list: return all([](const nlohmann::json& x) { return x.is_string(); });
    case ParamType::integer_or_string: return v.is_number_integer() || v.is_string();
  }
  return false;
}

inline const char* type_name(ParamType t) {
  switch (t) {
    case ParamType::string: return "a string";
    case ParamType::integer: return "an integer";
    case ParamType::number: return "a number";
    case ParamType::boolean: return "a boolean";
    case ParamType::integer_list: return "a list of integers";
    case ParamType::number_list: return "a list of numbers";
    case ParamType::string_list: return "a list of strings";
    case ParamType::integer_or_string: return "an integer or a string";
  }
  return "?";
}

}  // namespace detail

// Checks one stage's parameters against its kind. Paths are left as given.
inline ResolvedStage check_stage(const StageSpec& spec, const StageRegistry& registry,
                                 std::optional<std::uint64_t> global_seed) {
  const std::string where = "stage '" + spec.name + "'";
  const auto it = registry.find(spec.kind);
  require(it != registry.end(), ErrorCode::invalid_argument, where + ": unknown kind '" + spec.kind + "'");
  const StageKind& kind = it->second;
  ResolvedStage rs;
  rs.spec = &spec;
  rs.kind = &kind;
  rs.params = nlohmann::json::object();
  std::set<std::string> known;
  for (const auto& p : kind.paths) {
    known.insert(p.key);
    const bool present = spec.params.contains(p.key) && !spec.params[p.key].is_null();
    require(present || !p.required, ErrorCode::invalid_argument, where + ": missing required path '" + p.key + "'");
    if (!present) continue;
    require(spec.params[p.key].is_string() && !spec.params[p.key].get<std::string>().empty(),
            ErrorCode::invalid_argument, where + ": path '" + p.key + "' must be a non-empty string");
    (p.role == PathRole::input ? rs.input_keys : rs.output_keys).push_back(p.key);
  }
  for (const auto& p : kind.params) {
    known.insert(p.key);
    const bool present = spec.params.contains(p.key) && !spec.params[p.key].is_null();
    if (!present) {
      require(!p.required, ErrorCode::invalid_argument, where + ": missing required parameter '" + p.key + "'");
      rs.params[p.key] = p.fallback;
      continue;
    }
    require(detail::type_ok(spec.params[p.key], p.type), ErrorCode::invalid_argument,
            where + ": parameter '" + p.key + "' must be " + detail::type_name(p.type));
    rs.params[p.key] = spec.params[p.key];
  }
  for (const auto& [key, value] : spec.params.items())
    require(known.count(key) > 0, ErrorCode::invalid_argument, where + ": unknown parameter '" + key + "'");
  if (kind.validate) {
    auto view = rs.params;
    for (const auto& key : rs.input_keys) view[key] = spec.params[key];
    for (const auto& key : rs.output_keys) view[key] = spec.params[key];
    try {
      kind.validate(view);
    } catch (const Error& e) {
      throw Error(ErrorCode::invalid_argument, where + ": " + e.what());
    }
  }
  rs.seed = spec.seed ? spec.seed : global_seed;
  require(!kind.randomized || rs.seed.has_value(), ErrorCode::invalid_argument,
          where + ": randomized stage needs an explicit seed");
  return rs;
}

inline std::string path_param(const ResolvedStage& rs, const std::string& key) {
  return rs.spec->params.at(key).get<std::string>();
}

// Validates every stage, orders them by data dependencies (config order
// among independent stages) and resolves paths. Inputs produced by an earlier
// stage live under `work_dir`; all other inputs resolve against the config
// directory and must already exist.
inline std::vector<ResolvedStage> preflight(const PipelineConfig& cfg, const StageRegistry& registry,
                                            const fs::path& work_dir) {
  std::vector<ResolvedStage> stages;
  for (const auto& spec : cfg.stages) stages.push_back(check_stage(spec, registry, cfg.seed));

  std::map<std::string, std::size_t> producer;
  for (std::size_t i = 0; i < stages.size(); ++i)
    for (const auto& key : stages[i].output_keys) {
      const auto p = fs::path(path_param(stages[i], key)).lexically_normal().generic_string();
      const auto [it, fresh] = producer.emplace(p, i);
      require(fresh, ErrorCode::invalid_argument,
              "output '" + p + "' is written by both '" + stages[it->second].spec->name + "' and '" +
                  stages[i].spec->name + "'");
    }

  const std::size_t n = stages.size();
  std::vector<std::set<std::size_t>> deps(n);
  for (std::size_t i = 0; i < n; ++i)
    for (const auto& key : stages[i].input_keys) {
      const auto p = fs::path(path_param(stages[i], key)).lexically_normal().generic_string();
      const auto it = producer.find(p);
      if (it == producer.end()) continue;
      require(it->second != i, ErrorCode::invalid_argument,
              "stage '" + stages[i].spec->name + "' reads its own output '" + p + "'");
      deps[i].insert(it->second);
    }

  std::vector<std::size_t> order;
  std::vector<char> done(n, 0);
  while (order.size() < n) {
    std::size_t pick = n;
    for (std::size_t i = 0; i < n && pick == n; ++i) {
      if (done[i]) continue;
      bool ready = true;
      for (auto d : deps[i]) ready = ready && done[d];
      if (ready) pick = i;
    }
    require(pick < n, ErrorCode::invalid_argument, "pipeline stages form a dependency cycle");
    done[pick] = 1;
    order.push_back(pick);
  }

  std::vector<ResolvedStage> out;
  std::vector<std::string> missing;
  for (auto i : order) {
    auto rs = stages[i];
    for (const auto& p : rs.kind->paths) {
      if (!rs.spec->params.contains(p.key) || rs.spec->params[p.key].is_null()) continue;
      const fs::path raw = path_param(rs, p.key);
      const auto norm = raw.lexically_normal().generic_string();
      if (p.role == PathRole::output || producer.count(norm)) {
        rs.paths[p.key] = raw.is_absolute() ? raw : work_dir / raw;
        continue;
      }
      const fs::path resolved = raw.is_absolute() ? raw : cfg.base_dir / raw;
      rs.paths[p.key] = resolved;
      const bool ok = p.directory ? fs::is_directory(resolved) : fs::is_regular_file(resolved);
      if (!ok)
        missing.push_back("stage '" + rs.spec->name + "': " + (p.directory ? "directory" : "file") + " '" +
                          resolved.string() + "' (" + p.key + ") does not exist");
    }
    out.push_back(std::move(rs));
  }
  if (!missing.empty()) {
    std::string msg = "missing inputs:";
    for (const auto& m : missing) msg += "\n  " + m;
    fail(ErrorCode::precondition, msg);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Execution

inline RunManifest run_stage(const ResolvedStage& rs) {
  const std::string& name = rs.spec->name;
  RunManifest m;
  m.stage = name;
  m.kind = rs.spec->kind;
  m.parameters = rs.params;
  for (const auto& key : rs.input_keys) m.parameters[key] = path_param(rs, key);
  for (const auto& key : rs.output_keys) m.parameters[key] = path_param(rs, key);
  m.seed = rs.kind->randomized ? rs.seed : std::nullopt;
  const auto start = std::chrono::steady_clock::now();
  try {
    for (const auto& key : rs.input_keys) m.inputs.push_back(digest(key, rs.paths.at(key)));
    for (const auto& key : rs.output_keys) {
      const auto& p = rs.paths.at(key);
      const bool dir = std::any_of(rs.kind->paths.begin(), rs.kind->paths.end(),
                                   [&](const PathSpec& s) { return s.key == key && s.directory; });
      if (dir) {
        fs::create_directories(p);
      } else if (p.has_parent_path()) {
        fs::create_directories(p.parent_path());
      }
    }
    StageContext ctx(rs.params, rs.paths, rs.seed);
    m.summary = rs.kind->run(ctx);
    m.warnings = std::move(ctx.warnings);
    for (const auto& key : rs.output_keys) {
      const auto& p = rs.paths.at(key);
      require(fs::exists(p), ErrorCode::io, "declared output '" + p.string() + "' was not written");
      m.outputs.push_back(digest(key, p));
    }
  } catch (const StageFailure&) {
    throw;
  } catch (const Error& e) {
    throw StageFailure(name, e);
  } catch (const std::exception& e) {
    throw StageFailure(name, e.what());
  }
  m.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return m;
}

struct RunOptions {
  fs::path work_dir = ".";
  bool write_manifests = true;
  std::function<void(const ResolvedStage&, std::size_t index, std::size_t total)> on_stage;
};

// Validation errors propagate as Error before anything runs; a failing stage
// raises StageFailure and halts the run.
inline std::vector<RunManifest> run_pipeline(const PipelineConfig& cfg, const StageRegistry& registry,
                                             const RunOptions& opts = {}) {
  const auto stages = preflight(cfg, registry, opts.work_dir);
  std::vector<RunManifest> manifests;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    if (opts.on_stage) opts.on_stage(stages[i], i, stages.size());
    manifests.push_back(run_stage(stages[i]));
    if (opts.write_manifests) {
      char prefix[16];
      std::snprintf(prefix, sizeof prefix, "%02zu-", i + 1);
      write_manifest(opts.work_dir / cfg.manifest_dir / (prefix + stages[i].spec->name + ".json"), manifests.back());
    }
  }
  return manifests;
}

}  // namespace curation_forge
