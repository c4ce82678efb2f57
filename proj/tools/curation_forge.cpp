// curation-forge command line. Every subcommand is a thin layer over a stage
// kind: its options are generated from the kind's parameter schema and the
// stage runs through the same validation and manifest code as `run`.
//
// Exit codes: 0 success, 2 validation error, 3 stage failure.

#include <cstdlib>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "curation_forge/manifest.hpp"
#include "curation_forge/pipeline.hpp"
#include "cv_stages.hpp"
#include "json.hpp"

namespace cf = curation_forge;
using nlohmann::json;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitStage = 3;

std::string flag_name(const std::string& key) {
  std::string s = key;
  for (auto& c : s)
    if (c == '_') c = '-';
  return "--" + s;
}

long long parse_integer(const std::string& s, const std::string& key) {
  std::size_t used = 0;
  try {
    const auto v = std::stoll(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  cf::fail(cf::ErrorCode::invalid_argument, flag_name(key) + " expects an integer, got '" + s + "'");
}

double parse_number(const std::string& s, const std::string& key) {
  std::size_t used = 0;
  try {
    const auto v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  cf::fail(cf::ErrorCode::invalid_argument, flag_name(key) + " expects a number, got '" + s + "'");
}

json convert(const std::vector<std::string>& raw, cf::ParamType t, const std::string& key) {
  using cf::ParamType;
  json out = json::array();
  switch (t) {
    case ParamType::string: return raw.at(0);
    case ParamType::integer: return parse_integer(raw.at(0), key);
    case ParamType::number: return parse_number(raw.at(0), key);
    case ParamType::boolean: {
      const auto& s = raw.at(0);
      if (s == "true" || s == "1" || s == "yes") return true;
      if (s == "false" || s == "0" || s == "no") return false;
      cf::fail(cf::ErrorCode::invalid_argument, flag_name(key) + " expects true or false, got '" + s + "'");
    }
    case ParamType::integer_list:
      for (const auto& s : raw) out.push_back(parse_integer(s, key));
      return out;
    case ParamType::number_list:
      for (const auto& s : raw) out.push_back(parse_number(s, key));
      return out;
    case ParamType::string_list:
      for (const auto& s : raw) out.push_back(s);
      return out;
    case ParamType::integer_or_string: {
      std::size_t used = 0;
      try {
        const auto v = std::stoll(raw.at(0), &used);
        if (used == raw.at(0).size()) return v;
      } catch (const std::exception&) {
      }
      return raw.at(0);
    }
  }
  return nullptr;
}

bool is_list(cf::ParamType t) {
  return t == cf::ParamType::integer_list || t == cf::ParamType::number_list || t == cf::ParamType::string_list;
}

std::string describe(const cf::ParamSpec& p) {
  std::string d;
  if (p.required) return "required";
  if (!p.fallback.is_null()) d = "default " + p.fallback.dump();
  return d;
}

// Options of one stage kind attached to a CLI11 app. Values are kept as raw
// strings and converted after parsing so that conversion errors share the
// validation exit code.
struct KindOptions {
  std::string kind_name;
  const cf::StageKind* kind = nullptr;
  std::map<std::string, std::vector<std::string>> raw;
  std::map<std::string, CLI::Option*> opts;
  std::set<std::string> exclude;  // parameters supplied another way

  void attach(CLI::App* app, const std::string& name, const cf::StageKind& k, const std::string& group = "") {
    kind_name = name;
    kind = &k;
    for (const auto& p : k.paths) {
      const auto flag = flag_name(p.key);
      if (app->get_option_no_throw(flag)) {
        opts[p.key] = app->get_option(flag);
        continue;
      }
      std::string d = p.role == cf::PathRole::input ? "input " : "output ";
      d += p.directory ? "directory" : "file";
      if (!p.required) d += " (optional)";
      auto* o = app->add_option(flag, raw[p.key], d)->expected(1);
      if (!group.empty()) o->group(group);
      opts[p.key] = o;
    }
    for (const auto& p : k.params) {
      if (exclude.count(p.key)) continue;
      const auto flag = flag_name(p.key);
      if (app->get_option_no_throw(flag)) {
        opts[p.key] = app->get_option(flag);
        continue;
      }
      auto* o = app->add_option(flag, raw[p.key], describe(p));
      if (is_list(p.type)) {
        o->expected(0, CLI::detail::expected_max_vector_size)->allow_extra_args();
      } else {
        o->expected(1);
      }
      if (!group.empty()) o->group(group);
      opts[p.key] = o;
    }
  }

  cf::StageSpec spec(std::optional<std::uint64_t> seed) const {
    cf::StageSpec s;
    s.name = kind_name;
    s.kind = kind_name;
    s.seed = seed;
    for (const auto& p : kind->paths)
      if (opts.at(p.key)->count() > 0) s.params[p.key] = opts.at(p.key)->as<std::string>();
    for (const auto& p : kind->params) {
      if (exclude.count(p.key)) continue;
      const auto* o = opts.at(p.key);
      if (o->count() == 0) continue;
      s.params[p.key] = convert(o->as<std::vector<std::string>>(), p.type, p.key);
    }
    return s;
  }

  // Options given on the command line that this kind does not know.
  std::vector<std::string> foreign(const std::vector<const KindOptions*>& others) const {
    std::vector<std::string> out;
    for (const auto* other : others)
      for (const auto& [key, o] : other->opts)
        if (o->count() > 0 && !opts.count(key)) out.push_back(flag_name(key));
    return out;
  }
};

struct Globals {
  bool json_out = false;
  std::string manifest;
  std::string seed;
};

std::optional<std::uint64_t> parse_global_seed(const Globals& g) {
  if (g.seed.empty()) return std::nullopt;
  return cf::detail::parse_seed(json(g.seed), "--seed");
}

void print_warnings(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
}

int run_single(const cf::StageSpec& spec, const cf::StageRegistry& registry, const Globals& g) {
  cf::PipelineConfig cfg;
  cfg.stages.push_back(spec);
  const auto stages = cf::preflight(cfg, registry, ".");
  const auto m = cf::run_stage(stages.front());
  if (!g.manifest.empty()) cf::write_manifest(g.manifest, m);
  print_warnings(m.warnings);
  if (g.json_out) {
    std::cout << cf::to_json(m).dump(2) << '\n';
  } else {
    std::cout << m.stage << ": " << m.summary.dump() << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  const auto registry = cf::cv_stages::all_stages();
  CLI::App app{"Curation toolkit for crowdsourced image-quality databases"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(cf::kToolVersion));
  Globals g;
  app.add_flag("--json", g.json_out, "print the run manifest as JSON on stdout");
  app.add_option("--manifest", g.manifest, "write the run manifest to this file");
  app.add_option("--seed", g.seed, "64-bit seed for randomized stages");
  auto fallthrough = [](CLI::App* sub) { sub->fallthrough(); };

  std::vector<std::unique_ptr<KindOptions>> simple;
  std::map<CLI::App*, KindOptions*> by_app;
  for (const std::string name : {"indicators", "sample-tags", "crop", "features-check", "sample-diverse", "dedup",
                                 "trim", "ratings", "mos", "fit"}) {
    const auto& kind = registry.at(name);
    auto* sub = app.add_subcommand(name, kind.help);
    fallthrough(sub);
    simple.push_back(std::make_unique<KindOptions>());
    simple.back()->attach(sub, name, kind);
    by_app[sub] = simple.back().get();
  }

  // analyze <mode>; the fit mode routes to the fit stage.
  auto* analyze = app.add_subcommand("analyze", registry.at("analyze").help + "; 'fit' runs the extrapolation fit");
  fallthrough(analyze);
  std::string analyze_mode;
  analyze->add_option("mode", analyze_mode, "agreement, rmse, nmax, icc or fit")
      ->required()
      ->check(CLI::IsMember({"agreement", "rmse", "nmax", "icc", "fit"}));
  KindOptions analyze_opts, analyze_fit_opts;
  analyze_opts.exclude = {"mode"};
  analyze_opts.attach(analyze, "analyze", registry.at("analyze"));
  analyze_fit_opts.attach(analyze, "fit", registry.at("fit"), "fit mode");

  auto* losses = app.add_subcommand("losses", "Training losses");
  fallthrough(losses);
  losses->require_subcommand(1);
  auto* losses_eval = losses->add_subcommand("eval", registry.at("losses").help);
  fallthrough(losses_eval);
  KindOptions losses_opts;
  losses_opts.attach(losses_eval, "losses", registry.at("losses"));

  auto* run = app.add_subcommand("run", "Run a pipeline described by a TOML config");
  fallthrough(run);
  std::string config_path, workdir = ".";
  run->add_option("config", config_path, "pipeline config")->required();
  run->add_option("--workdir", workdir, "directory for stage outputs and manifests");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitValidation;
  }

  try {
    const auto seed = parse_global_seed(g);
    for (auto& [sub, opts] : by_app)
      if (sub->parsed()) return run_single(opts->spec(seed), registry, g);

    if (analyze->parsed()) {
      if (analyze_mode == "fit") {
        const auto bad = analyze_fit_opts.foreign({&analyze_opts});
        cf::require(bad.empty(), cf::ErrorCode::invalid_argument,
                    "option " + (bad.empty() ? std::string() : bad.front()) + " does not apply to analyze fit");
        return run_single(analyze_fit_opts.spec(seed), registry, g);
      }
      const auto bad = analyze_opts.foreign({&analyze_fit_opts});
      cf::require(bad.empty(), cf::ErrorCode::invalid_argument,
                  "option " + (bad.empty() ? std::string() : bad.front()) + " only applies to analyze fit");
      auto spec = analyze_opts.spec(seed);
      spec.params["mode"] = analyze_mode;
      return run_single(spec, registry, g);
    }
    if (losses_eval->parsed()) return run_single(losses_opts.spec(seed), registry, g);

    if (run->parsed()) {
      auto cfg = cf::load_pipeline(config_path);
      if (seed) cfg.seed = seed;
      cf::RunOptions opts;
      opts.work_dir = workdir;
      opts.on_stage = [](const cf::ResolvedStage& s, std::size_t i, std::size_t n) {
        std::cerr << "[" << i + 1 << "/" << n << "] " << s.spec->name << " (" << s.spec->kind << ")\n";
      };
      const auto manifests = cf::run_pipeline(cfg, registry, opts);
      json all = json::array();
      for (const auto& m : manifests) {
        print_warnings(m.warnings);
        all.push_back(cf::to_json(m));
      }
      if (!g.manifest.empty()) {
        std::ofstream out(g.manifest, std::ios::binary);
        cf::require(static_cast<bool>(out), cf::ErrorCode::io, "cannot write " + g.manifest);
        out << all.dump(2) << '\n';
      }
      if (g.json_out) {
        std::cout << all.dump(2) << '\n';
      } else {
        for (const auto& m : manifests)
          std::cout << m.stage << ": " << m.summary.dump() << " (" << m.wall_time_s << " s)\n";
      }
      return 0;
    }
  } catch (const cf::StageFailure& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitStage;
  } catch (const cf::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitStage;
  }
  return kExitValidation;
}
