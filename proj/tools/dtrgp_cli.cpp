// Command-line interface: simulations, baselines, single BO runs, the trial
// case study, and true-value oracles, each emitting a JSON run record that
// reproduces the run.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dtrgp/case_study.hpp"
#include "dtrgp/errors.hpp"
#include "dtrgp/harness.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonOpts {
  std::string out_dir;
  std::uint64_t seed = 1;
  int workers = 0;
};

std::string default_out_dir() {
  if (const char* env = std::getenv("DTRGP_OUT_DIR")) return env;
  return "dtrgp-out";
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

Eigen::VectorXd parse_vector(const std::string& s) {
  const std::vector<std::string> parts = split_list(s);
  Eigen::VectorXd v(parts.size());
  for (std::size_t i = 0; i < parts.size(); ++i) v(i) = std::stod(parts[i]);
  return v;
}

std::vector<int> parse_ints(const std::string& s) {
  std::vector<int> out;
  for (const auto& p : split_list(s)) out.push_back(std::stoi(p));
  return out;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << content;
}

// Resolved-config map -> run record; the record's config can be fed back via
// --config to reproduce the run.
void emit_run_record(const fs::path& out_dir, const std::string& command,
                     const std::map<std::string, std::string>& config,
                     const std::vector<std::string>& outputs) {
  json record;
  record["command"] = command;
  record["config"] = config;
  record["outputs"] = outputs;
  write_file(out_dir / "run_record.json", record.dump(2) + "\n");
}

// --config accepts either flat key=value lines or a run record JSON; entries
// are injected before the explicit flags so the command line wins.
std::vector<std::string> expand_config_args(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  std::string config_path;
  for (std::size_t i = 0; i + 1 < args.size(); ++i) {
    if (args[i] == "--config") config_path = args[i + 1];
  }
  if (config_path.empty()) return args;

  std::ifstream in(config_path);
  if (!in) throw CLI::ValidationError("--config", "cannot open " + config_path);
  std::map<std::string, std::string> entries;
  char first = 0;
  in >> first;
  in.seekg(0);
  if (first == '{') {
    json record = json::parse(in);
    const json& cfg = record.contains("config") ? record["config"] : record;
    for (const auto& [k, v] : cfg.items()) {
      entries[k] = v.is_string() ? v.get<std::string>() : v.dump();
    }
  } else {
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      std::string key = line.substr(0, eq);
      std::string value = line.substr(eq + 1);
      const auto trim = [](std::string& s) {
        while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.pop_back();
        while (!s.empty() && s.front() == ' ') s.erase(s.begin());
      };
      trim(key);
      trim(value);
      entries[key] = value;
    }
  }

  std::vector<std::string> expanded;
  expanded.push_back(args.front());  // subcommand
  for (const auto& [k, v] : entries) {
    if (k == "config") continue;
    if (v == "true") {
      expanded.push_back("--" + k);
    } else if (v == "false") {
      continue;
    } else {
      expanded.push_back("--" + k);
      expanded.push_back(v);
    }
  }
  for (std::size_t i = 1; i < args.size(); ++i) expanded.push_back(args[i]);
  return expanded;
}

template <typename T>
CLI::Option* opt(CLI::App* app, const std::string& name, T& var, const std::string& desc) {
  return app->add_option(name, var, desc)->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
}

int run_simulate(const std::map<std::string, std::string>& cfg) {
  using namespace dtrgp;
  ReplicateConfig rc;
  rc.scenario.id = scenario_from_string(cfg.at("scenario"));
  rc.scenario.n = std::stoi(cfg.at("n"));
  rc.scenario.noise = noise_variant_from_string(cfg.at("noise"));
  rc.replicates = std::stoi(cfg.at("replicates"));
  rc.master_seed = std::stoull(cfg.at("seed"));
  rc.budget = std::stoi(cfg.at("budget"));
  rc.family = kernel_family_from_string(cfg.at("kernel"));
  rc.estimated_propensity = cfg.at("estimated-propensity") == "true";
  rc.workers = std::stoi(cfg.at("workers"));
  rc.checkpoints = parse_ints(cfg.at("checkpoints"));
  if (cfg.count("grid-step")) rc.grid_step = std::stod(cfg.at("grid-step"));
  rc.methods.clear();
  for (const auto& m : split_list(cfg.at("methods"))) rc.methods.push_back(method_from_string(m));
  if (rc.methods.empty()) throw CLI::ValidationError("--methods", "at least one method");

  const fs::path out_dir = cfg.at("out");
  fs::create_directories(out_dir);
  const std::vector<ReplicateResult> results = run_replicates(rc);
  write_file(out_dir / "replicates.csv", replicates_to_csv(results));
  write_file(out_dir / "summary.csv", summary_to_csv(summarize(results)));
  emit_run_record(out_dir, "simulate", cfg, {"replicates.csv", "summary.csv"});
  std::cout << "wrote " << (out_dir / "summary.csv").string() << "\n";
  return 0;
}

int run_grid(const std::map<std::string, std::string>& cfg) {
  using namespace dtrgp;
  ScenarioSpec spec;
  spec.id = scenario_from_string(cfg.at("scenario"));
  spec.n = std::stoi(cfg.at("n"));
  spec.noise = noise_variant_from_string(cfg.at("noise"));
  spec.seed = std::stoull(cfg.at("seed"));
  const Cohort cohort = generate_cohort(spec);
  const PropensityModel propensity = cfg.at("estimated-propensity") == "true"
                                         ? fit_propensity(cohort)
                                         : known_propensity_model(spec.id);
  const RegimeFamily family = scenario_family(spec.id);
  const double step = cfg.count("grid-step") ? std::stod(cfg.at("grid-step"))
                                             : scenario_grid_step(spec.id);
  const Eigen::MatrixXd grid =
      step_grid(family.lo, family.hi, Eigen::VectorXd::Constant(family.dims(), step));
  const SurfaceFn surface = [&](const Eigen::VectorXd& psi) -> std::optional<double> {
    try {
      return ipw_value(cohort, family, psi, propensity);
    } catch (const NoAdherentPatients&) {
      return std::nullopt;
    }
  };
  const GridSearchResult res = grid_search(surface, grid);

  const fs::path out_dir = cfg.at("out");
  fs::create_directories(out_dir);
  json out;
  for (Eigen::Index d = 0; d < res.psi.size(); ++d) {
    out["psi"].push_back(res.psi(d));
  }
  out["value"] = res.value;
  out["evaluations"] = res.evaluations;
  out["missing"] = res.missing;
  write_file(out_dir / "grid_result.json", out.dump(2) + "\n");
  emit_run_record(out_dir, "grid", cfg, {"grid_result.json"});
  std::cout << out.dump(2) << "\n";
  return 0;
}

int run_single_bo(const std::map<std::string, std::string>& cfg) {
  using namespace dtrgp;
  ScenarioSpec spec;
  spec.id = scenario_from_string(cfg.at("scenario"));
  spec.n = std::stoi(cfg.at("n"));
  spec.noise = noise_variant_from_string(cfg.at("noise"));
  spec.seed = std::stoull(cfg.at("seed"));
  const Cohort cohort = generate_cohort(spec);
  const PropensityModel propensity = cfg.at("estimated-propensity") == "true"
                                         ? fit_propensity(cohort)
                                         : known_propensity_model(spec.id);
  const RegimeFamily family = scenario_family(spec.id);

  const SurfaceFn surface = [&](const Eigen::VectorXd& psi) -> std::optional<double> {
    try {
      return ipw_value(cohort, family, psi, propensity);
    } catch (const NoAdherentPatients&) {
      return std::nullopt;
    }
  };

  const Eigen::MatrixXd init_pts = scenario_initial_points(spec.id);
  Design initial;
  initial.points.resize(0, init_pts.cols());
  initial.responses.resize(0);
  for (Eigen::Index i = 0; i < init_pts.rows(); ++i) {
    if (auto v = surface(init_pts.row(i).transpose())) {
      initial.append(init_pts.row(i).transpose(), *v, false);
    }
  }

  BoConfig bo;
  bo.gp_type = gp_type_from_string(cfg.at("gp-type"));
  bo.family = kernel_family_from_string(cfg.at("kernel"));
  bo.budget = std::stoi(cfg.at("budget"));
  const BoTrace trace =
      run_bo(surface, initial, DomainTransform::from_box(family.lo, family.hi), bo);

  std::ostringstream os;
  os.precision(12);
  os << "iteration,";
  for (int d = 0; d < family.dims(); ++d) os << "psi" << (d + 1) << ',';
  os << "response,max_ei,";
  for (int d = 0; d < family.dims(); ++d) os << "incumbent_psi" << (d + 1) << ',';
  os << "incumbent_value\n";
  for (const auto& r : trace.records) {
    os << r.iteration << ',';
    for (int d = 0; d < family.dims(); ++d) os << r.psi(d) << ',';
    os << r.response << ',' << r.max_ei << ',';
    for (int d = 0; d < family.dims(); ++d) os << r.incumbent_psi(d) << ',';
    os << r.incumbent_value << '\n';
  }

  const fs::path out_dir = cfg.at("out");
  fs::create_directories(out_dir);
  write_file(out_dir / "trace.csv", os.str());
  emit_run_record(out_dir, "bo", cfg, {"trace.csv"});
  std::cout << "final incumbent value " << trace.final_incumbent_value() << "\n";
  return 0;
}

int run_oracle(const std::map<std::string, std::string>& cfg) {
  using namespace dtrgp;
  const ScenarioId id = scenario_from_string(cfg.at("scenario"));
  const Eigen::VectorXd psi = parse_vector(cfg.at("psi"));
  OracleConfig oc;
  oc.draws = std::stol(cfg.at("draws"));
  oc.seed = std::stoull(cfg.at("seed"));
  const OracleResult res = true_value(id, psi, oc);
  json out;
  out["value"] = res.value;
  out["mc_se"] = res.mc_se;
  std::cout << out.dump() << "\n";
  if (cfg.count("out")) {
    const fs::path out_dir = cfg.at("out");
    fs::create_directories(out_dir);
    write_file(out_dir / "oracle.json", out.dump(2) + "\n");
    emit_run_record(out_dir, "oracle", cfg, {"oracle.json"});
  }
  return 0;
}

int run_case_study(const std::map<std::string, std::string>& cfg) {
  using namespace dtrgp;
  CsvSchema schema;
  if (cfg.count("arm-column")) schema.arm = cfg.at("arm-column");
  if (cfg.count("weight-column")) schema.weight = cfg.at("weight-column");
  if (cfg.count("cd4-column")) schema.cd4_baseline = cfg.at("cd4-column");
  if (cfg.count("outcome-column")) schema.cd4_week20 = cfg.at("outcome-column");
  if (cfg.count("arm-z0")) schema.arm_code_z0 = cfg.at("arm-z0");
  if (cfg.count("arm-z1")) schema.arm_code_z1 = cfg.at("arm-z1");

  const Cohort cohort = load_cohort_csv(cfg.at("csv"), schema);
  const RegimeFamily family = case_study_family();

  const fs::path out_dir = cfg.at("out");
  fs::create_directories(out_dir);
  std::vector<std::string> outputs;

  UncertaintyConfig uc;
  uc.bootstrap_draws = std::stoi(cfg.at("bootstrap"));
  uc.paths_per_draw = std::stoi(cfg.at("paths"));
  uc.budget = std::stoi(cfg.at("budget"));
  uc.gp_type = gp_type_from_string(cfg.at("gp-type"));
  uc.family = kernel_family_from_string(cfg.at("kernel"));
  uc.checkpoints = parse_ints(cfg.at("checkpoints"));
  uc.workers = std::stoi(cfg.at("workers"));
  uc.pool_draws = cfg.at("per-draw-medians") != "true";
  {
    const Eigen::VectorXd steps = parse_vector(cfg.at("path-steps"));
    uc.path_grid_step = Eigen::Vector2d(steps(0), steps(1));
  }
  const std::uint64_t seed = std::stoull(cfg.at("seed"));

  const UncertaintyResult res = optimizer_uncertainty(cohort, family, uc, seed);
  write_file(out_dir / "uncertainty.csv", uncertainty_to_csv(res));
  outputs.push_back("uncertainty.csv");
  std::cout << "n=" << cohort.size() << ", path grid " << res.path_grid_size << " points, "
            << res.failed_draws << " failed draws\n";
  std::cout << uncertainty_to_csv(res);

  if (cfg.at("grid-baseline") == "true" || cfg.at("msm-baseline") == "true") {
    const Eigen::VectorXd coarse = parse_vector(cfg.at("baseline-steps"));
    std::ostringstream os;
    os.precision(10);
    os << "baseline,quantity,median,q025,q975\n";
    const auto emit = [&](const std::string& name, const BootstrapBaselineResult& b) {
      for (std::size_t d = 0; d < b.psi.size(); ++d) {
        os << name << ",psi" << (d + 1) << ',' << b.psi[d].median << ',' << b.psi[d].lo << ','
           << b.psi[d].hi << '\n';
      }
      os << name << ",value," << b.value.median << ',' << b.value.lo << ',' << b.value.hi << '\n';
    };
    if (cfg.at("grid-baseline") == "true") {
      emit("grid", bootstrap_grid_baseline(cohort, family, coarse, uc.bootstrap_draws,
                                           child_seed(seed, 1000001), uc.p_min, uc.workers));
    }
    if (cfg.at("msm-baseline") == "true") {
      emit("msm", bootstrap_msm_baseline(cohort, family, coarse, uc.bootstrap_draws,
                                         child_seed(seed, 1000002), uc.p_min, uc.workers));
    }
    write_file(out_dir / "baselines.csv", os.str());
    outputs.push_back("baselines.csv");
    std::cout << os.str();
  }

  emit_run_record(out_dir, "case-study", cfg, outputs);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GP-based value search for dynamic treatment regimes"};
  app.require_subcommand(1);

  // Every option funnels into a flat config map so the run record mirrors the
  // flag names exactly.
  std::map<std::string, std::string> cfg;
  const auto bind = [&cfg](CLI::App* cmd, const std::string& key, const std::string& def,
                           const std::string& desc) {
    cfg.count(key);
    auto* o = cmd->add_option_function<std::string>(
        "--" + key, [&cfg, key](const std::string& v) { cfg[key] = v; }, desc);
    o->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    if (!def.empty()) {
      o->default_str(def);
    }
    return o;
  };
  const auto bind_flag = [&cfg](CLI::App* cmd, const std::string& key, const std::string& desc) {
    return cmd->add_flag_callback(
        "--" + key, [&cfg, key]() { cfg[key] = "true"; }, desc);
  };

  const auto add_common = [&](CLI::App* cmd) {
    bind(cmd, "seed", "1", "master seed");
    bind(cmd, "out", default_out_dir(), "output directory (env DTRGP_OUT_DIR)");
    bind(cmd, "workers", "0", "worker threads (0 = all cores)");
    bind(cmd, "config", "", "config file (key=value lines or a run record JSON)");
  };

  CLI::App* simulate = app.add_subcommand("simulate", "replicated simulation experiments");
  bind(simulate, "scenario", "sim1", "sim1 or sim2");
  bind(simulate, "n", "500", "cohort size");
  bind(simulate, "noise", "paper", "noise variant");
  bind(simulate, "replicates", "100", "Monte Carlo replicates");
  bind(simulate, "methods", "hm", "comma list: grid,msm,int,hm,he");
  bind(simulate, "budget", "25", "additional BO samples");
  bind(simulate, "kernel", "matern52", "matern52 or matern32");
  bind(simulate, "checkpoints", "1,5,10,15,20,25", "reporting checkpoints");
  bind(simulate, "grid-step", "", "grid-search step (default per scenario)");
  bind_flag(simulate, "estimated-propensity", "fit propensities instead of the known model");
  add_common(simulate);

  CLI::App* grid = app.add_subcommand("grid", "grid-search baseline on one cohort");
  bind(grid, "scenario", "sim1", "sim1 or sim2");
  bind(grid, "n", "500", "cohort size");
  bind(grid, "noise", "paper", "noise variant");
  bind(grid, "grid-step", "", "grid step (default per scenario)");
  bind_flag(grid, "estimated-propensity", "fit propensities instead of the known model");
  add_common(grid);

  CLI::App* bo = app.add_subcommand("bo", "single BO run with trace output");
  bind(bo, "scenario", "sim1", "sim1 or sim2");
  bind(bo, "n", "500", "cohort size");
  bind(bo, "noise", "paper", "noise variant");
  bind(bo, "gp-type", "hm", "int, hm, or he");
  bind(bo, "budget", "25", "additional BO samples");
  bind(bo, "kernel", "matern52", "matern52 or matern32");
  bind_flag(bo, "estimated-propensity", "fit propensities instead of the known model");
  add_common(bo);

  CLI::App* oracle = app.add_subcommand("oracle", "true value of a regime");
  bind(oracle, "scenario", "sim1", "sim1 or sim2");
  bind(oracle, "psi", "", "regime index, comma separated")->required();
  bind(oracle, "draws", "1000000", "Monte Carlo draws");
  add_common(oracle);

  CLI::App* cs = app.add_subcommand("case-study", "two-arm trial CSV pipeline");
  bind(cs, "csv", "", "input CSV path")->required();
  bind(cs, "gp-type", "hm", "int, hm, or he");
  bind(cs, "kernel", "matern52", "matern52 or matern32");
  bind(cs, "bootstrap", "500", "Bayesian bootstrap draws B");
  bind(cs, "paths", "250", "posterior sample paths N per draw");
  bind(cs, "budget", "25", "additional BO samples");
  bind(cs, "checkpoints", "1,5,15,25", "reporting checkpoints");
  bind(cs, "path-steps", "4,7.5", "path grid increments (kg, cells/uL)");
  bind(cs, "baseline-steps", "15,35", "baseline grid increments");
  bind_flag(cs, "grid-baseline", "also run the bootstrap grid-search baseline");
  bind_flag(cs, "msm-baseline", "also run the bootstrap quadratic MSM baseline");
  bind_flag(cs, "per-draw-medians", "summarize per-bootstrap medians instead of pooling");
  bind(cs, "arm-column", "", "override schema: arm column");
  bind(cs, "weight-column", "", "override schema: weight column");
  bind(cs, "cd4-column", "", "override schema: baseline CD4 column");
  bind(cs, "outcome-column", "", "override schema: outcome column");
  bind(cs, "arm-z0", "", "arm code mapped to z=0");
  bind(cs, "arm-z1", "", "arm code mapped to z=1");
  add_common(cs);

  std::vector<std::string> args;
  try {
    args = expand_config_args(argc, argv);
  } catch (const CLI::Error& e) {
    std::cerr << e.what() << "\n";
    return 2;
  }
  std::vector<const char*> cargs;
  cargs.push_back(argv[0]);
  for (const auto& a : args) cargs.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(cargs.size()), cargs.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // 0
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  // Fill defaults for keys the callbacks never saw.
  const auto fill_defaults = [&](CLI::App* cmd) {
    for (const auto* o : cmd->get_options()) {
      std::string name = o->get_name();
      if (name.rfind("--", 0) == 0) name = name.substr(2);
      if (name == "help" || name == "config") continue;
      if (!cfg.count(name)) {
        const std::string d = o->get_default_str();
        if (!d.empty()) cfg[name] = d;
        if (o->get_expected_min() == 0) cfg.emplace(name, "false");  // flags
      }
    }
  };

  try {
    if (simulate->parsed()) {
      fill_defaults(simulate);
      return run_simulate(cfg);
    }
    if (grid->parsed()) {
      fill_defaults(grid);
      return run_grid(cfg);
    }
    if (bo->parsed()) {
      fill_defaults(bo);
      return run_single_bo(cfg);
    }
    if (oracle->parsed()) {
      fill_defaults(oracle);
      return run_oracle(cfg);
    }
    if (cs->parsed()) {
      fill_defaults(cs);
      return run_case_study(cfg);
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
