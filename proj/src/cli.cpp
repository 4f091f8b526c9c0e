#include "mstage/cli.hpp"

#include "mstage/numerics.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;

namespace mstage {

namespace {

long to_long(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long out = std::stol(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw UsageError("option '" + key + "' expects an integer, got '" + v + "'");
  }
}

double to_double(const std::string& key, const std::string& v) {
  try {
    return parse_double(v);
  } catch (const Error&) {
    throw UsageError("option '" + key + "' expects a number, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw UsageError("option '" + key + "' expects a boolean, got '" + v + "'");
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream f(p);
  if (!f) throw Error("cannot write " + p.string());
  return f;
}

void write_config(const RunConfig& cfg) {
  fs::create_directories(cfg.out);
  auto f = open_out(fs::path(cfg.out) / "config.txt");
  for (const auto& [k, v] : cfg.to_key_values()) f << k << " = " << v << '\n';
}

MissingDataset load_data(const RunConfig& cfg) {
  if (cfg.data.empty()) throw UsageError("--data is required");
  if (cfg.schema.empty()) throw UsageError("--schema is required");
  return load_csv(cfg.data, parse_schema_flag(cfg.schema));
}

std::string padded(long k, long total) {
  const int width = std::max<int>(4, static_cast<int>(std::to_string(total).size()));
  std::ostringstream os;
  os << std::setw(width) << std::setfill('0') << k;
  return os.str();
}

}  // namespace

RunConfig RunConfig::from_key_values(const KeyValues& kv) {
  RunConfig c;
  for (const auto& [k, v] : kv) {
    if (k == "command") c.command = v;
    else if (k == "out") c.out = v;
    else if (k == "kind") c.kind = v;
    else if (k == "sim_config") c.sim_config = v;
    else if (k == "n") c.n = to_long(k, v);
    else if (k == "replicates") c.replicates = to_long(k, v);
    else if (k == "truth_draws") c.truth_draws = to_long(k, v);
    else if (k == "data") c.data = v;
    else if (k == "schema") c.schema = v;
    else if (k == "task") c.task = v;
    else if (k == "method") c.method = v;
    else if (k == "family") c.family = v;
    else if (k == "nuisance") c.nuisance = v;
    else if (k == "kappa") c.kappa = v;
    else if (k == "interactions") c.interactions = to_bool(k, v);
    else if (k == "M") c.M = static_cast<int>(to_long(k, v));
    else if (k == "arm") c.arm = static_cast<int>(to_long(k, v));
    else if (k == "rho") c.rho = to_double(k, v);
    else if (k == "zeta") c.zeta = to_double(k, v);
    else if (k == "xi") c.xi = to_double(k, v);
    else if (k == "B") c.B = static_cast<int>(to_long(k, v));
    else if (k == "alpha") c.alpha = to_double(k, v);
    else if (k == "param") c.param = v;
    else if (k == "grid") c.grid = v;
    else if (k == "seed") c.seed = static_cast<std::uint64_t>(to_long(k, v));
    else if (k == "threads") c.threads = static_cast<int>(to_long(k, v));
    else if (k == "verbose") c.verbose = to_bool(k, v);
    else throw UsageError("unknown configuration key '" + k + "'");
  }
  if (c.threads < 1) throw UsageError("--threads must be at least 1");
  return c;
}

KeyValues RunConfig::to_key_values() const {
  KeyValues kv;
  kv["command"] = command;
  kv["out"] = out;
  kv["seed"] = std::to_string(seed);
  if (command == "simulate") {
    kv["kind"] = kind;
    kv["n"] = std::to_string(n);
    kv["replicates"] = std::to_string(replicates);
    if (kind == "binary-treat") kv["truth_draws"] = std::to_string(truth_draws);
    if (!sim_config.empty()) kv["sim_config"] = sim_config;
    return kv;
  }
  kv["data"] = data;
  kv["schema"] = schema;
  kv["task"] = task;
  kv["method"] = method;
  kv["family"] = family;
  kv["nuisance"] = nuisance;
  if (!kappa.empty()) kv["kappa"] = kappa;
  kv["interactions"] = interactions ? "1" : "0";
  kv["M"] = std::to_string(M);
  kv["arm"] = std::to_string(arm);
  kv["rho"] = format_double(rho);
  kv["zeta"] = format_double(zeta);
  kv["xi"] = format_double(xi);
  if (command == "bootstrap" || command == "sweep") {
    kv["B"] = std::to_string(B);
    kv["alpha"] = format_double(alpha);
  }
  if (command == "sweep") {
    kv["param"] = param;
    kv["grid"] = grid;
  }
  return kv;
}

EstimatorConfig RunConfig::estimator() const {
  EstimatorConfig e;
  try {
    e.task = parse_task(task);
    if (method.empty()) throw UsageError("--method is required");
    check_method(e.task, method);
    e.method = method;
    if (family != "auto") parse_family(family);
    e.family = family;
    e.nuisance = parse_nuisance_kind(nuisance);
  } catch (const ConfigurationError& err) {
    throw UsageError(err.what());
  }
  e.M = M;
  e.seed = seed;
  e.arm = arm;
  e.odds.interactions = interactions;
  if (!kappa.empty()) {
    std::vector<double> k;
    std::stringstream ss(kappa);
    std::string tok;
    while (std::getline(ss, tok, ',')) k.push_back(to_double("kappa", tok));
    if (k.size() != 3) throw UsageError("--kappa expects three comma-separated weights");
    e.kappa = KappaMixture(k[0], k[1], k[2]);
  }
  e.rho = rho;
  e.zeta = zeta;
  e.xi = xi;
  e.threads = threads;
  return e;
}

// ---------------------------------------------------------------------------

int cmd_simulate(const RunConfig& cfg) {
  if (cfg.replicates < 1) throw UsageError("--replicates must be at least 1");
  if (cfg.n < 1) throw UsageError("--n must be at least 1");
  if (cfg.kind != "cox" && cfg.kind != "binary-treat")
    throw UsageError("--kind must be cox or binary-treat");
  const KeyValues spec_kv = cfg.sim_config.empty() ? KeyValues{} : load_key_values(cfg.sim_config);

  write_config(cfg);
  const fs::path rep_dir = fs::path(cfg.out) / "replicates";
  fs::create_directories(rep_dir);
  auto truth = open_out(fs::path(cfg.out) / "truth.csv");
  truth << "parameter,value\n";

  const auto R = static_cast<std::size_t>(cfg.replicates);
  const auto n = static_cast<std::size_t>(cfg.n);
  if (cfg.kind == "cox") {
    const auto spec = CoxSimSpec::from_key_values(spec_kv);
    {
      auto f = open_out(fs::path(cfg.out) / "spec.txt");
      spec.write(f);
    }
    truth << "x1," << format_double(spec.beta(0)) << "\nx2," << format_double(spec.beta(1)) << '\n';
    parallel_for(R, cfg.threads, [&](std::size_t k) {
      const auto ds = gen_cox(spec, n, substream_seed(cfg.seed, k));
      write_csv((rep_dir / ("rep_" + padded(static_cast<long>(k + 1), cfg.replicates) + ".csv")).string(), ds);
    });
  } else {
    const auto spec = BinaryTreatSimSpec::from_key_values(spec_kv);
    {
      auto f = open_out(fs::path(cfg.out) / "spec.txt");
      spec.write(f);
    }
    const double ate = true_ate_mc(spec, static_cast<std::size_t>(cfg.truth_draws),
                                   substream_seed(cfg.seed, 0xA7E), cfg.threads);
    truth << "ate," << format_double(ate) << '\n';
    parallel_for(R, cfg.threads, [&](std::size_t k) {
      const auto ds = gen_binary_treat(spec, n, substream_seed(cfg.seed, k));
      write_csv((rep_dir / ("rep_" + padded(static_cast<long>(k + 1), cfg.replicates) + ".csv")).string(), ds);
    });
  }
  return 0;
}

int cmd_fit(const RunConfig& cfg) {
  const EstimatorConfig ec = cfg.estimator();
  const auto ds = load_data(cfg);
  const auto r = run_estimator(ds, ec);
  write_config(cfg);
  {
    auto f = open_out(fs::path(cfg.out) / "estimates.csv");
    write_estimates(f, r);
  }
  {
    auto f = open_out(fs::path(cfg.out) / "diagnostics.csv");
    write_diagnostics(f, r);
  }
  fs::create_directories(fs::path(cfg.out) / "replicates");
  return r.converged ? 0 : 3;
}

int cmd_bootstrap(const RunConfig& cfg) {
  if (cfg.B < 2) throw UsageError("--B must be at least 2");
  if (!(cfg.alpha > 0.0 && cfg.alpha < 1.0)) throw UsageError("--alpha must lie in (0, 1)");
  const EstimatorConfig ec = cfg.estimator();
  const auto ds = load_data(cfg);
  const auto names = run_estimator(ds, ec).names;
  const auto rep = bootstrap_estimator(ds, ec, cfg.B, cfg.alpha, substream_seed(cfg.seed, 0xB007));
  write_config(cfg);
  {
    auto f = open_out(fs::path(cfg.out) / "estimates.csv");
    write_bootstrap_csv(f, rep, names);
  }
  {
    auto f = open_out(fs::path(cfg.out) / "diagnostics.csv");
    f << "key,value\nB," << rep.B << "\nalpha," << format_double(rep.alpha) << "\nfailures,"
      << rep.failures << "\nunreliable," << (rep.unreliable ? 1 : 0) << '\n';
  }
  fs::create_directories(fs::path(cfg.out) / "replicates");
  {
    auto f = open_out(fs::path(cfg.out) / "replicates" / "bootstrap.csv");
    write_replicates_csv(f, rep, names);
  }
  return rep.unreliable ? 3 : 0;
}

int cmd_sweep(const RunConfig& cfg) {
  if (cfg.param.empty()) throw UsageError("--param is required");
  if (cfg.grid.empty()) throw UsageError("--grid is required");
  if (cfg.B == 1 || cfg.B < 0) throw UsageError("--B must be 0 (points only) or at least 2");
  SweepParam param;
  std::vector<double> grid;
  try {
    param = parse_sweep_param(cfg.param);
    grid = parse_grid(cfg.grid, sweep_baseline(param));
  } catch (const ConfigurationError& e) {
    throw UsageError(e.what());
  } catch (const ParseError& e) {
    throw UsageError(e.what());
  }
  const EstimatorConfig ec = cfg.estimator();
  const auto ds = load_data(cfg);
  const auto sw = sensitivity_sweep(ds, ec, param, grid, cfg.B, cfg.alpha,
                                    substream_seed(cfg.seed, 0xB007));
  write_config(cfg);
  {
    auto f = open_out(fs::path(cfg.out) / "estimates.csv");
    write_sweep_csv(f, sw);
  }
  int unreliable = 0;
  for (const auto& rep : sw.reports) unreliable += rep.unreliable ? 1 : 0;
  {
    auto f = open_out(fs::path(cfg.out) / "diagnostics.csv");
    f << "key,value\nparam," << sweep_param_name(param) << "\ngrid_points," << grid.size()
      << "\nB," << cfg.B << "\nunreliable_points," << unreliable << '\n';
  }
  fs::create_directories(fs::path(cfg.out) / "replicates");
  return unreliable ? 3 : 0;
}

// ---------------------------------------------------------------------------

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Multistage estimators for nonmonotone missing covariates under CCMV"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  struct Opt {
    std::string key, value;
    CLI::Option* opt = nullptr;
  };
  std::vector<std::unique_ptr<Opt>> opts;
  std::string config_path;
  bool interactions = false, verbose = false;

  auto add = [&](CLI::App* sub, const std::string& key, const std::string& help) {
    auto o = std::make_unique<Opt>();
    o->key = key;
    o->opt = sub->add_option("--" + key, o->value, help);
    opts.push_back(std::move(o));
  };
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "key=value configuration file; flags override it");
    add(sub, "out", "output directory");
    add(sub, "seed", "master random seed");
    add(sub, "threads", "worker threads (default: available cores)");
    sub->add_flag("--verbose", verbose, "echo warnings to stderr");
  };
  auto model = [&](CLI::App* sub) {
    add(sub, "data", "input CSV");
    add(sub, "schema", "column roles, e.g. \"x1,x2:cov y:time delta:status\"");
    add(sub, "task", "cox | mean | ate");
    add(sub, "method", "cox: cc, ipw, mi, mr, transformed-mle; mean/ate: ipw-r|ra-r : ipw-a|ra-a|dr-a, or mr");
    add(sub, "family", "imputation family: auto | discrete | gaussian | cox-em");
    add(sub, "nuisance", "outcome nuisances: auto | mixture | regression");
    add(sub, "kappa", "k1,k2,k3 mixture weights for R=00 odds (two covariates)");
    add(sub, "M", "imputations per record");
    add(sub, "arm", "treatment arm for task=mean");
    add(sub, "rho", "uniform complete-odds tilt");
    add(sub, "zeta", "binary imputation tilt");
    add(sub, "xi", "Gaussian imputation shift");
    sub->add_flag("--interactions", interactions, "pairwise interactions in the odds models");
  };

  auto* sim = app.add_subcommand("simulate", "generate replicate datasets with known truth");
  common(sim);
  add(sim, "kind", "cox | binary-treat");
  add(sim, "n", "records per dataset");
  add(sim, "replicates", "number of datasets");
  add(sim, "sim_config", "key=value simulation settings file");
  add(sim, "truth_draws", "Monte Carlo draws for the true ATE");

  auto* fit = app.add_subcommand("fit", "fit one estimator");
  common(fit);
  model(fit);

  auto* boot = app.add_subcommand("bootstrap", "percentile bootstrap of one estimator");
  common(boot);
  model(boot);
  add(boot, "B", "bootstrap replicates");
  add(boot, "alpha", "1 - confidence level");

  auto* sweep = app.add_subcommand("sweep", "sensitivity sweep over rho, zeta or xi");
  common(sweep);
  model(sweep);
  add(sweep, "B", "bootstrap replicates per grid point (0: points only)");
  add(sweep, "alpha", "1 - confidence level");
  add(sweep, "param", "rho | zeta | xi");
  add(sweep, "grid", "lo:hi:steps");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    KeyValues kv;
    if (!config_path.empty()) kv = load_key_values(config_path);
    kv.erase("command");
    kv["threads"] = kv.contains("threads") ? kv["threads"] : std::to_string(default_threads());
    for (const auto& o : opts)
      if (o->opt->count() > 0) kv[o->key] = o->value;
    if (interactions) kv["interactions"] = "1";
    if (verbose) kv["verbose"] = "1";
    RunConfig cfg = RunConfig::from_key_values(kv);
    cfg.command = app.get_subcommands().front()->get_name();
    set_verbose_warnings(cfg.verbose);

    int status = 0;
    if (cfg.command == "simulate") status = cmd_simulate(cfg);
    else if (cfg.command == "fit") status = cmd_fit(cfg);
    else if (cfg.command == "bootstrap") status = cmd_bootstrap(cfg);
    else status = cmd_sweep(cfg);
    if (status == 3) std::cerr << "warning: some fits did not converge; see diagnostics.csv\n";
    return status;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace mstage
