// Benchmark CLI: builds the case-study problems, runs open- and closed-loop
// experiments and writes trajectory CSVs plus a JSON summary.

#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "nmpc/bench/runners.hpp"
#include "nmpc/sqp/solver.hpp"

using json = nlohmann::json;
using namespace nmpc;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitUsage = 2;
constexpr int kExitSolverFailure = 3;

struct CommonArgs {
  std::string config_path;
  std::string out_csv;
  std::string out_json;
  bool check = false;
  std::string hessian;
  std::string reg;
  std::string qp_backend;
  int n2 = -1;
  int max_iter = -1;
  double tol = -1.0;
  int samples = -1;
  int masses = -1;
  uint64_t seed = 0;
  int count = -1;
  bool no_rti = false;
};

const std::set<std::string> kKnownKeys = {
    "schema_version", "hessian", "reg",     "reg_eps",    "qp_backend", "n2",
    "max_iter",       "tol",     "qp_tol",  "qp_max_iter", "rti",       "samples",
    "masses",         "seed",    "count",   "plant_rtol", "plant_atol", "profile",
    "disturbance_start", "disturbance_duration"};

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot open " + path);
  json cfg;
  try {
    cfg = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (!cfg.is_object()) throw ConfigError("config: top level must be an object");
  if (!cfg.contains("schema_version") || cfg["schema_version"] != 1)
    throw ConfigError("config: schema_version 1 required");
  for (const auto& [key, value] : cfg.items())
    if (!kKnownKeys.count(key)) throw ConfigError("config: unknown key '" + key + "'");
  return cfg;
}

sqp::HessianMode parse_hessian(const std::string& s) {
  if (s == "gn" || s == "gauss-newton") return sqp::HessianMode::GaussNewton;
  if (s == "scqp") return sqp::HessianMode::Scqp;
  if (s == "exact") return sqp::HessianMode::Exact;
  throw ConfigError("unknown hessian mode '" + s + "'");
}

sqp::Regularization parse_reg(const std::string& s) {
  if (s == "none") return sqp::Regularization::None;
  if (s == "project") return sqp::Regularization::Project;
  if (s == "mirror") return sqp::Regularization::Mirror;
  throw ConfigError("unknown regularization '" + s + "'");
}

sqp::QpBackend parse_backend(const std::string& s) {
  if (s == "structured") return sqp::QpBackend::StructuredIpm;
  if (s == "condensed-dense") return sqp::QpBackend::CondensedDenseIpm;
  throw ConfigError("unknown qp backend '" + s + "'");
}

sqp::SqpOptions build_plan(const json& cfg, const CommonArgs& args) {
  sqp::SqpOptions plan;
  plan.rti = true;
  plan.qp.max_iter = 100;
  plan.qp.warm_start_push = 1e-8;
  auto str = [&](const char* key, const std::string& cli_value) -> std::string {
    if (!cli_value.empty()) return cli_value;
    if (cfg.contains(key)) return cfg[key].get<std::string>();
    return {};
  };
  if (std::string v = str("hessian", args.hessian); !v.empty()) plan.hessian = parse_hessian(v);
  if (std::string v = str("reg", args.reg); !v.empty()) plan.reg = parse_reg(v);
  if (std::string v = str("qp_backend", args.qp_backend); !v.empty())
    plan.backend = parse_backend(v);
  if (cfg.contains("reg_eps")) plan.reg_eps = cfg["reg_eps"].get<double>();
  if (args.n2 >= 0)
    plan.partial_condensing_n2 = args.n2;
  else if (cfg.contains("n2"))
    plan.partial_condensing_n2 = cfg["n2"].get<int>();
  if (args.max_iter > 0)
    plan.max_iter = args.max_iter;
  else if (cfg.contains("max_iter"))
    plan.max_iter = cfg["max_iter"].get<int>();
  const double tol = args.tol > 0 ? args.tol : cfg.value("tol", -1.0);
  if (tol > 0) plan.tol_stat = plan.tol_eq = plan.tol_ineq = plan.tol_comp = tol;
  if (cfg.contains("qp_tol")) {
    const double qtol = cfg["qp_tol"].get<double>();
    plan.qp.tol_stat = plan.qp.tol_eq = plan.qp.tol_ineq = plan.qp.tol_comp = qtol;
  }
  if (cfg.contains("qp_max_iter")) plan.qp.max_iter = cfg["qp_max_iter"].get<int>();
  if (args.no_rti)
    plan.rti = false;
  else if (cfg.contains("rti"))
    plan.rti = cfg["rti"].get<bool>();
  return plan;
}

json plan_echo(const sqp::SqpOptions& plan) {
  json j;
  j["hessian"] = plan.hessian == sqp::HessianMode::GaussNewton ? "gauss-newton"
                 : plan.hessian == sqp::HessianMode::Scqp      ? "scqp"
                                                               : "exact";
  j["reg"] = plan.reg == sqp::Regularization::None      ? "none"
             : plan.reg == sqp::Regularization::Project ? "project"
                                                        : "mirror";
  j["reg_eps"] = plan.reg_eps;
  j["qp_backend"] =
      plan.backend == sqp::QpBackend::StructuredIpm ? "structured" : "condensed-dense";
  j["n2"] = plan.partial_condensing_n2;
  j["rti"] = plan.rti;
  j["max_iter"] = plan.max_iter;
  j["tol_stat"] = plan.tol_stat;
  j["qp_tol"] = plan.qp.tol_stat;
  return j;
}

void write_text(const std::string& path, const std::string& body) {
  if (path.empty()) return;
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot open " + path + " for writing");
  os << body;
}

void write_summary(const std::string& path, const json& j) {
  if (path.empty()) return;
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot open " + path + " for writing");
  os << j.dump(2) << '\n';
}

json timing_json(const bench::TimingSummary& t) {
  return json{{"median_s", t.median}, {"min_s", t.min}, {"max_s", t.max}};
}

int run_chain(const CommonArgs& args) {
  json cfg = load_config(args.config_path);
  bench::ChainBenchConfig bc;
  bc.plan = build_plan(cfg, args);
  if (bc.plan.partial_condensing_n2 == 0 && args.n2 < 0 && !cfg.contains("n2"))
    bc.plan.partial_condensing_n2 = 5;
  if (args.masses > 0) bc.params.masses = args.masses;
  else if (cfg.contains("masses")) bc.params.masses = cfg["masses"].get<int>();
  if (args.samples > 0) bc.n_samples = args.samples;
  else if (cfg.contains("samples")) bc.n_samples = cfg["samples"].get<int>();
  bc.plant_rtol = cfg.value("plant_rtol", 1e-8);
  bc.plant_atol = cfg.value("plant_atol", 1e-10);
  bc.disturbance_start = cfg.value("disturbance_start", 30.0);
  bc.disturbance_duration = cfg.value("disturbance_duration", 1.0);
  bc.with_oracle = args.check;

  bench::ChainBenchResult res = bench::run_chain_benchmark(bc);

  std::ostringstream csv;
  bench::write_trajectory_csv(csv, res.rti_run);
  write_text(args.out_csv, csv.str());

  json summary;
  summary["case_study"] = "chain";
  summary["masses"] = bc.params.masses;
  summary["samples"] = bc.n_samples;
  summary["plan"] = plan_echo(bc.plan);
  summary["dr"] = res.dr_rti;
  summary["final_state_error"] = res.final_error;
  summary["solver_failures"] = res.rti_run.n_failures;
  summary["timing"] = timing_json(res.rti_times);
  if (bc.with_oracle) {
    summary["dr_oracle"] = res.dr_oracle;
    summary["rcso"] = res.rcso;
    summary["oracle_failures"] = res.oracle_run.n_failures;
  }
  write_summary(args.out_json, summary);

  std::cout << "chain: DR=" << res.dr_rti << " final_err=" << res.final_error
            << " failures=" << res.rti_run.n_failures;
  if (bc.with_oracle) std::cout << " RCSO=" << res.rcso;
  std::cout << " median_solve_ms=" << 1e3 * res.rti_times.median << "\n";

  if (res.rti_run.n_failures > 0) return kExitSolverFailure;
  if (args.check && (res.rcso > 1e-3 || res.final_error > 1e-2)) return kExitCheckFailed;
  return kExitOk;
}

int run_pendulum(const CommonArgs& args) {
  json cfg = load_config(args.config_path);
  bench::PendulumParams pp;
  sqp::SqpOptions plan = build_plan(cfg, args);
  plan.rti = false;
  if (args.hessian.empty() && !cfg.contains("hessian")) plan.hessian = sqp::HessianMode::Exact;
  if (args.reg.empty() && !cfg.contains("reg")) plan.reg = sqp::Regularization::Project;
  if (plan.max_iter == 100 && args.max_iter <= 0 && !cfg.contains("max_iter"))
    plan.max_iter = 500;

  bench::PendulumBenchResult res = bench::run_pendulum_benchmark(pp, plan);

  std::ostringstream csv;
  sqp::write_stats_csv(csv, res.stats);
  write_text(args.out_csv, csv.str());

  json summary;
  summary["case_study"] = "pendulum";
  summary["plan"] = plan_echo(plan);
  summary["converged"] = res.converged;
  summary["iterations"] = res.stats.iterations;
  summary["stationarity"] = res.final_residuals.stationarity;
  summary["t_total_s"] = res.stats.t_total;
  summary["avg_iteration_s"] =
      res.stats.iterations > 0 ? res.stats.t_total / res.stats.iterations : 0.0;
  write_summary(args.out_json, summary);

  std::cout << "pendulum: converged=" << res.converged << " iterations=" << res.stats.iterations
            << " stationarity=" << res.final_residuals.stationarity << "\n";
  if (!res.converged) return args.check ? kExitCheckFailed : kExitSolverFailure;
  if (args.check && res.final_residuals.stationarity > 1e-6) return kExitCheckFailed;
  return kExitOk;
}

int run_engine(const CommonArgs& args) {
  json cfg = load_config(args.config_path);
  bench::EngineBenchConfig ec;
  ec.plan = build_plan(cfg, args);
  ec.plan.rti = true;
  if (cfg.contains("profile")) {
    ec.profile.clear();
    for (const auto& step : cfg["profile"])
      ec.profile.push_back({step.at("boost").get<double>(), step.at("duration").get<double>()});
  }

  bench::EngineBenchResult res = bench::run_engine_benchmark(ec);

  std::ostringstream csv;
  bench::write_trajectory_csv(csv, res.run);
  write_text(args.out_csv, csv.str());

  double worst_tracking = 0.0;
  for (double e : res.step_tracking_rel_err) worst_tracking = std::max(worst_tracking, e);

  json summary;
  summary["case_study"] = "engine";
  summary["plan"] = plan_echo(ec.plan);
  summary["solver_failures"] = res.run.n_failures;
  summary["worst_bound_violation"] = res.worst_bound_violation;
  summary["step_tracking_rel_err"] = res.step_tracking_rel_err;
  summary["timing"] = timing_json(res.rti_times);
  write_summary(args.out_json, summary);

  std::cout << "engine: failures=" << res.run.n_failures
            << " bound_violation=" << res.worst_bound_violation
            << " worst_tracking=" << 100 * worst_tracking << "%"
            << " median_rti_ms=" << 1e3 * res.rti_times.median << "\n";

  if (res.run.n_failures > 0) return kExitSolverFailure;
  if (args.check && (res.worst_bound_violation > 1e-6 || worst_tracking > 0.02))
    return kExitCheckFailed;
  return kExitOk;
}

int run_qp_bench(const CommonArgs& args) {
  json cfg = load_config(args.config_path);
  int count = args.count > 0 ? args.count : cfg.value("count", 100);
  uint64_t seed = args.seed != 0 ? args.seed : cfg.value("seed", uint64_t{20240601});

  bench::QpEquivalenceResult res = bench::run_qp_equivalence(count, seed);

  json summary;
  summary["instances"] = res.n_instances;
  summary["max_primal_diff"] = res.max_primal_diff;
  summary["max_active_dual_diff"] = res.max_dual_diff;
  summary["max_kkt_residual"] = res.max_kkt;
  summary["all_solved"] = res.all_solved;
  write_summary(args.out_json, summary);

  std::cout << "qp-bench: instances=" << res.n_instances
            << " max_primal_diff=" << res.max_primal_diff << " max_kkt=" << res.max_kkt
            << " all_solved=" << res.all_solved << "\n";
  if (!res.all_solved) return kExitSolverFailure;
  if (args.check && (res.max_primal_diff > 1e-6 || res.max_kkt > 1e-7)) return kExitCheckFailed;
  return kExitOk;
}

int run_integrator_orders(const CommonArgs& args) {
  bench::PendulumParams pp;
  bench::IntegratorOrdersResult res = bench::run_integrator_orders(pp);

  std::ostringstream csv;
  csv << "scheme,h,error\n";
  for (auto& [h, e] : res.err_rk4) csv << "rk4," << h << ',' << e << '\n';
  for (auto& [h, e] : res.err_gl2) csv << "gl2," << h << ',' << e << '\n';
  for (auto& [h, e] : res.err_gl3) csv << "gl3," << h << ',' << e << '\n';
  write_text(args.out_csv, csv.str());

  json summary;
  summary["slope_rk4"] = res.slope_rk4;
  summary["slope_gl2"] = res.slope_gl2;
  summary["slope_gl3"] = res.slope_gl3;
  write_summary(args.out_json, summary);

  std::cout << "integrator-orders: rk4=" << res.slope_rk4 << " gl2=" << res.slope_gl2
            << " gl3=" << res.slope_gl3 << "\n";
  const bool ok = res.slope_rk4 > 3.7 && res.slope_rk4 < 4.3 && res.slope_gl2 > 3.7 &&
                  res.slope_gl2 < 4.3 && res.slope_gl3 > 5.5 && res.slope_gl3 < 6.5;
  if (args.check && !ok) return kExitCheckFailed;
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nmpc benchmark harness"};
  app.require_subcommand(1);
  CommonArgs args;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", args.config_path, "JSON config file");
    sub->add_option("--out-csv", args.out_csv, "trajectory / history CSV path");
    sub->add_option("--out-json", args.out_json, "summary JSON path");
    sub->add_flag("--check", args.check, "verify acceptance bounds, exit 1 on violation");
    sub->add_option("--hessian", args.hessian, "gn|scqp|exact");
    sub->add_option("--reg", args.reg, "none|project|mirror");
    sub->add_option("--qp", args.qp_backend, "structured|condensed-dense");
    sub->add_option("--n2", args.n2, "partial condensing horizon");
    sub->add_option("--max-iter", args.max_iter, "SQP iteration limit");
    sub->add_option("--tol", args.tol, "SQP tolerance (all four residuals)");
    sub->add_option("--seed", args.seed, "random seed");
    sub->add_flag("--no-rti", args.no_rti, "fully converge every sample");
  };

  CLI::App* chain = app.add_subcommand("chain", "chain-of-masses closed loop");
  add_common(chain);
  chain->add_option("--masses", args.masses, "number of masses");
  chain->add_option("--samples", args.samples, "closed-loop samples");

  CLI::App* pendulum = app.add_subcommand("pendulum", "cart-pole swing-up solve");
  add_common(pendulum);

  CLI::App* engine = app.add_subcommand("engine", "turbocharged engine closed loop");
  add_common(engine);

  CLI::App* qpb = app.add_subcommand("qp-bench", "QP solver equivalence study");
  add_common(qpb);
  qpb->add_option("--count", args.count, "number of random instances");

  CLI::App* orders = app.add_subcommand("integrator-orders", "integrator convergence study");
  add_common(orders);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (chain->parsed()) return run_chain(args);
    if (pendulum->parsed()) return run_pendulum(args);
    if (engine->parsed()) return run_engine(args);
    if (qpb->parsed()) return run_qp_bench(args);
    if (orders->parsed()) return run_integrator_orders(args);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "solver error: " << e.what() << "\n";
    return kExitSolverFailure;
  }
  return kExitUsage;
}
