// Command-line front end: fit, simulate, diagnose, pdp.
// Exit codes: 0 success, 1 invalid input, 2 numerical failure.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <map>

#include <CLI11.hpp>
#include <json.hpp>

#include "zanim/diagnostics.hpp"
#include "zanim/io.hpp"
#include "zanim/sampler.hpp"
#include "zanim/simgen.hpp"

namespace fs = std::filesystem;
using namespace zanim;

namespace {

constexpr const char* kVersion = "zanim 0.1.0";

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

struct FitArgs {
  std::string counts, covariates, model = "zanim-bart", out;
  int iters = 10000, burnin = 5000, thin = 1, trees_theta = 200, trees_zeta = 200, workers = 1, factors = -1;
  std::uint64_t seed = 1;
  bool sparse = false, snapshot = false, fixed_a_lambda = false;
  double a_lambda = 3.5 / std::numbers::sqrt2;
  double k_zeta = 2.0;
};

int run_fit(const FitArgs& a) {
  const auto data = load_data(a.counts, a.covariates);
  SamplerConfig cfg;
  cfg.variant = parse_variant(a.model);
  cfg.iterations = a.iters;
  cfg.burn_in = a.burnin;
  cfg.thin = a.thin;
  cfg.seed = a.seed;
  cfg.sparse_splits = a.sparse;
  cfg.trees_theta = a.trees_theta;
  cfg.trees_zeta = a.trees_zeta;
  cfg.snapshot_trees = a.snapshot;
  cfg.workers = a.workers;
  cfg.factors = a.factors;
  cfg.a_lambda = a.a_lambda;
  cfg.k_zeta = a.k_zeta;
  cfg.update_a_lambda = !a.fixed_a_lambda;
  cfg.validate();

  const std::string started = utc_now();
  const auto draws = run_mcmc(data, cfg);
  nlohmann::ordered_json extra;
  extra["version"] = kVersion;
  extra["seed"] = a.seed;
  extra["started"] = started;
  extra["finished"] = utc_now();
  extra["seconds"] = draws.summary.seconds;
  extra["config"] = {{"counts", a.counts},
                     {"covariates", a.covariates},
                     {"model", a.model},
                     {"iters", a.iters},
                     {"burnin", a.burnin},
                     {"thin", a.thin},
                     {"trees_theta", a.trees_theta},
                     {"trees_zeta", a.trees_zeta},
                     {"sparse_splits", a.sparse},
                     {"snapshot_trees", a.snapshot},
                     {"a_lambda", a.a_lambda},
                     {"fixed_a_lambda", a.fixed_a_lambda},
                     {"k_zeta", a.k_zeta},
                     {"factors", a.factors},
                     {"workers", a.workers}};
  write_draws(a.out, draws, data, extra);
  std::cout << "kept " << draws.draws.size() << " draws in " << draws.summary.seconds << " s; wrote " << a.out << '\n';
  return 0;
}

template <class M>
void write_wide(const fs::path& p, const std::vector<std::string>& names, const M& m) {
  write_matrix_csv(p, names, m);
}

int run_simulate(int scenario, int n, std::uint64_t seed, std::uint64_t coef_seed, bool shared, const fs::path& out) {
  fs::create_directories(out);
  Rng rng(seed);
  SimulatedData sim;
  if (scenario == 1) {
    Scenario1Config c;
    if (n > 0) c.n = n;
    if (coef_seed) c.coefficient_seed = coef_seed;
    sim = gen_scenario1(c, rng);
  } else if (scenario == 2) {
    Scenario2Config c;
    if (n > 0) c.n = n;
    c.shared_covariates = shared;
    sim = gen_scenario2(c, rng);
  } else {
    throw ValidationError("--scenario must be 1 or 2");
  }
  save_data(sim.data, out / "counts.csv", out / "covariates.csv");
  const auto& cats = sim.data.categories;
  write_wide(out / "theta_true.csv", cats, sim.theta);
  write_wide(out / "zeta_true.csv", cats, sim.zeta);
  write_wide(out / "z_true.csv", cats, sim.z.cast<int>().eval());
  std::cout << "wrote " << sim.data.n() << " rows, " << sim.data.d() << " categories to " << out << '\n';
  return 0;
}

Eigen::MatrixXd read_wide(const fs::path& p, int rows, int cols) {
  const auto t = read_csv(p);
  if (static_cast<int>(t.rows.size()) != rows || static_cast<int>(t.header.size()) != cols)
    throw ValidationError(p.string() + ": expected " + std::to_string(rows) + " rows and " + std::to_string(cols) +
                          " columns");
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = parse_real(t, i, j);
  return m;
}

int run_diagnose(const fs::path& draws_dir, const fs::path& counts, const std::string& truth, const fs::path& out,
                 std::uint64_t seed) {
  if (!fs::exists(draws_dir / "manifest.json")) throw ValidationError("no manifest.json in " + draws_dir.string());
  const auto data = load_data(counts, draws_dir / "covariates.csv");
  const auto draws = read_draws(draws_dir);
  require(draws.n == data.n() && draws.d == data.d(), "counts file does not match the draws");
  require(!draws.draws.empty(), "no draws in " + draws_dir.string());
  fs::create_directories(out);
  Rng rng(seed);

  const auto w = waic(draws, data, rng);
  {
    std::ofstream f(out / "waic.csv");
    f << "waic,lppd,p_waic,mc_evaluations,max_mc_std_error\n"
      << format_double(w.waic) << ',' << format_double(w.lppd) << ',' << format_double(w.p_waic) << ','
      << w.mc_evaluations << ',' << format_double(w.max_mc_std_error) << '\n';
  }
  {
    const auto pred = posterior_predictive(draws, data, rng);
    std::vector<int> rows;
    for (int i = 0; i < data.n(); ++i)
      if (data.totals[i] > 0) rows.push_back(i);
    std::ofstream f(out / "rps.csv");
    f << "category,rps\n";
    for (int j = 0; j < data.d(); ++j) {
      Eigen::MatrixXd rel(static_cast<Eigen::Index>(pred.size()), static_cast<Eigen::Index>(rows.size()));
      std::vector<double> obs(rows.size());
      for (std::size_t r = 0; r < rows.size(); ++r) {
        const int i = rows[r];
        obs[r] = static_cast<double>(data.counts(i, j)) / data.totals[i];
        for (std::size_t t = 0; t < pred.size(); ++t)
          rel(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(r)) =
              static_cast<double>(pred[t](i, j)) / data.totals[i];
      }
      f << csv_field(data.categories[j]) << ',' << format_double(rps(rel, obs)) << '\n';
    }
  }
  if (!truth.empty()) {
    const fs::path tdir(truth);
    const auto th = read_wide(tdir / "theta_true.csv", data.n(), data.d());
    const auto ze = read_wide(tdir / "zeta_true.csv", data.n(), data.d());
    std::ofstream f(out / "kl_trace.csv");
    f << "iter,kl_theta,kl_zeta\n";
    for (const auto& k : kl_traces(draws, th, ze))
      f << k.iteration << ',' << format_double(k.theta) << ',' << format_double(k.zeta) << '\n';
  } else {
    std::cout << "no --truth given; skipping kl_trace.csv\n";
  }
  if (draws.draws.front().vartheta.size() > 0) {
    const auto fr = frobenius_trace(draws, data);
    std::ofstream f(out / "frobenius_trace.csv");
    f << "iter,frobenius\n";
    for (std::size_t t = 0; t < fr.size(); ++t) f << draws.draws[t].iteration << ',' << format_double(fr[t]) << '\n';
    std::cout << "frobenius trace ESS " << effective_sample_size(fr) << " of " << fr.size() << '\n';
  } else {
    std::cout << "draws carry no fitted probabilities; skipping frobenius_trace.csv\n";
  }
  {
    const auto m = mppi(draws);
    std::ofstream f(out / "mppi.csv");
    f << "category,level,covariate,mppi\n";
    for (int j = 0; j < draws.d; ++j)
      for (int level = 0; level < 2; ++level)
        for (int k = 0; k < draws.p; ++k)
          f << csv_field(draws.categories[j]) << ',' << (level == 0 ? "theta" : "zeta") << ','
            << csv_field(draws.covariates[k]) << ',' << format_double(m[draws.usage_index(j, level, k)]) << '\n';
  }
  std::cout << "WAIC " << w.waic << " (lppd " << w.lppd << ", p_waic " << w.p_waic << "); wrote " << out << '\n';
  return 0;
}

int run_pdp(const fs::path& draws_dir, const std::string& covariate, int grid_points, int max_rows,
            const fs::path& out) {
  if (!fs::exists(draws_dir / "manifest.json")) throw ValidationError("no manifest.json in " + draws_dir.string());
  if (!fs::exists(draws_dir / "trees.txt"))
    throw ValidationError("no tree snapshots in " + draws_dir.string() + "; re-run fit with --snapshot-trees");
  require(grid_points >= 2, "--grid-points must be at least 2");
  const auto draws = read_draws(draws_dir);
  const auto xt = read_csv(draws_dir / "covariates.csv");
  int k = -1;
  for (int c = 0; c < static_cast<int>(xt.header.size()); ++c)
    if (xt.header[c] == covariate) k = c;
  if (k < 0) throw ValidationError("unknown covariate '" + covariate + "'");
  const int n = static_cast<int>(xt.rows.size());
  const int keep = max_rows > 0 ? std::min(max_rows, n) : n;
  Eigen::MatrixXd x(keep, static_cast<Eigen::Index>(xt.header.size()));
  for (int r = 0; r < keep; ++r) {
    const int i = static_cast<int>(static_cast<long>(r) * n / keep);
    for (int c = 0; c < x.cols(); ++c) x(r, c) = parse_real(xt, i, c);
  }
  double lo = parse_real(xt, 0, k), hi = lo;
  for (int i = 1; i < n; ++i) {
    lo = std::min(lo, parse_real(xt, i, k));
    hi = std::max(hi, parse_real(xt, i, k));
  }
  std::vector<double> grid(grid_points);
  for (int g = 0; g < grid_points; ++g) grid[g] = lo + (hi - lo) * g / (grid_points - 1.0);
  const auto rows = partial_dependence(draws, x, k, grid);
  std::ofstream f(out);
  if (!f) throw ValidationError("cannot write " + out.string());
  f << "grid_value,category,level,q025,median,q975\n";
  for (const auto& r : rows)
    f << format_double(r.grid_value) << ',' << csv_field(draws.categories[r.category]) << ','
      << (r.level == 0 ? "theta" : "zeta") << ',' << format_double(r.q025) << ',' << format_double(r.median) << ','
      << format_double(r.q975) << '\n';
  std::cout << "wrote " << rows.size() << " rows to " << out << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Zero-inflated count-compositional regression with BART"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  app.set_config("--config", "", "key = value lines such as fit.iters = 2000; command-line flags take precedence");
  app.allow_config_extras(CLI::config_extras_mode::error);

  FitArgs fa;
  auto* fit = app.add_subcommand("fit", "run the MCMC sampler");
  fit->add_option("--counts", fa.counts, "counts CSV")->required();
  fit->add_option("--covariates", fa.covariates, "covariates CSV")->required();
  fit->add_option("--model", fa.model, "zanim-bart, zanim-ln-bart or multinomial-bart")
      ->check(CLI::IsMember({"zanim-bart", "zanim-ln-bart", "multinomial-bart"}));
  fit->add_option("--iters", fa.iters, "total iterations including burn-in");
  fit->add_option("--burnin", fa.burnin);
  fit->add_option("--thin", fa.thin);
  fit->add_option("--seed", fa.seed);
  fit->add_flag("--sparse-splits", fa.sparse, "Dirichlet prior on split probabilities");
  fit->add_option("--trees-theta", fa.trees_theta);
  fit->add_option("--trees-zeta", fa.trees_zeta);
  fit->add_flag("--snapshot-trees", fa.snapshot, "store forests for prediction and pdp");
  fit->add_option("--workers", fa.workers, "threads; results do not depend on this");
  fit->add_option("--factors", fa.factors, "latent factors for zanim-ln-bart (-1: Ledermann bound)");
  fit->add_option("--a-lambda", fa.a_lambda, "initial (or fixed) log-linear leaf scale");
  fit->add_flag("--fixed-a-lambda", fa.fixed_a_lambda);
  fit->add_option("--k-zeta", fa.k_zeta, "probit leaf scale: sigma_mu = 0.5 / (k sqrt(trees-zeta))");
  fit->add_option("--out", fa.out, "output directory")->required();

  int scenario = 1, sim_n = 0;
  std::uint64_t sim_seed = 1, coef_seed = 0;
  bool shared = false;
  std::string sim_out;
  auto* sim = app.add_subcommand("simulate", "generate a simulation-study data set");
  sim->add_option("--scenario", scenario)->required()->check(CLI::IsMember({1, 2}));
  sim->add_option("--n", sim_n, "rows (default 400 for scenario 1, 500 for scenario 2)");
  sim->add_option("--seed", sim_seed);
  sim->add_option("--coefficient-seed", coef_seed, "scenario 1 spline coefficient seed");
  sim->add_flag("--shared-covariates", shared, "scenario 2: theta and zeta use the same covariates");
  sim->add_option("--out", sim_out)->required();

  std::string dg_draws, dg_counts, dg_truth, dg_out;
  std::uint64_t dg_seed = 1;
  auto* dg = app.add_subcommand("diagnose", "WAIC, RPS, KL, Frobenius and MPPI tables");
  dg->add_option("--draws", dg_draws)->required();
  dg->add_option("--counts", dg_counts)->required();
  dg->add_option("--truth", dg_truth, "directory with theta_true.csv and zeta_true.csv");
  dg->add_option("--seed", dg_seed, "seed for posterior-predictive draws");
  dg->add_option("--out", dg_out)->required();

  std::string pd_draws, pd_cov, pd_out;
  int pd_grid = 31, pd_rows = 0;
  auto* pd = app.add_subcommand("pdp", "partial dependence table for one covariate");
  pd->add_option("--draws", pd_draws)->required();
  pd->add_option("--covariate", pd_cov)->required();
  pd->add_option("--grid-points", pd_grid);
  pd->add_option("--reference-rows", pd_rows, "subsample of training rows (0: all)");
  pd->add_option("--out", pd_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*fit) return run_fit(fa);
    if (*sim) return run_simulate(scenario, sim_n, sim_seed, coef_seed, shared, sim_out);
    if (*dg) return run_diagnose(dg_draws, dg_counts, dg_truth, dg_out, dg_seed);
    if (*pd) return run_pdp(pd_draws, pd_cov, pd_grid, pd_rows, pd_out);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
