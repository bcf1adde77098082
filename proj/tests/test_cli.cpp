#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <sys/wait.h>

#include "zanim/io.hpp"

using namespace zanim;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int data_rows(const fs::path& p) { return static_cast<int>(read_csv(p).rows.size()); }

class Cli : public ::testing::Test {
 protected:
  fs::path dir;
  std::string err;  // stderr of the last run

  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir = fs::temp_directory_path() / (std::string("zanim_cli_") + info->name() + "_" + std::to_string(std::random_device{}()));
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }

  int run(const std::string& args) {
    const auto errf = dir / "stderr.txt";
    const std::string cmd = "cd '" + dir.string() + "' && '" ZANIM_CLI "' " + args + " > stdout.txt 2> '" + errf.string() + "'";
    const int status = std::system(cmd.c_str());
    err = slurp(errf);
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  // Small scenario-1 data set plus a short fit.
  void simulate_and_fit(const std::string& extra = "", const std::string& out = "fit") {
    ASSERT_EQ(run("simulate --scenario 1 --n 30 --seed 3 --out sim"), 0) << err;
    ASSERT_EQ(run("fit --counts sim/counts.csv --covariates sim/covariates.csv --iters 10 --burnin 5 --thin 1 "
                  "--seed 9 --trees-theta 4 --trees-zeta 4 --out " + out + " " + extra),
              0)
        << err;
  }
};

}  // namespace

TEST_F(Cli, SimulateShapes) {
  ASSERT_EQ(run("simulate --scenario 1 --out s1"), 0) << err;
  EXPECT_EQ(data_rows(dir / "s1/counts.csv"), 400);
  EXPECT_EQ(read_csv(dir / "s1/counts.csv").header.size(), 4u);
  for (const char* f : {"covariates.csv", "theta_true.csv", "zeta_true.csv", "z_true.csv"})
    EXPECT_EQ(data_rows(dir / "s1" / f), 400) << f;

  ASSERT_EQ(run("simulate --scenario 2 --n 100 --out s2"), 0) << err;
  const auto data = load_data(dir / "s2/counts.csv", dir / "s2/covariates.csv");
  EXPECT_EQ(data.n(), 100);
  EXPECT_EQ(data.d(), 20);
  EXPECT_EQ(data.p(), 6);

  ASSERT_EQ(run("simulate --scenario 2 --n 100 --out s3"), 0) << err;
  EXPECT_EQ(slurp(dir / "s2/counts.csv"), slurp(dir / "s3/counts.csv"));
  ASSERT_EQ(run("simulate --scenario 2 --n 100 --seed 2 --out s4"), 0) << err;
  EXPECT_NE(slurp(dir / "s2/counts.csv"), slurp(dir / "s4/counts.csv"));
  EXPECT_EQ(run("simulate --scenario 3 --out s5"), 1);
}

TEST_F(Cli, FitOutputsAndDeterminism) {
  simulate_and_fit();
  // 5 kept iterations x 30 rows x 4 categories.
  EXPECT_EQ(data_rows(dir / "fit/theta.csv"), 5 * 30 * 4);
  EXPECT_EQ(data_rows(dir / "fit/zeta.csv"), 5 * 30 * 4);
  EXPECT_EQ(data_rows(dir / "fit/hyper.csv"), 5);
  EXPECT_EQ(data_rows(dir / "fit/usage.csv"), 5 * 4 * 2 * 1);
  EXPECT_FALSE(fs::exists(dir / "fit/trees.txt"));
  ASSERT_EQ(run("fit --counts sim/counts.csv --covariates sim/covariates.csv --iters 10 --burnin 5 --thin 1 "
                "--seed 9 --trees-theta 4 --trees-zeta 4 --workers 3 --out again"),
            0)
      << err;
  for (const auto& e : fs::directory_iterator(dir / "fit")) {
    if (e.path().filename() == "manifest.json") continue;
    EXPECT_EQ(slurp(e.path()), slurp(dir / "again" / e.path().filename())) << e.path().filename();
  }
  // Every emitted file re-parses under the load rules.
  for (const auto& e : fs::directory_iterator(dir / "fit")) {
    if (e.path().extension() == ".csv") {
      EXPECT_NO_THROW(read_csv(e.path())) << e.path();
    }
  }
}

TEST_F(Cli, MultinomialModelHasZeroZeta) {
  simulate_and_fit("--model multinomial-bart");
  const auto t = read_csv(dir / "fit/zeta.csv");
  ASSERT_EQ(t.rows.size(), 5u * 30 * 4);
  for (std::size_t r = 0; r < t.rows.size(); ++r) EXPECT_EQ(parse_real(t, r, 3), 0.0);
}

TEST_F(Cli, ManifestMatchesSamplerTallies) {
  simulate_and_fit("--model zanim-ln-bart --k-zeta 0.5");
  const auto data = load_data(dir / "sim/counts.csv", dir / "sim/covariates.csv");
  SamplerConfig cfg;
  cfg.variant = Variant::ZanimLnBart;
  cfg.iterations = 10;
  cfg.burn_in = 5;
  cfg.seed = 9;
  cfg.trees_theta = cfg.trees_zeta = 4;
  cfg.k_zeta = 0.5;
  const auto draws = run_mcmc(data, cfg);
  const auto m = read_manifest(dir / "fit");
  const char* kinds[] = {"grow", "prune", "change"};
  for (int k = 0; k < 3; ++k) {
    const auto& th = m["moves"]["theta"][kinds[k]];
    const auto& ze = m["moves"]["zeta"][kinds[k]];
    EXPECT_EQ(th["proposed"].get<long>(), draws.summary.theta_moves.proposed[k]);
    EXPECT_EQ(th["accepted"].get<long>(), draws.summary.theta_moves.accepted[k]);
    EXPECT_EQ(ze["proposed"].get<long>(), draws.summary.zeta_moves.proposed[k]);
    EXPECT_EQ(ze["accepted"].get<long>(), draws.summary.zeta_moves.accepted[k]);
    EXPECT_GE(th["rate"].get<double>(), 0.0);
    EXPECT_LE(th["rate"].get<double>(), 1.0);
  }
  EXPECT_EQ(m["seed"].get<int>(), 9);
  EXPECT_EQ(m["config"]["iters"].get<int>(), 10);
  EXPECT_EQ(m["config"]["k_zeta"].get<double>(), 0.5);
  EXPECT_TRUE(m.contains("started") && m.contains("finished") && m.contains("version"));
  EXPECT_EQ(m["leaf_clamp_events"].get<long>(), draws.summary.clamp_events);
  EXPECT_TRUE(fs::exists(dir / "fit/u.csv"));
  EXPECT_TRUE(fs::exists(dir / "fit/sigma_u.csv"));
}

TEST_F(Cli, DiagnoseWithAndWithoutTruth) {
  simulate_and_fit();
  ASSERT_EQ(run("diagnose --draws fit --counts sim/counts.csv --truth sim --out diag"), 0) << err;
  const auto kl = read_csv(dir / "diag/kl_trace.csv");
  EXPECT_EQ(kl.header, (std::vector<std::string>{"iter", "kl_theta", "kl_zeta"}));
  EXPECT_EQ(kl.rows.size(), 5u);
  EXPECT_EQ(data_rows(dir / "diag/mppi.csv"), 4 * 2 * 1);
  EXPECT_EQ(data_rows(dir / "diag/rps.csv"), 4);
  EXPECT_EQ(data_rows(dir / "diag/frobenius_trace.csv"), 5);
  EXPECT_EQ(data_rows(dir / "diag/waic.csv"), 1);

  ASSERT_EQ(run("diagnose --draws fit --counts sim/counts.csv --out diag2"), 0) << err;
  EXPECT_FALSE(fs::exists(dir / "diag2/kl_trace.csv"));
  EXPECT_NE(slurp(dir / "stdout.txt").find("skipping kl_trace.csv"), std::string::npos);
  for (const char* f : {"waic.csv", "rps.csv", "frobenius_trace.csv", "mppi.csv"})
    EXPECT_TRUE(fs::exists(dir / "diag2" / f)) << f;

  EXPECT_EQ(run("diagnose --draws nowhere --counts sim/counts.csv --out diag3"), 1);
  EXPECT_NE(err.find("nowhere"), std::string::npos);
}

TEST_F(Cli, PartialDependenceTable) {
  simulate_and_fit("--snapshot-trees");
  ASSERT_EQ(run("pdp --draws fit --covariate x --grid-points 31 --out pdp.csv"), 0) << err;
  const auto t = read_csv(dir / "pdp.csv");
  EXPECT_EQ(t.header, (std::vector<std::string>{"grid_value", "category", "level", "q025", "median", "q975"}));
  ASSERT_EQ(t.rows.size(), 31u * 4 * 2);
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    EXPECT_LE(parse_real(t, r, 3), parse_real(t, r, 4));
    EXPECT_LE(parse_real(t, r, 4), parse_real(t, r, 5));
  }
  EXPECT_EQ(run("pdp --draws fit --covariate nope --out pdp2.csv"), 1);
  EXPECT_NE(err.find("unknown covariate 'nope'"), std::string::npos);
}

TEST_F(Cli, PdpWithoutSnapshotsExplainsTheFix) {
  simulate_and_fit();
  EXPECT_EQ(run("pdp --draws fit --covariate x --out pdp.csv"), 1);
  EXPECT_NE(err.find("--snapshot-trees"), std::string::npos) << err;
}

TEST_F(Cli, ValidationFailuresExitWithOne) {
  ASSERT_EQ(run("simulate --scenario 1 --n 20 --out sim"), 0) << err;
  EXPECT_EQ(run("fit --counts sim/counts.csv --covariates sim/covariates.csv --model zinb --out f"), 1);
  EXPECT_EQ(run("fit --counts sim/counts.csv --covariates sim/covariates.csv --iters 5 --burnin 5 --out f"), 1);
  EXPECT_NE(err.find("burn-in"), std::string::npos) << err;
  EXPECT_EQ(run("fit --counts missing.csv --covariates sim/covariates.csv --out f"), 1);
  EXPECT_NE(err.find("missing.csv"), std::string::npos);
  std::ofstream(dir / "neg.csv") << "a,b\n1,-2\n";
  std::ofstream(dir / "x.csv") << "t\n0.5\n";
  EXPECT_EQ(run("fit --counts neg.csv --covariates x.csv --out f"), 1);
  EXPECT_NE(err.find("neg.csv:2: column 'b'"), std::string::npos) << err;
  EXPECT_EQ(run("frobnicate"), 1);
  EXPECT_EQ(run("--version"), 0);
}

TEST_F(Cli, ConfigFileWithFlagOverride) {
  ASSERT_EQ(run("simulate --scenario 1 --n 20 --out sim"), 0) << err;
  std::ofstream(dir / "run.cfg") << "fit.counts = sim/counts.csv\nfit.covariates = sim/covariates.csv\n"
                                    "fit.iters = 12\nfit.burnin = 4\nfit.trees-theta = 3\nfit.trees-zeta = 3\n";
  ASSERT_EQ(run("--config run.cfg fit --burnin 10 --out f"), 0) << err;
  EXPECT_EQ(data_rows(dir / "f/hyper.csv"), 2);
  EXPECT_EQ(read_manifest(dir / "f")["config"]["trees_theta"].get<int>(), 3);
  std::ofstream(dir / "bad.cfg") << "fit.iterz = 12\n";
  EXPECT_EQ(run("--config bad.cfg fit --counts sim/counts.csv --covariates sim/covariates.csv --out g"), 1);
}
