#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>

#include "zanim/io.hpp"

using namespace zanim;
namespace fs = std::filesystem;

namespace {

class TempDir : public ::testing::Test {
 protected:
  fs::path dir;
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir = fs::temp_directory_path() / (std::string("zanim_") + info->test_suite_name() + "_" + info->name() + "_" +
                                       std::to_string(std::random_device{}()));
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }

  fs::path write(const std::string& name, const std::string& text) const {
    std::ofstream(dir / name, std::ios::binary) << text;
    return dir / name;
  }
};

std::string message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ValidationError& e) {
    return e.what();
  }
  return "<no error>";
}

}  // namespace

TEST(Csv, QuotingAndLineEndings) {
  const auto t = parse_csv("a,\"b,c\",\"say \"\"hi\"\"\"\r\n1,\"two\nlines\",3\r\n4,,\"\"\n");
  ASSERT_EQ(t.header.size(), 3u);
  EXPECT_EQ(t.header[1], "b,c");
  EXPECT_EQ(t.header[2], "say \"hi\"");
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.rows[0][1], "two\nlines");
  EXPECT_EQ(t.rows[1][1], "");
  EXPECT_EQ(t.rows[1][2], "");
  EXPECT_EQ(t.line_of_row[0], 2);
  EXPECT_EQ(t.line_of_row[1], 4);
  // No trailing newline, blank lines skipped.
  const auto u = parse_csv("x,y\n\n1,2");
  ASSERT_EQ(u.rows.size(), 1u);
  EXPECT_EQ(u.rows[0][1], "2");
  for (const std::string s : {"plain", "a,b", "q\"q", "line\nbreak"}) EXPECT_EQ(parse_csv(csv_field(s)).header[0], s);
}

TEST(Csv, ErrorsCarryTheLocus) {
  EXPECT_NE(message_of([] { parse_csv("a,b\n1,\"2\n", "f.csv"); }).find("f.csv:2: unterminated"), std::string::npos);
  EXPECT_NE(message_of([] { parse_csv("a,b\n1,2\n3\n", "f.csv"); }).find("f.csv:3: expected 2 fields, found 1"),
            std::string::npos);
  EXPECT_NE(message_of([] { parse_csv("", "f.csv"); }).find("f.csv: empty file"), std::string::npos);
}

TEST(Csv, ShortestRoundTripDoubles) {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 0.0, 5e-324}) {
    const auto s = format_double(v);
    EXPECT_EQ(std::strtod(s.c_str(), nullptr), v) << s;
  }
  EXPECT_EQ(format_double(0.1), "0.1");
}

using LoadData = TempDir;

TEST_F(LoadData, TotalsAreRowSums) {
  const auto c = write("counts.csv", "a,b,c\n1,2,3\n0,0,5\n");
  const auto x = write("x.csv", "temp,\"rain, mm\"\n0.5,1\n-1,2e3\n");
  const auto data = load_data(c, x);
  EXPECT_EQ(data.n(), 2);
  EXPECT_EQ(data.d(), 3);
  EXPECT_EQ(data.p(), 2);
  EXPECT_EQ(data.totals, (std::vector<int>{6, 5}));
  EXPECT_EQ(data.categories, (std::vector<std::string>{"a", "b", "c"}));
  EXPECT_EQ(data.x.names()[1], "rain, mm");
  EXPECT_EQ(data.x(1, 1), 2000.0);
}

TEST_F(LoadData, RejectsBadCellsWithLocus) {
  const auto x = write("x.csv", "t\n1\n2\n");
  auto msg = [&](const std::string& counts) {
    const auto c = write("counts.csv", counts);
    return message_of([&] { load_data(c, x); });
  };
  EXPECT_NE(msg("a,b\n1,2\n3,-4\n").find("counts.csv:3: column 'b': counts must be nonnegative"), std::string::npos);
  EXPECT_NE(msg("a,b\n1,2.5\n3,4\n").find("counts.csv:2: column 'b': '2.5' is not an integer"), std::string::npos);
  EXPECT_NE(msg("a,b\n1,2\n3\n").find("counts.csv:3: expected 2 fields"), std::string::npos);
  EXPECT_NE(msg("a,b\n1,2\n").find("row count mismatch"), std::string::npos);
  EXPECT_NE(msg("").find("empty file"), std::string::npos);
  EXPECT_NE(msg("a,b\n1,\n3,4\n").find("column 'b'"), std::string::npos);
  const auto c = write("counts.csv", "a,b\n1,2\n3,4\n");
  const auto bad_x = write("bad_x.csv", "t\n1\nabc\n");
  EXPECT_NE(message_of([&] { load_data(c, bad_x); }).find("bad_x.csv:3: column 't': 'abc' is not a number"),
            std::string::npos);
  EXPECT_NE(message_of([&] { load_data(dir / "missing.csv", x); }).find("cannot open"), std::string::npos);
}

TEST_F(LoadData, SaveLoadRoundTrip) {
  Rng g(1);
  Eigen::MatrixXi y(25, 4);
  Eigen::MatrixXd x(25, 3);
  for (Eigen::Index k = 0; k < y.size(); ++k) y.data()[k] = uniform01(g) < 0.3 ? 0 : int(1000 * uniform01(g));
  for (Eigen::Index k = 0; k < x.size(); ++k) x.data()[k] = std::ldexp(std_normal(g), int(40 * uniform01(g)) - 20);
  const CountData data(y, CovariateMatrix(x, {"x,1", "x\"2", "x3"}), {"s p", "b", "c,d", "e"});
  save_data(data, dir / "c.csv", dir / "x.csv");
  const auto back = load_data(dir / "c.csv", dir / "x.csv");
  EXPECT_TRUE(back.counts == data.counts);
  EXPECT_TRUE(back.x.values() == data.x.values());
  EXPECT_EQ(back.categories, data.categories);
  EXPECT_EQ(back.x.names(), data.x.names());
  EXPECT_EQ(back.totals, data.totals);
}

using Draws = TempDir;

TEST_F(Draws, WriteReadRoundTrip) {
  Rng g(2);
  const int n = 30, d = 3;
  Eigen::MatrixXd x(n, 2);
  Eigen::MatrixXi y(n, d);
  for (int i = 0; i < n; ++i) {
    x(i, 0) = uniform01(g);
    x(i, 1) = std_normal(g);
    const auto c = multinomial(g, 25, std::vector<double>{x(i, 0) < 0.5 ? 3.0 : 0.2, 1.0, uniform01(g) < 0.3 ? 0.0 : 1.0});
    for (int j = 0; j < d; ++j) y(i, j) = c[j];
  }
  const CountData data(y, CovariateMatrix(x, {"x1", "x2"}), {"a", "b,c", "d"});
  SamplerConfig cfg;
  cfg.variant = Variant::ZanimLnBart;
  cfg.trees_theta = cfg.trees_zeta = 4;
  cfg.iterations = 14;
  cfg.burn_in = 8;
  cfg.thin = 2;
  cfg.snapshot_trees = true;
  const auto draws = run_mcmc(data, cfg);
  write_draws(dir / "out", draws, data);
  const auto back = read_draws(dir / "out");
  EXPECT_EQ(back.variant, draws.variant);
  EXPECT_EQ(back.n, n);
  EXPECT_EQ(back.d, d);
  EXPECT_EQ(back.p, 2);
  EXPECT_EQ(back.categories, draws.categories);
  EXPECT_EQ(back.covariates, draws.covariates);
  ASSERT_EQ(back.draws.size(), draws.draws.size());
  for (std::size_t t = 0; t < draws.draws.size(); ++t) {
    const auto &a = draws.draws[t], &b = back.draws[t];
    EXPECT_EQ(a.iteration, b.iteration);
    EXPECT_TRUE(a.theta == b.theta);
    EXPECT_TRUE(a.zeta == b.zeta);
    EXPECT_TRUE(a.vartheta == b.vartheta);
    EXPECT_TRUE(a.u == b.u);
    EXPECT_TRUE(a.sigma_u == b.sigma_u);
    EXPECT_EQ(a.a_lambda, b.a_lambda);
    EXPECT_EQ(a.usage, b.usage);
    ASSERT_EQ(b.theta_trees.size(), std::size_t(d));
    for (int j = 0; j < d; ++j) {
      ASSERT_EQ(a.theta_trees[j].size(), b.theta_trees[j].size());
      for (std::size_t h = 0; h < a.theta_trees[j].size(); ++h) {
        EXPECT_TRUE(a.theta_trees[j].tree(h).same_as(b.theta_trees[j].tree(h)));
        EXPECT_TRUE(a.zeta_trees[j].tree(h).same_as(b.zeta_trees[j].tree(h)));
      }
    }
  }
  const auto p1 = predict(draws, x), p2 = predict(back, x);
  for (std::size_t t = 0; t < p1.size(); ++t) {
    EXPECT_TRUE(p1[t].theta == p2[t].theta);
    EXPECT_TRUE(p1[t].zeta == p2[t].zeta);
  }
  const auto m = read_manifest(dir / "out");
  EXPECT_EQ(m.at("draws").get<int>(), 3);
  for (const char* level : {"theta", "zeta"})
    for (const char* k : {"grow", "prune", "change"}) {
      const double r = m["moves"][level][k]["rate"].get<double>();
      EXPECT_GE(r, 0.0);
      EXPECT_LE(r, 1.0);
    }
}

TEST_F(Draws, ReadErrorsAreValidationErrors) {
  EXPECT_THROW(read_draws(dir), ValidationError);
  write("manifest.json", "{ not json");
  EXPECT_THROW(read_draws(dir), ValidationError);
  write("manifest.json", R"({"model": "zanim-bart"})");
  EXPECT_THROW(read_draws(dir), ValidationError);
}
