#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "zanim/errors.hpp"
#include "zanim/sampler.hpp"
#include "zanim/tree.hpp"

namespace zanim {

struct CsvTable {
  std::string source;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<int> line_of_row;  // 1-based source line of each data row
};

// RFC 4180: comma separated, optional double-quoted fields with "" escapes, LF or CRLF.
inline CsvTable parse_csv(std::string_view text, const std::string& source = "<csv>") {
  CsvTable t;
  t.source = source;
  std::vector<std::vector<std::string>> records;
  std::vector<int> lines;
  std::vector<std::string> rec;
  std::string field;
  bool quoted = false, field_started = false;
  int line = 1, rec_line = 1, quote_line = 1;
  auto end_field = [&] {
    rec.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_record = [&] {
    end_field();
    if (!(rec.size() == 1 && rec[0].empty())) {
      records.push_back(std::move(rec));
      lines.push_back(rec_line);
    }
    rec.clear();
  };
  for (std::size_t k = 0; k < text.size(); ++k) {
    const char c = text[k];
    if (quoted) {
      if (c == '"') {
        if (k + 1 < text.size() && text[k + 1] == '"') {
          field += '"';
          ++k;
        } else {
          quoted = false;
        }
      } else {
        if (c == '\n') ++line;
        field += c;
      }
      continue;
    }
    if (c == '"' && !field_started) {
      quoted = true;
      quote_line = line;
      field_started = true;
    } else if (c == ',') {
      end_field();
    } else if (c == '\r') {
      continue;
    } else if (c == '\n') {
      end_record();
      rec_line = ++line;
    } else {
      field += c;
      field_started = true;
    }
  }
  if (quoted) throw ValidationError(source + ":" + std::to_string(quote_line) + ": unterminated quoted field");
  if (!field.empty() || !rec.empty()) end_record();
  if (records.empty()) throw ValidationError(source + ": empty file");
  t.header = std::move(records[0]);
  for (std::size_t r = 1; r < records.size(); ++r) {
    if (records[r].size() != t.header.size())
      throw ValidationError(source + ":" + std::to_string(lines[r]) + ": expected " + std::to_string(t.header.size()) +
                            " fields, found " + std::to_string(records[r].size()));
    t.rows.push_back(std::move(records[r]));
    t.line_of_row.push_back(lines[r]);
  }
  return t;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline CsvTable read_csv(const std::filesystem::path& path) { return parse_csv(read_file(path), path.string()); }

inline std::string csv_locus(const CsvTable& t, std::size_t row, std::size_t col) {
  return t.source + ":" + std::to_string(t.line_of_row[row]) + ": column '" + t.header[col] + "'";
}

inline long parse_integer(const CsvTable& t, std::size_t row, std::size_t col) {
  const auto& s = t.rows[row][col];
  long v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ValidationError(csv_locus(t, row, col) + ": '" + s + "' is not an integer");
  return v;
}

inline double parse_real(const CsvTable& t, std::size_t row, std::size_t col) {
  const auto& s = t.rows[row][col];
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ValidationError(csv_locus(t, row, col) + ": '" + s + "' is not a number");
  if (!std::isfinite(v)) throw ValidationError(csv_locus(t, row, col) + ": value is not finite");
  return v;
}

// Shortest representation that reads back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

inline CountData load_data(const std::filesystem::path& counts_path, const std::filesystem::path& covariates_path) {
  const auto ct = read_csv(counts_path);
  const auto xt = read_csv(covariates_path);
  if (ct.rows.size() != xt.rows.size())
    throw ValidationError("row count mismatch: " + ct.source + " has " + std::to_string(ct.rows.size()) + " rows, " +
                          xt.source + " has " + std::to_string(xt.rows.size()));
  const auto n = static_cast<Eigen::Index>(ct.rows.size());
  require(n > 0, ct.source + ": no data rows");
  Eigen::MatrixXi y(n, static_cast<Eigen::Index>(ct.header.size()));
  for (Eigen::Index i = 0; i < n; ++i)
    for (std::size_t j = 0; j < ct.header.size(); ++j) {
      const long v = parse_integer(ct, i, j);
      if (v < 0) throw ValidationError(csv_locus(ct, i, j) + ": counts must be nonnegative");
      if (v > std::numeric_limits<int>::max()) throw ValidationError(csv_locus(ct, i, j) + ": count too large");
      y(i, static_cast<Eigen::Index>(j)) = static_cast<int>(v);
    }
  Eigen::MatrixXd x(n, static_cast<Eigen::Index>(xt.header.size()));
  for (Eigen::Index i = 0; i < n; ++i)
    for (std::size_t k = 0; k < xt.header.size(); ++k) x(i, static_cast<Eigen::Index>(k)) = parse_real(xt, i, k);
  return CountData(std::move(y), CovariateMatrix(std::move(x), xt.header), ct.header);
}

template <class Matrix>
void write_matrix_csv(const std::filesystem::path& path, const std::vector<std::string>& header, const Matrix& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  for (std::size_t k = 0; k < header.size(); ++k) out << (k ? "," : "") << csv_field(header[k]);
  out << '\n';
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index k = 0; k < m.cols(); ++k) {
      if (k) out << ',';
      if constexpr (std::is_floating_point_v<typename Matrix::Scalar>)
        out << format_double(m(i, k));
      else
        out << static_cast<long>(m(i, k));
    }
    out << '\n';
  }
}

inline void save_data(const CountData& data, const std::filesystem::path& counts_path,
                      const std::filesystem::path& covariates_path) {
  write_matrix_csv(counts_path, data.categories, data.counts);
  write_matrix_csv(covariates_path, data.x.names(), data.x.values());
}

namespace detail {

inline void write_long_matrix(std::ostream& out, int iter, const Eigen::MatrixXd& m,
                              const std::vector<std::string>& categories) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      out << iter << ',' << (i + 1) << ',' << csv_field(categories[j]) << ',' << format_double(m(i, j)) << '\n';
}

inline std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + p.string());
  return out;
}

}  // namespace detail

// Writes draws as long-format CSV files plus manifest.json into `dir`.
// Nothing time-dependent goes into the draw files, so equal seeds give equal bytes.
inline void write_draws(const std::filesystem::path& dir, const PosteriorDraws& draws, const CountData& data,
                        const nlohmann::json& extra_manifest = {}) {
  std::filesystem::create_directories(dir);
  auto theta = detail::open_out(dir / "theta.csv");
  auto zeta = detail::open_out(dir / "zeta.csv");
  auto hyper = detail::open_out(dir / "hyper.csv");
  auto usage = detail::open_out(dir / "usage.csv");
  theta << "iter,row,category,value\n";
  zeta << "iter,row,category,value\n";
  hyper << "iter,a_lambda\n";
  usage << "iter,category,level,covariate,count\n";
  const bool has_vt = !draws.draws.empty() && draws.draws.front().vartheta.size() > 0;
  const bool has_u = !draws.draws.empty() && draws.draws.front().u.size() > 0;
  const bool has_sigma = !draws.draws.empty() && draws.draws.front().sigma_u.size() > 0;
  const bool has_trees = !draws.draws.empty() && !draws.draws.front().theta_trees.empty();
  std::ofstream vt, u, sig, trees;
  if (has_vt) (vt = detail::open_out(dir / "vartheta.csv")) << "iter,row,category,value\n";
  if (has_u) (u = detail::open_out(dir / "u.csv")) << "iter,row,category,value\n";
  if (has_sigma) (sig = detail::open_out(dir / "sigma_u.csv")) << "iter,row,category,value\n";
  if (has_trees) trees = detail::open_out(dir / "trees.txt");
  for (const auto& dr : draws.draws) {
    detail::write_long_matrix(theta, dr.iteration, dr.theta, draws.categories);
    detail::write_long_matrix(zeta, dr.iteration, dr.zeta, draws.categories);
    hyper << dr.iteration << ',' << format_double(dr.a_lambda) << '\n';
    for (int j = 0; j < draws.d; ++j)
      for (int level = 0; level < 2; ++level)
        for (int k = 0; k < draws.p; ++k)
          usage << dr.iteration << ',' << csv_field(draws.categories[j]) << ',' << (level == 0 ? "theta" : "zeta") << ','
                << csv_field(draws.covariates[k]) << ',' << dr.usage[draws.usage_index(j, level, k)] << '\n';
    if (has_vt) detail::write_long_matrix(vt, dr.iteration, dr.vartheta, draws.categories);
    if (has_u) detail::write_long_matrix(u, dr.iteration, dr.u, draws.categories);
    if (has_sigma) detail::write_long_matrix(sig, dr.iteration, dr.sigma_u, draws.categories);
    if (has_trees) {
      for (int j = 0; j < draws.d; ++j) {
        for (int level = 0; level < 2; ++level) {
          const auto& cf = level == 0 ? dr.theta_trees[j] : dr.zeta_trees[j];
          for (std::size_t h = 0; h < cf.size(); ++h)
            trees << dr.iteration << ' ' << j << ' ' << (level == 0 ? "theta" : "zeta") << ' ' << h << ' '
                  << cf.tree(h).serialize() << '\n';
        }
      }
    }
  }
  write_matrix_csv(dir / "covariates.csv", data.x.names(), data.x.values());

  nlohmann::ordered_json m;
  m["model"] = to_string(draws.variant);
  m["n"] = draws.n;
  m["d"] = draws.d;
  m["p"] = draws.p;
  m["categories"] = draws.categories;
  m["covariates"] = draws.covariates;
  m["draws"] = draws.draws.size();
  const auto& s = draws.summary;
  const char* kinds[] = {"grow", "prune", "change"};
  for (int k = 0; k < 3; ++k) {
    auto entry = [&](const MoveCounters& c) {
      const double rate = c.proposed[k] > 0 ? static_cast<double>(c.accepted[k]) / c.proposed[k] : 0.0;
      return nlohmann::ordered_json{{"proposed", c.proposed[k]}, {"accepted", c.accepted[k]}, {"rate", rate}};
    };
    m["moves"]["theta"][kinds[k]] = entry(s.theta_moves);
    m["moves"]["zeta"][kinds[k]] = entry(s.zeta_moves);
  }
  m["leaf_clamp_events"] = s.clamp_events;
  m["ess_failures"] = s.ess_failures;
  for (auto& [key, value] : extra_manifest.items()) m[key] = value;
  detail::open_out(dir / "manifest.json") << m.dump(2) << '\n';
}

namespace detail {

// Long-format (iter, row, category, value) file into one matrix per iteration.
inline std::map<int, Eigen::MatrixXd> read_long(const std::filesystem::path& path, int rows, int cols,
                                                const std::map<std::string, int>& cat_index) {
  const auto t = read_csv(path);
  require(t.header.size() == 4, t.source + ": expected iter,row,category,value");
  std::map<int, Eigen::MatrixXd> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const int it = static_cast<int>(parse_integer(t, r, 0));
    const long row = parse_integer(t, r, 1);
    int col = -1;
    if (auto f = cat_index.find(t.rows[r][2]); f != cat_index.end()) col = f->second;
    if (row < 1 || row > rows || col < 0) throw ValidationError(csv_locus(t, r, 1) + ": index out of range");
    auto [pos, fresh] = out.try_emplace(it);
    if (fresh) pos->second = Eigen::MatrixXd::Zero(rows, cols);
    pos->second(row - 1, col) = parse_real(t, r, 3);
  }
  return out;
}

}  // namespace detail

inline nlohmann::json read_manifest(const std::filesystem::path& dir) {
  try {
    return nlohmann::json::parse(read_file(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError((dir / "manifest.json").string() + ": " + e.what());
  }
}

// Reads a directory written by write_draws.
inline PosteriorDraws read_draws(const std::filesystem::path& dir) {
  const auto m = read_manifest(dir);
  PosteriorDraws pd;
  try {
    pd.variant = parse_variant(m.at("model").get<std::string>());
    pd.n = m.at("n").get<int>();
    pd.d = m.at("d").get<int>();
    pd.p = m.at("p").get<int>();
    pd.categories = m.at("categories").get<std::vector<std::string>>();
    pd.covariates = m.at("covariates").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("manifest.json: " + std::string(e.what()));
  }
  std::map<std::string, int> cat_index;
  for (int j = 0; j < pd.d; ++j) cat_index[pd.categories[j]] = j;
  const auto theta = detail::read_long(dir / "theta.csv", pd.n, pd.d, cat_index);
  const auto zeta = detail::read_long(dir / "zeta.csv", pd.n, pd.d, cat_index);
  std::map<int, Eigen::MatrixXd> vt, u, sig;
  if (std::filesystem::exists(dir / "vartheta.csv")) vt = detail::read_long(dir / "vartheta.csv", pd.n, pd.d, cat_index);
  if (std::filesystem::exists(dir / "u.csv")) u = detail::read_long(dir / "u.csv", pd.n, pd.d, cat_index);
  if (std::filesystem::exists(dir / "sigma_u.csv")) sig = detail::read_long(dir / "sigma_u.csv", pd.d, pd.d, cat_index);
  std::map<int, double> a_lambda;
  {
    const auto t = read_csv(dir / "hyper.csv");
    for (std::size_t r = 0; r < t.rows.size(); ++r) a_lambda[static_cast<int>(parse_integer(t, r, 0))] = parse_real(t, r, 1);
  }
  std::map<int, std::vector<int>> usage;
  {
    const auto t = read_csv(dir / "usage.csv");
    std::map<std::string, int> cov_index;
    for (int k = 0; k < pd.p; ++k) cov_index[pd.covariates[k]] = k;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      const int it = static_cast<int>(parse_integer(t, r, 0));
      auto& v = usage[it];
      if (v.empty()) v.assign(static_cast<std::size_t>(pd.d) * 2 * pd.p, 0);
      const auto cj = cat_index.find(t.rows[r][1]);
      const auto ck = cov_index.find(t.rows[r][3]);
      const auto& lv = t.rows[r][2];
      if (cj == cat_index.end() || ck == cov_index.end() || (lv != "theta" && lv != "zeta"))
        throw ValidationError(csv_locus(t, r, 1) + ": unknown category, level or covariate");
      v[pd.usage_index(cj->second, lv == "theta" ? 0 : 1, ck->second)] = static_cast<int>(parse_integer(t, r, 4));
    }
  }
  std::map<int, std::vector<CompactForest>> theta_trees, zeta_trees;
  if (std::filesystem::exists(dir / "trees.txt")) {
    std::istringstream in(read_file(dir / "trees.txt"));
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      std::istringstream ls(line);
      int it = 0, j = 0;
      std::size_t h = 0;
      std::string level;
      if (!(ls >> it >> j >> level >> h) || j < 0 || j >= pd.d)
        throw ValidationError("trees.txt:" + std::to_string(lineno) + ": bad tree header");
      std::string rest;
      std::getline(ls, rest);
      auto& forests = level == "theta" ? theta_trees[it] : zeta_trees[it];
      if (forests.empty()) forests.resize(pd.d);
      forests[j].append(DecisionTree::deserialize(rest));
    }
  }
  for (const auto& [it, th] : theta) {
    Draw dr;
    dr.iteration = it;
    dr.theta = th;
    if (auto f = zeta.find(it); f != zeta.end()) dr.zeta = f->second;
    else throw ValidationError("zeta.csv: missing iteration " + std::to_string(it));
    if (auto f = vt.find(it); f != vt.end()) dr.vartheta = f->second;
    if (auto f = u.find(it); f != u.end()) dr.u = f->second;
    if (auto f = sig.find(it); f != sig.end()) dr.sigma_u = f->second;
    if (auto f = a_lambda.find(it); f != a_lambda.end()) dr.a_lambda = f->second;
    if (auto f = usage.find(it); f != usage.end()) dr.usage = f->second;
    else dr.usage.assign(static_cast<std::size_t>(pd.d) * 2 * pd.p, 0);
    if (auto f = theta_trees.find(it); f != theta_trees.end()) {
      dr.theta_trees = f->second;
      auto g = zeta_trees.find(it);
      dr.zeta_trees = g != zeta_trees.end() ? g->second : std::vector<CompactForest>(pd.d);
    }
    pd.draws.push_back(std::move(dr));
  }
  return pd;
}

}  // namespace zanim
