#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <numbers>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "zanim/augmentation.hpp"
#include "zanim/errors.hpp"
#include "zanim/loglinear_forest.hpp"
#include "zanim/probit_forest.hpp"
#include "zanim/random_effects.hpp"
#include "zanim/rng.hpp"
#include "zanim/tree.hpp"

namespace zanim {

enum class Variant { ZanimBart, ZanimLnBart, MultinomialBart };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::ZanimBart: return "zanim-bart";
    case Variant::ZanimLnBart: return "zanim-ln-bart";
    case Variant::MultinomialBart: return "multinomial-bart";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "zanim-bart") return Variant::ZanimBart;
  if (s == "zanim-ln-bart") return Variant::ZanimLnBart;
  if (s == "multinomial-bart") return Variant::MultinomialBart;
  throw ValidationError("unknown model '" + s + "' (expected zanim-bart, zanim-ln-bart or multinomial-bart)");
}

struct CountData {
  Eigen::MatrixXi counts;  // n x d
  CovariateMatrix x;       // n x p
  std::vector<int> totals;
  std::vector<std::string> categories;

  CountData() = default;
  CountData(Eigen::MatrixXi y, CovariateMatrix covariates, std::vector<std::string> names = {})
      : counts(std::move(y)), x(std::move(covariates)), categories(std::move(names)) {
    require(counts.rows() > 0 && counts.cols() >= 2, "need at least one row and two categories");
    require(counts.rows() == x.n(), "counts and covariates have different row counts");
    require(x.p() >= 1, "need at least one covariate");
    require((counts.array() >= 0).all(), "counts must be nonnegative");
    if (categories.empty())
      for (Eigen::Index j = 0; j < counts.cols(); ++j) categories.push_back("y" + std::to_string(j + 1));
    require(static_cast<Eigen::Index>(categories.size()) == counts.cols(), "category names do not match columns");
    totals.resize(counts.rows());
    for (Eigen::Index i = 0; i < counts.rows(); ++i) totals[i] = counts.row(i).sum();
  }

  int n() const { return static_cast<int>(counts.rows()); }
  int d() const { return static_cast<int>(counts.cols()); }
  int p() const { return x.p(); }
};

struct SamplerConfig {
  Variant variant = Variant::ZanimBart;
  int trees_theta = 200;
  int trees_zeta = 200;
  int iterations = 10000;  // total, including burn-in
  int burn_in = 5000;
  int thin = 1;
  std::uint64_t seed = 1;
  bool sparse_splits = false;
  TreePrior tree_prior;
  MoveWeights moves;
  double k_zeta = 2.0;
  double a_lambda = 3.5 / std::numbers::sqrt2;
  bool update_a_lambda = true;
  FactorHyper factor_hyper;
  int factors = -1;  // -1: Ledermann bound for d - 1
  int workers = 1;

  bool use_data = true;      // false: likelihood switched off, sweeps target the prior
  bool freeze_zeta = false;  // structural-zero probabilities fixed at zero
  bool freeze_u = false;     // random effects fixed at zero

  bool store_vartheta = true;
  bool store_z = false;
  bool store_u = true;
  bool snapshot_trees = false;

  void validate() const {
    require(trees_theta >= 1 && trees_zeta >= 1, "tree counts must be positive");
    require(iterations >= 1, "iterations must be positive");
    require(burn_in >= 0 && burn_in < iterations, "burn-in must be in [0, iterations)");
    require(thin >= 1, "thin must be positive");
    require(workers >= 1, "workers must be positive");
    require(a_lambda > 0.0, "a_lambda must be positive");
    require(k_zeta > 0.0, "k must be positive");
    require(tree_prior.alpha > 0.0 && tree_prior.alpha < 1.0 && tree_prior.beta >= 0.0, "bad tree prior");
    require(moves.grow >= 0 && moves.prune >= 0 && moves.change >= 0 && moves.grow + moves.prune + moves.change > 0,
            "bad move weights");
  }
};

// Everything kept from one stored iteration.
struct Draw {
  int iteration = 0;
  Eigen::MatrixXd theta;     // population-level f_j / sum_k f_k (no random effect)
  Eigen::MatrixXd zeta;      // Phi(f0)
  Eigen::MatrixXd vartheta;  // in-sample z f e^u / sum
  Eigen::MatrixXd u;         // zanim-ln-bart only
  Eigen::MatrixXd sigma_u;   // zanim-ln-bart only: B Sigma_V B^T
  ZMatrix z;
  double a_lambda = 0.0;
  std::vector<int> usage;    // (category, level, covariate) split counts; level 0 = theta, 1 = zeta
  std::vector<CompactForest> theta_trees, zeta_trees;
};

struct RunSummary {
  MoveCounters theta_moves;
  MoveCounters zeta_moves;
  long clamp_events = 0;
  long ess_failures = 0;
  double seconds = 0.0;
};

struct PosteriorDraws {
  Variant variant = Variant::ZanimBart;
  int n = 0, d = 0, p = 0;
  std::vector<std::string> categories, covariates;
  std::vector<Draw> draws;
  RunSummary summary;

  std::size_t usage_index(int j, int level, int k) const {
    return (static_cast<std::size_t>(j) * 2 + level) * p + k;
  }
};

// Runs f(0..count-1) on up to `workers` threads. Each index must only touch its own state.
template <class F>
void parallel_for(int count, int workers, F&& f) {
  if (workers <= 1 || count <= 1) {
    for (int i = 0; i < count; ++i) f(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr err;
  std::mutex err_mu;
  {
    std::vector<std::jthread> pool;
    const int nt = std::min(workers, count);
    for (int t = 0; t < nt; ++t)
      pool.emplace_back([&] {
        for (int i; (i = next++) < count;) {
          try {
            f(i);
          } catch (...) {
            std::lock_guard lock(err_mu);
            if (!err) err = std::current_exception();
          }
        }
      });
  }
  if (err) std::rethrow_exception(err);
}

class Sampler {
 public:
  enum Block : std::uint64_t { kInit = 1, kPhi, kZ, kW, kTheta, kZeta, kV, kFactor, kALambda, kSplit };
  static constexpr int kEssChunk = 32;

  Sampler(const CountData& data, SamplerConfig cfg) : data_(data), cfg_(std::move(cfg)) {
    cfg_.validate();
    const int n = data_.n(), d = data_.d(), p = data_.p();
    has_zeta_ = cfg_.variant != Variant::MultinomialBart && !cfg_.freeze_zeta;
    has_u_ = cfg_.variant == Variant::ZanimLnBart;
    gamma_prior_ = GammaLeafPrior::calibrated(cfg_.trees_theta, cfg_.a_lambda);
    normal_prior_ = NormalLeafPrior::calibrated(cfg_.trees_zeta, cfg_.k_zeta);
    for (int j = 0; j < d; ++j) {
      theta_.emplace_back(cfg_.trees_theta, n);
      theta_probs_.push_back(SplitProbabilities::uniform(p, cfg_.sparse_splits));
      if (has_zeta_) {
        zeta_.emplace_back(cfg_.trees_zeta, n);
        zeta_probs_.push_back(SplitProbabilities::uniform(p, cfg_.sparse_splits));
      }
    }
    log_f_ = Eigen::MatrixXd::Zero(n, d);
    f0_ = Eigen::MatrixXd::Constant(n, d, has_zeta_ ? 0.0 : -std::numeric_limits<double>::infinity());
    w_ = Eigen::MatrixXd::Zero(n, d);
    z_ = ZMatrix::Ones(n, d);
    if (has_zeta_) {
      Rng rng = make_stream(cfg_.seed, kInit, 0, 0);
      for (int j = 0; j < d; ++j)
        for (int i = 0; i < n; ++i) z_(i, j) = (cfg_.use_data && data_.counts(i, j) > 0) ? 1 : bernoulli(rng, 0.5);
    }
    if (has_u_) {
      basis_ = helmert_basis(d);
      const int q = cfg_.factors >= 0 ? cfg_.factors : ledermann_bound(d - 1);
      Rng rng = make_stream(cfg_.seed, kInit, 0, 1);
      factors_ = FactorState::from_prior(d - 1, n, q, cfg_.factor_hyper, rng);
      v_ = Eigen::MatrixXd::Zero(n, d - 1);
      if (!cfg_.freeze_u)
        for (int i = 0; i < n; ++i) v_.row(i) = factors_.draw_v(rng).transpose();
      u_ = v_ * basis_.transpose();
    }
    if (cfg_.use_data) {
      Rng rng = make_stream(cfg_.seed, kInit, 0, 2);
      update_phi(data_.totals, z_, log_f_, u_, phi_, rng);
    } else {
      phi_ = Eigen::VectorXd::Zero(n);
    }
  }

  void step() {
    const auto t = static_cast<std::uint64_t>(iter_);
    const int d = data_.d();
    if (cfg_.use_data) {
      Rng rng = make_stream(cfg_.seed, kPhi, t, 0);
      update_phi(data_.totals, z_, log_f_, u_, phi_, rng);
    }
    parallel_for(d, cfg_.workers, [&](int j) { update_category(j, t); });

    if (has_u_ && !cfg_.freeze_u) {
      const int n = data_.n();
      const int chunks = (n + kEssChunk - 1) / kEssChunk;
      std::vector<long> fails(chunks, 0);
      parallel_for(chunks, cfg_.workers, [&](int c) {
        Rng rng = make_stream(cfg_.seed, kV, t, static_cast<std::uint64_t>(c));
        for (int i = c * kEssChunk; i < std::min(n, (c + 1) * kEssChunk); ++i) {
          if (update_v_row(i, data_.counts, z_, log_f_, data_.totals[i], basis_, factors_, v_, rng, cfg_.use_data) < 0)
            ++fails[c];
          u_.row(i) = v_.row(i) * basis_.transpose();
        }
      });
      for (long f : fails) ess_failures_ += f;
      Rng rng = make_stream(cfg_.seed, kFactor, t, 0);
      // v was drawn with the scores integrated out, so the scores are refreshed
      // from their conditional before the loadings condition on them.
      update_scores(v_, factors_, rng);
      update_loadings(v_, factors_, rng);
      update_idiosyncratic_and_mgp(v_, factors_, rng);
    }

    if (cfg_.update_a_lambda) {
      double sum_log = 0.0, sum_lambda = 0.0;
      long count = 0;
      for (const auto& f : theta_)
        f.ensemble().for_each_leaf_value([&](double v) {
          sum_log += v;
          sum_lambda += std::exp(v);
          ++count;
        });
      Rng rng = make_stream(cfg_.seed, kALambda, t, 0);
      const double a = update_a_lambda(gamma_prior_.a_lambda, cfg_.trees_theta, sum_log, sum_lambda, count, rng);
      gamma_prior_ = GammaLeafPrior::calibrated(cfg_.trees_theta, a);
    }

    if (cfg_.sparse_splits) {
      const int levels = has_zeta_ ? 2 : 1;
      parallel_for(d * levels, cfg_.workers, [&](int idx) {
        const int j = idx / levels, level = idx % levels;
        std::vector<int> counts(data_.p(), 0);
        (level == 0 ? theta_[j].ensemble() : zeta_[j].ensemble()).add_split_counts(counts);
        Rng rng = make_stream(cfg_.seed, kSplit, t, static_cast<std::uint64_t>(idx));
        update_split_probabilities(counts, level == 0 ? theta_probs_[j] : zeta_probs_[j], rng);
      });
    }
    ++iter_;
  }

  int iteration() const { return iter_; }
  const SamplerConfig& config() const { return cfg_; }
  const CountData& data() const { return data_; }
  bool has_zeta() const { return has_zeta_; }
  bool has_u() const { return has_u_; }
  const Eigen::MatrixXd& log_f() const { return log_f_; }
  const Eigen::MatrixXd& f0() const { return f0_; }
  const Eigen::MatrixXd& w() const { return w_; }
  const ZMatrix& z() const { return z_; }
  const Eigen::MatrixXd& u() const { return u_; }
  const Eigen::MatrixXd& v() const { return v_; }
  const Eigen::VectorXd& phi() const { return phi_; }
  const FactorState& factors() const { return factors_; }
  const Eigen::MatrixXd& basis() const { return basis_; }
  double a_lambda() const { return gamma_prior_.a_lambda; }
  const GammaLeafPrior& gamma_prior() const { return gamma_prior_; }
  const NormalLeafPrior& normal_prior() const { return normal_prior_; }
  const LogLinearForest& theta_forest(int j) const { return theta_[j]; }
  const ProbitForest& zeta_forest(int j) const { return zeta_[j]; }
  const SplitProbabilities& theta_split_probabilities(int j) const { return theta_probs_[j]; }

  Draw current_draw() const {
    const int n = data_.n(), d = data_.d(), p = data_.p();
    Draw dr;
    dr.iteration = iter_;
    dr.a_lambda = gamma_prior_.a_lambda;
    dr.theta.resize(n, d);
    for (int i = 0; i < n; ++i) {
      const double m = log_f_.row(i).maxCoeff();
      double s = 0.0;
      for (int j = 0; j < d; ++j) s += (dr.theta(i, j) = std::exp(log_f_(i, j) - m));
      dr.theta.row(i) /= s;
    }
    dr.zeta = has_zeta_ ? Eigen::MatrixXd(f0_.unaryExpr([](double v) { return norm_cdf(v); }))
                        : Eigen::MatrixXd::Zero(n, d);
    if (cfg_.store_vartheta) {
      dr.vartheta = Eigen::MatrixXd::Zero(n, d);
      for (int i = 0; i < n; ++i) {
        const double lr = log_row_rate(z_, log_f_, u_, i);
        if (lr == kNegInf) continue;
        for (int j = 0; j < d; ++j)
          if (z_(i, j)) dr.vartheta(i, j) = std::exp(log_f_(i, j) + (has_u_ ? u_(i, j) : 0.0) - lr);
      }
    }
    if (has_u_) {
      if (cfg_.store_u) dr.u = u_;
      dr.sigma_u = basis_ * factors_.covariance() * basis_.transpose();
    }
    if (cfg_.store_z) dr.z = z_;
    dr.usage.assign(static_cast<std::size_t>(d) * 2 * p, 0);
    for (int j = 0; j < d; ++j) {
      theta_[j].ensemble().add_split_counts(std::span<int>(dr.usage).subspan(static_cast<std::size_t>(j * 2) * p, p));
      if (has_zeta_)
        zeta_[j].ensemble().add_split_counts(std::span<int>(dr.usage).subspan(static_cast<std::size_t>(j * 2 + 1) * p, p));
    }
    if (cfg_.snapshot_trees) {
      for (int j = 0; j < d; ++j) {
        dr.theta_trees.push_back(theta_[j].ensemble().snapshot());
        dr.zeta_trees.push_back(has_zeta_ ? zeta_[j].ensemble().snapshot() : CompactForest{});
      }
    }
    return dr;
  }

  RunSummary summary() const {
    RunSummary s;
    for (const auto& f : theta_) {
      s.theta_moves.merge(f.ensemble().counters);
      s.clamp_events += f.clamp_events;
    }
    for (const auto& f : zeta_) s.zeta_moves.merge(f.ensemble().counters);
    s.ess_failures = ess_failures_;
    return s;
  }

 private:
  const CountData& data_;
  SamplerConfig cfg_;
  bool has_zeta_ = true;
  bool has_u_ = false;
  int iter_ = 0;
  long ess_failures_ = 0;

  GammaLeafPrior gamma_prior_;
  NormalLeafPrior normal_prior_;
  std::vector<LogLinearForest> theta_;
  std::vector<ProbitForest> zeta_;
  std::vector<SplitProbabilities> theta_probs_, zeta_probs_;
  Eigen::MatrixXd log_f_, f0_, w_, u_, v_, basis_;
  ZMatrix z_;
  Eigen::VectorXd phi_;
  FactorState factors_;

  void update_category(int j, std::uint64_t t) {
    const int n = data_.n();
    const auto& x = data_.x;
    if (has_zeta_) {
      Rng rz = make_stream(cfg_.seed, kZ, t, static_cast<std::uint64_t>(j));
      update_z(j, data_.counts, phi_, log_f_, u_, std::span<const double>(f0_.col(j).data(), n), z_, rz,
               cfg_.use_data);
      Rng rw = make_stream(cfg_.seed, kW, t, static_cast<std::uint64_t>(j));
      update_w(j, z_, std::span<const double>(f0_.col(j).data(), n), std::span<double>(w_.col(j).data(), n), rw);
    }
    std::vector<double> base(n, 0.0);
    if (cfg_.use_data)
      for (int i = 0; i < n; ++i)
        if (z_(i, j)) base[i] = phi_(i) * (has_u_ ? std::exp(u_(i, j)) : 1.0);
    Rng rt = make_stream(cfg_.seed, kTheta, t, static_cast<std::uint64_t>(j));
    theta_[j].backfit(std::span<const int>(data_.counts.col(j).data(), n), base, x, theta_probs_[j], gamma_prior_,
                      cfg_.tree_prior, cfg_.moves, rt, cfg_.use_data);
    const auto lf = theta_[j].log_fit();
    std::copy(lf.begin(), lf.end(), log_f_.col(j).data());
    if (has_zeta_) {
      Rng rp = make_stream(cfg_.seed, kZeta, t, static_cast<std::uint64_t>(j));
      zeta_[j].backfit(std::span<const double>(w_.col(j).data(), n), x, zeta_probs_[j], normal_prior_,
                       cfg_.tree_prior, cfg_.moves, rp);
      const auto f = zeta_[j].fit();
      std::copy(f.begin(), f.end(), f0_.col(j).data());
    }
  }
};

// Runs the chain and keeps every thin-th iteration after burn-in.
inline PosteriorDraws run_mcmc(const CountData& data, const SamplerConfig& cfg,
                               const std::function<void(const Sampler&)>& on_iteration = {}) {
  const auto start = std::chrono::steady_clock::now();
  Sampler s(data, cfg);
  PosteriorDraws out;
  out.variant = cfg.variant;
  out.n = data.n();
  out.d = data.d();
  out.p = data.p();
  out.categories = data.categories;
  out.covariates = data.x.names();
  for (int t = 0; t < cfg.iterations; ++t) {
    s.step();
    if (on_iteration) on_iteration(s);
    if (t >= cfg.burn_in && (t - cfg.burn_in) % cfg.thin == 0) {
      auto dr = s.current_draw();
      for (Eigen::Index k = 0; k < dr.theta.size(); ++k)
        if (!std::isfinite(dr.theta.data()[k])) throw NumericError("non-finite theta at iteration " + std::to_string(t));
      out.draws.push_back(std::move(dr));
    }
  }
  out.summary = s.summary();
  out.summary.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

// Population-level theta and zeta at new covariate rows, one pair per stored draw.
// Requires tree snapshots.
struct Prediction {
  Eigen::MatrixXd theta;
  Eigen::MatrixXd zeta;
};

inline std::vector<Prediction> predict(const PosteriorDraws& draws, const Eigen::MatrixXd& x_new) {
  require(x_new.cols() == draws.p, "new covariates have the wrong number of columns");
  std::vector<Prediction> out;
  for (const auto& dr : draws.draws) {
    require(static_cast<int>(dr.theta_trees.size()) == draws.d, "draws were stored without tree snapshots");
    Prediction pr{Eigen::MatrixXd(x_new.rows(), draws.d), Eigen::MatrixXd::Zero(x_new.rows(), draws.d)};
    for (Eigen::Index i = 0; i < x_new.rows(); ++i) {
      auto row = [&](int k) { return x_new(i, k); };
      for (int j = 0; j < draws.d; ++j) {
        pr.theta(i, j) = dr.theta_trees[j].sum(row);
        if (dr.zeta_trees[j].size() > 0) pr.zeta(i, j) = norm_cdf(dr.zeta_trees[j].sum(row));
      }
      const double m = pr.theta.row(i).maxCoeff();
      pr.theta.row(i) = (pr.theta.row(i).array() - m).exp();
      pr.theta.row(i) /= pr.theta.row(i).sum();
    }
    out.push_back(std::move(pr));
  }
  return out;
}

}  // namespace zanim
