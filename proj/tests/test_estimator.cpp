#include <algorithm>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "ltrc/estimator.hpp"
#include "ltrc/inference.hpp"
#include "ltrc/simulation.hpp"

namespace {

using ltrc::Dataset;
using ltrc::FitConfig;
using ltrc::Observation;
using ltrc::Theta;

ltrc::Dataset simulated(ltrc::ErrorLaw law, int n, std::uint64_t seed) {
  ltrc::SimScenario sc;
  sc.law = law;
  sc.n = n;
  ltrc::Rng rng = ltrc::make_rng(seed, 0);
  return ltrc::simulate_dataset(sc, rng).data;
}

// Left-truncated unit-exponential event times with a covariate that is zero
// for everyone, so only gamma moves.
Dataset unit_hazard_data(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::exponential_distribution<double> ex(1.0);
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  Dataset data;
  while (static_cast<int>(data.size()) < n) {
    const double t = 0.5 * ud(rng);
    const double y = ex(rng);
    if (y <= t) continue;
    const double c = 1.0 + 2.0 * ud(rng);
    data.push_back({std::min(y, c), y <= c ? 1 : 0, t, {0.0}});
  }
  return data;
}

}  // namespace

TEST(NaiveLs, NoiselessRecoversCoefficients) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd;
  Dataset data;
  const Eigen::Vector3d beta(0.5, -1.25, 2.0);
  for (int i = 0; i < 30; ++i) {
    Observation o{0.0, 1, std::nullopt, {nd(rng), nd(rng), nd(rng)}};
    o.y = ltrc::linear_predictor(o, beta);
    data.push_back(o);
  }
  const auto nf = ltrc::naive_ls(data);
  EXPECT_LT((nf.beta - beta).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(NaiveLs, PerfectLineHasZeroStandardError) {
  const Dataset data{{0.0, 1, std::nullopt, {0.0}}, {1.0, 1, std::nullopt, {1.0}}, {2.0, 1, std::nullopt, {2.0}}};
  const auto nf = ltrc::naive_ls(data);
  EXPECT_NEAR(nf.beta[0], 1.0, 1e-14);
  EXPECT_NEAR(nf.se[0], 0.0, 1e-7);
}

TEST(NaiveLs, UsesOnlyUncensoredRows) {
  const Dataset data{{0.0, 1, std::nullopt, {0.0}},
                     {1.0, 1, std::nullopt, {1.0}},
                     {2.0, 1, std::nullopt, {2.0}},
                     {50.0, 0, std::nullopt, {3.0}}};
  EXPECT_NEAR(ltrc::naive_ls(data).beta[0], 1.0, 1e-14);
}

TEST(NaiveLs, SingularDesignNamesCovariates) {
  const Dataset data{{0.0, 1, std::nullopt, {1.0, 2.0}},
                     {1.0, 1, std::nullopt, {2.0, 4.0}},
                     {2.0, 1, std::nullopt, {3.0, 6.0}}};
  try {
    ltrc::naive_ls(data);
    FAIL() << "expected an exception";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("covariate"), std::string::npos);
  }
  EXPECT_THROW(ltrc::naive_ls({{0.0, 1, std::nullopt, {1.0}}}), std::invalid_argument);
}

TEST(InitialPoints, ZeroNoiseKeepsNaiveBeta) {
  FitConfig cfg;
  cfg.noise_scale = 0.0;
  ltrc::Rng rng = ltrc::make_rng(3, 0);
  const Eigen::Vector2d b0(0.7, 1.3);
  for (const auto& th : ltrc::initial_points(b0, Eigen::Vector2d(0.1, 0.2), 6, cfg, rng)) {
    EXPECT_EQ(th.beta, b0);
    EXPECT_EQ(th.gamma.size(), 6);
  }
}

TEST(InitialPoints, DeterministicForSeed) {
  FitConfig cfg;
  ltrc::Rng r1 = ltrc::make_rng(5, 0);
  ltrc::Rng r2 = ltrc::make_rng(5, 0);
  const auto a = ltrc::initial_points(Eigen::Vector2d(1, 1), Eigen::Vector2d(0.1, 0.2), 5, cfg, r1);
  const auto b = ltrc::initial_points(Eigen::Vector2d(1, 1), Eigen::Vector2d(0.1, 0.2), 5, cfg, r2);
  ASSERT_EQ(a.size(), 10u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].beta, b[i].beta);
    EXPECT_EQ(a[i].gamma, b[i].gamma);
  }
}

TEST(InitialPoints, NoiseScaleMatchesMonteCarlo) {
  FitConfig cfg;
  cfg.n_starts = 10'000;
  ltrc::Rng rng = ltrc::make_rng(8, 0);
  const Eigen::Vector2d se(0.05, 0.4);
  const auto pts = ltrc::initial_points(Eigen::Vector2d(1, -1), se, 5, cfg, rng);
  for (int j = 0; j < 2; ++j) {
    double mean = 0.0;
    for (const auto& p : pts) mean += p.beta[j];
    mean /= pts.size();
    double ss = 0.0;
    for (const auto& p : pts) ss += (p.beta[j] - mean) * (p.beta[j] - mean);
    const double sd = std::sqrt(ss / (pts.size() - 1));
    EXPECT_NEAR(sd / (3.0 * se[j]), 1.0, 0.05);
  }
  double gss = 0.0;
  for (const auto& p : pts) gss += p.gamma.squaredNorm();
  EXPECT_NEAR(gss / (5.0 * pts.size()), 1.0, 0.05);
}

TEST(Maximize, StationaryStartReturnsImmediately) {
  const Dataset data = simulated(ltrc::ErrorLaw::normal, 200, 4);
  FitConfig cfg;
  const auto fr = ltrc::fit(data, 1, cfg);
  ASSERT_TRUE(fr.converged);
  const auto again = ltrc::maximize(fr.theta_hat, data, fr.basis, cfg);
  EXPECT_TRUE(again.converged);
  EXPECT_EQ(again.iterations, 0);
}

TEST(Maximize, GammaOnlyProblemMatchesGridSearch) {
  const Dataset data = unit_hazard_data(200, 17);
  const auto spec = ltrc::build_basis(0.0, 3.0, 0);
  const int K = spec.basis_count();
  FitConfig cfg;
  cfg.grad_tol = 1e-9;
  const Theta start{Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(K)};
  const auto res = ltrc::maximize(start, data, spec, cfg);
  ASSERT_TRUE(res.converged);

  // Grid pattern search over gamma: 5 points per axis around the incumbent;
  // the box is halved only when no grid point improves on the centre.
  Eigen::VectorXd center = Eigen::VectorXd::Zero(K);
  double half = 4.0;
  const int m = 5;
  double best = ltrc::log_likelihood(Theta{Eigen::VectorXd::Zero(1), center}, data, spec);
  while (half > 1e-7) {
    Eigen::VectorXd incumbent = center;
    std::vector<int> idx(static_cast<std::size_t>(K), 0);
    for (;;) {
      Eigen::VectorXd g(K);
      for (int k = 0; k < K; ++k) g[k] = center[k] + half * (2.0 * idx[static_cast<std::size_t>(k)] / (m - 1) - 1.0);
      const double v = ltrc::log_likelihood(Theta{Eigen::VectorXd::Zero(1), g}, data, spec);
      if (v > best) {
        best = v;
        incumbent = g;
      }
      int k = 0;
      while (k < K && ++idx[static_cast<std::size_t>(k)] == m) idx[static_cast<std::size_t>(k++)] = 0;
      if (k == K) break;
    }
    if (incumbent == center) half /= 2.0;
    center = incumbent;
  }
  EXPECT_LT((res.theta.gamma - center).cwiseAbs().maxCoeff(), 1e-4);
  EXPECT_GE(res.loglik, best - 1e-9);
}

TEST(Maximize, AcceptedStepsStrictlyIncrease) {
  const Dataset data = simulated(ltrc::ErrorLaw::mix_shift, 200, 6);
  FitConfig cfg;
  for (auto dir : {ltrc::SearchDirection::hybrid, ltrc::SearchDirection::diagonal}) {
    cfg.direction = dir;
    cfg.max_iter = 100;
    const auto nf = ltrc::naive_ls(data);
    const auto spec = ltrc::make_basis(data, nf.beta, 2, cfg);
    ltrc::Rng rng = ltrc::make_rng(1, 0);
    for (const auto& start : ltrc::initial_points(nf.beta, nf.se, spec.basis_count(), cfg, rng)) {
      const auto res = ltrc::maximize(start, data, spec, cfg);
      ASSERT_EQ(static_cast<int>(res.loglik_path.size()), res.iterations + 1);
      for (std::size_t i = 1; i < res.loglik_path.size(); ++i) EXPECT_GT(res.loglik_path[i], res.loglik_path[i - 1]);
      EXPECT_EQ(res.loglik_path.back(), res.loglik);
    }
  }
}

TEST(Maximize, DiagonalDirectionMakesProgress) {
  // The purely diagonal search is slow; it must still climb from every start.
  const Dataset data = simulated(ltrc::ErrorLaw::normal, 200, 6);
  FitConfig cfg;
  cfg.direction = ltrc::SearchDirection::diagonal;
  cfg.max_iter = 50;
  const auto nf = ltrc::naive_ls(data);
  const auto spec = ltrc::make_basis(data, nf.beta, 1, cfg);
  ltrc::Rng rng = ltrc::make_rng(2, 0);
  for (const auto& start : ltrc::initial_points(nf.beta, nf.se, spec.basis_count(), cfg, rng)) {
    const auto res = ltrc::maximize(start, data, spec, cfg);
    EXPECT_GT(res.loglik, res.loglik_path.front());
  }
}

TEST(Maximize, EventFreeStretchHeldAtFloor) {
  // Entries on [0, 0.5] but no event before 1: the log hazard near 0 has no
  // finite maximiser, so the leading coefficient ends on the floor.
  std::mt19937_64 rng(23);
  std::exponential_distribution<double> ex(1.0);
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  Dataset data;
  for (int i = 0; i < 200; ++i) data.push_back({1.0 + ex(rng), 1, 0.5 * ud(rng), {0.0}});
  const auto spec = ltrc::build_basis(0.0, 8.0, 7);
  const Theta start{Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(spec.basis_count())};
  FitConfig cfg;
  double previous = -INFINITY;
  for (double floor : {-20.0, -200.0}) {
    cfg.gamma_floor = floor;
    const auto res = ltrc::maximize(start, data, spec, cfg);
    ASSERT_TRUE(res.converged);
    EXPECT_EQ(res.theta.gamma[0], floor);
    EXPECT_GE(res.theta.gamma.minCoeff(), floor);
    EXPECT_LT(ltrc::score(res.theta, data, spec)[1], 0.0);
    EXPECT_GT(res.loglik, previous);
    previous = res.loglik;
  }
}

TEST(Fit, NormalErrorFixtureConvergesNearTruth) {
  const Dataset data = simulated(ltrc::ErrorLaw::normal, 200, 10);
  const auto fr = ltrc::fit(data, 1, FitConfig{});
  ASSERT_TRUE(fr.converged);
  EXPECT_LE(fr.score_norm, 1e-6);
  EXPECT_LT((fr.theta_hat.beta - Eigen::Vector2d(1, 1)).cwiseAbs().maxCoeff(), 0.25);
}

TEST(Fit, WinnerHasLargestConvergedLoglik) {
  const Dataset data = simulated(ltrc::ErrorLaw::gumbel, 200, 11);
  const auto fr = ltrc::fit(data, 1, FitConfig{});
  ASSERT_TRUE(fr.converged);
  EXPECT_NEAR(fr.loglik, ltrc::log_likelihood(fr.theta_hat, data, fr.basis), 1e-12);
  int converged = 0;
  for (std::size_t s = 0; s < fr.starts.size(); ++s) {
    const auto& st = fr.starts[s];
    if (!st.converged) continue;
    ++converged;
    EXPECT_LE(st.loglik, fr.starts[static_cast<std::size_t>(fr.winning_start)].loglik);
  }
  EXPECT_EQ(converged, fr.converged_starts);
  EXPECT_TRUE(fr.starts[static_cast<std::size_t>(fr.winning_start)].converged);
  EXPECT_EQ(fr.hessian.rows(), 2 + fr.basis.basis_count());
}

TEST(Fit, BitIdenticalOnRerunAndAcrossThreadCounts) {
  const Dataset data = simulated(ltrc::ErrorLaw::mix_wide, 200, 12);
  FitConfig cfg;
  cfg.seed = 99;
  const auto a = ltrc::fit(data, 2, cfg);
  const auto b = ltrc::fit(data, 2, cfg);
  cfg.threads = 4;
  const auto c = ltrc::fit(data, 2, cfg);
  for (const auto* other : {&b, &c}) {
    EXPECT_EQ(a.theta_hat.beta, other->theta_hat.beta);
    EXPECT_EQ(a.theta_hat.gamma, other->theta_hat.gamma);
    EXPECT_EQ(a.loglik, other->loglik);
    EXPECT_EQ(a.hessian, other->hessian);
    EXPECT_EQ(a.winning_start, other->winning_start);
  }
}

TEST(Fit, UncensoredUntruncatedWithinThreeStandardErrors) {
  ltrc::Rng rng = ltrc::make_rng(13, 0);
  Dataset data;
  const Eigen::Vector2d beta(1.0, 1.0);
  for (int i = 0; i < 400; ++i) {
    Observation o{0.0, 1, std::nullopt, {ltrc::uniform(rng, -3, 3), ltrc::uniform(rng, 0, 1) < 0.5 ? 1.0 : 0.0}};
    o.y = ltrc::linear_predictor(o, beta) + ltrc::standard_normal(rng);
    data.push_back(o);
  }
  const auto fr = ltrc::fit(data, 1, FitConfig{});
  ASSERT_TRUE(fr.converged);
  const auto inf = ltrc::infer(fr.theta_hat, data, fr.basis, fr.hessian);
  for (int j = 0; j < 2; ++j)
    EXPECT_LT(std::abs(fr.theta_hat.beta[j] - beta[j]), 3.0 * std::sqrt(inf.var2(j, j))) << "coefficient " << j;
}

TEST(Fit, RejectsInvalidInput) {
  FitConfig cfg;
  EXPECT_THROW(ltrc::fit({}, 1, cfg), std::invalid_argument);
  EXPECT_THROW(ltrc::fit({{0.0, 1, 1.0, {1.0}}}, 1, cfg), std::invalid_argument);
  cfg.n_starts = 0;
  EXPECT_THROW(ltrc::fit(simulated(ltrc::ErrorLaw::normal, 50, 1), 1, cfg), std::invalid_argument);
}

TEST(SelectKnots, SingleCandidateReturnedDirectly) {
  const Dataset data = simulated(ltrc::ErrorLaw::normal, 100, 14);
  const auto sel = ltrc::select_knots_detailed(data, {3}, 5, FitConfig{});
  EXPECT_EQ(sel.selected, 3);
  ASSERT_EQ(sel.candidates.size(), 1u);
}

TEST(SelectKnots, RejectsBadArguments) {
  const Dataset data = simulated(ltrc::ErrorLaw::normal, 100, 14);
  EXPECT_THROW(ltrc::select_knots(data, {}, 5, FitConfig{}), std::invalid_argument);
  EXPECT_THROW(ltrc::select_knots(data, {1, 2}, 1, FitConfig{}), std::invalid_argument);
}

TEST(SelectKnots, PicksACandidateDeterministically) {
  const Dataset data = simulated(ltrc::ErrorLaw::normal, 300, 15);
  FitConfig cfg;
  cfg.seed = 4;
  const auto a = ltrc::select_knots_detailed(data, {0, 1, 3}, 3, cfg);
  cfg.threads = 3;
  const auto b = ltrc::select_knots_detailed(data, {0, 1, 3}, 3, cfg);
  EXPECT_EQ(a.selected, b.selected);
  ASSERT_EQ(a.candidates.size(), 3u);
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_EQ(a.candidates[c].mean_heldout_loglik, b.candidates[c].mean_heldout_loglik);
    if (a.candidates[c].ok) EXPECT_LE(a.candidates[c].mean_heldout_loglik, 0.0);
  }
  EXPECT_TRUE(a.selected == 0 || a.selected == 1 || a.selected == 3);
}
