#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "ltrc/simulation.hpp"

namespace {

using ltrc::ErrorLaw;

double normal_pdf(double z, double mean, double sd) {
  const double u = (z - mean) / sd;
  return std::exp(-0.5 * u * u) / (sd * std::sqrt(2.0 * std::numbers::pi));
}

// Composite Simpson on [a, b] with 2m panels.
template <class F>
double simpson(F f, double a, double b, int m) {
  const double h = (b - a) / (2 * m);
  double s = f(a) + f(b);
  for (int i = 1; i < 2 * m; ++i) s += (i % 2 ? 4.0 : 2.0) * f(a + i * h);
  return s * h / 3.0;
}

struct Moments {
  double mean;
  double var;
};

Moments sample_moments(ErrorLaw law, int draws, std::uint64_t seed) {
  ltrc::Rng rng = ltrc::make_rng(seed, 0);
  double sum = 0.0, sum2 = 0.0;
  for (int i = 0; i < draws; ++i) {
    const double e = ltrc::draw_error(law, rng);
    sum += e;
    sum2 += e * e;
  }
  const double mean = sum / draws;
  return {mean, sum2 / draws - mean * mean};
}

}  // namespace

TEST(DrawError, NormalMean) { EXPECT_NEAR(sample_moments(ErrorLaw::normal, 1'000'000, 1).mean, 0.0, 0.005); }

TEST(DrawError, WideMixtureVariance) {
  EXPECT_NEAR(sample_moments(ErrorLaw::mix_wide, 1'000'000, 2).var, 5.0, 0.05);
}

TEST(DrawError, ShiftedMixtureMean) {
  EXPECT_NEAR(sample_moments(ErrorLaw::mix_shift, 1'000'000, 3).mean, -0.5, 0.005);
}

TEST(DrawError, GumbelMeans) {
  // Euler-Mascheroni constant, positive for the maximum type.
  EXPECT_NEAR(sample_moments(ErrorLaw::gumbel, 1'000'000, 4).mean, std::numbers::egamma, 0.005);
  EXPECT_NEAR(sample_moments(ErrorLaw::gumbel_min, 1'000'000, 5).mean, -std::numbers::egamma, 0.005);
}

TEST(TrueLogHazard, KnownValues) {
  EXPECT_NEAR(ltrc::true_log_hazard(ErrorLaw::normal, 0.0), std::log(2.0 / std::sqrt(2.0 * std::numbers::pi)),
              1e-14);
  EXPECT_NEAR(ltrc::true_log_hazard(ErrorLaw::normal, 0.0), -0.2258, 5e-5);
  for (double s : {-5.0, -1.0, 0.0, 0.7, 2.5})
    EXPECT_DOUBLE_EQ(ltrc::true_log_hazard(ErrorLaw::gumbel_min, s), s);
  // Maximum type: lambda(s) = e^{-s} exp(-e^{-s}) / (1 - exp(-e^{-s})).
  for (double s : {-1.0, 0.0, 1.5, 4.0}) {
    const double u = std::exp(-s);
    EXPECT_NEAR(ltrc::true_log_hazard(ErrorLaw::gumbel, s), std::log(u * std::exp(-u) / (1.0 - std::exp(-u))),
                1e-12);
  }
}

TEST(TrueLogHazard, MixturesAgreeWithNumericIntegration) {
  struct Case {
    ErrorLaw law;
    double m2, s2;
  };
  for (const Case c : {Case{ErrorLaw::mix_wide, 0.0, 3.0}, Case{ErrorLaw::mix_shift, -1.0, 0.5}}) {
    auto f = [&](double u) { return 0.5 * normal_pdf(u, 0.0, 1.0) + 0.5 * normal_pdf(u, c.m2, c.s2); };
    for (double s : {-2.0, -0.5, 0.0, 1.0, 3.0}) {
      const double surv = simpson(f, s, 40.0, 200'000);
      EXPECT_NEAR(ltrc::true_log_hazard(c.law, s), std::log(f(s) / surv), 1e-9) << "s=" << s;
    }
  }
}

TEST(TrueLogHazard, UpperTailStaysFinite) {
  for (ErrorLaw law : {ErrorLaw::normal, ErrorLaw::gumbel, ErrorLaw::mix_wide, ErrorLaw::mix_shift}) {
    const double far = ltrc::true_log_hazard(law, 40.0);
    EXPECT_TRUE(std::isfinite(far)) << ltrc::to_string(law);
  }
  // Normal hazard grows like s in the tail.
  EXPECT_NEAR(ltrc::true_log_hazard(ErrorLaw::normal, 40.0), std::log(40.0), 1e-3);
}

TEST(ErrorQuantile, InvertsCdf) {
  for (ErrorLaw law : {ErrorLaw::normal, ErrorLaw::gumbel, ErrorLaw::mix_wide, ErrorLaw::mix_shift,
                       ErrorLaw::gumbel_min})
    for (double p : {0.025, 0.1, 0.5, 0.9, 0.975}) EXPECT_NEAR(ltrc::error_cdf(law, ltrc::error_quantile(law, p)), p, 1e-12);
  EXPECT_NEAR(ltrc::error_quantile(ErrorLaw::normal, 0.975), 1.959963984540054, 1e-10);
}

TEST(SimulateDataset, OperatingCharacteristicsMatchTable) {
  struct Row {
    ErrorLaw law;
    double trunc, cens;
  };
  for (const Row r : {Row{ErrorLaw::normal, 0.161, 0.124}, Row{ErrorLaw::gumbel, 0.123, 0.178},
                      Row{ErrorLaw::mix_wide, 0.196, 0.181}, Row{ErrorLaw::mix_shift, 0.204, 0.089}}) {
    ltrc::SimScenario sc;
    sc.law = r.law;
    sc.n = 20'000;
    ltrc::Rng rng = ltrc::make_rng(99, 0);
    const auto sim = ltrc::simulate_dataset(sc, rng);
    const double pt = static_cast<double>(sim.truncated) / static_cast<double>(sim.attempts);
    const double pc = static_cast<double>(sim.censored) / static_cast<double>(sim.data.size());
    EXPECT_NEAR(pt, r.trunc, 0.02) << ltrc::to_string(r.law);
    EXPECT_NEAR(pc, r.cens, 0.02) << ltrc::to_string(r.law);
  }
}

TEST(SimulateDataset, KeptRowsAreConsistent) {
  ltrc::SimScenario sc;
  sc.law = ErrorLaw::mix_wide;
  sc.n = 5000;
  ltrc::Rng rng = ltrc::make_rng(7, 0);
  const auto sim = ltrc::simulate_dataset(sc, rng);
  ASSERT_EQ(sim.data.size(), 5000u);
  EXPECT_EQ(sim.attempts, sim.truncated + sim.data.size());
  for (const auto& o : sim.data) {
    ASSERT_TRUE(o.t.has_value());
    EXPECT_GT(o.y, *o.t);
    EXPECT_LE(o.y, 7.0);
    EXPECT_GE(*o.t, -6.0);
    EXPECT_LE(*o.t, 1.0);
    EXPECT_TRUE(o.delta == 0 || o.delta == 1);
    if (!o.delta) EXPECT_GE(o.y, 1.0);
    EXPECT_TRUE(o.x[1] == 0.0 || o.x[1] == 1.0);
    EXPECT_LE(std::abs(o.x[0]), 3.0);
  }
}

TEST(TableKnots, MatchesPublishedCounts) {
  const int want[4][3] = {{1, 1, 1}, {1, 1, 2}, {2, 3, 4}, {2, 2, 3}};
  const ErrorLaw laws[4] = {ErrorLaw::normal, ErrorLaw::gumbel, ErrorLaw::mix_wide, ErrorLaw::mix_shift};
  const int ns[3] = {200, 400, 800};
  for (int l = 0; l < 4; ++l)
    for (int c = 0; c < 3; ++c) EXPECT_EQ(ltrc::table_knots(laws[l], ns[c]), want[l][c]);
}

TEST(CentralGrid, SpansRequestedMass) {
  const auto g = ltrc::central_grid(ErrorLaw::normal, 0.95, 11);
  ASSERT_EQ(g.size(), 11u);
  EXPECT_NEAR(g.front(), -1.959963984540054, 1e-9);
  EXPECT_NEAR(g.back(), 1.959963984540054, 1e-9);
}

TEST(RunStudy, SingleReplicationIsDeterministic) {
  ltrc::SimScenario sc;
  sc.n = 150;
  sc.reps = 1;
  sc.knots = 1;
  sc.seed = 12;
  const auto a = ltrc::run_study(sc);
  const auto b = ltrc::run_study(sc);
  ASSERT_EQ(a.reps_used, 1);
  EXPECT_EQ(a.replications[0].beta_hat, b.replications[0].beta_hat);
  EXPECT_EQ(a.replications[0].var2, b.replications[0].var2);
  EXPECT_EQ(a.curve_mean, b.curve_mean);
  EXPECT_EQ(a.pct_truncated, b.pct_truncated);
}

TEST(RunStudy, ThreadCountDoesNotChangeResults) {
  ltrc::SimScenario sc;
  sc.n = 120;
  sc.reps = 4;
  sc.knots = 1;
  sc.seed = 5;
  const auto a = ltrc::run_study(sc);
  sc.threads = 3;
  const auto b = ltrc::run_study(sc);
  for (std::size_t r = 0; r < 4; ++r) {
    EXPECT_EQ(a.replications[r].converged, b.replications[r].converged);
    EXPECT_EQ(a.replications[r].beta_hat, b.replications[r].beta_hat);
  }
  EXPECT_EQ(a.coefficients[0].var3_empirical, b.coefficients[0].var3_empirical);
}

TEST(Summarize, AggregatesAndExcludesNonConverged) {
  const std::vector<double> grid{0.0, 1.0};
  ltrc::SimScenario sc;
  auto rep = [](bool conv, double b1, double b2, bool cover) {
    ltrc::ReplicationResult r;
    r.converged = conv;
    r.beta_hat = Eigen::Vector2d(b1, b2);
    r.var1 = Eigen::Vector2d(0.01, 0.02);
    r.var2 = Eigen::Vector2d(0.03, 0.04);
    r.covered = {cover, true};
    r.curve = {b1, b2};
    r.attempts = 10;
    r.truncated = 2;
    r.kept = 8;
    r.censored = 1;
    r.starts = 10;
    r.starts_near_truth = 9;
    return r;
  };
  const auto s = ltrc::summarize(sc, {rep(true, 1.1, 0.9, true), rep(true, 0.9, 1.3, false), rep(false, 50, 50, true)},
                                 grid);
  EXPECT_EQ(s.reps_used, 2);
  EXPECT_EQ(s.reps_excluded, 1);
  EXPECT_NEAR(s.coefficients[0].bias, 0.0, 1e-15);
  EXPECT_NEAR(s.coefficients[1].bias, 0.1, 1e-15);
  EXPECT_NEAR(s.coefficients[0].var3_empirical, 0.02, 1e-15);
  EXPECT_NEAR(s.coefficients[0].coverage95, 0.5, 1e-15);
  EXPECT_NEAR(s.coefficients[1].var2_mean, 0.04, 1e-15);
  EXPECT_NEAR(s.pct_truncated, 0.2, 1e-15);
  EXPECT_NEAR(s.pct_censored, 0.125, 1e-15);
  EXPECT_NEAR(s.convergence_fraction, 0.9, 1e-15);
  EXPECT_NEAR(s.curve_mean[0], 1.0, 1e-15);
}

TEST(ApplicationLike, TruncatedOnUnitScale) {
  const auto app = ltrc::simulate_application_like(500, 3);
  ASSERT_EQ(app.data.size(), 500u);
  for (const auto& o : app.data) {
    EXPECT_GT(o.y, 0.0);
    EXPECT_LT(o.y, 1.0);
    EXPECT_GT(o.y, *o.t);
    EXPECT_EQ(o.delta, 1);
  }
}

TEST(SimScenario, RejectsBadInput) {
  ltrc::SimScenario sc;
  sc.n = 0;
  EXPECT_THROW(ltrc::run_study(sc), std::invalid_argument);
  sc.n = 10;
  sc.beta_true = Eigen::VectorXd::Ones(3);
  EXPECT_THROW(ltrc::run_study(sc), std::invalid_argument);
  EXPECT_THROW(ltrc::parse_error_law("cauchy"), std::invalid_argument);
}
