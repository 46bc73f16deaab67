#include <doctest.h>

#include <cmath>
#include <sstream>

#include "fkb/error.hpp"
#include "fkb/pipeline.hpp"
#include "support.hpp"

using namespace fkb;

namespace {

PipelineConfig raw_config() {
  PipelineConfig c;
  c.kernel = KernelChoice::None;
  c.mode = FeatureMode::RawOnly;
  c.r = 0;
  return c;
}

PipelineConfig light(KernelChoice kernel, FeatureMode mode, Eigen::Index r) {
  PipelineConfig c;
  c.kernel = kernel;
  c.mode = mode;
  c.r = r;
  c.forest.num_trees = 20;
  c.bart.num_trees = 10;
  c.bart.burn_in = 20;
  c.bart.draws = 5;
  return c;
}

struct Split {
  LabeledSample pilot;
  LabeledSample analysis;
};

Split tarr_split(std::uint64_t seed, Eigen::Index n) {
  const auto pilot_draw = gen_dataset(DgpSpec::tarr(n, derive_seed(seed, 2)));
  return {pilot_draw.subset(pilot_draw.control_indices()), gen_dataset(DgpSpec::tarr(n, derive_seed(seed, 1)))};
}

}  // namespace

TEST_CASE("raw configuration matches a direct solve") {
  const auto d = tarr_split(1, 300);
  const auto fit = run_forest_kbal(d.pilot, d.analysis, raw_config());

  const auto features = assemble_features(d.analysis.X, std::nullopt, FeatureMode::RawOnly);
  BalanceProblem problem{features.Phi, d.analysis.Z, lambda_heuristic(features.Phi, d.analysis.Y, d.analysis.Z)};
  const auto sol = solve_weights(problem);
  const double att = estimate_att(sol.w, d.analysis.Y, d.analysis.Z);
  CHECK(std::abs(fit.att - att) <= 1e-10);
  CHECK(fit.lambda == problem.lambda);
  CHECK(fit.converged);
}

TEST_CASE("kernel configurations run end to end") {
  const auto d = tarr_split(2, 300);
  for (auto kernel : {KernelChoice::RF, KernelChoice::BART, KernelChoice::GaussianKbal}) {
    for (auto mode : {FeatureMode::KernelOnly, FeatureMode::KernelPlusRaw}) {
      const auto fit = run_forest_kbal(d.pilot, d.analysis, light(kernel, mode, 5));
      CHECK(std::isfinite(fit.att));
      CHECK(fit.r_used == 5);
      CHECK(fit.converged);
      CHECK(fit.ess > 1.0);
      CHECK(std::abs(fit.weights.sum() - 1.0) < 1e-10);
    }
  }
}

TEST_CASE("logistic estimator path") {
  const auto d = tarr_split(3, 300);
  auto c = light(KernelChoice::RF, FeatureMode::KernelPlusRaw, 5);
  c.estimator = Estimator::LogisticIPW;
  const auto fit = run_forest_kbal(d.pilot, d.analysis, c);
  CHECK(std::isfinite(fit.att));
  CHECK(std::abs(fit.weights.sum() - 1.0) < 1e-10);
}

TEST_CASE("pilot with treated units is rejected") {
  const auto d = tarr_split(4, 200);
  auto bad_pilot = d.analysis;  // contains both arms
  CHECK_THROWS_AS(run_forest_kbal(bad_pilot, d.analysis, light(KernelChoice::RF, FeatureMode::KernelOnly, 3)),
                  InvalidArgument);
}

TEST_CASE("oversized r is capped with a warning") {
  const auto d = tarr_split(5, 60);
  const auto fit = run_forest_kbal(d.pilot, d.analysis, light(KernelChoice::GaussianKbal, FeatureMode::KernelOnly, 500));
  CHECK(fit.r_used <= d.analysis.size());
  CHECK_FALSE(fit.warnings.empty());
}

TEST_CASE("configuration invariants") {
  auto c = raw_config();
  c.mode = FeatureMode::KernelOnly;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = light(KernelChoice::RF, FeatureMode::RawOnly, 3);
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = light(KernelChoice::RF, FeatureMode::KernelOnly, 0);
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = light(KernelChoice::RF, FeatureMode::KernelOnly, 2);
  c.cross_fits = 0;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
}

TEST_CASE("cross-fitting produces one estimate per fit") {
  const auto s = gen_dataset(DgpSpec::tarr(300, 6));
  auto c = light(KernelChoice::RF, FeatureMode::KernelPlusRaw, 4);
  c.cross_fits = 4;
  c.seed = 99;
  const auto run = run_cross_fit(s, c);
  REQUIRE(run.att_estimates.size() == 4);
  double mean = 0.0;
  for (double a : run.att_estimates) mean += a;
  CHECK(run.att_mean == doctest::Approx(mean / 4.0).epsilon(1e-14));
  REQUIRE(run.true_att.has_value());
  CHECK(*run.true_att == true_att(s));

  // Paired fits swap halves: their analysis controls are disjoint and cover all controls.
  const auto& a = run.fits[0].control_index;
  const auto& b = run.fits[1].control_index;
  CHECK(static_cast<Eigen::Index>(a.size() + b.size()) == s.num_control());

  const auto again = run_cross_fit(s, c);
  CHECK(again.att_estimates == run.att_estimates);
}

TEST_CASE("design-based configurations fit once on the full sample") {
  const auto s = gen_dataset(DgpSpec::tarr(200, 7));
  auto c = raw_config();
  c.cross_fits = 10;
  const auto run = run_cross_fit(s, c);
  CHECK(run.att_estimates.size() == 1);
  CHECK(run.fits[0].weights.size() == s.num_control());
}

TEST_CASE("summaries of relative errors") {
  SUBCASE("symmetric errors") {
    const auto s = summarize_metrics({0.1, -0.1});
    CHECK(s.abs_rel_bias == doctest::Approx(0.0));
    CHECK(s.rel_rmse == doctest::Approx(0.1).epsilon(1e-15));
  }
  SUBCASE("constant error") {
    const auto s = summarize_metrics({0.2, 0.2, 0.2});
    CHECK(s.abs_rel_bias == doctest::Approx(0.2).epsilon(1e-15));
    CHECK(s.rel_rmse == doctest::Approx(0.2).epsilon(1e-15));
  }
  SUBCASE("NaNs are counted and skipped") {
    const auto s = summarize_metrics({0.3, std::nan(""), -0.1});
    CHECK(s.failures == 1);
    CHECK(s.abs_rel_bias == doctest::Approx(0.1).epsilon(1e-15));
  }
  SUBCASE("all NaN") { CHECK_THROWS_AS(summarize_metrics({std::nan(""), std::nan("")}), InvalidArgument); }
  SUBCASE("rmse dominates bias") {
    Rng rng(8);
    for (int rep = 0; rep < 100; ++rep) {
      std::vector<double> e(1 + rng.below(30));
      for (auto& v : e) v = rng.normal() + 0.5;
      const auto s = summarize_metrics(e);
      CHECK(s.rel_rmse >= s.abs_rel_bias);
    }
  }
}

TEST_CASE("an estimator that returns the truth has zero error") {
  const FitOverride oracle = [](const LabeledSample&, const LabeledSample& analysis, const PipelineConfig&) {
    FitResult f;
    f.att = true_att(analysis);
    f.ess = 1.0;
    return f;
  };
  for (const auto& dgp : {DgpSpec::tarr(200, 0), DgpSpec::kim(200, 30.0, 0)}) {
    MonteCarloOptions options;
    options.fit_override = oracle;
    const auto rows = run_monte_carlo(dgp, {raw_config()}, 5, options);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].abs_rel_bias == 0.0);
    CHECK(rows[0].rel_rmse == 0.0);
    CHECK(rows[0].failures == 0);
  }
}

TEST_CASE("monte carlo bookkeeping") {
  const std::vector<PipelineConfig> grid{raw_config(), light(KernelChoice::RF, FeatureMode::KernelPlusRaw, 3),
                                         light(KernelChoice::RF, FeatureMode::KernelOnly, 3)};
  std::vector<std::vector<RepOutcome>> outcomes;
  MonteCarloOptions options;
  options.base_seed = 17;
  options.outcomes = &outcomes;
  const auto rows = run_monte_carlo(DgpSpec::tarr(200, 0), grid, 3, options);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].feature_grouping == "raw");
  CHECK(rows[0].num_pcs == 0);
  CHECK(rows[1].feature_grouping == "rf_plus");
  CHECK(rows[2].feature_grouping == "rf_only");
  CHECK(rows[1].num_pcs == 3);

  // Stored truth equals the ATT of the replication's analysis sample, shared by every configuration.
  for (int s = 0; s < 3; ++s) {
    const auto rep_seed = derive_seed(17, static_cast<std::uint64_t>(s));
    const auto analysis = gen_dataset(DgpSpec::tarr(200, derive_seed(rep_seed, 1)));
    for (std::size_t g = 0; g < grid.size(); ++g) CHECK(outcomes[g][static_cast<std::size_t>(s)].truth == true_att(analysis));
  }
  for (const auto& r : rows) {
    CHECK(r.rel_rmse >= r.abs_rel_bias);
    CHECK(r.abs_rel_bias >= 0.0);
  }
}

TEST_CASE("kim rows report absolute errors") {
  const FitOverride shifted = [](const LabeledSample&, const LabeledSample&, const PipelineConfig&) {
    FitResult f;
    f.att = 0.5;
    f.ess = 1.0;
    return f;
  };
  MonteCarloOptions options;
  options.fit_override = shifted;
  const auto rows = run_monte_carlo(DgpSpec::kim(100, 30.0, 0), {raw_config()}, 4, options);
  CHECK(rows[0].abs_rel_bias == 0.5);
  CHECK(rows[0].rel_rmse == 0.5);
}

TEST_CASE("failures are recorded, not fatal") {
  int calls = 0;
  const FitOverride flaky = [&calls](const LabeledSample&, const LabeledSample& analysis, const PipelineConfig&) {
    if (calls++ % 2 == 0) throw SolverError("simulated failure");
    FitResult f;
    f.att = true_att(analysis);
    return f;
  };
  MonteCarloOptions options;
  options.fit_override = flaky;
  const auto rows = run_monte_carlo(DgpSpec::tarr(100, 0), {raw_config()}, 4, options);
  CHECK(rows[0].failures == 2);
  CHECK(rows[0].reps == 4);
}

TEST_CASE("results csv is deterministic and independent of the worker count") {
  const std::vector<PipelineConfig> grid{raw_config(), light(KernelChoice::RF, FeatureMode::KernelPlusRaw, 3),
                                         light(KernelChoice::GaussianKbal, FeatureMode::KernelOnly, 2)};
  auto csv_for = [&](int jobs) {
    MonteCarloOptions options;
    options.base_seed = 5;
    options.jobs = jobs;
    std::ostringstream out;
    write_results_csv(out, run_monte_carlo(DgpSpec::tarr(150, 0), grid, 4, options));
    return out.str();
  };
  const auto one = csv_for(1);
  CHECK(one == csv_for(1));
  CHECK(one == csv_for(3));
  CHECK(one.substr(0, one.find('\n')) == "feature_grouping,kernel,num_pcs,reps,abs_rel_bias,rel_rmse,ess_mean,failures");
  CHECK(std::count(one.begin(), one.end(), '\n') == 4);
}

TEST_CASE("monte carlo validation") {
  CHECK_THROWS_AS(run_monte_carlo(DgpSpec::tarr(100, 0), {raw_config()}, 0), InvalidArgument);
  CHECK_THROWS_AS(run_monte_carlo(DgpSpec::tarr(100, 0), {}, 2), InvalidArgument);
  CHECK_THROWS_AS(run_monte_carlo(DgpSpec::tarr(1, 0), {raw_config()}, 2), InvalidArgument);
}
