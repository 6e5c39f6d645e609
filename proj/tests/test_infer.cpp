#include <doctest.h>

#include <cmath>
#include <limits>

#include "mtbd/error.hpp"
#include "mtbd/fixtures.hpp"
#include "mtbd/infer.hpp"
#include "mtbd/simulate.hpp"

using namespace mtbd;

namespace {

std::vector<Tree> nm_trees(std::size_t n, std::uint64_t seed) {
  const auto space = fixtures::paper_type_space();
  const auto truth = fixtures::no_misspecification_truth();
  SimOptions o;
  o.root_state = static_cast<int>(fixtures::naive_state());
  Rng rng(seed);
  std::vector<Tree> trees;
  for (std::size_t i = 0; i < n; ++i) trees.push_back(simulate_conditioned(truth, space, o, 0.1, rng).tree);
  return trees;
}

ParamLayout nm_layout() {
  return ParamLayout::sigmoid(fixtures::paper_type_space(), fixtures::paper_gamma_star(), {0.1});
}

double mean_of(const std::vector<double>& x) {
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

double sd_of(const std::vector<double>& x) {
  const double m = mean_of(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return std::sqrt(s / static_cast<double>(x.size() - 1));
}

}  // namespace

TEST_CASE("log-normal proposal correction") {
  CHECK(log_proposal_correction(2.0, 3.0, true) == doctest::Approx(std::log(1.5)));
  CHECK(log_proposal_correction(2.0, 3.0, false) == 0.0);
  // Swapping current and proposed inverts the ratio.
  for (double a : {0.1, 1.0, 7.5})
    for (double b : {0.3, 2.0, 40.0})
      CHECK(log_proposal_correction(a, b, true) == doctest::Approx(-log_proposal_correction(b, a, true)));
}

TEST_CASE("a proposal equal to the current state is accepted") {
  const LogTarget target = [](const std::vector<double>& v) { return -v[0] * v[0] - std::log(v[1]); };
  MhState s{{0.5, 2.0}, 0.0};
  s.log_post = target(s.value);
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    const auto acc = mh_step(s, target, {0.0, 0.0}, {false, true}, rng);
    CHECK(acc[0]);
    CHECK(acc[1]);
  }
  CHECK(s.value == std::vector<double>{0.5, 2.0});
}

TEST_CASE("sampler recovers the mean of a known target") {
  // Independent LN(0.3, 0.5), LN(-1, 0.8) and N(2, 1) components. The target is
  // written on the natural scale (densities of the variables themselves).
  const LogTarget target = [](const std::vector<double>& v) {
    if (!(v[0] > 0.0) || !(v[1] > 0.0)) return -std::numeric_limits<double>::infinity();
    return LogNormalPrior{0.3, 0.5}.log_density(v[0]) + LogNormalPrior{-1.0, 0.8}.log_density(v[1]) +
           NormalPrior{2.0, 1.0}.log_density(v[2]);
  };
  ChainConfig cfg;
  cfg.iterations = 110000;
  cfg.burn_in = 10000;
  cfg.seed = 42;
  const Chain c = run_sampler(target, {"a", "b", "c"}, {true, true, false}, {1.0, 1.0, 0.0}, cfg);
  REQUIRE(c.size() == 100000);
  const std::vector<double> truth{std::exp(0.3 + 0.125), std::exp(-1.0 + 0.32), 2.0};
  for (std::size_t j = 0; j < 3; ++j) {
    const auto col = c.column(j);
    const double se = sd_of(col) / std::sqrt(effective_sample_size(col));
    CHECK(std::abs(mean_of(col) - truth[j]) < 3.0 * se);
    CHECK(c.acceptance[j] == doctest::Approx(0.44).epsilon(0.15));
  }
}

TEST_CASE("effective sample size") {
  Rng rng(3);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<double> iid(20000), ar(20000);
  double prev = 0.0;
  for (std::size_t i = 0; i < iid.size(); ++i) {
    iid[i] = n01(rng);
    prev = 0.9 * prev + n01(rng);
    ar[i] = prev;
  }
  CHECK(effective_sample_size(iid) == doctest::Approx(20000.0).epsilon(0.15));
  // AR(1): n (1 - phi) / (1 + phi).
  CHECK(effective_sample_size(ar) == doctest::Approx(20000.0 * 0.1 / 1.9).epsilon(0.25));
  CHECK(effective_sample_size(std::vector<double>(100, 1.0)) == 100.0);
}

TEST_CASE("log posterior support and conditioning") {
  const auto trees = nm_trees(5, 7);
  const TreeSetDensity set(trees, 8);
  const ParamLayout layout = nm_layout();
  const auto truth = layout.from_params(fixtures::no_misspecification_truth());
  SetOptions cond, uncond;
  uncond.conditioning = Conditioning::unconditional;
  CHECK(std::isfinite(log_posterior(truth, layout, set, cond)));
  CHECK(log_posterior(truth, layout, set, cond) >= log_posterior(truth, layout, set, uncond));
  auto bad = truth;
  bad[4] = -0.5;
  CHECK(log_posterior(bad, layout, set, cond) == -std::numeric_limits<double>::infinity());
  bad = truth;
  bad[2] = std::nan("");
  CHECK(log_posterior(bad, layout, set, cond) == -std::numeric_limits<double>::infinity());
  // phi3 may be negative.
  CHECK(layout.in_support(truth));
  CHECK(truth[2] < 0.0);
  CHECK(layout.prior_medians() ==
        std::vector<double>{std::exp(0.5), std::exp(0.5), 0.0, std::exp(-0.5), 1.0, 1.0});
}

TEST_CASE("true parameters beat a perturbed birth range") {
  const ParamLayout layout = nm_layout();
  const auto truth = layout.from_params(fixtures::no_misspecification_truth());
  auto doubled = truth;
  doubled[0] *= 2.0;
  int wins = 0;
  for (std::uint64_t set_id = 0; set_id < fixtures::kTreeSets; ++set_id) {
    const TreeSetDensity set(nm_trees(fixtures::kTreesPerSet, derive_seed(99, set_id)), 8);
    if (log_posterior(truth, layout, set, {}) > log_posterior(doubled, layout, set, {})) ++wins;
  }
  CHECK(wins >= 4);
}

TEST_CASE("chains are reproducible from the seed") {
  const TreeSetDensity set(nm_trees(10, 11), 8);
  const ParamLayout layout = nm_layout();
  ChainConfig cfg;
  cfg.iterations = 300;
  cfg.burn_in = 100;
  cfg.thin = 2;
  cfg.seed = 5;
  const Chain a = run_chain(set, layout, cfg);
  const Chain b = run_chain(set, layout, cfg);
  REQUIRE(a.size() == 100);
  CHECK(a.draws == b.draws);
  CHECK(a.log_post == b.log_post);
  cfg.seed = 6;
  CHECK(run_chain(set, layout, cfg).draws != a.draws);
  for (std::size_t k = 0; k < a.size(); ++k) {
    CHECK(layout.in_support(a.draws[k]));
    CHECK(std::isfinite(a.log_post[k]));
  }
}

TEST_CASE("constant-rate layout") {
  const ParamLayout layout = ParamLayout::constant({1.0});
  CHECK(layout.names() == std::vector<std::string>{"lambda", "mu"});
  CHECK(layout.prior_medians()[0] == doctest::Approx(std::exp(1.5)));
  const Rates r = layout.rates({1.8, 1.0});
  CHECK(r.size() == 1);
  CHECK(r.birth[0] == 1.8);
  CHECK(r.death == 1.0);
  CHECK(layout.log_prior({1.8, 1.0}) ==
        doctest::Approx(LogNormalPrior{1.5, 1.0}.log_density(1.8) + LogNormalPrior{0.0, 0.5}.log_density(1.0)));
  CHECK_THROWS_AS(layout.space(), ValidationError);
}

TEST_CASE("chain configuration errors") {
  const TreeSetDensity set(nm_trees(2, 1), 8);
  const ParamLayout layout = nm_layout();
  ChainConfig cfg;
  cfg.iterations = 10;
  cfg.burn_in = 10;
  CHECK_THROWS_AS(run_chain(set, layout, cfg), ValidationError);
  cfg.burn_in = 2;
  cfg.scales = {0.1, 0.1};
  CHECK_THROWS_AS(run_chain(set, layout, cfg), ValidationError);
  cfg.scales.clear();
  cfg.initial = std::vector<double>{1, 1, 0, 1, -1, 1};
  CHECK_THROWS_AS(run_chain(set, layout, cfg), NumericalError);
}

TEST_CASE("summaries of constant and sigmoid chains") {
  const ParamLayout layout = nm_layout();
  Chain c;
  c.names = layout.names();
  for (std::size_t k = 0; k < 50; ++k) {
    c.iteration.push_back(k);
    c.draws.push_back({1.3, 1.0, -1.1, 0.5, 0.5, 20.0});
    c.log_post.push_back(-1.0);
    c.accepted.push_back(std::vector<bool>(6, false));
  }
  const ChainSummary s = chain_summary(c, layout, linspace(-3.0, 3.0, 13));
  for (const auto& p : s.params) {
    CHECK(p.ci90.lo == p.ci90.hi);
    CHECK(p.ci50.lo == p.median);
  }
  for (std::size_t k = 0; k < 8; ++k) {
    CHECK(s.birth_types.ci90[k].lo == s.birth_types.ci90[k].hi);
    CHECK(s.net_types.median[k] == doctest::Approx(s.birth_types.median[k] - 0.5));
  }

  // Far-left band is the phi4 interval.
  Rng rng(2);
  for (auto& d : c.draws) d[3] = LogNormalPrior{-0.5, 0.3}.sample(rng);
  const ChainSummary s2 = chain_summary(c, layout, {-1e4});
  const Interval phi4 = central_interval(c.column(3), 0.9);
  CHECK(s2.birth_grid.ci90[0].lo == doctest::Approx(phi4.lo));
  CHECK(s2.birth_grid.ci90[0].hi == doctest::Approx(phi4.hi));
  CHECK_THROWS_AS(chain_summary(Chain{}, layout, {0.0}), ValidationError);
}

TEST_CASE("chain csv layout") {
  const TreeSetDensity set(nm_trees(3, 2), 8);
  ChainConfig cfg;
  cfg.iterations = 20;
  cfg.burn_in = 10;
  const std::string csv = chain_to_csv(run_chain(set, nm_layout(), cfg));
  CHECK(csv.rfind("iter,phi1,phi2,phi3,phi4,mu,delta,log_post,accepted_phi1,accepted_phi2,accepted_phi3,"
                  "accepted_phi4,accepted_mu,accepted_delta\n10,",
                  0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 11);
}

TEST_CASE("chain csv round trip") {
  const TreeSetDensity set(nm_trees(3, 4), 8);
  ChainConfig cfg;
  cfg.iterations = 700;
  cfg.burn_in = 600;
  const Chain c = run_chain(set, nm_layout(), cfg);
  REQUIRE(c.block_acceptance.has_value());
  const Chain back = chain_from_csv(chain_to_csv(c));
  CHECK(back.names == c.names);
  CHECK(back.iteration == c.iteration);
  CHECK(back.accepted == c.accepted);
  CHECK(back.log_post == c.log_post);
  REQUIRE(back.size() == c.size());
  for (std::size_t k = 0; k < c.size(); ++k)
    for (std::size_t j = 0; j < 6; ++j) CHECK(back.draws[k][j] == c.draws[k][j]);
  CHECK_THROWS_AS(chain_from_csv("a,b\n"), ValidationError);
  CHECK_THROWS_AS(chain_from_csv("iter,x,log_post,accepted_x\n1,zz,2,1\n"), ValidationError);
}
