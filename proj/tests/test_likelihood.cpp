#include <doctest.h>

#include <cmath>
#include <limits>

#include "mtbd/error.hpp"
#include "mtbd/fixtures.hpp"
#include "mtbd/likelihood.hpp"

using namespace mtbd;

namespace {

// Sampled birth-death closed forms, written out independently of the library.
double p_exact(double l, double m, double rho, double t) {
  const double r = l - m;
  return 1.0 - rho * r / (rho * l + (l * (1 - rho) - m) * std::exp(-r * t));
}

// log of e^{-rt} / (rho l + c e^{-rt})^2, so log q(t) - log q(0) = f(t) - f(0).
double log_f(double l, double m, double rho, double t) {
  const double r = l - m;
  return -r * t - 2.0 * std::log(rho * l + (l * (1 - rho) - m) * std::exp(-r * t));
}

double log_q_leaf(double l, double m, double rho, double t) {
  return std::log(rho) + log_f(l, m, rho, t) - log_f(l, m, rho, 0.0);
}

Tree single_leaf(double t, int state = 0) {
  Tree tree;
  tree.nodes = {{0, std::nullopt, t, Event::root, state, std::nullopt},
                {1, 0, 0.0, Event::sampled_leaf, state, std::nullopt}};
  return tree;
}

Tree cherry(double root, double split, int state = 0) {
  Tree tree;
  tree.nodes = {{0, std::nullopt, root, Event::root, state, std::nullopt},
                {1, 0, split, Event::birth, state, std::nullopt},
                {2, 1, 0.0, Event::sampled_leaf, state, std::nullopt},
                {3, 1, 0.0, Event::sampled_leaf, state, std::nullopt}};
  return tree;
}

// Two types; the lineage switches 0 -> 1 then splits.
Tree switching_tree() {
  Tree tree;
  tree.nodes = {{0, std::nullopt, 6.0, Event::root, 0, std::nullopt},
                {1, 0, 4.5, Event::birth, 0, std::nullopt},
                {2, 1, 3.0, Event::type_change, 1, std::nullopt},
                {3, 2, 1.2, Event::birth, 1, std::nullopt},
                {4, 3, 0.0, Event::sampled_leaf, 1, std::nullopt},
                {5, 3, 0.0, Event::sampled_leaf, 1, std::nullopt},
                {6, 1, 0.0, Event::sampled_leaf, 0, std::nullopt}};
  return tree;
}

Rates two_type_rates(double gamma01, double gamma10) {
  Rates r;
  r.birth = {0.9, 2.1};
  r.death = 0.6;
  r.gamma = SquareMatrix::from_rows({{-gamma01, gamma01}, {gamma10, -gamma10}});
  return r;
}

}  // namespace

TEST_CASE("p matches the single-type closed form") {
  struct Cfg {
    double l, m, rho;
  };
  for (const Cfg c : {Cfg{1.8, 1.0, 1.0}, Cfg{1.0, 1.3, 0.5}, Cfg{2.5, 0.4, 0.1}}) {
    const PExtinct p(constant_rates(1, c.l, c.m), 15.0, c.rho);
    double worst = 0.0;
    for (double t = 0.0; t <= 15.0; t += 0.01) worst = std::max(worst, std::abs(p.p(0, t) - p_exact(c.l, c.m, c.rho, t)));
    CHECK(worst < 1e-6);
    CHECK(p.p(0, 0.0) == 1.0 - c.rho);
  }
  const PExtinct p(constant_rates(1, 1.8, 1.0), 1.0, 1.0);
  CHECK(p.p(0, 1.0) == doctest::Approx(0.4077).epsilon(1e-4));
  CHECK(single_type_p(1.8, 1.0, 1.0, 1.0) == doctest::Approx(p_exact(1.8, 1.0, 1.0, 1.0)).epsilon(1e-13));
  // Critical case r = 0 uses the limit.
  CHECK(single_type_p(1.0, 1.0, 0.5, 2.0) == doctest::Approx(1.0 - 0.5 / (1.0 + 0.5 * 2.0)));
}

TEST_CASE("p without death and full sampling stays zero") {
  const PExtinct p(constant_rates(3, 1.4, 0.0), 10.0, 1.0);
  for (double t = 0.0; t <= 10.0; t += 0.5) CHECK(std::abs(p.p(1, t)) < 1e-12);
}

TEST_CASE("p solution rejects queries outside its range") {
  const PExtinct p(constant_rates(1, 1.0, 0.5), 2.0, 0.5);
  CHECK_THROWS_AS(p.p(0, 2.5), NumericalError);
  CHECK_THROWS_AS(PExtinct(constant_rates(1, 1.0, 0.5), 2.0, 0.0), ValidationError);
}

TEST_CASE("single-type tree densities match closed forms in both modes") {
  const double l = 1.8, m = 1.0;
  for (double rho : {1.0, 0.3}) {
    for (double t : {0.5, 3.0, 15.0}) {
      const CompiledTree c = compile(single_leaf(t), 1);
      const Rates rates = constant_rates(1, l, m);
      const PExtinct p(rates, t, rho);
      const double oracle = log_q_leaf(l, m, rho, t);
      CHECK(std::abs(log_density(c, rates, p, DensityMode::loglinear).log_q_root - oracle) < 1e-7);
      CHECK(std::abs(log_density(c, rates, p, DensityMode::direct).log_q_root - oracle) < 1e-7);
      const LogDensityResult a = log_density_approx(c, rates, rho);
      CHECK(a.log_q_root == doctest::Approx(oracle).epsilon(1e-12));
      const double surv = std::log(1.0 - p_exact(l, m, rho, t));
      CHECK(a.log_survival == doctest::Approx(surv).epsilon(1e-12));
    }
  }

  // Cherry: both leaves, the birth, and the root stretch.
  const double rho = 0.4, root = 4.0, split = 1.5;
  const double oracle = 2.0 * log_q_leaf(l, m, rho, split) + std::log(l) + log_f(l, m, rho, root) -
                        log_f(l, m, rho, split);
  const CompiledTree c = compile(cherry(root, split), 1);
  const Rates rates = constant_rates(1, l, m);
  const PExtinct p(rates, root, rho);
  const LogDensityResult r = log_density(c, rates, p);
  CHECK(std::abs(r.log_q_root - oracle) < 1e-7);
  CHECK(std::abs(r.log_survival - std::log(1 - p_exact(l, m, rho, root))) < 1e-7);
  CHECK(r.log_conditional == doctest::Approx(r.log_q_root - r.log_survival));
}

TEST_CASE("direct and loglinear agree on a multitype tree") {
  const Rates rates = two_type_rates(0.7, 0.3);
  const CompiledTree c = compile(switching_tree(), 2);
  for (double rho : {1.0, 0.1}) {
    const PExtinct p(rates, c.root_time, rho);
    const auto a = log_density(c, rates, p, DensityMode::loglinear);
    const auto b = log_density(c, rates, p, DensityMode::direct);
    CHECK(std::isfinite(a.log_q_root));
    CHECK(std::abs(a.log_q_root - b.log_q_root) < 1e-6);
    CHECK(a.log_conditional >= a.log_q_root);
  }
}

TEST_CASE("sibling order does not change the density") {
  Tree t = switching_tree();
  Tree swapped = t;
  std::swap(swapped.nodes[1], swapped.nodes[6]);  // reorder node list
  std::swap(swapped.nodes[4], swapped.nodes[5]);
  const Rates rates = two_type_rates(0.7, 0.3);
  const PExtinct p(rates, 6.0, 0.5);
  CHECK(log_density(compile(t, 2), rates, p).log_q_root ==
        doctest::Approx(log_density(compile(swapped, 2), rates, p).log_q_root).epsilon(1e-14));
}

TEST_CASE("zero-rate type change gives minus infinity with a diagnostic") {
  const Rates rates = two_type_rates(0.0, 0.3);
  const CompiledTree c = compile(switching_tree(), 2);
  const PExtinct p(rates, c.root_time, 0.5);
  const auto r = log_density(c, rates, p);
  CHECK(r.log_q_root == -std::numeric_limits<double>::infinity());
  CHECK(r.diagnostic.find("zero rate") != std::string::npos);
  CHECK(log_density_approx(c, rates, 0.5).log_q_root == -std::numeric_limits<double>::infinity());
}

TEST_CASE("conditioning") {
  // No death and full sampling: survival is certain.
  const Rates yule = constant_rates(1, 1.3, 0.0);
  const CompiledTree c = compile(cherry(3.0, 1.0), 1);
  const PExtinct p(yule, 3.0, 1.0);
  const auto r = log_density(c, yule, p);
  CHECK(r.log_survival == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(log_density_conditional(c, yule, p) == doctest::Approx(r.log_q_root).epsilon(1e-12));
}

TEST_CASE("approximation equals exact when gamma vanishes") {
  const Rates rates = two_type_rates(0.0, 0.0);
  Tree t = switching_tree();
  // Without type changes: replace the switch by a longer birth-only tree in type 1.
  const CompiledTree c = compile(cherry(5.0, 2.0, 1), 2);
  const PExtinct p(rates, 5.0, 0.2);
  const auto exact = log_density(c, rates, p);
  const auto approx = log_density_approx(c, rates, 0.2);
  CHECK(std::abs(exact.log_q_root - approx.log_q_root) < 1e-6);
  CHECK(std::abs(exact.log_conditional - approx.log_conditional) < 1e-6);

  // With coupling the two differ, and more so as the change rates grow.
  const CompiledTree sc = compile(t, 2);
  double prev = 0.0;
  for (double scale : {0.1, 1.0, 20.0}) {
    const Rates r = two_type_rates(0.7 * scale, 0.3 * scale);
    const PExtinct pe(r, sc.root_time, 0.1);
    const double gap = std::abs(log_density(sc, r, pe).log_q_root - log_density_approx(sc, r, 0.1).log_q_root);
    CHECK(gap > prev);
    prev = gap;
  }
}

TEST_CASE("tree set density factorizes") {
  const TypeSpace space({-1.0, 1.0}, {0.0});
  Params params;
  params.phi = {1.5, 1.0, 0.0, 0.4};
  params.mu = 0.6;
  params.delta = 0.5;
  params.gamma_star = SquareMatrix::from_rows({{-1.0, 1.0}, {0.4, -0.4}});
  params.rho = {0.3, 0.8};

  const Tree a = switching_tree();
  Tree b = cherry(2.5, 0.7, 1);
  b.rho_index = 1;
  const double single = log_density_conditional(a, params, space);
  CHECK(log_density_set({a}, params, space) == doctest::Approx(single).epsilon(1e-12));
  CHECK(log_density_set({a, a}, params, space) == doctest::Approx(2.0 * single).epsilon(1e-12));
  // The shared solve runs over the longer tree; values match the per-tree solve.
  const double sb = log_density_conditional(b, params, space);
  CHECK(log_density_set({a, b}, params, space) == doctest::Approx(single + sb).epsilon(1e-9));

  SetOptions unc;
  unc.conditioning = Conditioning::unconditional;
  CHECK(log_density_set({a, b}, params, space, unc) < log_density_set({a, b}, params, space));

  params.rho = {0.3};
  CHECK_THROWS_AS(log_density_set({a, b}, params, space), ValidationError);
}

TEST_CASE("density mode strings") {
  CHECK(density_mode_from_string("direct") == DensityMode::direct);
  CHECK(to_string(DensityMode::loglinear) == "loglinear");
  CHECK_THROWS_AS(density_mode_from_string("fast"), ValidationError);
}
