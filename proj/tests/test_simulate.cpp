#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>

#include "mtbd/error.hpp"
#include "mtbd/fixtures.hpp"
#include "mtbd/likelihood.hpp"
#include "mtbd/simulate.hpp"

using namespace mtbd;

namespace {

double ks_statistic(std::vector<double> u) {
  std::sort(u.begin(), u.end());
  const double n = static_cast<double>(u.size());
  double d = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i)
    d = std::max({d, (i + 1) / n - u[i], u[i] - i / n});
  return d;
}

// Asymptotic one-sample KS critical value at alpha = 0.01.
double ks_critical_01(std::size_t n) { return 1.6276 / std::sqrt(static_cast<double>(n)); }

Rates nm_rates() {
  return fixtures::no_misspecification_truth().rates(fixtures::paper_type_space());
}

}  // namespace

TEST_CASE("no events leaves a single unbranched lineage") {
  Rng rng(1);
  SimOptions opts;
  opts.t_total = 7.0;
  const Tree t = simulate_full(constant_rates(3, 0.0, 0.0), opts, rng);
  REQUIRE(t.nodes.size() == 2);
  CHECK(t.root_time() == 7.0);
  CHECK(t.nodes[1].event == Event::sampled_leaf);
  CHECK(t.nodes[1].time == 0.0);
}

TEST_CASE("yule mean leaf count is exp(lambda t)") {
  Rng rng(2);
  SimOptions opts;
  opts.t_total = 2.0;
  const Rates yule = constant_rates(1, 1.0, 0.0);
  const int reps = 10000;
  double sum = 0.0, sum2 = 0.0;
  for (int r = 0; r < reps; ++r) {
    const double k = static_cast<double>(simulate_full(yule, opts, rng).leaf_count());
    sum += k;
    sum2 += k * k;
  }
  const double mean = sum / reps;
  const double se = std::sqrt((sum2 / reps - mean * mean) / reps);
  CHECK(std::abs(mean - std::exp(2.0)) < 3 * se);
}

TEST_CASE("simulated full trees are valid and times lie inside the run") {
  Rng rng(3);
  SimOptions opts;
  opts.t_total = 6.0;
  opts.root_state = static_cast<int>(fixtures::naive_state());
  for (int r = 0; r < 50; ++r) {
    const Tree t = simulate_full(nm_rates(), opts, rng);
    CHECK(validate(t, TreeKind::full, 8).empty());
    for (const auto& n : t.nodes) {
      if (n.event == Event::root) continue;
      if (n.event == Event::sampled_leaf)
        CHECK(n.time == 0.0);
      else
        CHECK((n.time > 0.0 && n.time < opts.t_total));
    }
  }
}

TEST_CASE("no-misspecification setup reaches every type among leaves") {
  Rng rng(4);
  SimOptions opts;
  opts.root_state = static_cast<int>(fixtures::naive_state());
  std::vector<std::size_t> counts(8, 0);
  // Bin 7 is rare: about 1e-3 expected leaves per run.
  for (int r = 0; r < 10000; ++r) {
    const auto c = simulate_full(nm_rates(), opts, rng).leaf_state_counts(8);
    for (std::size_t x = 0; x < 8; ++x) counts[x] += c[x];
  }
  for (std::size_t x = 0; x < 8; ++x) CHECK_MESSAGE(counts[x] > 0, "state " << x);
}

TEST_CASE("holding times are exponential with the total event rate") {
  Rng rng(5);
  const Rates rates = nm_rates();
  SimOptions opts;
  opts.t_total = 8.0;
  opts.root_state = static_cast<int>(fixtures::naive_state());
  // Each uncensored stretch of one type started at backward time s has
  // CDF F(h) / F(s) given that it ended before collection.
  std::map<int, std::vector<double>> u_by_state;
  std::size_t total = 0;
  while (total < 40000) {
    const Tree t = simulate_full(rates, opts, rng);
    for (const auto& seg : postorder_segments(t)) {
      if (seg.end_event == Event::sampled_leaf) continue;
      const auto x = static_cast<std::size_t>(seg.state);
      const double r = rates.birth[x] + rates.death + rates.total_change(x);
      const double u = -std::expm1(-r * seg.length()) / -std::expm1(-r * seg.start_time);
      u_by_state[seg.state].push_back(u);
      ++total;
    }
  }
  int tested = 0;
  for (const auto& [state, u] : u_by_state) {
    if (u.size() < 10000) continue;
    ++tested;
    std::vector<double> sample(u.begin(), u.begin() + 10000);
    CHECK_MESSAGE(ks_statistic(sample) < ks_critical_01(sample.size()), "state " << state);
  }
  CHECK(tested >= 1);
}

TEST_CASE("hard capacity bounds the living population") {
  Rng rng(6);
  SimOptions opts;
  opts.t_total = 6.0;
  opts.capacity = Capacity{CapacityMode::hard, 30, 0.1};
  const Rates rates = constant_rates(2, 2.0, 0.2);
  std::size_t hit = 0;
  for (int r = 0; r < 300; ++r) {
    SimStats st;
    const Tree t = simulate_full(rates, opts, rng, &st);
    CHECK(st.max_alive <= 30);
    CHECK(validate(t, TreeKind::full, 2).empty());
    // Replay the lineage count through event times.
    std::vector<std::pair<double, int>> deltas;
    for (const auto& n : t.nodes) {
      if (n.event == Event::birth) deltas.emplace_back(n.time, +1);
      if (n.event == Event::death_leaf) deltas.emplace_back(n.time, -1);
    }
    // Backward time: larger t happens first. A capacity death shares its
    // birth's time, so apply each instant as a whole.
    std::sort(deltas.begin(), deltas.end(), [](auto a, auto b) { return a.first > b.first; });
    int alive = 1, peak = 1;
    for (std::size_t k = 0; k < deltas.size();) {
      const double time = deltas[k].first;
      for (; k < deltas.size() && deltas[k].first == time; ++k) alive += deltas[k].second;
      peak = std::max(peak, alive);
    }
    CHECK(peak <= 30);
    if (st.capacity_deaths > 0) ++hit;
  }
  CHECK(hit > 0);
}

TEST_CASE("soft capacity modulation") {
  SimOptions opts;
  opts.capacity = Capacity{CapacityMode::soft, 1000, 0.1};
  const Rates rates = constant_rates(1, 2.0, 1.0);
  CHECK(effective_birth_rate(0, 1000, rates, opts) == doctest::Approx(1.0));
  CHECK(effective_birth_rate(0, 10, rates, opts) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(capacity_factor(499, opts) > 0.99998);
  SimOptions none;
  CHECK(effective_birth_rate(0, 5000, rates, none) == 2.0);

  // Soft capacity with K = 100: the population settles where lambda_eff = mu.
  Rng rng(7);
  SimOptions sc;
  sc.t_total = 15.0;
  sc.capacity = Capacity{CapacityMode::soft, 100, 0.1};
  double sum = 0.0;
  int kept = 0;
  for (int r = 0; r < 200; ++r) {
    const auto counts = simulate_counts(rates, sc, {15.0}, rng);
    if (counts[0][0] == 0) continue;
    sum += static_cast<double>(counts[0][0]);
    ++kept;
  }
  // 2 / (1 + exp(0.1 (n - 100))) = 1 at n = 100.
  CHECK(sum / kept == doctest::Approx(100.0).epsilon(0.1));
}

TEST_CASE("prune rules") {
  Rng rng(8);
  SimOptions opts;
  opts.t_total = 3.0;
  const Rates yule = constant_rates(1, 1.0, 0.0);
  const Tree full = simulate_full(yule, opts, rng);
  const auto all = prune(full, 1.0, rng);
  REQUIRE(all);
  auto by_id = [](std::vector<Node> v) {
    std::sort(v.begin(), v.end(), [](const Node& a, const Node& b) { return a.id < b.id; });
    return v;
  };
  CHECK(by_id(all->nodes) == by_id(full.nodes));

  for (int r = 0; r < 20; ++r) CHECK_FALSE(prune(simulate_full(yule, opts, rng), 0.0, rng));

  // root(3) -> birth(2) -> {leaf A, birth(1) -> {leaf B, death(0.5)}}
  Tree t;
  t.nodes = {{0, std::nullopt, 3.0, Event::root, 0, std::nullopt},
             {1, 0, 2.0, Event::birth, 0, std::nullopt},
             {2, 1, 0.0, Event::sampled_leaf, 0, std::nullopt},
             {3, 1, 1.0, Event::birth, 0, std::nullopt},
             {4, 3, 0.0, Event::sampled_leaf, 0, std::nullopt},
             {5, 3, 0.5, Event::death_leaf, 0, std::nullopt}};
  const auto obs = prune(t, 1.0, rng);
  REQUIRE(obs);
  CHECK(obs->nodes.size() == 4);
  const auto b = std::find_if(obs->nodes.begin(), obs->nodes.end(), [](const Node& n) { return n.id == 4; });
  REQUIRE(b != obs->nodes.end());
  CHECK(*b->parent == 1);  // spliced past the removed birth
  CHECK(validate(*obs, TreeKind::observed, 1).empty());
}

TEST_CASE("observed leaf count is binomial in the survivors") {
  Rng rng(9);
  SimOptions opts;
  opts.t_total = 2.0;
  const Tree full = simulate_full(constant_rates(1, 1.5, 0.0), opts, rng);
  const double survivors = static_cast<double>(full.leaf_count());
  const double rho = 0.3;
  double sum = 0.0;
  const int reps = 20000;
  for (int r = 0; r < reps; ++r) {
    const auto obs = prune(full, rho, rng);
    sum += obs ? static_cast<double>(obs->leaf_count()) : 0.0;
  }
  const double se = std::sqrt(survivors * rho * (1 - rho) / reps);
  CHECK(std::abs(sum / reps - survivors * rho) < 3 * se);
}

TEST_CASE("conditioned simulation") {
  Rng rng(10);
  SimOptions opts;
  opts.t_total = 2.0;
  const auto sure = simulate_conditioned(constant_rates(1, 1.0, 0.0), opts, 1.0, rng);
  CHECK(sure.rejections == 0);

  SimOptions hopeless = opts;
  hopeless.t_total = 30.0;
  hopeless.rejection_budget = 200;
  CHECK_THROWS_AS(simulate_conditioned(constant_rates(1, 0.1, 3.0), hopeless, 0.01, rng), NumericalError);

  // Acceptance frequency against the ODE survival probability.
  const Rates rates = nm_rates();
  SimOptions nm;
  nm.t_total = 4.0;
  nm.root_state = static_cast<int>(fixtures::naive_state());
  const double rho = 0.1;
  const PExtinct p(rates, nm.t_total, rho);
  const double survive = p.survival(fixtures::naive_state(), nm.t_total);
  const int attempts = 10000;
  int accepted = 0;
  for (int r = 0; r < attempts; ++r)
    if (prune(simulate_full(rates, nm, rng), rho, rng)) ++accepted;
  const double se = std::sqrt(survive * (1 - survive) / attempts);
  CHECK(std::abs(static_cast<double>(accepted) / attempts - survive) < 3 * se);
}

TEST_CASE("count-only simulation agrees with the tree simulator") {
  SimOptions opts;
  opts.t_total = 3.0;
  opts.root_state = 1;
  const Rates rates = constant_rates(2, 1.2, 0.4);
  Rng a(11), b(12);
  double tree_mean = 0.0, count_mean = 0.0;
  const int reps = 4000;
  for (int r = 0; r < reps; ++r) {
    tree_mean += static_cast<double>(simulate_full(rates, opts, a).leaf_count());
    const auto c = simulate_counts(rates, opts, {0.0, 3.0}, b);
    CHECK(c[0][1] == 1);
    count_mean += static_cast<double>(c[1][0] + c[1][1]);
  }
  tree_mean /= reps;
  count_mean /= reps;
  CHECK(tree_mean == doctest::Approx(std::exp(0.8 * 3.0)).epsilon(0.1));
  CHECK(count_mean == doctest::Approx(std::exp(0.8 * 3.0)).epsilon(0.1));
}

TEST_CASE("count simulation stops at the alive limit") {
  SimOptions opts;
  opts.t_total = 30.0;
  Rng rng(21);
  const Rates rates = constant_rates(1, 2.0, 0.1);
  for (int r = 0; r < 50; ++r) {
    const auto c = simulate_counts(rates, opts, {1.0, 20.0, 30.0}, rng, 500);
    REQUIRE(c.size() == 3);
    CHECK(c[1][0] <= 500);
    CHECK(c[2] == c[1]);
  }
}

TEST_CASE("explosion guard and option checks") {
  Rng rng(13);
  SimOptions opts;
  opts.t_total = 50.0;
  opts.max_events = 1000;
  CHECK_THROWS_WITH_AS(simulate_full(constant_rates(1, 3.0, 0.0), opts, rng),
                       doctest::Contains("population explosion guard"), NumericalError);
  opts.root_state = 4;
  CHECK_THROWS_AS(simulate_full(constant_rates(2, 1.0, 0.0), opts, rng), ValidationError);
  opts.root_state = 0;
  opts.t_total = 0.0;
  CHECK_THROWS_AS(simulate_full(constant_rates(2, 1.0, 0.0), opts, rng), ValidationError);
}

TEST_CASE("same seed gives the same tree") {
  SimOptions opts;
  opts.t_total = 5.0;
  opts.root_state = 4;
  Rng a(99), b(99);
  CHECK(simulate_full(nm_rates(), opts, a) == simulate_full(nm_rates(), opts, b));
}
