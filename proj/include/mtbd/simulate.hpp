#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "mtbd/model.hpp"
#include "mtbd/random.hpp"
#include "mtbd/tree.hpp"

namespace mtbd {

enum class CapacityMode { hard, soft };

struct Capacity {
  CapacityMode mode = CapacityMode::hard;
  std::size_t K = 1000;
  double sharpness = 0.1;  // soft mode only
};

struct SimOptions {
  double t_total = 15.0;
  int root_state = 0;
  std::optional<Capacity> capacity;
  std::size_t max_events = 1'000'000;
  std::size_t rejection_budget = 1'000'000;

  void check(std::size_t n_types) const;
};

struct SimStats {
  std::size_t events = 0;
  std::size_t max_alive = 0;
  std::size_t final_alive = 0;
  std::size_t capacity_deaths = 0;
};

// Soft-capacity modulation 1 / (1 + exp(s (n - K))); 1 without a soft capacity.
double capacity_factor(std::size_t n_alive, const SimOptions& opts);
double effective_birth_rate(std::size_t x, std::size_t n_alive, const Rates& rates,
                            const SimOptions& opts);

// Gillespie simulation forward over [0, t_total]. Lineages alive at the end
// become sampled_leaf nodes at time 0 (every survivor is a sampling candidate;
// prune() decides which are observed). Deaths become death_leaf nodes.
Tree simulate_full(const Rates& rates, const SimOptions& opts, Rng& rng, SimStats* stats = nullptr);
Tree simulate_full(const Params& params, const TypeSpace& space, const SimOptions& opts, Rng& rng,
                   SimStats* stats = nullptr);

// Samples each surviving leaf with probability rho and keeps the observed
// part: unsampled subtrees are dropped and births left with one observed child
// are spliced out. Returns nullopt when nothing is sampled.
std::optional<Tree> prune(const Tree& full, double rho, Rng& rng);

struct ConditionedTree {
  Tree tree;
  std::size_t rejections = 0;
};

// Repeats simulate_full + prune until a tree with at least one sampled leaf
// appears, or throws once opts.rejection_budget attempts have failed.
ConditionedTree simulate_conditioned(const Rates& rates, const SimOptions& opts, double rho, Rng& rng);
ConditionedTree simulate_conditioned(const Params& params, const TypeSpace& space,
                                     const SimOptions& opts, double rho, Rng& rng);

// Count-only simulation: living lineages per type at each forward time in
// `at` (ascending, within [0, t_total]). Much cheaper than building a tree.
// With a nonzero alive_limit the run stops as soon as that many lineages are
// alive, and every later snapshot repeats the counts at that moment.
std::vector<std::vector<std::size_t>> simulate_counts(const Rates& rates, const SimOptions& opts,
                                                      const std::vector<double>& at, Rng& rng,
                                                      std::size_t alive_limit = 0);

}  // namespace mtbd
