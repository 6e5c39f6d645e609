#include "mtbd/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "mtbd/error.hpp"

namespace mtbd {

void SimOptions::check(std::size_t n_types) const {
  if (!(t_total > 0.0) || !std::isfinite(t_total)) throw ValidationError("t_total must be positive");
  if (root_state < 0 || static_cast<std::size_t>(root_state) >= n_types)
    throw ValidationError("root state " + std::to_string(root_state) + " out of range");
  if (capacity) {
    if (capacity->K < 1) throw ValidationError("carrying capacity K must be at least 1");
    if (capacity->mode == CapacityMode::soft && !(capacity->sharpness > 0.0))
      throw ValidationError("soft capacity sharpness must be positive");
  }
  if (max_events == 0) throw ValidationError("max_events must be positive");
}

double capacity_factor(std::size_t n_alive, const SimOptions& opts) {
  if (!opts.capacity || opts.capacity->mode != CapacityMode::soft) return 1.0;
  const double z = opts.capacity->sharpness *
                   (static_cast<double>(n_alive) - static_cast<double>(opts.capacity->K));
  return 1.0 / (1.0 + std::exp(z));
}

double effective_birth_rate(std::size_t x, std::size_t n_alive, const Rates& rates,
                            const SimOptions& opts) {
  return rates.birth.at(x) * capacity_factor(n_alive, opts);
}

namespace {

double exponential(Rng& rng, double rate) {
  return -std::log1p(-uniform01(rng)) / rate;
}

std::size_t pick_weighted(const std::vector<double>& w, double total, Rng& rng) {
  double u = uniform01(rng) * total;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (u < w[i]) return i;
    u -= w[i];
  }
  // Rounding: fall back to the last positive weight.
  for (std::size_t i = w.size(); i-- > 0;)
    if (w[i] > 0.0) return i;
  return 0;
}

std::size_t pick_index(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

struct Lineage {
  int node;
  int state;
  std::size_t slot;  // position in by_type[state]
};

class Population {
 public:
  explicit Population(std::size_t n_types) : by_type_(n_types) {}

  std::size_t size() const { return alive_.size(); }
  std::size_t count(std::size_t x) const { return by_type_[x].size(); }
  const Lineage& operator[](std::size_t i) const { return alive_[i]; }
  std::size_t member(std::size_t x, std::size_t k) const { return by_type_[x][k]; }

  void add(int node, int state) {
    auto& list = by_type_[static_cast<std::size_t>(state)];
    alive_.push_back({node, state, list.size()});
    list.push_back(alive_.size() - 1);
  }

  void set_node(std::size_t i, int node) { alive_[i].node = node; }

  void set_state(std::size_t i, int state) {
    detach(i);
    auto& list = by_type_[static_cast<std::size_t>(state)];
    alive_[i].state = state;
    alive_[i].slot = list.size();
    list.push_back(i);
  }

  void remove(std::size_t i) {
    detach(i);
    const std::size_t last = alive_.size() - 1;
    if (i != last) {
      alive_[i] = alive_[last];
      by_type_[static_cast<std::size_t>(alive_[i].state)][alive_[i].slot] = i;
    }
    alive_.pop_back();
  }

 private:
  void detach(std::size_t i) {
    auto& list = by_type_[static_cast<std::size_t>(alive_[i].state)];
    const std::size_t slot = alive_[i].slot;
    list[slot] = list.back();
    alive_[list[slot]].slot = slot;
    list.pop_back();
  }

  std::vector<Lineage> alive_;
  std::vector<std::vector<std::size_t>> by_type_;
};

}  // namespace

Tree simulate_full(const Rates& rates, const SimOptions& opts, Rng& rng, SimStats* stats) {
  rates.check();
  const std::size_t n = rates.size();
  opts.check(n);
  const bool hard = opts.capacity && opts.capacity->mode == CapacityMode::hard;
  const std::size_t K = opts.capacity ? opts.capacity->K : 0;

  std::vector<double> change(n);
  for (std::size_t x = 0; x < n; ++x) change[x] = rates.total_change(x);

  Tree tree;
  int next_id = 0;
  auto add_node = [&](std::optional<int> parent, double tau, Event ev, int state) {
    const int id = next_id++;
    tree.nodes.push_back({id, parent, std::max(0.0, opts.t_total - tau), ev, state, std::nullopt});
    return id;
  };

  Population pop(n);
  pop.add(add_node(std::nullopt, 0.0, Event::root, opts.root_state), opts.root_state);
  SimStats st;
  st.max_alive = 1;

  std::vector<double> per_lineage(n), weight(n), gamma_row(n);
  double tau = 0.0;
  while (pop.size() > 0) {
    const double factor = capacity_factor(pop.size(), opts);
    double total = 0.0;
    for (std::size_t x = 0; x < n; ++x) {
      per_lineage[x] = rates.birth[x] * factor + rates.death + change[x];
      weight[x] = static_cast<double>(pop.count(x)) * per_lineage[x];
      total += weight[x];
    }
    if (!(total > 0.0)) break;
    tau += exponential(rng, total);
    if (tau >= opts.t_total) break;
    if (++st.events > opts.max_events)
      throw NumericalError("population explosion guard: more than " + std::to_string(opts.max_events) +
                           " events");

    const std::size_t x = pick_weighted(weight, total, rng);
    const std::size_t i = pop.member(x, pick_index(rng, pop.count(x)));
    const int state = static_cast<int>(x);
    double u = uniform01(rng) * per_lineage[x];
    const double birth = rates.birth[x] * factor;

    if (u < birth) {
      if (hard && pop.size() + 1 > K) {
        // One of the K+1 lineages dies at once; if it is a daughter the birth
        // leaves no trace.
        const std::size_t victim = pick_index(rng, pop.size() + 1);
        ++st.capacity_deaths;
        if (victim == i || victim == pop.size()) continue;
        const int b = add_node(pop[i].node, tau, Event::birth, state);
        pop.set_node(i, b);
        pop.add(b, state);
        add_node(pop[victim].node, tau, Event::death_leaf, pop[victim].state);
        pop.remove(victim);
        continue;
      }
      const int b = add_node(pop[i].node, tau, Event::birth, state);
      pop.set_node(i, b);
      pop.add(b, state);
      st.max_alive = std::max(st.max_alive, pop.size());
    } else if ((u -= birth) < rates.death) {
      add_node(pop[i].node, tau, Event::death_leaf, state);
      pop.remove(i);
    } else {
      for (std::size_t z = 0; z < n; ++z) gamma_row[z] = z == x ? 0.0 : rates.gamma(x, z);
      const int to = static_cast<int>(pick_weighted(gamma_row, change[x], rng));
      pop.set_node(i, add_node(pop[i].node, tau, Event::type_change, to));
      pop.set_state(i, to);
    }
  }

  st.final_alive = pop.size();
  for (std::size_t i = 0; i < pop.size(); ++i) {
    const int id = next_id++;
    tree.nodes.push_back({id, pop[i].node, 0.0, Event::sampled_leaf, pop[i].state, std::nullopt});
  }
  if (stats) *stats = st;
  return tree;
}

Tree simulate_full(const Params& params, const TypeSpace& space, const SimOptions& opts, Rng& rng,
                   SimStats* stats) {
  return simulate_full(params.rates(space), opts, rng, stats);
}

std::optional<Tree> prune(const Tree& full, double rho, Rng& rng) {
  if (!(rho >= 0.0 && rho <= 1.0)) throw ValidationError("rho must lie in [0, 1]");
  const std::size_t m = full.nodes.size();
  std::unordered_map<int, std::size_t> index;
  index.reserve(m);
  for (std::size_t i = 0; i < m; ++i) index.emplace(full.nodes[i].id, i);
  std::vector<std::vector<std::size_t>> children(m);
  std::size_t root = m;
  for (std::size_t i = 0; i < m; ++i) {
    if (full.nodes[i].parent)
      children[index.at(*full.nodes[i].parent)].push_back(i);
    else
      root = i;
  }
  if (root == m) throw ValidationError("prune: tree has no root");

  // Sample survivors in node order so the outcome depends only on the rng.
  std::vector<char> observed(m, 0);
  bool any = false;
  for (std::size_t i = 0; i < m; ++i) {
    const Event ev = full.nodes[i].event;
    if (ev == Event::sampled_leaf || ev == Event::unsampled_leaf) {
      observed[i] = uniform01(rng) < rho;
      any = any || observed[i];
    }
  }
  if (!any) return std::nullopt;

  // Preorder list, then propagate "has an observed descendant" upward.
  std::vector<std::size_t> order{root};
  for (std::size_t k = 0; k < order.size(); ++k)
    for (std::size_t c : children[order[k]]) order.push_back(c);
  for (std::size_t k = order.size(); k-- > 0;)
    for (std::size_t c : children[order[k]])
      if (observed[c]) observed[order[k]] = 1;

  Tree out;
  out.rho_index = full.rho_index;
  // Walk down, carrying the id of the nearest kept ancestor.
  std::vector<std::pair<std::size_t, int>> stack{{root, -1}};
  while (!stack.empty()) {
    const auto [i, kept_parent] = stack.back();
    stack.pop_back();
    const Node& n = full.nodes[i];
    std::vector<std::size_t> kept;
    for (std::size_t c : children[i])
      if (observed[c]) kept.push_back(c);

    int carry = kept_parent;
    const bool splice = n.event == Event::birth && kept.size() == 1;
    if (!splice) {
      Node copy = n;
      if (kept_parent >= 0)
        copy.parent = kept_parent;
      else
        copy.parent.reset();
      if (copy.event == Event::unsampled_leaf) copy.event = Event::sampled_leaf;
      out.nodes.push_back(copy);
      carry = n.id;
    }
    for (auto it = kept.rbegin(); it != kept.rend(); ++it) stack.emplace_back(*it, carry);
  }
  return out;
}

ConditionedTree simulate_conditioned(const Rates& rates, const SimOptions& opts, double rho, Rng& rng) {
  if (!(rho > 0.0 && rho <= 1.0)) throw ValidationError("rho must lie in (0, 1]");
  ConditionedTree result;
  for (std::size_t attempt = 0; attempt < opts.rejection_budget; ++attempt) {
    const Tree full = simulate_full(rates, opts, rng);
    if (auto observed = prune(full, rho, rng)) {
      result.tree = std::move(*observed);
      result.rejections = attempt;
      return result;
    }
  }
  throw NumericalError("rejection budget of " + std::to_string(opts.rejection_budget) +
                       " attempts exhausted without a surviving sampled lineage");
}

ConditionedTree simulate_conditioned(const Params& params, const TypeSpace& space,
                                     const SimOptions& opts, double rho, Rng& rng) {
  return simulate_conditioned(params.rates(space), opts, rho, rng);
}

std::vector<std::vector<std::size_t>> simulate_counts(const Rates& rates, const SimOptions& opts,
                                                      const std::vector<double>& at, Rng& rng,
                                                      std::size_t alive_limit) {
  rates.check();
  const std::size_t n = rates.size();
  opts.check(n);
  if (!std::is_sorted(at.begin(), at.end())) throw ValidationError("snapshot times must be ascending");
  if (!at.empty() && (at.front() < 0.0 || at.back() > opts.t_total))
    throw ValidationError("snapshot times must lie in [0, t_total]");
  const bool hard = opts.capacity && opts.capacity->mode == CapacityMode::hard;
  const std::size_t K = opts.capacity ? opts.capacity->K : 0;

  std::vector<double> change(n);
  for (std::size_t x = 0; x < n; ++x) change[x] = rates.total_change(x);

  std::vector<std::size_t> count(n, 0);
  count[static_cast<std::size_t>(opts.root_state)] = 1;
  std::size_t alive = 1;
  std::vector<std::vector<std::size_t>> out;
  out.reserve(at.size());
  std::size_t next = 0;
  std::size_t events = 0;

  std::vector<double> per_lineage(n), weight(n), gamma_row(n), counts_d(n);
  double tau = 0.0;
  while (next < at.size()) {
    if (alive_limit > 0 && alive >= alive_limit) {
      out.resize(at.size(), count);
      break;
    }
    const double factor = capacity_factor(alive, opts);
    double total = 0.0;
    for (std::size_t x = 0; x < n; ++x) {
      per_lineage[x] = rates.birth[x] * factor + rates.death + change[x];
      weight[x] = static_cast<double>(count[x]) * per_lineage[x];
      total += weight[x];
    }
    const double dt = total > 0.0 ? exponential(rng, total) : std::numeric_limits<double>::infinity();
    while (next < at.size() && tau + dt > at[next]) {
      out.push_back(count);
      ++next;
    }
    if (next == at.size()) break;
    tau += dt;
    if (++events > opts.max_events)
      throw NumericalError("population explosion guard: more than " + std::to_string(opts.max_events) +
                           " events");

    const std::size_t x = pick_weighted(weight, total, rng);
    double u = uniform01(rng) * per_lineage[x];
    const double birth = rates.birth[x] * factor;
    if (u < birth) {
      ++count[x];
      ++alive;
      if (hard && alive > K) {
        for (std::size_t z = 0; z < n; ++z) counts_d[z] = static_cast<double>(count[z]);
        --count[pick_weighted(counts_d, static_cast<double>(alive), rng)];
        --alive;
      }
    } else if ((u -= birth) < rates.death) {
      --count[x];
      --alive;
    } else {
      for (std::size_t z = 0; z < n; ++z) gamma_row[z] = z == x ? 0.0 : rates.gamma(x, z);
      --count[x];
      ++count[pick_weighted(gamma_row, change[x], rng)];
    }
  }
  return out;
}

}  // namespace mtbd
