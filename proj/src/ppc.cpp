#include "mtbd/ppc.hpp"

#include <algorithm>
#include <array>
#include <sstream>

#include <json.hpp>

#include "mtbd/error.hpp"
#include "mtbd/likelihood.hpp"
#include "mtbd/parallel.hpp"

namespace mtbd {

using nlohmann::json;

std::vector<Tree> replicate_dataset(const Params& draw, const TypeSpace& space, std::size_t n_trees,
                                    const SimOptions& opts, Rng& rng) {
  if (draw.rho.empty()) throw ValidationError("replicate_dataset needs at least one rho");
  std::vector<Tree> out;
  out.reserve(n_trees);
  for (std::size_t i = 0; i < n_trees; ++i) {
    const std::size_t idx = i % draw.rho.size();
    Tree t = simulate_conditioned(draw, space, opts, draw.rho[idx], rng).tree;
    t.rho_index = idx;
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<double> leaf_proportions(const std::vector<Tree>& trees, std::size_t n_types) {
  std::vector<double> p(n_types, 0.0);
  double total = 0.0;
  for (const auto& t : trees) {
    const auto c = t.leaf_state_counts(n_types);
    for (std::size_t k = 0; k < n_types; ++k) {
      p[k] += static_cast<double>(c[k]);
      total += static_cast<double>(c[k]);
    }
  }
  if (total > 0.0)
    for (auto& v : p) v /= total;
  return p;
}

std::size_t PpcReport::bins_within(double mass) const {
  const double tail = (1.0 - mass) / 2.0;
  std::size_t n = 0;
  for (double q : observed_quantile)
    if (q >= tail && q <= 1.0 - tail) ++n;
  return n;
}

PpcReport ppc_stats(const std::vector<std::vector<Tree>>& replicates, const std::vector<Tree>& observed,
                    std::size_t n_types) {
  if (replicates.empty()) throw ValidationError("ppc needs at least one replicate");
  PpcReport r;
  r.observed = leaf_proportions(observed, n_types);
  for (const auto& t : observed) r.observed_leaves += t.leaf_count();
  for (const auto& rep : replicates) {
    r.replicates.push_back(leaf_proportions(rep, n_types));
    std::size_t leaves = 0;
    for (const auto& t : rep) leaves += t.leaf_count();
    r.replicate_leaves.push_back(leaves);
  }
  const double n = static_cast<double>(replicates.size());
  for (std::size_t k = 0; k < n_types; ++k) {
    double below = 0.0, equal = 0.0;
    for (const auto& rep : r.replicates) {
      if (rep[k] < r.observed[k]) below += 1.0;
      else if (rep[k] == r.observed[k]) equal += 1.0;
    }
    r.observed_quantile.push_back((below + 0.5 * equal) / n);
  }
  return r;
}

PpcReport run_ppc(const Chain& chain, const ParamLayout& layout, const std::vector<Tree>& observed,
                  const PpcOptions& opts) {
  if (chain.draws.empty()) throw ValidationError("ppc needs a non-empty chain");
  if (opts.draws == 0) throw ValidationError("ppc needs at least one draw");
  const std::size_t n_draws = std::min(opts.draws, chain.size());
  const std::size_t n_trees = opts.n_trees == 0 ? observed.size() : opts.n_trees;
  std::vector<std::vector<Tree>> reps(n_draws);
  parallel_for(n_draws, opts.threads, [&](std::size_t i) {
    const std::size_t k = n_draws == 1 ? chain.size() - 1 : i * (chain.size() - 1) / (n_draws - 1);
    Rng rng(derive_seed(opts.seed, i));
    reps[i] = replicate_dataset(layout.to_params(chain.draws[k]), layout.space(), n_trees, opts.sim, rng);
  });
  return ppc_stats(reps, observed, layout.n_types());
}

std::string ppc_to_json(const PpcReport& r) {
  json j;
  j["observed"] = r.observed;
  j["observed_quantile"] = r.observed_quantile;
  j["observed_leaves"] = r.observed_leaves;
  j["replicate_leaves"] = r.replicate_leaves;
  j["bins_within_90"] = r.bins_within(0.9);
  j["replicates"] = r.replicates;
  return j.dump(2);
}

std::string ppc_to_csv(const PpcReport& r) {
  std::ostringstream out;
  out << "replicate,bin,proportion\n";
  for (std::size_t k = 0; k < r.observed.size(); ++k) out << "-1," << k << ',' << r.observed[k] << '\n';
  for (std::size_t i = 0; i < r.replicates.size(); ++i)
    for (std::size_t k = 0; k < r.replicates[i].size(); ++k)
      out << i << ',' << k << ',' << r.replicates[i][k] << '\n';
  return out.str();
}

std::vector<MedianRow> median_sampling_distribution(const MedianStudyConfig& cfg) {
  if (cfg.ladder.empty() || cfg.replicates == 0) throw ValidationError("empty study ladder");
  const Rates truth = constant_rates(1, cfg.lambda, cfg.mu);
  const ParamLayout layout = ParamLayout::constant({cfg.rho});
  struct Task {
    std::size_t n, replicate;
  };
  std::vector<Task> tasks;
  for (std::size_t n : cfg.ladder)
    for (std::size_t r = 0; r < cfg.replicates; ++r) tasks.push_back({n, r});
  std::vector<std::array<MedianRow, 2>> out(tasks.size());

  parallel_for(tasks.size(), cfg.threads, [&](std::size_t i) {
    const auto [n, rep] = tasks[i];
    const std::uint64_t task_seed = derive_seed(cfg.seed, i);
    for (int c = 0; c < 2; ++c) {
      out[i][c].n = n;
      out[i][c].replicate = rep;
      out[i][c].conditioning = c == 0 ? Conditioning::conditional : Conditioning::unconditional;
    }
    try {
      Rng rng(task_seed);
      SimOptions sim;
      sim.t_total = cfg.t_total;
      std::vector<Tree> trees;
      for (std::size_t k = 0; k < n; ++k) trees.push_back(simulate_conditioned(truth, sim, cfg.rho, rng).tree);
      const TreeSetDensity set(std::move(trees), 1);
      for (int c = 0; c < 2; ++c) {
        ChainConfig cc = cfg.chain;
        cc.seed = derive_seed(task_seed, static_cast<std::uint64_t>(c) + 1);
        cc.likelihood.conditioning = out[i][c].conditioning;
        const Chain chain = run_chain(set, layout, cc);
        out[i][c].lambda_median = median(chain.column(0));
        out[i][c].mu_median = median(chain.column(1));
      }
    } catch (const std::exception& e) {
      std::string msg = e.what();
      std::replace_if(msg.begin(), msg.end(), [](char ch) { return ch == ',' || ch == '\n'; }, ';');
      for (auto& row : out[i]) row.error = msg;
    }
  });

  std::vector<MedianRow> rows;
  for (const auto& pair : out) rows.insert(rows.end(), pair.begin(), pair.end());
  return rows;
}

std::string median_rows_to_csv(const std::vector<MedianRow>& rows) {
  std::ostringstream out;
  out.precision(10);
  out << "n,replicate,conditioning,lambda_median,mu_median,error\n";
  for (const auto& r : rows)
    out << r.n << ',' << r.replicate << ','
        << (r.conditioning == Conditioning::conditional ? "conditional" : "unconditional") << ','
        << r.lambda_median << ',' << r.mu_median << ',' << r.error << '\n';
  return out.str();
}

}  // namespace mtbd
