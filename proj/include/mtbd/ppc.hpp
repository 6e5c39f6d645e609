#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mtbd/infer.hpp"
#include "mtbd/model.hpp"
#include "mtbd/simulate.hpp"
#include "mtbd/tree.hpp"

namespace mtbd {

// n_trees conditioned simulations under `draw`. Tree i uses rho index
// i mod |rho|.
std::vector<Tree> replicate_dataset(const Params& draw, const TypeSpace& space, std::size_t n_trees,
                                    const SimOptions& opts, Rng& rng);

// Sampled-leaf proportions per type, pooled over the trees.
std::vector<double> leaf_proportions(const std::vector<Tree>& trees, std::size_t n_types);

struct PpcReport {
  std::vector<double> observed;                  // per bin
  std::vector<std::vector<double>> replicates;   // [replicate][bin]
  std::vector<double> observed_quantile;         // mid-rank position of observed within replicates
  std::vector<std::size_t> replicate_leaves;     // total sampled leaves per replicate set
  std::size_t observed_leaves = 0;

  // Bins whose observed statistic lies in the central `mass` of its replicates.
  std::size_t bins_within(double mass) const;
};

PpcReport ppc_stats(const std::vector<std::vector<Tree>>& replicates, const std::vector<Tree>& observed,
                    std::size_t n_types);

struct PpcOptions {
  std::size_t draws = 100;   // posterior draws used, evenly spaced over the chain
  std::size_t n_trees = 0;   // 0: as many as observed
  SimOptions sim;
  std::uint64_t seed = 1;
  std::size_t threads = 1;
};

// One replicate set per selected draw of a sigmoid-layout chain.
PpcReport run_ppc(const Chain& chain, const ParamLayout& layout, const std::vector<Tree>& observed,
                  const PpcOptions& opts);

std::string ppc_to_json(const PpcReport& r);
// Long format: replicate,bin,proportion (replicate -1 is the observed data).
std::string ppc_to_csv(const PpcReport& r);

inline ChainConfig short_chain() {
  ChainConfig c;
  c.iterations = 4000;
  c.burn_in = 1000;
  return c;
}

// Repeated simulate -> infer runs of the constant-rate model, conditioned and
// unconditioned, over a ladder of tree counts.
struct MedianStudyConfig {
  double lambda = 1.8;
  double mu = 1.0;
  double rho = 1.0;
  double t_total = 2.0;
  std::vector<std::size_t> ladder{1, 5, 25};
  std::size_t replicates = 20;
  ChainConfig chain = short_chain();
  std::uint64_t seed = 1;
  std::size_t threads = 1;
};

struct MedianRow {
  std::size_t n = 0;
  std::size_t replicate = 0;
  Conditioning conditioning = Conditioning::conditional;
  double lambda_median = 0.0;
  double mu_median = 0.0;
  std::string error;  // non-empty when the run failed
};

std::vector<MedianRow> median_sampling_distribution(const MedianStudyConfig& cfg);
std::string median_rows_to_csv(const std::vector<MedianRow>& rows);

}  // namespace mtbd
