#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mtbd/infer.hpp"
#include "mtbd/ppc.hpp"
#include "mtbd/simulate.hpp"

namespace mtbd {

// Data-generating process plus the model used to analyse it.
struct Scenario {
  std::string name;
  Params truth;  // rho holds the true sampling probability
  std::optional<Capacity> capacity;
  bool sequence_level = false;
  double infer_rho = 0.1;
  LikelihoodKind kind = LikelihoodKind::exact;
};

// nm, al, isp, cc, cc-soft, cc-slm.
Scenario scenario(const std::string& name);
const std::vector<std::string>& scenario_names();

struct GenerateOptions {
  std::size_t capacity = 1000;
  double soft_sharpness = 0.1;
  std::size_t max_events = 20'000'000;
};

// Conditioned observed trees for one set.
std::vector<Tree> generate_set(const Scenario& s, std::size_t n_trees, Rng& rng, const GenerateOptions& opts = {});

struct SetAnalysis {
  Chain chain;
  ChainSummary summary;
  std::vector<double> true_birth;  // at the type-space values
  std::vector<double> true_net;
  std::size_t birth_inside = 0;  // points where the 90% band covers the truth
  std::size_t net_inside = 0;
  std::size_t birth_excluded_below = 0;  // points where the band lies below the truth
  double true_plateau = 0.0;             // phi1 + phi4
  double plateau_median = 0.0;           // posterior median of phi1 + phi4
};

SetAnalysis analyze_set(const Scenario& s, const std::vector<Tree>& trees, const ChainConfig& chain);

struct StudyConfig {
  std::string name = "nm";
  std::size_t sets = 5;
  std::size_t trees_per_set = 58;
  ChainConfig chain;
  std::uint64_t seed = 1;
  std::size_t threads = 1;
  std::size_t ppc_draws = 100;  // 0 disables the predictive check
  GenerateOptions generate;
  MedianStudyConfig conditioning;  // used by the "conditioning" study
  std::string out_dir;             // empty: nothing written
};

struct StudyReport {
  std::string name;
  std::vector<SetAnalysis> sets;
  std::vector<PpcReport> ppc;
  std::vector<MedianRow> medians;  // conditioning study only
  std::string summary_json;
};

// Runs a named study. Sets run in parallel; set k uses seed derive_seed(seed, k).
StudyReport run_study(const StudyConfig& cfg);

}  // namespace mtbd
