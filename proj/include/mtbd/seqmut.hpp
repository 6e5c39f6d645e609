#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "mtbd/model.hpp"
#include "mtbd/random.hpp"
#include "mtbd/simulate.hpp"
#include "mtbd/tree.hpp"

namespace mtbd {

// Nucleotides are A, C, G, T (indices 0..3).
int base_index(char b);
char base_char(int i);
void check_sequence(const std::string& seq);

// Standard genetic code; '*' for stop.
char translate_codon(const char* codon);
std::string translate(const std::string& seq);

enum class RateConvention {
  per_site,      // site hazard = table rate * overall_rate
  per_sequence,  // site hazards rescaled so the whole sequence mutates at overall_rate
};

// Context-dependent substitution rates. A context is the k-mer centred on the
// mutating site; positions past either end read as 'N'. Contexts missing from
// the table use the "*" row if one is given, else rate 0.
class ContextModel {
 public:
  explicit ContextModel(std::size_t k = 1);

  std::size_t k() const { return k_; }
  double overall_rate = 1.0;
  RateConvention convention = RateConvention::per_site;

  void set_rate(const std::string& context, char to, double rate);
  void set_default(char to, double rate);
  // Rates to A, C, G, T for the site at `pos` of `seq` (self rate is 0).
  std::array<double, 4> site_rates(const std::string& seq, std::size_t pos) const;
  // Unscaled total hazard of each site.
  std::vector<double> site_hazards(const std::string& seq) const;

  // CSV with header context,to_base,rate.
  static ContextModel from_csv(const std::string& text);
  std::string to_csv() const;

  static ContextModel uniform(double rate_per_target);

 private:
  std::size_t k_;
  std::map<std::string, std::array<double, 4>> table_;
  std::array<double, 4> default_{0, 0, 0, 0};
};

// Additive amino-acid effects relative to a naive sequence. Sites are 0-based
// codon indices. Missing (site, amino acid) entries have zero effect.
class AffinityModel {
 public:
  AffinityModel(std::string naive, double stop_affinity = -10.0);

  const std::string& naive() const { return naive_; }
  const std::string& naive_protein() const { return naive_protein_; }
  double stop_affinity() const { return stop_affinity_; }
  std::size_t codons() const { return naive_protein_.size(); }

  void set_effect(std::size_t site, char amino_acid, double effect);
  double effect(std::size_t site, char amino_acid) const;

  // CSV with header site,amino_acid,effect.
  static AffinityModel from_csv(std::string naive, const std::string& text, double stop_affinity = -10.0);
  std::string to_csv() const;

 private:
  std::string naive_;
  std::string naive_protein_;
  double stop_affinity_;
  std::vector<std::array<double, 26>> effects_;  // per site, per letter
};

double affinity_of(const std::string& seq, const AffinityModel& model);

// Tracks A(G) incrementally under point mutations.
class AffinityTracker {
 public:
  AffinityTracker(const AffinityModel& model, const std::string& seq);
  void apply(std::string& seq, std::size_t pos, char to);
  double affinity() const;

 private:
  const AffinityModel* model_;
  double sum_ = 0.0;
  std::size_t stops_ = 0;
};

struct PointMutation {
  double time;
  std::size_t site;
  char from;
  char to;
};

struct MutationChain {
  std::string initial;
  double duration = 0.0;
  std::vector<PointMutation> mutations;
};

// Exact CTMC over sequences for `duration` time units. Hazards are recomputed
// around each mutated site.
MutationChain mutate_chain(const std::string& seq, const ContextModel& model, double duration, Rng& rng);

// Piecewise-constant type path on [0, duration].
struct TypeTrajectory {
  int initial_state = 0;
  double duration = 0.0;
  std::vector<std::pair<double, int>> jumps;  // (time, new state), increasing times
};

TypeTrajectory to_trajectory(const MutationChain& chain, const AffinityModel& affinity,
                             const TypeSpace& space);

// Dwell-time MLE: Gamma(x, x') = jumps x -> x' / time spent in x, diagonal the
// negative row sum. Throws when some state has zero dwell time.
SquareMatrix estimate_gamma(const std::vector<TypeTrajectory>& paths, std::size_t n_types);
SquareMatrix estimate_gamma(const std::vector<MutationChain>& chains, const AffinityModel& affinity,
                            const TypeSpace& space);

// Exact simulation of a CTMC path with generator `q` (for tests and oracles).
TypeTrajectory simulate_ctmc(const SquareMatrix& q, int start, double duration, Rng& rng);

struct SequenceSimOptions {
  SimOptions sim;  // root_state is ignored: the root carries the naive sequence
  // Birth rate from the bin's value (true) or from the raw affinity (false).
  bool birth_from_bin_value = true;
};

// Branching process where each lineage carries a sequence: births copy it,
// mutations follow the context model, and the type is the bin of A(G). Only
// mutations that change the bin become type_change nodes; every node records
// the affinity of its lineage at that moment.
Tree simulate_with_sequences(const SigmoidParams& phi, double mu, const TypeSpace& space,
                             const AffinityModel& affinity, const ContextModel& context,
                             const SequenceSimOptions& opts, Rng& rng, SimStats* stats = nullptr);

}  // namespace mtbd
