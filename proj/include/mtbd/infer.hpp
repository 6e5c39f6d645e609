#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mtbd/likelihood.hpp"
#include "mtbd/model.hpp"
#include "mtbd/random.hpp"

namespace mtbd {

// Maps a flat parameter vector onto rates. Two layouts: the sigmoid model
// (phi1..phi4, mu, delta) over a fixed type space and baseline matrix, and a
// single-type constant-rate model (lambda, mu).
class ParamLayout {
 public:
  enum class Kind { sigmoid, constant };

  static ParamLayout sigmoid(TypeSpace space, SquareMatrix gamma_star, std::vector<double> rho,
                             PriorSpec priors = {});
  static ParamLayout constant(std::vector<double> rho, LogNormalPrior lambda = {1.5, 1.0},
                              LogNormalPrior mu = {0.0, 0.5});

  Kind kind() const { return kind_; }
  std::size_t dim() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  // Positive components get multiplicative proposals; phi3 is unbounded.
  bool positive(std::size_t i) const { return i != 2 || kind_ != Kind::sigmoid; }
  std::size_t n_types() const { return space_ ? space_->size() : 1; }
  // Sigmoid layout only.
  const TypeSpace& space() const;
  // Affinity points where bands are reported ({0} for the constant layout).
  std::vector<double> type_values() const;
  const std::vector<double>& rho() const { return rho_; }
  const PriorSpec& priors() const { return priors_; }

  std::vector<double> prior_medians() const;
  double log_prior(const std::vector<double>& v) const;
  bool in_support(const std::vector<double>& v) const;
  Rates rates(const std::vector<double>& v) const;
  // Birth rate at affinity x.
  double birth(const std::vector<double>& v, double x) const;
  double death(const std::vector<double>& v) const { return v[kind_ == Kind::sigmoid ? 4 : 1]; }
  // Sigmoid layout only.
  Params to_params(const std::vector<double>& v) const;
  std::vector<double> from_params(const Params& p) const;

 private:
  Kind kind_ = Kind::sigmoid;
  std::vector<std::string> names_;
  std::optional<TypeSpace> space_;
  SquareMatrix gamma_star_;
  std::vector<double> rho_;
  PriorSpec priors_;
  LogNormalPrior lambda_prior_, mu_prior_;
};

using LogTarget = std::function<double(const std::vector<double>&)>;

// log prior + tree-set log density; -inf outside the support or when the
// likelihood fails (the failure text goes to *diagnostic when given).
double log_posterior(const std::vector<double>& v, const ParamLayout& layout, const TreeSetDensity& trees,
                     const SetOptions& opts, std::string* diagnostic = nullptr);

// Log Hastings correction q(current | proposed) / q(proposed | current) for
// one component: log(proposed / current) for a log-normal random walk, 0 for
// an additive normal one.
double log_proposal_correction(double current, double proposed, bool positive);

struct MhState {
  std::vector<double> value;
  double log_post = 0.0;
};

// One Metropolis-within-Gibbs sweep over all components in order. Returns
// per-component accept flags.
std::vector<bool> mh_step(MhState& state, const LogTarget& target, const std::vector<double>& scales,
                          const std::vector<bool>& positive, Rng& rng);

// Joint move of all components: z ~ N(0, I), step = scale * chol * z on the
// log axis for positive components and the linear axis otherwise. `chol` is a
// row-major lower-triangular d x d factor.
bool block_step(MhState& state, const LogTarget& target, const std::vector<double>& chol, double scale,
                const std::vector<bool>& positive, Rng& rng);

struct ChainConfig {
  std::size_t iterations = 20000;
  std::size_t burn_in = 5000;
  std::size_t thin = 1;
  std::vector<double> scales;  // empty: 0.2 for every component
  bool adapt = true;
  // Joint moves per sweep using the covariance learned in burn-in (0: none).
  std::size_t block_moves = 5;
  double target_acceptance = 0.44;
  std::uint64_t seed = 1;
  SetOptions likelihood{};
  std::optional<std::vector<double>> initial;  // default: prior medians

  void check(std::size_t dim) const;
};

struct Chain {
  std::vector<std::string> names;
  std::vector<std::size_t> iteration;
  std::vector<std::vector<double>> draws;
  std::vector<double> log_post;
  // Per component, then "any block move accepted" when block moves are used.
  std::vector<std::vector<bool>> accepted;
  std::vector<double> acceptance;    // per component, after burn-in
  std::optional<double> block_acceptance;
  std::vector<double> final_scales;  // after adaptation
  std::size_t failed_evaluations = 0;

  std::size_t size() const { return draws.size(); }
  std::vector<double> column(std::size_t j) const;
};

// Generic adaptive sampler on an arbitrary target.
Chain run_sampler(const LogTarget& target, std::vector<std::string> names, const std::vector<bool>& positive,
                  std::vector<double> initial, const ChainConfig& config);

Chain run_chain(const TreeSetDensity& trees, const ParamLayout& layout, const ChainConfig& config);

// Geyer initial monotone sequence estimator.
double effective_sample_size(const std::vector<double>& x);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

struct ParamSummary {
  std::string name;
  double median = 0.0;
  double mean = 0.0;
  Interval ci50, ci90;
  double ess = 0.0;
  double acceptance = 0.0;
};

struct Band {
  std::vector<double> x;
  std::vector<double> median;
  std::vector<Interval> ci50, ci90;
};

struct ChainSummary {
  std::vector<ParamSummary> params;
  Band birth_grid, net_grid;    // over the grid
  Band birth_types, net_types;  // at the type-space values
};

Interval central_interval(const std::vector<double>& values, double mass);
Band band(const std::vector<std::vector<double>>& curves, const std::vector<double>& x);

ChainSummary chain_summary(const Chain& chain, const ParamLayout& layout, const std::vector<double>& grid);
// Evenly spaced grid of n points on [lo, hi].
std::vector<double> linspace(double lo, double hi, std::size_t n);

std::string chain_to_csv(const Chain& chain);
// Reads draws, log_post and accept flags back; acceptance rates are recomputed
// from the flags.
Chain chain_from_csv(const std::string& text);
std::string summary_to_json(const ChainSummary& s);

}  // namespace mtbd
