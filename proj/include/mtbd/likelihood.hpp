#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "mtbd/model.hpp"
#include "mtbd/ode.hpp"
#include "mtbd/tree.hpp"

namespace mtbd {

// Dense solution of the non-observation system
//   dp_x/dt = -(lambda_x + mu + Gamma_x) p_x + mu + lambda_x p_x^2 + sum_{x'!=x} Gamma_{x,x'} p_x'
//   p_x(0) = 1 - rho.
// Internally the survival s_x = 1 - p_x is integrated, alongside the running
// integral I_x(t) = int_0^t 2 lambda_x p_x(u) du that the log-linear branch
// density needs. Both are exact reparameterizations of the same system.
class PExtinct {
 public:
  PExtinct(const Rates& rates, double t_max, double rho, const ode::Tolerances& tol = {});

  std::size_t size() const { return n_; }
  double t_max() const { return t_max_; }
  double rho() const { return rho_; }

  double p(std::size_t x, double t) const;
  // 1 - p_x(t), accurate when p is close to 1.
  double survival(std::size_t x, double t) const;
  // int_0^t 2 lambda_x p_x(u) du.
  double birth_integral(std::size_t x, double t) const;
  const ode::Stats& stats() const { return solution_.stats(); }

 private:
  void check_range(double t) const;

  std::size_t n_;
  double t_max_;
  double rho_;
  ode::DenseSolution solution_;
};

PExtinct solve_px(const Rates& rates, double t_max, double rho, const ode::Tolerances& tol = {});

enum class DensityMode { direct, loglinear };
std::string_view to_string(DensityMode m);
DensityMode density_mode_from_string(std::string_view s);

struct LogDensityResult {
  double log_q_root = 0.0;
  double log_survival = 0.0;
  double log_conditional = 0.0;
  DensityMode mode = DensityMode::loglinear;
  std::size_t ode_steps = 0;
  std::size_t ode_rejected = 0;
  std::string diagnostic;  // set when the density is zero
};

// Segments in postorder plus the type count they were checked against.
struct CompiledTree {
  std::vector<Segment> segments;
  double root_time = 0.0;
  int root_state = 0;
  std::size_t rho_index = 0;
  std::size_t sampled_leaves = 0;
};

CompiledTree compile(const Tree& tree, std::size_t n_types);

LogDensityResult log_density(const CompiledTree& tree, const Rates& rates, const PExtinct& p,
                             DensityMode mode = DensityMode::loglinear);
// Solves p on [0, root_time] with rho = params.rho[tree.rho_index].
LogDensityResult log_density(const Tree& tree, const Params& params, const TypeSpace& space,
                             DensityMode mode = DensityMode::loglinear);

double log_density_conditional(const CompiledTree& tree, const Rates& rates, const PExtinct& p,
                               DensityMode mode = DensityMode::loglinear);
double log_density_conditional(const Tree& tree, const Params& params, const TypeSpace& space);

// Closed-form density assuming no type changes on unobserved lineages: each
// p_x is replaced by the single-type (lambda_x, mu, rho) non-observation
// probability and the Gamma coupling is dropped.
LogDensityResult log_density_approx(const CompiledTree& tree, const Rates& rates, double rho);
double log_density_approx(const Tree& tree, const Params& params, const TypeSpace& space);

// Single-type closed forms used by the approximation.
double single_type_p(double lambda, double mu, double rho, double t);
// log q(t) - log q(0) along a segment of one type (without any Gamma decay).
double single_type_log_g(double lambda, double mu, double rho, double t);

enum class LikelihoodKind { exact, approx };
enum class Conditioning { conditional, unconditional };

struct SetOptions {
  LikelihoodKind kind = LikelihoodKind::exact;
  Conditioning conditioning = Conditioning::conditional;
  DensityMode mode = DensityMode::loglinear;
  ode::Tolerances tol{};
};

// Sum over trees of the per-tree (conditional) log density. One p solve per
// distinct rho, on [0, max root time of the trees using it].
class TreeSetDensity {
 public:
  TreeSetDensity(std::vector<Tree> trees, std::size_t n_types);

  std::size_t size() const { return compiled_.size(); }
  const std::vector<CompiledTree>& trees() const { return compiled_; }

  double operator()(const Rates& rates, const std::vector<double>& rho,
                    const SetOptions& opts = {}) const;
  // Per-tree values in input order.
  std::vector<double> per_tree(const Rates& rates, const std::vector<double>& rho,
                               const SetOptions& opts = {}) const;

 private:
  std::vector<CompiledTree> compiled_;
  std::map<std::size_t, double> t_max_by_rho_;
};

double log_density_set(const std::vector<Tree>& trees, const Params& params, const TypeSpace& space,
                       const SetOptions& opts = {});

}  // namespace mtbd
