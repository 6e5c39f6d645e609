#include "mtbd/likelihood.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mtbd/error.hpp"

namespace mtbd {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kRangeSlack = 1e-6;
}  // namespace

PExtinct::PExtinct(const Rates& rates, double t_max, double rho, const ode::Tolerances& tol)
    : n_(rates.size()), t_max_(t_max), rho_(rho) {
  rates.check();
  if (!(rho > 0.0 && rho <= 1.0)) throw ValidationError("rho must lie in (0, 1]");
  if (!(t_max > 0.0) || !std::isfinite(t_max)) throw ValidationError("t_max must be positive");

  const std::size_t n = n_;
  std::vector<double> change(n);
  for (std::size_t x = 0; x < n; ++x) change[x] = rates.total_change(x);
  const double mu = rates.death;
  const std::vector<double>& lambda = rates.birth;
  const SquareMatrix& gamma = rates.gamma;

  // y = [s_0..s_{n-1}, I_0..I_{n-1}], s = 1 - p.
  auto rhs = [&](double, const double* y, double* dy) {
    for (std::size_t x = 0; x < n; ++x) {
      const double s = y[x];
      double inflow = 0.0;
      for (std::size_t z = 0; z < n; ++z)
        if (z != x) inflow += gamma(x, z) * y[z];
      dy[x] = (lambda[x] - mu - change[x]) * s - lambda[x] * s * s + inflow;
      dy[n + x] = 2.0 * lambda[x] * (1.0 - s);
    }
  };
  std::vector<double> y0(2 * n, 0.0);
  std::fill(y0.begin(), y0.begin() + static_cast<std::ptrdiff_t>(n), rho);
  solution_ = ode::integrate_dense(rhs, 0.0, t_max, y0, tol);

  // Range check at every step boundary.
  for (std::size_t k = 0; k <= solution_.step_count(); ++k) {
    const double t = solution_.knot(k);
    for (std::size_t x = 0; x < n; ++x) {
      const double s = solution_(x, t);
      if (!(s >= -kRangeSlack && s <= 1.0 + kRangeSlack) || !std::isfinite(s))
        throw NumericalError("p_" + std::to_string(x) + "(" + std::to_string(t) +
                             ") left [0, 1] beyond solver tolerance");
    }
  }
}

void PExtinct::check_range(double t) const {
  if (!(t >= 0.0 && t <= t_max_ * (1.0 + 1e-12)))
    throw NumericalError("time " + std::to_string(t) + " outside the solved range [0, " +
                         std::to_string(t_max_) + "]");
}

double PExtinct::p(std::size_t x, double t) const { return 1.0 - survival(x, t); }

double PExtinct::survival(std::size_t x, double t) const {
  check_range(t);
  if (t == 0.0) return rho_;
  return std::clamp(solution_(x, t), 0.0, 1.0);
}

double PExtinct::birth_integral(std::size_t x, double t) const {
  check_range(t);
  if (t == 0.0) return 0.0;
  return solution_(n_ + x, t);
}

PExtinct solve_px(const Rates& rates, double t_max, double rho, const ode::Tolerances& tol) {
  return PExtinct(rates, t_max, rho, tol);
}

std::string_view to_string(DensityMode m) { return m == DensityMode::direct ? "direct" : "loglinear"; }

DensityMode density_mode_from_string(std::string_view s) {
  if (s == "direct") return DensityMode::direct;
  if (s == "loglinear") return DensityMode::loglinear;
  throw ValidationError("unknown density mode '" + std::string(s) + "'");
}

CompiledTree compile(const Tree& tree, std::size_t n_types) {
  require_valid(tree, TreeKind::observed, n_types);
  CompiledTree c;
  c.segments = postorder_segments(tree);
  c.root_time = tree.root_time();
  c.root_state = tree.root().state;
  c.rho_index = tree.rho_index;
  c.sampled_leaves = tree.leaf_count(Event::sampled_leaf);
  return c;
}

namespace {

// Shared postorder accumulation. `branch(seg)` returns log q(t_s) - log q(t_e)
// for the segment; initial conditions are handled here.
template <typename Branch>
double accumulate(const CompiledTree& tree, const Rates& rates, double rho, Branch&& branch,
                  std::string& diagnostic) {
  std::vector<double> log_q(tree.segments.size(), 0.0);
  const double log_rho = std::log(rho);
  for (std::size_t i = 0; i < tree.segments.size(); ++i) {
    const Segment& s = tree.segments[i];
    const auto x = static_cast<std::size_t>(s.state);
    double init = 0.0;
    switch (s.end_event) {
      case Event::sampled_leaf:
        init = log_rho;
        break;
      case Event::birth:
        init = std::log(rates.birth[x]) + log_q[static_cast<std::size_t>(s.children[0])] +
               log_q[static_cast<std::size_t>(s.children[1])];
        break;
      case Event::type_change: {
        const double g = rates.gamma(x, static_cast<std::size_t>(s.end_state));
        if (!(g > 0.0) && diagnostic.empty())
          diagnostic = "type change " + std::to_string(s.state) + "->" + std::to_string(s.end_state) +
                       " at node " + std::to_string(s.node_id) + " has zero rate";
        init = std::log(g) + log_q[static_cast<std::size_t>(s.children[0])];
        break;
      }
      default:
        throw ValidationError("segment ends in an unobservable event");
    }
    log_q[i] = std::isfinite(init) ? init + branch(s) : kNegInf;
  }
  return log_q.back();
}

void finish(LogDensityResult& r, double survival) {
  if (survival > 0.0) {
    r.log_survival = std::log(survival);
    r.log_conditional = r.log_q_root - r.log_survival;
  } else {
    r.log_survival = kNegInf;
    r.log_conditional = std::numeric_limits<double>::quiet_NaN();
    if (r.diagnostic.empty()) r.diagnostic = "survival probability underflow";
  }
}

}  // namespace

LogDensityResult log_density(const CompiledTree& tree, const Rates& rates, const PExtinct& p,
                             DensityMode mode) {
  if (p.size() != rates.size()) throw ValidationError("p solution does not match rate dimension");
  if (tree.root_time > p.t_max() * (1.0 + 1e-12))
    throw NumericalError("tree root time exceeds the solved range of p");
  LogDensityResult r;
  r.mode = mode;
  r.ode_steps = p.stats().steps;
  r.ode_rejected = p.stats().rejected;

  std::vector<double> decay(rates.size());
  for (std::size_t x = 0; x < rates.size(); ++x)
    decay[x] = rates.birth[x] + rates.death + rates.total_change(x);

  if (mode == DensityMode::loglinear) {
    r.log_q_root = accumulate(
        tree, rates, p.rho(),
        [&](const Segment& s) {
          const auto x = static_cast<std::size_t>(s.state);
          return -decay[x] * s.length() + (p.birth_integral(x, s.start_time) -
                                           p.birth_integral(x, s.end_time));
        },
        r.diagnostic);
  } else {
    ode::Tolerances tol;
    tol.rtol = 1e-11;
    tol.atol = 0.0;
    r.log_q_root = accumulate(
        tree, rates, p.rho(),
        [&](const Segment& s) {
          const auto x = static_cast<std::size_t>(s.state);
          const double lambda = rates.birth[x];
          auto rhs = [&](double t, const double* q, double* dq) {
            dq[0] = (-decay[x] + 2.0 * lambda * p.p(x, t)) * q[0];
          };
          std::vector<double> q{1.0};
          const ode::Stats st = ode::integrate(rhs, s.end_time, s.start_time, q, tol);
          r.ode_steps += st.steps;
          r.ode_rejected += st.rejected;
          return std::log(q[0]);
        },
        r.diagnostic);
  }
  finish(r, p.survival(static_cast<std::size_t>(tree.root_state), tree.root_time));
  return r;
}

LogDensityResult log_density(const Tree& tree, const Params& params, const TypeSpace& space,
                             DensityMode mode) {
  const Rates rates = params.rates(space);
  const CompiledTree c = compile(tree, space.size());
  const PExtinct p(rates, c.root_time, params.rho_for(c.rho_index));
  return log_density(c, rates, p, mode);
}

double log_density_conditional(const CompiledTree& tree, const Rates& rates, const PExtinct& p,
                               DensityMode mode) {
  const LogDensityResult r = log_density(tree, rates, p, mode);
  if (!(r.log_survival > kNegInf)) throw SurvivalUnderflow("survival probability underflow");
  return r.log_conditional;
}

double log_density_conditional(const Tree& tree, const Params& params, const TypeSpace& space) {
  const LogDensityResult r = log_density(tree, params, space);
  if (!(r.log_survival > kNegInf)) throw SurvivalUnderflow("survival probability underflow");
  return r.log_conditional;
}

namespace {

// E(t) = (1 - e^{-rt}) / r, continuous at r = 0.
double growth_factor(double r, double t) {
  if (r == 0.0) return t;
  return -std::expm1(-r * t) / r;
}

// 1 - c E(t) with c = lambda (1 - rho) - mu; equals D(t) / r and is positive.
double log_denominator(double lambda, double mu, double rho, double t) {
  const double r = lambda - mu;
  const double c = lambda * (1.0 - rho) - mu;
  return std::log1p(-c * growth_factor(r, t));
}

}  // namespace

double single_type_p(double lambda, double mu, double rho, double t) {
  return 1.0 - rho * std::exp(-log_denominator(lambda, mu, rho, t));
}

double single_type_log_g(double lambda, double mu, double rho, double t) {
  return -(lambda - mu) * t - 2.0 * log_denominator(lambda, mu, rho, t);
}

LogDensityResult log_density_approx(const CompiledTree& tree, const Rates& rates, double rho) {
  rates.check();
  if (!(rho > 0.0 && rho <= 1.0)) throw ValidationError("rho must lie in (0, 1]");
  LogDensityResult r;
  r.log_q_root = accumulate(
      tree, rates, rho,
      [&](const Segment& s) {
        const auto x = static_cast<std::size_t>(s.state);
        const double lambda = rates.birth[x];
        return -rates.total_change(x) * s.length() +
               single_type_log_g(lambda, rates.death, rho, s.start_time) -
               single_type_log_g(lambda, rates.death, rho, s.end_time);
      },
      r.diagnostic);
  const auto x0 = static_cast<std::size_t>(tree.root_state);
  r.log_survival = std::log(rho) - log_denominator(rates.birth[x0], rates.death, rho, tree.root_time);
  r.log_conditional = r.log_q_root - r.log_survival;
  return r;
}

double log_density_approx(const Tree& tree, const Params& params, const TypeSpace& space) {
  const CompiledTree c = compile(tree, space.size());
  return log_density_approx(c, params.rates(space), params.rho_for(c.rho_index)).log_q_root;
}

TreeSetDensity::TreeSetDensity(std::vector<Tree> trees, std::size_t n_types) {
  compiled_.reserve(trees.size());
  for (const auto& t : trees) {
    compiled_.push_back(compile(t, n_types));
    auto& tm = t_max_by_rho_[compiled_.back().rho_index];
    tm = std::max(tm, compiled_.back().root_time);
  }
}

std::vector<double> TreeSetDensity::per_tree(const Rates& rates, const std::vector<double>& rho,
                                             const SetOptions& opts) const {
  std::vector<double> out(compiled_.size(), 0.0);
  const bool conditional = opts.conditioning == Conditioning::conditional;

  if (opts.kind == LikelihoodKind::approx) {
    for (std::size_t i = 0; i < compiled_.size(); ++i) {
      const auto& t = compiled_[i];
      if (t.rho_index >= rho.size()) throw ValidationError("missing rho for tree " + std::to_string(i));
      const LogDensityResult r = log_density_approx(t, rates, rho[t.rho_index]);
      if (conditional && !(r.log_survival > kNegInf))
        throw SurvivalUnderflow("survival probability underflow in tree " + std::to_string(i));
      out[i] = conditional ? r.log_conditional : r.log_q_root;
    }
    return out;
  }

  // One solve per distinct rho value, over the longest tree using it.
  std::map<double, double> t_max_by_value;
  for (const auto& [index, t_max] : t_max_by_rho_) {
    if (index >= rho.size()) throw ValidationError("missing rho for rho index " + std::to_string(index));
    auto& tm = t_max_by_value[rho[index]];
    tm = std::max(tm, t_max);
  }
  std::map<double, PExtinct> solves;
  for (const auto& [value, t_max] : t_max_by_value)
    solves.emplace(value, PExtinct(rates, t_max, value, opts.tol));

  for (std::size_t i = 0; i < compiled_.size(); ++i) {
    const auto& t = compiled_[i];
    const PExtinct& p = solves.at(rho[t.rho_index]);
    const LogDensityResult r = log_density(t, rates, p, opts.mode);
    if (conditional && !(r.log_survival > kNegInf))
      throw SurvivalUnderflow("survival probability underflow in tree " + std::to_string(i));
    out[i] = conditional ? r.log_conditional : r.log_q_root;
  }
  return out;
}

double TreeSetDensity::operator()(const Rates& rates, const std::vector<double>& rho,
                                  const SetOptions& opts) const {
  double total = 0.0;
  for (double v : per_tree(rates, rho, opts)) total += v;
  return total;
}

double log_density_set(const std::vector<Tree>& trees, const Params& params, const TypeSpace& space,
                       const SetOptions& opts) {
  const TreeSetDensity set(trees, space.size());
  return set(params.rates(space), params.rho, opts);
}

}  // namespace mtbd
