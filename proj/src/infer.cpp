#include "mtbd/infer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <sstream>

#include <boost/algorithm/string.hpp>
#include <json.hpp>

#include "mtbd/error.hpp"

namespace mtbd {

using nlohmann::json;

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

}  // namespace

ParamLayout ParamLayout::sigmoid(TypeSpace space, SquareMatrix gamma_star, std::vector<double> rho,
                                 PriorSpec priors) {
  if (gamma_star.size() != space.size())
    throw ValidationError("gamma_star dimension does not match the type space");
  priors.check();
  ParamLayout l;
  l.kind_ = Kind::sigmoid;
  l.names_ = {"phi1", "phi2", "phi3", "phi4", "mu", "delta"};
  l.space_ = std::move(space);
  l.gamma_star_ = std::move(gamma_star);
  l.rho_ = std::move(rho);
  l.priors_ = priors;
  return l;
}

ParamLayout ParamLayout::constant(std::vector<double> rho, LogNormalPrior lambda, LogNormalPrior mu) {
  if (!(lambda.scale > 0.0) || !(mu.scale > 0.0)) throw ValidationError("prior scales must be positive");
  ParamLayout l;
  l.kind_ = Kind::constant;
  l.names_ = {"lambda", "mu"};
  l.gamma_star_ = SquareMatrix(1);
  l.rho_ = std::move(rho);
  l.lambda_prior_ = lambda;
  l.mu_prior_ = mu;
  return l;
}

const TypeSpace& ParamLayout::space() const {
  if (!space_) throw ValidationError("the constant-rate layout has no type space");
  return *space_;
}

std::vector<double> ParamLayout::type_values() const {
  return space_ ? space_->values() : std::vector<double>{0.0};
}

std::vector<double> ParamLayout::prior_medians() const {
  if (kind_ == Kind::constant) return {lambda_prior_.median(), mu_prior_.median()};
  return {priors_.phi1.median(), priors_.phi2.median(), priors_.phi3.mean,
          priors_.phi4.median(), priors_.mu.median(),   priors_.delta.median()};
}

bool ParamLayout::in_support(const std::vector<double>& v) const {
  if (v.size() != dim()) return false;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) return false;
    if (positive(i) && !(v[i] > 0.0)) return false;
  }
  return true;
}

double ParamLayout::log_prior(const std::vector<double>& v) const {
  if (!in_support(v)) return kNegInf;
  if (kind_ == Kind::constant) return lambda_prior_.log_density(v[0]) + mu_prior_.log_density(v[1]);
  return priors_.phi1.log_density(v[0]) + priors_.phi2.log_density(v[1]) + priors_.phi3.log_density(v[2]) +
         priors_.phi4.log_density(v[3]) + priors_.mu.log_density(v[4]) + priors_.delta.log_density(v[5]);
}

Rates ParamLayout::rates(const std::vector<double>& v) const {
  if (kind_ == Kind::constant) return constant_rates(1, v[0], v[1]);
  return to_params(v).rates(*space_);
}

double ParamLayout::birth(const std::vector<double>& v, double x) const {
  if (kind_ == Kind::constant) return v[0];
  return birth_rate(SigmoidParams{v[0], v[1], v[2], v[3]}, x);
}

Params ParamLayout::to_params(const std::vector<double>& v) const {
  if (kind_ != Kind::sigmoid) throw ValidationError("to_params needs the sigmoid layout");
  Params p;
  p.phi = {v[0], v[1], v[2], v[3]};
  p.mu = v[4];
  p.delta = v[5];
  p.gamma_star = gamma_star_;
  p.rho = rho_;
  return p;
}

std::vector<double> ParamLayout::from_params(const Params& p) const {
  if (kind_ != Kind::sigmoid) throw ValidationError("from_params needs the sigmoid layout");
  return {p.phi.phi1, p.phi.phi2, p.phi.phi3, p.phi.phi4, p.mu, p.delta};
}

double log_posterior(const std::vector<double>& v, const ParamLayout& layout, const TreeSetDensity& trees,
                     const SetOptions& opts, std::string* diagnostic) {
  const double lp = layout.log_prior(v);
  if (!std::isfinite(lp)) return kNegInf;
  try {
    const double ll = trees(layout.rates(v), layout.rho(), opts);
    if (std::isnan(ll)) return kNegInf;
    return lp + ll;
  } catch (const NumericalError& e) {
    if (diagnostic) *diagnostic = e.what();
    return kNegInf;
  }
}

double log_proposal_correction(double current, double proposed, bool positive) {
  return positive ? std::log(proposed / current) : 0.0;
}

std::vector<bool> mh_step(MhState& state, const LogTarget& target, const std::vector<double>& scales,
                          const std::vector<bool>& positive, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<bool> accepted(state.value.size(), false);
  for (std::size_t i = 0; i < state.value.size(); ++i) {
    const double cur = state.value[i];
    const double z = normal(rng) * scales[i];
    const double prop = positive[i] ? cur * std::exp(z) : cur + z;
    std::vector<double> next = state.value;
    next[i] = prop;
    const double lp = target(next);
    const double log_ratio = lp - state.log_post + log_proposal_correction(cur, prop, positive[i]);
    // log(U) < log_ratio; a ratio >= 0 always accepts.
    if (log_ratio >= 0.0 || std::log(uniform01(rng)) < log_ratio) {
      state.value = std::move(next);
      state.log_post = lp;
      accepted[i] = true;
    }
  }
  return accepted;
}

void ChainConfig::check(std::size_t dim) const {
  if (iterations == 0) throw ValidationError("iterations must be positive");
  if (burn_in >= iterations) throw ValidationError("burn_in must be smaller than iterations");
  if (thin == 0) throw ValidationError("thin must be positive");
  if (!scales.empty() && scales.size() != dim)
    throw ValidationError("expected " + std::to_string(dim) + " proposal scales");
  for (double s : scales)
    if (!(s > 0.0) || !std::isfinite(s)) throw ValidationError("proposal scales must be positive");
  if (block_moves > 100) throw ValidationError("block_moves must be at most 100");
  if (!(target_acceptance > 0.0 && target_acceptance < 1.0))
    throw ValidationError("target acceptance must lie in (0, 1)");
  if (initial && initial->size() != dim)
    throw ValidationError("initial state must have " + std::to_string(dim) + " components");
}

std::vector<double> Chain::column(std::size_t j) const {
  std::vector<double> c;
  c.reserve(draws.size());
  for (const auto& d : draws) c.push_back(d[j]);
  return c;
}

bool block_step(MhState& state, const LogTarget& target, const std::vector<double>& chol, double scale,
                const std::vector<bool>& positive, Rng& rng) {
  const std::size_t d = state.value.size();
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> z(d), next = state.value;
  for (auto& v : z) v = normal(rng);
  double correction = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    double step = 0.0;
    for (std::size_t j = 0; j <= i; ++j) step += chol[i * d + j] * z[j];
    step *= scale;
    next[i] = positive[i] ? state.value[i] * std::exp(step) : state.value[i] + step;
    correction += log_proposal_correction(state.value[i], next[i], positive[i]);
  }
  const double lp = target(next);
  const double log_ratio = lp - state.log_post + correction;
  if (log_ratio >= 0.0 || std::log(uniform01(rng)) < log_ratio) {
    state.value = std::move(next);
    state.log_post = lp;
    return true;
  }
  return false;
}

namespace {

// Lower Cholesky factor of a d x d covariance with a small ridge; falls back
// to the diagonal when the matrix is not positive definite.
std::vector<double> cholesky(std::vector<double> a, std::size_t d) {
  for (std::size_t i = 0; i < d; ++i) a[i * d + i] += 1e-10;
  std::vector<double> l(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      double s = a[i * d + j];
      for (std::size_t k = 0; k < j; ++k) s -= l[i * d + k] * l[j * d + k];
      if (i == j) {
        if (!(s > 0.0)) {
          std::fill(l.begin(), l.end(), 0.0);
          for (std::size_t k = 0; k < d; ++k) l[k * d + k] = std::sqrt(std::max(a[k * d + k], 1e-10));
          return l;
        }
        l[i * d + i] = std::sqrt(s);
      } else {
        l[i * d + j] = s / l[j * d + j];
      }
    }
  return l;
}

// Running mean and covariance (Welford) of the proposal-scale coordinates.
struct RunningCov {
  explicit RunningCov(std::size_t d) : d(d), mean(d, 0.0), m2(d * d, 0.0) {}
  void add(const std::vector<double>& u) {
    ++n;
    std::vector<double> delta(d);
    for (std::size_t i = 0; i < d; ++i) {
      delta[i] = u[i] - mean[i];
      mean[i] += delta[i] / static_cast<double>(n);
    }
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) m2[i * d + j] += delta[i] * (u[j] - mean[j]);
  }
  std::vector<double> cov() const {
    std::vector<double> c(m2);
    for (auto& v : c) v /= static_cast<double>(n - 1);
    return c;
  }
  std::size_t d, n = 0;
  std::vector<double> mean, m2;
};

}  // namespace

Chain run_sampler(const LogTarget& target, std::vector<std::string> names, const std::vector<bool>& positive,
                  std::vector<double> initial, const ChainConfig& config) {
  const std::size_t dim = names.size();
  config.check(dim);
  Rng rng(config.seed);
  std::vector<double> log_scales(dim, std::log(0.2));
  for (std::size_t i = 0; i < config.scales.size(); ++i) log_scales[i] = std::log(config.scales[i]);

  MhState state{std::move(initial), 0.0};
  state.log_post = target(state.value);
  if (!std::isfinite(state.log_post))
    throw NumericalError("initial log posterior is not finite; choose another initial state");

  // Block moves: covariance learned over the second half of burn-in, then
  // frozen. Skipped when that window is too short to estimate it.
  const std::size_t cov_start = config.burn_in / 2;
  const std::size_t min_cov_samples = std::max<std::size_t>(100, 10 * dim);
  const bool use_block = config.block_moves > 0 && dim > 1 && config.burn_in - cov_start >= 2 * min_cov_samples;
  RunningCov cov(dim);
  std::vector<double> chol;
  double log_block_scale = std::log(2.38 / std::sqrt(static_cast<double>(dim)));
  auto coords = [&](const std::vector<double>& v) {
    std::vector<double> u(dim);
    for (std::size_t i = 0; i < dim; ++i) u[i] = positive[i] ? std::log(v[i]) : v[i];
    return u;
  };

  Chain chain;
  chain.names = std::move(names);
  std::vector<double> kept_accepts(dim, 0.0);
  double kept_block = 0.0;
  std::size_t kept_sweeps = 0;
  std::vector<double> scales(dim);
  for (std::size_t it = 0; it < config.iterations; ++it) {
    for (std::size_t i = 0; i < dim; ++i) scales[i] = std::exp(log_scales[i]);
    auto acc = mh_step(state, target, scales, positive, rng);
    const bool block_ready = use_block && cov.n >= min_cov_samples;
    bool block_acc = false;
    double block_rate = 0.0;
    if (block_ready) {
      if (it < config.burn_in && (chol.empty() || it % 50 == 0)) chol = cholesky(cov.cov(), dim);
      for (std::size_t b = 0; b < config.block_moves; ++b) {
        const bool a = block_step(state, target, chol, std::exp(log_block_scale), positive, rng);
        block_acc = block_acc || a;
        block_rate += a ? 1.0 : 0.0;
      }
      block_rate /= static_cast<double>(config.block_moves);
    }
    if (it < config.burn_in) {
      if (config.adapt) {
        const double gain = std::pow(static_cast<double>(it) + 1.0, -0.6);
        for (std::size_t i = 0; i < dim; ++i)
          log_scales[i] += gain * ((acc[i] ? 1.0 : 0.0) - config.target_acceptance);
        if (block_ready) {
          const double g = std::pow(static_cast<double>(it - cov_start) + 1.0, -0.6);
          log_block_scale += g * (block_rate - 0.234);
        }
      }
      if (use_block && it >= cov_start) cov.add(coords(state.value));
      continue;
    }
    ++kept_sweeps;
    for (std::size_t i = 0; i < dim; ++i) kept_accepts[i] += acc[i] ? 1.0 : 0.0;
    kept_block += block_rate;
    if ((it - config.burn_in) % config.thin != 0) continue;
    chain.iteration.push_back(it);
    chain.draws.push_back(state.value);
    chain.log_post.push_back(state.log_post);
    if (use_block) acc.push_back(block_acc);
    chain.accepted.push_back(acc);
  }
  const double kept = static_cast<double>(std::max<std::size_t>(kept_sweeps, 1));
  for (auto& a : kept_accepts) a /= kept;
  chain.acceptance = kept_accepts;
  chain.block_acceptance = use_block ? std::optional<double>(kept_block / kept) : std::nullopt;
  chain.final_scales.resize(dim);
  for (std::size_t i = 0; i < dim; ++i) chain.final_scales[i] = std::exp(log_scales[i]);
  return chain;
}

Chain run_chain(const TreeSetDensity& trees, const ParamLayout& layout, const ChainConfig& config) {
  std::size_t failures = 0;
  const LogTarget target = [&](const std::vector<double>& v) {
    std::string diag;
    const double lp = log_posterior(v, layout, trees, config.likelihood, &diag);
    if (!diag.empty()) ++failures;
    return lp;
  };
  std::vector<bool> positive(layout.dim());
  for (std::size_t i = 0; i < layout.dim(); ++i) positive[i] = layout.positive(i);
  Chain c = run_sampler(target, layout.names(), positive, config.initial.value_or(layout.prior_medians()), config);
  c.failed_evaluations = failures;
  return c;
}

double effective_sample_size(const std::vector<double>& x) {
  const std::size_t n = x.size();
  if (n < 4) return static_cast<double>(n);
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(n);
  auto autocov = [&](std::size_t lag) {
    double s = 0.0;
    for (std::size_t i = 0; i + lag < n; ++i) s += (x[i] - mean) * (x[i + lag] - mean);
    return s / static_cast<double>(n);
  };
  const double c0 = autocov(0);
  if (!(c0 > 0.0)) return static_cast<double>(n);
  // Sum of paired autocorrelations while positive, forced non-increasing.
  double tau = -1.0;
  double prev_pair = std::numeric_limits<double>::infinity();
  for (std::size_t m = 0; 2 * m + 1 < n; ++m) {
    double pair = (autocov(2 * m) + autocov(2 * m + 1)) / c0;
    if (!(pair > 0.0)) break;
    pair = std::min(pair, prev_pair);
    tau += 2.0 * pair;
    prev_pair = pair;
  }
  return static_cast<double>(n) / std::max(tau, 1e-12);
}

Interval central_interval(const std::vector<double>& values, double mass) {
  if (values.empty()) throw ValidationError("interval of an empty sample");
  const double tail = (1.0 - mass) / 2.0;
  return {quantile(values, tail), quantile(values, 1.0 - tail)};
}

Band band(const std::vector<std::vector<double>>& curves, const std::vector<double>& x) {
  Band b;
  b.x = x;
  std::vector<double> col(curves.size());
  for (std::size_t j = 0; j < x.size(); ++j) {
    for (std::size_t k = 0; k < curves.size(); ++k) col[k] = curves[k][j];
    b.median.push_back(median(col));
    b.ci50.push_back(central_interval(col, 0.5));
    b.ci90.push_back(central_interval(col, 0.9));
  }
  return b;
}

std::vector<double> linspace(double lo, double hi, std::size_t n) {
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i)
    g[i] = n == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  return g;
}

ChainSummary chain_summary(const Chain& chain, const ParamLayout& layout, const std::vector<double>& grid) {
  if (chain.draws.empty()) throw ValidationError("cannot summarize an empty chain");
  ChainSummary s;
  for (std::size_t j = 0; j < chain.names.size(); ++j) {
    const auto col = chain.column(j);
    ParamSummary p;
    p.name = chain.names[j];
    p.median = median(col);
    double sum = 0.0;
    for (double v : col) sum += v;
    p.mean = sum / static_cast<double>(col.size());
    p.ci50 = central_interval(col, 0.5);
    p.ci90 = central_interval(col, 0.9);
    p.ess = effective_sample_size(col);
    p.acceptance = j < chain.acceptance.size() ? chain.acceptance[j] : 0.0;
    s.params.push_back(p);
  }
  auto curves = [&](const std::vector<double>& xs, bool net) {
    std::vector<std::vector<double>> out;
    out.reserve(chain.draws.size());
    for (const auto& d : chain.draws) {
      std::vector<double> row;
      row.reserve(xs.size());
      for (double x : xs) row.push_back(layout.birth(d, x) - (net ? layout.death(d) : 0.0));
      out.push_back(std::move(row));
    }
    return out;
  };
  const auto types = layout.type_values();
  s.birth_grid = band(curves(grid, false), grid);
  s.net_grid = band(curves(grid, true), grid);
  s.birth_types = band(curves(types, false), types);
  s.net_types = band(curves(types, true), types);
  return s;
}

namespace {

// Shortest text that reads back to the same double.
std::string shortest(double v) {
  char buf[32];
  return std::string(buf, std::to_chars(buf, buf + sizeof buf, v).ptr);
}

}  // namespace

std::string chain_to_csv(const Chain& chain) {
  std::ostringstream out;
  out << "iter";
  for (const auto& n : chain.names) out << ',' << n;
  out << ",log_post";
  for (const auto& n : chain.names) out << ",accepted_" << n;
  if (chain.block_acceptance) out << ",accepted_block";
  out << '\n';
  for (std::size_t k = 0; k < chain.draws.size(); ++k) {
    out << chain.iteration[k];
    for (double v : chain.draws[k]) out << ',' << shortest(v);
    out << ',' << shortest(chain.log_post[k]);
    for (bool a : chain.accepted[k]) out << ',' << (a ? 1 : 0);
    out << '\n';
  }
  return out.str();
}

Chain chain_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("chain csv is empty");
  std::vector<std::string> header;
  boost::algorithm::split(header, line, boost::is_any_of(","));
  const auto lp = std::find(header.begin(), header.end(), "log_post");
  if (header.empty() || header.front() != "iter" || lp == header.end())
    throw ValidationError("chain csv header must start with iter and contain log_post");
  Chain c;
  c.names.assign(header.begin() + 1, lp);
  const std::size_t dim = c.names.size();
  const std::size_t n_flags = header.size() - dim - 2;
  if (n_flags != dim && n_flags != dim + 1) throw ValidationError("chain csv has an unexpected column count");
  std::vector<double> acc(n_flags, 0.0);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    boost::algorithm::split(f, line, boost::is_any_of(","));
    if (f.size() != header.size())
      throw ValidationError("chain csv line " + std::to_string(line_no) + " has the wrong field count");
    try {
      c.iteration.push_back(std::stoull(f[0]));
      std::vector<double> d;
      for (std::size_t j = 0; j < dim; ++j) d.push_back(std::stod(f[1 + j]));
      c.draws.push_back(std::move(d));
      c.log_post.push_back(std::stod(f[1 + dim]));
      std::vector<bool> a;
      for (std::size_t j = 0; j < n_flags; ++j) {
        a.push_back(f[2 + dim + j] == "1");
        acc[j] += a.back() ? 1.0 : 0.0;
      }
      c.accepted.push_back(std::move(a));
    } catch (const std::logic_error&) {
      throw ValidationError("chain csv line " + std::to_string(line_no) + " is not numeric");
    }
  }
  const double n = static_cast<double>(std::max<std::size_t>(c.draws.size(), 1));
  for (std::size_t j = 0; j < dim; ++j) c.acceptance.push_back(acc[j] / n);
  if (n_flags == dim + 1) c.block_acceptance = acc[dim] / n;
  return c;
}

namespace {

json band_json(const Band& b) {
  json j;
  j["x"] = b.x;
  j["median"] = b.median;
  for (const auto& [key, ci] : {std::pair{"ci50", &b.ci50}, std::pair{"ci90", &b.ci90}}) {
    json lo = json::array(), hi = json::array();
    for (const auto& i : *ci) {
      lo.push_back(i.lo);
      hi.push_back(i.hi);
    }
    j[std::string(key) + "_lo"] = lo;
    j[std::string(key) + "_hi"] = hi;
  }
  return j;
}

}  // namespace

std::string summary_to_json(const ChainSummary& s) {
  json j;
  json params = json::array();
  for (const auto& p : s.params)
    params.push_back({{"name", p.name},
                      {"median", p.median},
                      {"mean", p.mean},
                      {"ci50", {p.ci50.lo, p.ci50.hi}},
                      {"ci90", {p.ci90.lo, p.ci90.hi}},
                      {"ess", p.ess},
                      {"acceptance", p.acceptance}});
  j["params"] = params;
  j["birth_grid"] = band_json(s.birth_grid);
  j["net_grid"] = band_json(s.net_grid);
  j["birth_types"] = band_json(s.birth_types);
  j["net_types"] = band_json(s.net_types);
  return j.dump(2);
}

}  // namespace mtbd
