#include "mtbd/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include <boost/math/special_functions/erf.hpp>
#include <json.hpp>

#include "mtbd/error.hpp"

namespace mtbd {

using nlohmann::json;

std::vector<std::vector<double>> SquareMatrix::rows() const {
  std::vector<std::vector<double>> out(n_, std::vector<double>(n_));
  for (std::size_t i = 0; i < n_; ++i)
    for (std::size_t j = 0; j < n_; ++j) out[i][j] = (*this)(i, j);
  return out;
}

SquareMatrix SquareMatrix::from_rows(const std::vector<std::vector<double>>& rows) {
  SquareMatrix m(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows.size())
      throw ValidationError("matrix row " + std::to_string(i) + " has " +
                            std::to_string(rows[i].size()) + " entries, expected " +
                            std::to_string(rows.size()));
    for (std::size_t j = 0; j < rows.size(); ++j) m(i, j) = rows[i][j];
  }
  return m;
}

SquareMatrix SquareMatrix::scaled(double factor) const {
  SquareMatrix out = *this;
  for (auto& v : out.data_) v *= factor;
  return out;
}

TypeSpace::TypeSpace(std::vector<double> values, std::vector<double> boundaries)
    : values_(std::move(values)), boundaries_(std::move(boundaries)) {
  if (values_.size() < 2) throw ValidationError("type space needs at least 2 values");
  if (boundaries_.size() + 1 != values_.size())
    throw ValidationError("type space needs exactly |values| - 1 boundaries");
  for (std::size_t k = 0; k + 1 < values_.size(); ++k) {
    if (!(values_[k] < values_[k + 1]))
      throw ValidationError("type space values must be strictly increasing");
    if (!(values_[k] < boundaries_[k] && boundaries_[k] < values_[k + 1]))
      throw ValidationError("boundary " + std::to_string(k) +
                            " does not lie strictly between its neighbouring values");
  }
}

double birth_rate(const SigmoidParams& phi, double x) {
  return phi.phi1 / (1.0 + std::exp(-phi.phi2 * (x - phi.phi3))) + phi.phi4;
}

double Rates::total_change(std::size_t x) const {
  double total = 0.0;
  for (std::size_t y = 0; y < size(); ++y)
    if (y != x) total += gamma(x, y);
  return total;
}

void Rates::check() const {
  if (birth.empty()) throw ValidationError("rates: no types");
  if (gamma.size() != birth.size())
    throw ValidationError("rates: change matrix dimension does not match type count");
  if (!(death >= 0.0) || !std::isfinite(death)) throw ValidationError("rates: invalid death rate");
  for (std::size_t x = 0; x < size(); ++x) {
    if (!(birth[x] >= 0.0) || !std::isfinite(birth[x]))
      throw ValidationError("rates: invalid birth rate for type " + std::to_string(x));
    for (std::size_t y = 0; y < size(); ++y)
      if (x != y && !(gamma(x, y) >= 0.0 && std::isfinite(gamma(x, y))))
        throw ValidationError("rates: negative or non-finite change rate");
  }
}

Rates constant_rates(std::size_t n, double birth, double death) {
  Rates r;
  r.birth.assign(n, birth);
  r.death = death;
  r.gamma = SquareMatrix(n);
  return r;
}

double Params::rho_for(std::size_t index) const {
  if (index >= rho.size())
    throw ValidationError("no sampling probability for rho index " + std::to_string(index));
  return rho[index];
}

Rates Params::rates(const TypeSpace& space) const {
  if (gamma_star.size() != space.size())
    throw ValidationError("gamma_star dimension " + std::to_string(gamma_star.size()) +
                          " does not match type space size " + std::to_string(space.size()));
  Rates r;
  r.birth.reserve(space.size());
  for (double x : space.values()) r.birth.push_back(birth_rate(phi, x));
  r.death = mu;
  r.gamma = gamma_star.scaled(delta);
  return r;
}

SquareMatrix normalize_generator(const SquareMatrix& m, double row_sum_tol) {
  SquareMatrix out = m;
  for (std::size_t i = 0; i < m.size(); ++i) {
    double off = 0.0;
    for (std::size_t j = 0; j < m.size(); ++j) {
      if (i == j) continue;
      if (m(i, j) < 0.0)
        throw ValidationError("negative off-diagonal rate in row " + std::to_string(i));
      off += m(i, j);
    }
    if (std::abs(off + m(i, i)) > row_sum_tol)
      throw ValidationError("row " + std::to_string(i) + " of rate matrix does not sum to 0");
    out(i, i) = -off;
  }
  return out;
}

namespace {
constexpr double kLogSqrt2Pi = 0.91893853320467274178;

double standard_normal_quantile(double p) {
  return std::numbers::sqrt2 * boost::math::erf_inv(2.0 * p - 1.0);
}
}  // namespace

double LogNormalPrior::log_density(double x) const {
  if (!(x > 0.0)) return -std::numeric_limits<double>::infinity();
  const double z = (std::log(x) - location) / scale;
  return -std::log(x) - std::log(scale) - kLogSqrt2Pi - 0.5 * z * z;
}

double LogNormalPrior::median() const { return std::exp(location); }

double LogNormalPrior::sample(Rng& rng) const {
  return std::lognormal_distribution<double>(location, scale)(rng);
}

double LogNormalPrior::quantile(double p) const {
  return std::exp(location + scale * standard_normal_quantile(p));
}

double NormalPrior::log_density(double x) const {
  const double d = x - mean;
  return -0.5 * std::log(variance) - kLogSqrt2Pi - 0.5 * d * d / variance;
}

double NormalPrior::sample(Rng& rng) const {
  return std::normal_distribution<double>(mean, std::sqrt(variance))(rng);
}

double NormalPrior::quantile(double p) const {
  return mean + std::sqrt(variance) * standard_normal_quantile(p);
}

void PriorSpec::check() const {
  for (const auto* ln : {&phi1, &phi2, &phi4, &mu, &delta})
    if (!(ln->scale > 0.0)) throw ValidationError("log-normal prior scale must be positive");
  if (!(phi3.variance > 0.0)) throw ValidationError("normal prior variance must be positive");
}

double log_prior(const Params& theta, const PriorSpec& spec) {
  const double ninf = -std::numeric_limits<double>::infinity();
  if (!theta.phi.valid() || !(theta.mu > 0.0) || !(theta.delta > 0.0)) return ninf;
  return spec.phi1.log_density(theta.phi.phi1) + spec.phi2.log_density(theta.phi.phi2) +
         spec.phi3.log_density(theta.phi.phi3) + spec.phi4.log_density(theta.phi.phi4) +
         spec.mu.log_density(theta.mu) + spec.delta.log_density(theta.delta);
}

Params sample_prior(const PriorSpec& spec, Rng& rng) {
  Params p;
  p.phi.phi1 = spec.phi1.sample(rng);
  p.phi.phi2 = spec.phi2.sample(rng);
  p.phi.phi3 = spec.phi3.sample(rng);
  p.phi.phi4 = spec.phi4.sample(rng);
  p.mu = spec.mu.sample(rng);
  p.delta = spec.delta.sample(rng);
  return p;
}

double median(std::vector<double> values) { return quantile(std::move(values), 0.5); }

double quantile(std::vector<double> values, double p) {
  if (values.empty()) throw ValidationError("quantile of empty sample");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

TypeSpace discretize(const std::vector<double>& samples, std::size_t n) {
  if (n < 2) throw ValidationError("discretize: need at least 2 bins");
  if (samples.empty()) throw ValidationError("discretize: no samples");
  const auto [lo_it, hi_it] = std::minmax_element(samples.begin(), samples.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  const double width = (hi - lo) / static_cast<double>(n);

  std::vector<double> boundaries(n - 1);
  for (std::size_t k = 0; k + 1 < n; ++k) boundaries[k] = lo + width * static_cast<double>(k + 1);

  std::vector<std::vector<double>> bins(n);
  for (double s : samples) {
    const auto it = std::upper_bound(boundaries.begin(), boundaries.end(), s);
    bins[static_cast<std::size_t>(it - boundaries.begin())].push_back(s);
  }
  std::vector<double> values(n);
  for (std::size_t k = 0; k < n; ++k) {
    if (bins[k].empty())
      throw ValidationError("discretize: bin " + std::to_string(k) + " is empty");
    values[k] = median(bins[k]);
  }
  return TypeSpace(std::move(values), std::move(boundaries));
}

std::size_t bin_index(const TypeSpace& space, double affinity) {
  const auto& b = space.boundaries();
  return static_cast<std::size_t>(std::upper_bound(b.begin(), b.end(), affinity) - b.begin());
}

std::string type_space_to_json(const TypeSpace& space) {
  json j;
  j["values"] = space.values();
  j["boundaries"] = space.boundaries();
  return j.dump(2);
}

TypeSpace type_space_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    return TypeSpace(j.at("values").get<std::vector<double>>(),
                     j.at("boundaries").get<std::vector<double>>());
  } catch (const json::exception& e) {
    throw ValidationError(std::string("type space JSON: ") + e.what());
  }
}

std::string matrix_to_json(const SquareMatrix& m) {
  json j;
  j["matrix"] = m.rows();
  return j.dump(2);
}

SquareMatrix matrix_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    return SquareMatrix::from_rows(j.at("matrix").get<std::vector<std::vector<double>>>());
  } catch (const json::exception& e) {
    throw ValidationError(std::string("matrix JSON: ") + e.what());
  }
}

std::string params_to_json(const Params& p) {
  json j;
  j["phi"] = {p.phi.phi1, p.phi.phi2, p.phi.phi3, p.phi.phi4};
  j["mu"] = p.mu;
  j["delta"] = p.delta;
  j["gamma_star"] = p.gamma_star.rows();
  j["rho"] = p.rho;
  return j.dump(2);
}

Params params_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    if (!j.is_object()) throw ValidationError("params JSON must be an object");
    for (const auto& [key, value] : j.items())
      if (key != "phi" && key != "mu" && key != "delta" && key != "gamma_star" && key != "rho")
        throw ValidationError("params JSON: unknown key '" + key + "'");
    Params p;
    const auto phi = j.at("phi").get<std::vector<double>>();
    if (phi.size() != 4) throw ValidationError("params JSON: phi must have 4 entries");
    p.phi = {phi[0], phi[1], phi[2], phi[3]};
    p.mu = j.at("mu").get<double>();
    p.delta = j.at("delta").get<double>();
    p.gamma_star = normalize_generator(SquareMatrix::from_rows(j.at("gamma_star").get<std::vector<std::vector<double>>>()));
    p.rho = j.at("rho").get<std::vector<double>>();
    if (!p.phi.valid()) throw ValidationError("params JSON: phi1, phi2, phi4 must be positive");
    if (!(p.mu >= 0.0) || !(p.delta >= 0.0)) throw ValidationError("params JSON: mu and delta must be non-negative");
    if (p.rho.empty()) throw ValidationError("params JSON: rho must not be empty");
    for (double r : p.rho)
      if (!(r > 0.0 && r <= 1.0)) throw ValidationError("params JSON: rho must lie in (0, 1]");
    return p;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("params JSON: ") + e.what());
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path);
  out << contents;
}

}  // namespace mtbd
