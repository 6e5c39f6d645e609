#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "mtbd/random.hpp"

namespace mtbd {

// Dense row-major square matrix. Small (|types| x |types|) by construction.
class SquareMatrix {
 public:
  SquareMatrix() = default;
  explicit SquareMatrix(std::size_t n, double fill = 0.0) : n_(n), data_(n * n, fill) {}

  std::size_t size() const { return n_; }
  double& operator()(std::size_t i, std::size_t j) { return data_[i * n_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * n_ + j]; }
  const std::vector<double>& data() const { return data_; }

  std::vector<std::vector<double>> rows() const;
  static SquareMatrix from_rows(const std::vector<std::vector<double>>& rows);

  SquareMatrix scaled(double factor) const;

  bool operator==(const SquareMatrix&) const = default;

 private:
  std::size_t n_ = 0;
  std::vector<double> data_;
};

// Discretized affinity values (bin medians) and the cutoffs between them.
class TypeSpace {
 public:
  TypeSpace(std::vector<double> values, std::vector<double> boundaries);

  std::size_t size() const { return values_.size(); }
  const std::vector<double>& values() const { return values_; }
  const std::vector<double>& boundaries() const { return boundaries_; }
  double value(std::size_t k) const { return values_[k]; }

  bool operator==(const TypeSpace&) const = default;

 private:
  std::vector<double> values_;
  std::vector<double> boundaries_;
};

struct SigmoidParams {
  double phi1 = 1.0;  // range
  double phi2 = 1.0;  // slope
  double phi3 = 0.0;  // midpoint
  double phi4 = 0.5;  // floor

  bool valid() const { return phi1 > 0.0 && phi2 > 0.0 && phi4 > 0.0; }
};

// lambda(x) = phi1 / (1 + exp(-phi2 (x - phi3))) + phi4
double birth_rate(const SigmoidParams& phi, double x);

// Per-type rates consumed by the simulators and the likelihood. Types are
// indices 0..n-1; `gamma` is the effective (already scaled) change-rate matrix
// with diagonal -Gamma_x.
struct Rates {
  std::vector<double> birth;
  double death = 0.0;
  SquareMatrix gamma;

  std::size_t size() const { return birth.size(); }
  // Gamma_x = sum of off-diagonal entries of row x.
  double total_change(std::size_t x) const;
  void check() const;
};

// Builds a zero-rate change matrix of size n.
Rates constant_rates(std::size_t n, double birth, double death);

struct Params {
  SigmoidParams phi;
  double mu = 1.0;
  double delta = 1.0;
  SquareMatrix gamma_star;
  std::vector<double> rho{1.0};
  static constexpr double sigma = 0.0;

  double rho_for(std::size_t index) const;
  Rates rates(const TypeSpace& space) const;
};

// Checks off-diagonals >= 0 and |row sum| <= tol, then rewrites each diagonal as
// the exact negative off-diagonal row sum.
SquareMatrix normalize_generator(const SquareMatrix& m, double row_sum_tol = 1e-4);

struct LogNormalPrior {
  double location = 0.0;
  double scale = 1.0;
  double log_density(double x) const;
  double median() const;
  double sample(Rng& rng) const;
  double quantile(double p) const;
};

struct NormalPrior {
  double mean = 0.0;
  double variance = 1.0;
  double log_density(double x) const;
  double sample(Rng& rng) const;
  double quantile(double p) const;
};

struct PriorSpec {
  LogNormalPrior phi1{0.5, 0.75};
  LogNormalPrior phi2{0.5, 0.75};
  NormalPrior phi3{0.0, 2.0};
  LogNormalPrior phi4{-0.5, 1.2};
  LogNormalPrior mu{0.0, 0.5};
  LogNormalPrior delta{0.0, 0.5};

  void check() const;
};

double log_prior(const Params& theta, const PriorSpec& spec);

// Draws (phi, mu, delta) from the prior; gamma_star and rho are left default.
Params sample_prior(const PriorSpec& spec, Rng& rng);

// Even-width bins over [min, max] of the samples; each value is the median of
// the samples falling in that bin.
TypeSpace discretize(const std::vector<double>& samples, std::size_t n);

// Half-open bins [b_{k-1}, b_k); a value equal to a boundary goes up. Values past
// the extreme boundaries clamp to the first/last bin.
std::size_t bin_index(const TypeSpace& space, double affinity);

double median(std::vector<double> values);
// Linear-interpolated empirical quantile (type 7).
double quantile(std::vector<double> values, double p);

// JSON: {"values": [...], "boundaries": [...]} and {"matrix": [[...]]}.
std::string type_space_to_json(const TypeSpace& space);
TypeSpace type_space_from_json(const std::string& text);
std::string matrix_to_json(const SquareMatrix& m);
SquareMatrix matrix_from_json(const std::string& text);

// {"phi": [4], "mu", "delta", "gamma_star": [[...]], "rho": [...]}. Unknown
// keys are rejected; gamma_star is required.
std::string params_to_json(const Params& p);
Params params_from_json(const std::string& text);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& contents);

}  // namespace mtbd
