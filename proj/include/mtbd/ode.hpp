#pragma once

// Dormand-Prince 5(4) with step-size control and 4th-order dense output
// (Hairer, Norsett & Wanner, "Solving ODEs I", dopri5 continuous extension).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "mtbd/error.hpp"

namespace mtbd::ode {

struct Tolerances {
  double rtol = 1e-8;
  double atol = 1e-10;
  double initial_step = 0.0;  // 0 picks one automatically
  std::size_t max_steps = 1'000'000;
};

struct Stats {
  std::size_t steps = 0;
  std::size_t rejected = 0;
  std::size_t rhs_evals = 0;
};

// Piecewise quartic interpolant over the accepted steps of one integration.
class DenseSolution {
 public:
  DenseSolution() = default;
  DenseSolution(std::size_t dim, double t0) : dim_(dim) { knots_.push_back(t0); }

  std::size_t dim() const { return dim_; }
  double t_begin() const { return knots_.front(); }
  double t_end() const { return knots_.back(); }
  std::size_t step_count() const { return knots_.size() - 1; }
  double knot(std::size_t k) const { return knots_[k]; }
  const Stats& stats() const { return stats_; }

  // Component i at time t in [t_begin, t_end].
  double operator()(std::size_t i, double t) const {
    const std::size_t s = locate(t);
    const double h = knots_[s + 1] - knots_[s];
    const double th = (t - knots_[s]) / h;
    const double th1 = 1.0 - th;
    const double* c = &coeffs_[(s * 5) * dim_];
    return c[i] + th * (c[dim_ + i] + th1 * (c[2 * dim_ + i] + th * (c[3 * dim_ + i] + th1 * c[4 * dim_ + i])));
  }

  void eval(double t, std::span<double> out) const {
    for (std::size_t i = 0; i < dim_; ++i) out[i] = (*this)(i, t);
  }

  // Internal: used by the integrator to append a step.
  double* append_step(double t_next) {
    knots_.push_back(t_next);
    coeffs_.resize(coeffs_.size() + 5 * dim_);
    return &coeffs_[coeffs_.size() - 5 * dim_];
  }
  Stats& mutable_stats() { return stats_; }

 private:
  std::size_t locate(double t) const {
    if (t <= knots_.front()) return 0;
    if (t >= knots_.back()) return knots_.size() - 2;
    const auto it = std::upper_bound(knots_.begin(), knots_.end(), t);
    return static_cast<std::size_t>(it - knots_.begin()) - 1;
  }

  std::size_t dim_ = 0;
  std::vector<double> knots_;
  std::vector<double> coeffs_;  // per step: 5 blocks of dim_
  Stats stats_;
};

namespace detail {

struct Tableau {
  static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  static constexpr double a21 = 1.0 / 5;
  static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                          a54 = -212.0 / 729;
  static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                          a64 = 49.0 / 176, a65 = -5103.0 / 18656;
  static constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192,
                          a75 = -2187.0 / 6784, a76 = 11.0 / 84;
  static constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                          e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
  static constexpr double d1 = -12715105075.0 / 11282082432, d3 = 87487479700.0 / 32700410799,
                          d4 = -10690763975.0 / 1880347072, d5 = 701980252875.0 / 199316789632,
                          d6 = -1453857185.0 / 822651844, d7 = 69997945.0 / 29380423;
};

// Shared driver. `on_step(t, h, y, ynew, k1, k3..k7)` is called after each
// accepted step, before y is replaced by ynew.
template <typename Rhs, typename OnStep>
Stats drive(Rhs&& f, double t0, double t1, std::vector<double>& y, const Tolerances& tol,
            OnStep&& on_step) {
  using T = Tableau;
  const std::size_t n = y.size();
  Stats stats;
  if (t1 == t0) return stats;
  if (t1 < t0) throw NumericalError("ode: integration must run forward in time");

  std::vector<double> k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), ytmp(n), ynew(n);
  f(t0, y.data(), k1.data());
  ++stats.rhs_evals;

  auto norm_scale = [&](double a, double b) {
    return tol.atol + tol.rtol * std::max(std::abs(a), std::abs(b));
  };

  double h = tol.initial_step;
  if (h <= 0.0) {
    // Hairer's starting-step heuristic.
    double d0 = 0.0, d1 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double sk = norm_scale(y[i], y[i]);
      d0 += (y[i] / sk) * (y[i] / sk);
      d1 += (k1[i] / sk) * (k1[i] / sk);
    }
    d0 = std::sqrt(d0 / n);
    d1 = std::sqrt(d1 / n);
    double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
    h0 = std::min(h0, t1 - t0);
    for (std::size_t i = 0; i < n; ++i) ytmp[i] = y[i] + h0 * k1[i];
    f(t0 + h0, ytmp.data(), k2.data());
    ++stats.rhs_evals;
    double d2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double sk = norm_scale(y[i], y[i]);
      d2 += ((k2[i] - k1[i]) / sk) * ((k2[i] - k1[i]) / sk);
    }
    d2 = std::sqrt(d2 / n) / h0;
    const double dmax = std::max(d1, d2);
    const double h1 = dmax <= 1e-15 ? std::max(1e-6, h0 * 1e-3) : std::pow(0.01 / dmax, 0.2);
    h = std::min(100.0 * h0, h1);
  }

  double t = t0;
  bool last_rejected = false;
  while (t < t1) {
    if (stats.steps + stats.rejected >= tol.max_steps)
      throw NumericalError("ode: maximum step count exceeded");
    bool final_step = false;
    if (t + h >= t1 || t + 1.01 * h >= t1) {
      h = t1 - t;
      final_step = true;
    }
    if (!(h > 0.0) || t + h == t) throw NumericalError("ode: step size underflow");

    for (std::size_t i = 0; i < n; ++i) ytmp[i] = y[i] + h * T::a21 * k1[i];
    f(t + T::c2 * h, ytmp.data(), k2.data());
    for (std::size_t i = 0; i < n; ++i) ytmp[i] = y[i] + h * (T::a31 * k1[i] + T::a32 * k2[i]);
    f(t + T::c3 * h, ytmp.data(), k3.data());
    for (std::size_t i = 0; i < n; ++i)
      ytmp[i] = y[i] + h * (T::a41 * k1[i] + T::a42 * k2[i] + T::a43 * k3[i]);
    f(t + T::c4 * h, ytmp.data(), k4.data());
    for (std::size_t i = 0; i < n; ++i)
      ytmp[i] = y[i] + h * (T::a51 * k1[i] + T::a52 * k2[i] + T::a53 * k3[i] + T::a54 * k4[i]);
    f(t + T::c5 * h, ytmp.data(), k5.data());
    for (std::size_t i = 0; i < n; ++i)
      ytmp[i] = y[i] + h * (T::a61 * k1[i] + T::a62 * k2[i] + T::a63 * k3[i] + T::a64 * k4[i] +
                            T::a65 * k5[i]);
    const double tph = final_step ? t1 : t + h;
    f(tph, ytmp.data(), k6.data());
    for (std::size_t i = 0; i < n; ++i)
      ynew[i] = y[i] + h * (T::a71 * k1[i] + T::a73 * k3[i] + T::a74 * k4[i] + T::a75 * k5[i] +
                            T::a76 * k6[i]);
    f(tph, ynew.data(), k7.data());
    stats.rhs_evals += 6;

    double err = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double e = h * (T::e1 * k1[i] + T::e3 * k3[i] + T::e4 * k4[i] + T::e5 * k5[i] +
                            T::e6 * k6[i] + T::e7 * k7[i]);
      const double sk = norm_scale(y[i], ynew[i]);
      err += (e / sk) * (e / sk);
    }
    err = std::sqrt(err / n);
    if (!std::isfinite(err)) {
      ++stats.rejected;
      h *= 0.1;
      last_rejected = true;
      continue;
    }

    const double fac = std::clamp(std::pow(err, 0.2) / 0.9, 0.1, 5.0);
    if (err <= 1.0) {
      on_step(t, h, y, ynew, k1, k3, k4, k5, k6, k7);
      ++stats.steps;
      t = tph;
      y.swap(ynew);
      k1.swap(k7);
      double hnew = h / fac;
      if (last_rejected) hnew = std::min(hnew, h);
      h = hnew;
      last_rejected = false;
    } else {
      ++stats.rejected;
      h /= std::min(fac, 10.0);
      last_rejected = true;
    }
  }
  return stats;
}

}  // namespace detail

// Integrates y' = f(t, y) from t0 to t1 and keeps the dense interpolant.
// f has signature void(double t, const double* y, double* dydt).
template <typename Rhs>
DenseSolution integrate_dense(Rhs&& f, double t0, double t1, std::span<const double> y0,
                              const Tolerances& tol = {}) {
  using T = detail::Tableau;
  const std::size_t n = y0.size();
  std::vector<double> y(y0.begin(), y0.end());
  DenseSolution sol(n, t0);
  const Stats stats = detail::drive(
      f, t0, t1, y, tol,
      [&](double t, double h, const std::vector<double>& ya, const std::vector<double>& yb,
          const std::vector<double>& k1, const std::vector<double>& k3, const std::vector<double>& k4,
          const std::vector<double>& k5, const std::vector<double>& k6, const std::vector<double>& k7) {
        double* c = sol.append_step(t + h);
        for (std::size_t i = 0; i < n; ++i) {
          const double ydiff = yb[i] - ya[i];
          const double bspl = h * k1[i] - ydiff;
          c[i] = ya[i];
          c[n + i] = ydiff;
          c[2 * n + i] = bspl;
          c[3 * n + i] = ydiff - h * k7[i] - bspl;
          c[4 * n + i] = h * (T::d1 * k1[i] + T::d3 * k3[i] + T::d4 * k4[i] + T::d5 * k5[i] +
                              T::d6 * k6[i] + T::d7 * k7[i]);
        }
      });
  sol.mutable_stats() = stats;
  return sol;
}

// Integrates in place without keeping the interpolant.
template <typename Rhs>
Stats integrate(Rhs&& f, double t0, double t1, std::vector<double>& y, const Tolerances& tol = {}) {
  return detail::drive(f, t0, t1, y, tol, [](auto&&...) {});
}

}  // namespace mtbd::ode
