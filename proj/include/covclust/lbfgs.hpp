#pragma once

// Limited-memory BFGS with a strong-Wolfe line search.
//
// The sufficient-decrease test carries a rounding allowance proportional to
// |f(x)|, so near the optimum (where function differences vanish into
// round-off but gradients are still informative) the curvature condition on
// the directional derivative decides acceptance.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <string>
#include <utility>

namespace covclust {

struct LbfgsOptions {
  int memory = 10;
  double grad_tol = 1e-6;     // on the Euclidean gradient norm
  int max_iter = 200;
  int max_linesearch = 40;
  double armijo = 1e-4;
  double wolfe = 0.9;
  double rounding_rel = 1e-12;  // allowance on f comparisons, relative to |f|
};

enum class LbfgsStatus { Converged, MaxIterations, LineSearchFailed, NonFinite };

inline const char* to_string(LbfgsStatus s) {
  switch (s) {
    case LbfgsStatus::Converged: return "converged";
    case LbfgsStatus::MaxIterations: return "max_iterations";
    case LbfgsStatus::LineSearchFailed: return "line_search_failed";
    case LbfgsStatus::NonFinite: return "non_finite";
  }
  return "unknown";
}

struct LbfgsResult {
  Eigen::VectorXd x;
  double f = 0.0;
  double grad_norm = 0.0;
  double grad_inf_norm = 0.0;
  int iterations = 0;
  int evaluations = 0;
  int restarts = 0;
  LbfgsStatus status = LbfgsStatus::MaxIterations;
};

namespace detail {

// Minimizer of the cubic interpolating (a, fa, ga) and (b, fb, gb), clamped
// into the interior of [a, b] (either order). Falls back to bisection.
inline double cubic_step(double a, double fa, double ga, double b, double fb, double gb) {
  const double lo = std::min(a, b);
  const double hi = std::max(a, b);
  const double margin = 0.1 * (hi - lo);
  const double d1 = ga + gb - 3.0 * (fa - fb) / (a - b);
  const double disc = d1 * d1 - ga * gb;
  double t = 0.5 * (a + b);
  if (disc >= 0.0) {
    const double d2 = std::copysign(std::sqrt(disc), b - a);
    const double denom = gb - ga + 2.0 * d2;
    if (denom != 0.0) {
      const double cand = b - (b - a) * (gb + d2 - d1) / denom;
      if (std::isfinite(cand)) t = cand;
    }
  }
  return std::clamp(t, lo + margin, hi - margin);
}

}  // namespace detail

/// Minimizes `fg`, a callable `double(const VectorXd& x, VectorXd& grad)`, from `x0`.
template <class Objective>
LbfgsResult minimize_lbfgs(Objective&& fg, Eigen::VectorXd x0, const LbfgsOptions& opt = {}) {
  using Eigen::VectorXd;
  LbfgsResult res;
  res.x = std::move(x0);
  VectorXd g(res.x.size());
  res.f = fg(res.x, g);
  res.evaluations = 1;
  if (!std::isfinite(res.f) || !g.allFinite()) {
    res.status = LbfgsStatus::NonFinite;
    return res;
  }

  std::deque<std::pair<VectorXd, VectorXd>> history;  // (s, y)
  std::vector<double> alpha_buf;
  VectorXd p(res.x.size());
  VectorXd x_trial(res.x.size());
  VectorXd g_trial(res.x.size());

  auto finish = [&](LbfgsStatus status) {
    res.grad_norm = g.norm();
    res.grad_inf_norm = g.size() ? g.cwiseAbs().maxCoeff() : 0.0;
    res.status = status;
    return res;
  };

  bool steepest_only = false;
  for (;;) {
    if (g.norm() <= opt.grad_tol) return finish(LbfgsStatus::Converged);
    if (res.iterations >= opt.max_iter) return finish(LbfgsStatus::MaxIterations);

    // Two-loop recursion for p = -H g.
    p = -g;
    if (!steepest_only && !history.empty()) {
      alpha_buf.assign(history.size(), 0.0);
      for (std::size_t k = history.size(); k-- > 0;) {
        const auto& [s, y] = history[k];
        alpha_buf[k] = s.dot(p) / y.dot(s);
        p -= alpha_buf[k] * y;
      }
      const auto& [s_last, y_last] = history.back();
      p *= s_last.dot(y_last) / y_last.squaredNorm();
      for (std::size_t k = 0; k < history.size(); ++k) {
        const auto& [s, y] = history[k];
        const double beta = y.dot(p) / y.dot(s);
        p += (alpha_buf[k] - beta) * s;
      }
    }
    double dphi0 = g.dot(p);
    if (!(dphi0 < 0.0)) {
      history.clear();
      p = -g;
      dphi0 = -g.squaredNorm();
    }

    const double f0 = res.f;
    const double slack = opt.rounding_rel * std::max(1.0, std::abs(f0));
    const bool scaled = !history.empty();
    double step = scaled ? 1.0 : std::min(1.0, 1.0 / std::sqrt(-dphi0));

    // phi(t) evaluated into (x_trial, g_trial).
    auto eval = [&](double t, double& phi, double& dphi) {
      x_trial = res.x + t * p;
      phi = fg(x_trial, g_trial);
      ++res.evaluations;
      dphi = g_trial.dot(p);
      return std::isfinite(phi) && std::isfinite(dphi);
    };

    bool accepted = false;
    double phi = 0.0, dphi = 0.0;
    double t_prev = 0.0, phi_prev = f0, dphi_prev = dphi0;
    double lo = 0.0, flo = f0, glo = dphi0, hi = 0.0, fhi = 0.0, ghi = 0.0;
    bool zooming = false;
    int evals = 0;
    while (evals < opt.max_linesearch) {
      double t;
      if (!zooming) {
        t = step;
      } else {
        t = detail::cubic_step(lo, flo, glo, hi, fhi, ghi);
        if (std::abs(hi - lo) <= 1e-16 * std::max(1.0, std::abs(lo))) break;
      }
      ++evals;
      if (!eval(t, phi, dphi)) {
        // Overflow: shrink toward the last good point.
        if (!zooming) {
          hi = t, fhi = std::numeric_limits<double>::max(), ghi = 0.0;
          lo = t_prev, flo = phi_prev, glo = dphi_prev;
          zooming = true;
          // Pure bisection until finite again.
          step = 0.5 * (lo + t);
        } else {
          hi = t, fhi = std::numeric_limits<double>::max(), ghi = 0.0;
        }
        continue;
      }
      const bool armijo_ok = phi <= f0 + opt.armijo * t * dphi0 + slack;
      if (!zooming) {
        if (!armijo_ok || (evals > 1 && phi > phi_prev + slack)) {
          lo = t_prev, flo = phi_prev, glo = dphi_prev;
          hi = t, fhi = phi, ghi = dphi;
          zooming = true;
          continue;
        }
        if (std::abs(dphi) <= -opt.wolfe * dphi0) {
          accepted = true;
          break;
        }
        if (dphi >= 0.0) {
          lo = t, flo = phi, glo = dphi;
          hi = t_prev, fhi = phi_prev, ghi = dphi_prev;
          zooming = true;
          continue;
        }
        t_prev = t, phi_prev = phi, dphi_prev = dphi;
        step = 4.0 * t;
      } else {
        if (!armijo_ok || phi > flo + slack) {
          hi = t, fhi = phi, ghi = dphi;
        } else {
          if (std::abs(dphi) <= -opt.wolfe * dphi0) {
            accepted = true;
            break;
          }
          if (dphi * (hi - lo) >= 0.0) {
            hi = lo, fhi = flo, ghi = glo;
          }
          lo = t, flo = phi, glo = dphi;
        }
      }
    }
    // A zoom that stalls after making real progress still yields a usable point.
    if (!accepted && zooming && lo > 0.0 && flo <= f0 + slack) {
      x_trial = res.x + lo * p;
      phi = fg(x_trial, g_trial);
      ++res.evaluations;
      accepted = std::isfinite(phi) && phi <= f0 + slack;
    }

    if (!accepted) {
      if (steepest_only || history.empty()) return finish(LbfgsStatus::LineSearchFailed);
      // Restart from steepest descent once before giving up.
      history.clear();
      steepest_only = true;
      ++res.restarts;
      continue;
    }
    steepest_only = false;

    VectorXd s = x_trial - res.x;
    VectorXd y = g_trial - g;
    res.x.swap(x_trial);
    g.swap(g_trial);
    res.f = phi;
    ++res.iterations;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      history.emplace_back(std::move(s), std::move(y));
      if (static_cast<int>(history.size()) > opt.memory) history.pop_front();
    }
  }
}

}  // namespace covclust
