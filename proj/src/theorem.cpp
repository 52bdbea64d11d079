// SPDX-License-Identifier: Apache-2.0
#include "increg/theorem.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace increg {

namespace {

constexpr double kStepTol = 1e-12;
constexpr int kMaxIter = 200;
constexpr double kResidualTol = 1e-10;

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Root of Y' in [lo, hi] with Y'(lo) < 0 < Y'(hi).
double newton_bisect(const ScalarLoss& loss, double lambda, double lo, double hi) {
  double x = 0.5 * (lo + hi);
  for (int it = 0; it < kMaxIter; ++it) {
    const double f = y_prime(loss, lambda, x);
    if (f == 0.0) return x;
    if (f < 0.0) lo = x; else hi = x;
    const double df = y_second(loss, lambda, x);
    double next = df > 0.0 ? x - f / df : lo - 1.0;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    const double step = std::abs(next - x);
    x = next;
    if (step <= kStepTol * std::max(1.0, std::abs(x)) || hi - lo <= kStepTol * std::max(1.0, std::abs(x))) {
      break;
    }
  }
  return x;
}

/// Golden-section search for the lowest Y on [lo, hi].
double golden_min(const ScalarLoss& loss, double lambda, double lo, double hi) {
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  auto y = [&](double w) { return loss.value(w) + 0.5 * lambda * w * w; };
  double a = lo, b = hi;
  double c = b - inv_phi * (b - a), d = a + inv_phi * (b - a);
  double fc = y(c), fd = y(d);
  for (int it = 0; it < kMaxIter && b - a > kStepTol * std::max(1.0, std::abs(a)); ++it) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = y(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = y(d);
    }
  }
  return 0.5 * (a + b);
}

}  // namespace

double y_prime(const ScalarLoss& loss, double lambda, double omega) {
  return loss.d1(omega) + lambda * omega;
}

double y_second(const ScalarLoss& loss, double lambda, double omega) {
  return loss.d2(omega) + lambda;
}

double find_local_min(const ScalarLoss& loss, double lambda, Bracket bracket) {
  if (!(lambda >= 0.0)) throw DomainError("find_local_min: λ must be >= 0");
  double lo = std::min(bracket.lo, bracket.hi);
  double hi = std::max(bracket.lo, bracket.hi);
  if (!(hi > lo)) throw BracketError("find_local_min: empty bracket");
  double flo = y_prime(loss, lambda, lo);
  double fhi = y_prime(loss, lambda, hi);
  if (!(flo < 0.0 && fhi > 0.0)) {
    // No −/+ sign change at the ends: look for an interior dip.
    const double m = golden_min(loss, lambda, lo, hi);
    const double width = hi - lo;
    if (m - lo < 1e-9 * width || hi - m < 1e-9 * width) {
      throw BracketError("find_local_min: no minimum of " + loss.name + " in [" + fmt(lo) + ", " +
                         fmt(hi) + "] at λ=" + fmt(lambda));
    }
    double h = 1e-6 * width;
    bool found = false;
    for (int k = 0; k < 60 && m - h >= lo && m + h <= hi; ++k, h *= 2.0) {
      if (y_prime(loss, lambda, m - h) < 0.0 && y_prime(loss, lambda, m + h) > 0.0) {
        lo = m - h;
        hi = m + h;
        found = true;
        break;
      }
    }
    if (!found) {
      throw BracketError("find_local_min: dip of " + loss.name + " near " + fmt(m) +
                         " has no sign change of Y'");
    }
  }
  const double w = newton_bisect(loss, lambda, lo, hi);
  const double residual = std::abs(y_prime(loss, lambda, w));
  if (!(residual < kResidualTol)) {
    throw BracketError("find_local_min: " + loss.name + " did not converge (|Y'|=" +
                       fmt(residual) + ")");
  }
  if (!(y_second(loss, lambda, w) > 0.0)) {
    throw SaddleError("find_local_min: stationary point " + fmt(w) + " of " + loss.name +
                      " has Y'' <= 0");
  }
  return w;
}

double lambda_of_omega(const ScalarLoss& loss, double omega) {
  if (omega == 0.0) throw DomainError("lambda_of_omega: undefined at ω = 0");
  return -loss.d1(omega) / omega;
}

double dlambda_domega(const ScalarLoss& loss, double omega) {
  if (omega == 0.0) throw DomainError("dlambda_domega: undefined at ω = 0");
  return (loss.d1(omega) - omega * loss.d2(omega)) / (omega * omega);
}

double dlambda_domega_at_min(const ScalarLoss& loss, double lambda, double omega) {
  if (omega == 0.0) throw DomainError("dlambda_domega_at_min: undefined at ω = 0");
  return -(loss.d2(omega) + lambda) / omega;
}

MinimumTrace sweep_lambda(const ScalarLoss& loss, double lambda_start, double lambda_end,
                          std::size_t steps, Bracket bracket) {
  if (!(lambda_start >= 0.0) || lambda_end < lambda_start) {
    throw DomainError("sweep_lambda: need 0 <= λ_start <= λ_end");
  }
  if (steps == 0) throw DomainError("sweep_lambda: need at least one step");
  if (lambda_end == lambda_start) steps = 1;
  MinimumTrace trace;
  trace.family = loss.name;

  auto record = [&](double lambda, double w) {
    TracePoint p;
    p.lambda = lambda;
    p.omega = w;
    p.y1 = y_prime(loss, lambda, w);
    p.y2 = y_second(loss, lambda, w);
    if (w != 0.0) {
      p.dlambda = dlambda_domega(loss, w);
      p.dlambda_at_min = dlambda_domega_at_min(loss, lambda, w);
    }
    trace.points.push_back(p);
  };

  double w = 0.0;
  for (std::size_t k = 0; k < steps; ++k) {
    const double lambda =
        steps == 1 ? lambda_start
                   : lambda_start + (lambda_end - lambda_start) * static_cast<double>(k) /
                                        static_cast<double>(steps - 1);
    try {
      if (k == 0) {
        w = find_local_min(loss, lambda, bracket);
      } else {
        const double f = y_prime(loss, lambda, w);
        if (f != 0.0) {
          const double dir = f > 0.0 ? -1.0 : 1.0;
          double h = 1e-3 * std::max(1.0, std::abs(w));
          double b = w + dir * h;
          int k2 = 0;
          while ((y_prime(loss, lambda, b) > 0.0) == (f > 0.0) && k2 < 60) {
            h *= 2.0;
            b = w + dir * h;
            ++k2;
          }
          if (k2 == 60) throw BracketError("downhill walk found no sign change of Y'");
          const double next = find_local_min(loss, lambda, Bracket{std::min(w, b), std::max(w, b)});
          // A continuous branch of minima cannot cross zero; this is a new basin.
          if (w != 0.0 && next != 0.0 && (next > 0.0) != (w > 0.0)) {
            throw BracketError("tracked minimum vanished (walk crossed zero to " + fmt(next) + ")");
          }
          w = next;
        }
      }
    } catch (const Error& e) {
      trace.truncated = true;
      trace.diagnostic = "lost the minimum at λ=" + fmt(lambda) + ": " + e.what();
      break;
    }
    record(lambda, w);
  }
  return trace;
}

TraceCheck check_trace(const MinimumTrace& trace) {
  TraceCheck c;
  c.min_y2 = trace.points.empty() ? 0.0 : trace.points.front().y2;
  for (std::size_t k = 0; k < trace.points.size(); ++k) {
    const TracePoint& p = trace.points[k];
    c.max_abs_y1 = std::max(c.max_abs_y1, std::abs(p.y1));
    c.min_y2 = std::min(c.min_y2, p.y2);
    if (p.omega != 0.0) {
      c.max_identity_gap = std::max(c.max_identity_gap, std::abs(p.dlambda - p.dlambda_at_min));
      if (p.y2 > 0.0) {
        const bool ok = p.omega > 0.0 ? p.dlambda < 0.0 : p.dlambda > 0.0;
        c.sign_law = c.sign_law && ok;
      }
    }
    if (k > 0 && trace.points[k - 1].omega != 0.0 &&
        !(std::abs(p.omega) < std::abs(trace.points[k - 1].omega))) {
      c.strictly_decreasing = false;
    }
  }
  return c;
}

ScalarLoss quadratic_loss(double target) {
  return ScalarLoss{"quadratic" + std::string(target < 0 ? "-" : "+"),
                    [target](double w) { return 0.5 * (w - target) * (w - target); },
                    [target](double w) { return w - target; }, [](double) { return 1.0; }};
}

ScalarLoss shifted_quadratic_loss(double curvature, double centre) {
  return ScalarLoss{
      "shifted_quadratic" + std::string(centre < 0 ? "-" : "+"),
      [=](double w) { return 0.5 * curvature * (w - centre) * (w - centre); },
      [=](double w) { return curvature * (w - centre); }, [=](double) { return curvature; }};
}

ScalarLoss double_well_loss() {
  return ScalarLoss{"double_well", [](double w) { return w * w * w * w / 4.0 - w * w / 2.0; },
                    [](double w) { return w * w * w - w; },
                    [](double w) { return 3.0 * w * w - 1.0; }};
}

ScalarLoss cosh_loss(double centre) {
  return ScalarLoss{"cosh" + std::string(centre < 0 ? "-" : "+"),
                    [centre](double w) { return std::cosh(w - centre); },
                    [centre](double w) { return std::sinh(w - centre); },
                    [centre](double w) { return std::cosh(w - centre); }};
}

ScalarLoss logistic_loss(double sign) {
  const double s = sign < 0 ? -1.0 : 1.0;
  return ScalarLoss{"logistic" + std::string(s < 0 ? "-" : "+"),
                    [s](double w) { return softplus(-2.0 * s * w); },
                    [s](double w) { return -2.0 * s * sigmoid(-2.0 * s * w); },
                    [s](double w) { return 4.0 * sigmoid(2.0 * s * w) * sigmoid(-2.0 * s * w); }};
}

std::vector<SweepCase> theorem_suite() {
  std::vector<SweepCase> out;
  for (int s : {1, -1}) {
    const double sd = s;
    auto around = [sd](double a, double b) {
      return sd > 0 ? Bracket{a, b} : Bracket{-b, -a};
    };
    SweepCase q{quadratic_loss(sd), s, 0.0, 3.0, 31, around(0.5, 2.0),
                [sd](double l) { return sd / (1.0 + l); }};
    out.push_back(q);
    SweepCase sq{shifted_quadratic_loss(3.0, 2.0 * sd), s, 0.0, 3.0, 61, around(1.0, 3.0),
                 [sd](double l) { return 3.0 * 2.0 * sd / (3.0 + l); }};
    out.push_back(sq);
    SweepCase dw{double_well_loss(), s, 0.0, 0.9, 19, around(0.5, 2.0),
                 [sd](double l) { return sd * std::sqrt(1.0 - l); }};
    dw.loss.name += sd < 0 ? "-" : "+";
    out.push_back(dw);
    out.push_back(SweepCase{cosh_loss(1.5 * sd), s, 0.0, 3.0, 61, around(0.5, 2.5), std::nullopt});
    out.push_back(
        SweepCase{logistic_loss(sd), s, 0.05, 2.0, 40, around(1e-3, 50.0), std::nullopt});
  }
  return out;
}

std::string trace_csv(const std::vector<MinimumTrace>& traces) {
  std::ostringstream out;
  out << "family,lambda,omega,dY,d2Y,dlambda_domega\n";
  for (const auto& t : traces)
    for (const auto& p : t.points)
      out << t.family << ',' << fmt(p.lambda) << ',' << fmt(p.omega) << ',' << fmt(p.y1) << ','
          << fmt(p.y2) << ',' << fmt(p.dlambda) << '\n';
  return out.str();
}

}  // namespace increg
