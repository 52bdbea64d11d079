// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "increg/errors.hpp"

namespace increg {

/// Scalar loss with analytic first and second derivatives.
struct ScalarLoss {
  std::string name;
  std::function<double(double)> value;
  std::function<double(double)> d1;
  std::function<double(double)> d2;
};

struct Bracket {
  double lo = 0.0;
  double hi = 0.0;
};

/// Y'(ω) and Y''(ω) for Y_λ(ω) = L(ω) + λ/2·ω².
double y_prime(const ScalarLoss& loss, double lambda, double omega);
double y_second(const ScalarLoss& loss, double lambda, double omega);

/// Local minimum of Y_λ inside `bracket`. Bisection on Y' refined by Newton
/// steps (step tolerance 1e-12, at most 200 iterations). A bracket without a
/// −/+ sign change of Y' is searched for an interior dip first.
/// Throws BracketError when no minimum is found and SaddleError when the
/// stationary point has Y'' <= 0.
double find_local_min(const ScalarLoss& loss, double lambda, Bracket bracket);

/// λ = −L'(ω)/ω. Throws DomainError at ω = 0.
double lambda_of_omega(const ScalarLoss& loss, double omega);
/// (L'(ω) − ω·L''(ω))/ω². Throws DomainError at ω = 0.
double dlambda_domega(const ScalarLoss& loss, double omega);
/// −(L''(ω) + λ)/ω, the same derivative written at a stationary point.
double dlambda_domega_at_min(const ScalarLoss& loss, double lambda, double omega);

struct TracePoint {
  double lambda = 0.0;
  double omega = 0.0;
  double y1 = 0.0;
  double y2 = 0.0;
  double dlambda = 0.0;         // quotient form
  double dlambda_at_min = 0.0;  // stationary-point form
};

struct MinimumTrace {
  std::string family;
  std::vector<TracePoint> points;
  /// Set when the tracked minimum was lost before λ_end.
  bool truncated = false;
  std::string diagnostic;
};

/// Tracks one local minimum while λ moves from `lambda_start` to
/// `lambda_end` in `steps` evenly spaced values (both ends included). Each
/// step restarts from the previous minimizer, walking downhill on Y until Y'
/// changes sign.
MinimumTrace sweep_lambda(const ScalarLoss& loss, double lambda_start, double lambda_end,
                          std::size_t steps, Bracket bracket);

struct TraceCheck {
  bool strictly_decreasing = true;
  /// Largest |quotient form − stationary form| over the trace.
  double max_identity_gap = 0.0;
  /// sign(dλ/dω) == −sign(ω) at every point with L''+λ > 0.
  bool sign_law = true;
  double max_abs_y1 = 0.0;
  double min_y2 = 0.0;
};
TraceCheck check_trace(const MinimumTrace& trace);

/// One sweep of the built-in suite.
struct SweepCase {
  ScalarLoss loss;
  int sign = 1;
  double lambda_start = 0.0;
  double lambda_end = 1.0;
  std::size_t steps = 21;
  Bracket bracket;
  /// Closed-form minimizer ω*(λ), when one exists.
  std::optional<std::function<double(double)>> closed_form;
};

ScalarLoss quadratic_loss(double target);
ScalarLoss shifted_quadratic_loss(double curvature, double centre);
ScalarLoss double_well_loss();
ScalarLoss cosh_loss(double centre);
ScalarLoss logistic_loss(double sign);

/// Quadratic, shifted quadratic, quartic double well, cosh and logistic,
/// each with a positive and a negative starting minimizer.
std::vector<SweepCase> theorem_suite();

/// CSV with columns family,lambda,omega,dY,d2Y,dlambda_domega.
std::string trace_csv(const std::vector<MinimumTrace>& traces);

}  // namespace increg
