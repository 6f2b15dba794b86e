#pragma once

namespace fedclust::eval {

// Self-contained special functions for the statistical tests; series and
// continued fractions iterate to ~1e-14 relative accuracy.

double ln_gamma(double x);

// Regularized lower incomplete gamma P(a, x) and its complement Q(a, x).
double regularized_gamma_p(double a, double x);
double regularized_gamma_q(double a, double x);

// Regularized incomplete beta I_x(a, b).
double regularized_beta(double a, double b, double x);

// Survival functions used by the tests: F distribution and chi-squared.
double f_distribution_sf(double f, double d1, double d2);
double chi2_sf(double x, double dof);

}  // namespace fedclust::eval
