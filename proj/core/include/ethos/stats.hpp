#pragma once

#include <cstddef>
#include <utility>

namespace ethos {

// Exact (Clopper-Pearson) two-sided binomial confidence interval for p given
// m successes in n trials: beta-quantile inversion, closed at m=0 and m=n.
std::pair<double, double> clopper_pearson(size_t m, size_t n, double alpha = 0.05);

// Upper-tail probability of the chi-squared distribution.
double chi_squared_sf(double statistic, double dof);

}  // namespace ethos
