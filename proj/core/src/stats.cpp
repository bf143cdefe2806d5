#include "ethos/stats.hpp"

#include <stdexcept>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/special_functions/beta.hpp>

namespace ethos {

std::pair<double, double> clopper_pearson(size_t m, size_t n, double alpha) {
    if (n == 0) throw std::invalid_argument("clopper_pearson: n must be positive");
    if (m > n) throw std::invalid_argument("clopper_pearson: m > n");
    const double a = alpha / 2.0;
    const double md = static_cast<double>(m);
    const double nd = static_cast<double>(n);
    const double lo = m == 0 ? 0.0 : boost::math::ibeta_inv(md, nd - md + 1.0, a);
    const double hi = m == n ? 1.0 : boost::math::ibeta_inv(md + 1.0, nd - md, 1.0 - a);
    return {lo, hi};
}

double chi_squared_sf(double statistic, double dof) {
    if (statistic <= 0.0) return 1.0;
    boost::math::chi_squared dist(dof);
    return boost::math::cdf(boost::math::complement(dist, statistic));
}

}  // namespace ethos
